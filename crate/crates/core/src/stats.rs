//! Paired nonparametric tests with false-discovery control and bootstrap
//! confidence intervals for medians.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::features::{Task, TaskDataset, FEATURE_NAMES, N_FEATURES};
use crate::numeric::{derive_seed, median};

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("all differences are zero")]
    Degenerate,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-).
    pub statistic: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, doubled so they are integers.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, times two.
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite difference".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(StatsError::Degenerate);
    }
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let r2 = doubled_ranks(&abs);
    let total2: u64 = r2.iter().sum();
    let plus2: u64 = nz.iter().zip(&r2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w2 = plus2.min(total2 - plus2);
    let statistic = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        // Null distribution of the doubled positive-rank sum: each rank
        // enters with probability 1/2.
        let mut counts = vec![0.0f64; total2 as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &r2 {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let tail: f64 = counts[..=w2 as usize].iter().sum();
        let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value: p,
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (statistic - mean) / var.sqrt();
        // Two-sided: 2 * Phi(z) with z <= 0.
        (erfc(-z / std::f64::consts::SQRT_2)).min(1.0)
    };
    Ok(WilcoxonResult {
        statistic,
        p_value: p,
        n,
        exact: false,
    })
}

/// Step-up false discovery rate control. Flags are in input order.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    if m == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=m)
        .rev()
        .find(|&i| sorted[i - 1] <= i as f64 * alpha / m as f64)
        .map(|i| sorted[i - 1]);
    match cutoff {
        Some(c) => p_values.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianCi {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile-bootstrap interval for the median; endpoints are order
/// statistics of the resampled medians.
pub fn bootstrap_median_ci(values: &[f64], confidence: f64, n_resamples: usize, seed: u64) -> MedianCi {
    let medians = bootstrap_medians(values, n_resamples, seed);
    ci_from_medians(median(values), &medians, confidence)
}

/// Sorted medians of `n_resamples` resamples with replacement.
pub fn bootstrap_medians(values: &[f64], n_resamples: usize, seed: u64) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; n];
    let mut out: Vec<f64> = (0..n_resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = values[rng.random_range(0..n)];
            }
            median_in_place(&mut buf)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, &mut upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = buf[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Index pair of the percentile interval in `b` sorted resamples.
pub fn ci_indices(b: usize, confidence: f64) -> (usize, usize) {
    let lo = ((b as f64) * (1.0 - confidence) / 2.0).floor() as usize;
    let hi = (((b as f64) * (1.0 + confidence) / 2.0).ceil() as usize).saturating_sub(1);
    (lo.min(b - 1), hi.min(b - 1).max(lo.min(b - 1)))
}

fn ci_from_medians(point: f64, sorted: &[f64], confidence: f64) -> MedianCi {
    if sorted.is_empty() {
        return MedianCi {
            median: point,
            lo: f64::NAN,
            hi: f64::NAN,
        };
    }
    let (lo, hi) = ci_indices(sorted.len(), confidence);
    MedianCi {
        median: point,
        lo: sorted[lo],
        hi: sorted[hi],
    }
}

/// Unit within which the two classes are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Per participant, the median of each class.
    #[default]
    Participant,
    /// Per participant and matching event attribute: the same social event
    /// for phase tasks, the same evaluation variant for size, the same size
    /// for evaluation variant. The alone task has one alone row per
    /// participant and falls back to participant pairing.
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub alpha: f64,
    pub confidence: f64,
    pub n_resamples: usize,
    pub seed: u64,
    pub pairing: Pairing,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            confidence: 0.95,
            n_resamples: 10_000,
            seed: 0,
            pairing: Pairing::Participant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub feature: String,
    pub class_a: MedianCi,
    pub class_b: MedianCi,
    /// Pooled median of class B minus pooled median of class A.
    pub median_difference: f64,
    pub n_pairs: usize,
    /// Pairing units lacking one of the classes.
    pub excluded_units: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTestReport {
    pub task: Task,
    pub classes: [String; 2],
    pub alpha: f64,
    pub pairing: Pairing,
    pub confidence: f64,
    pub n_resamples: usize,
    pub per_feature: Vec<FeatureTest>,
    /// Significant features by decreasing |median_difference|.
    pub ranked: Vec<String>,
}

impl FeatureTestReport {
    pub fn significant(&self) -> Vec<&str> {
        self.per_feature
            .iter()
            .filter(|f| f.significant)
            .map(|f| f.feature.as_str())
            .collect()
    }

    /// Per-class medians and interval bounds for plotting.
    pub fn figure_csv(&self) -> String {
        let mut out = String::from("feature,class,median,ci_lo,ci_hi,significant\n");
        for f in &self.per_feature {
            for (class, ci) in self.classes.iter().zip([f.class_a, f.class_b]) {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    f.feature, class, ci.median, ci.lo, ci.hi, f.significant
                ));
            }
        }
        out
    }
}

fn pairing_key(task: Task, pairing: Pairing, row: &crate::features::TaskRow) -> u8 {
    if pairing == Pairing::Participant {
        return 0;
    }
    let e = row.key.event;
    match task {
        Task::AloneVsSocial => 0,
        Task::DuringVsPrePost | Task::PreVsPost => e as u8,
        Task::DyadVsGroup => e.threat().map_or(0, |t| t as u8 + 1),
        Task::ImplicitVsExplicit => e.size().map_or(0, |s| s as u8 + 1),
    }
}

pub fn paired_feature_tests(data: &TaskDataset, cfg: &StatsConfig) -> FeatureTestReport {
    // unit -> (class A rows, class B rows)
    let mut units: BTreeMap<(usize, u8), [Vec<usize>; 2]> = BTreeMap::new();
    for (i, r) in data.rows.iter().enumerate() {
        let key = (r.group, pairing_key(data.task, cfg.pairing, r));
        units.entry(key).or_default()[r.label as usize].push(i);
    }
    let complete: Vec<&[Vec<usize>; 2]> = units.values().filter(|u| !u[0].is_empty() && !u[1].is_empty()).collect();
    let excluded = units.len() - complete.len();
    if excluded > 0 {
        info!("{}: {excluded} pairing unit(s) lack one class and are excluded", data.task);
    }

    let mut per_feature: Vec<FeatureTest> = (0..N_FEATURES)
        .into_par_iter()
        .map(|j| {
            let diffs: Vec<f64> = complete
                .iter()
                .map(|u| {
                    let m = |idx: &Vec<usize>| median(&idx.iter().map(|&i| data.rows[i].features[j]).collect::<Vec<_>>());
                    m(&u[1]) - m(&u[0])
                })
                .collect();
            let (statistic, p_value, exact) = match wilcoxon_signed_rank(&diffs) {
                Ok(w) => (w.statistic, w.p_value, w.exact),
                Err(_) => (0.0, 1.0, true),
            };
            let pooled = |class: u8| -> Vec<f64> {
                data.rows
                    .iter()
                    .filter(|r| r.label == class)
                    .map(|r| r.features[j])
                    .collect()
            };
            let a = pooled(0);
            let b = pooled(1);
            let ci_a = bootstrap_median_ci(&a, cfg.confidence, cfg.n_resamples, derive_seed(cfg.seed, 2 * j as u64));
            let ci_b = bootstrap_median_ci(&b, cfg.confidence, cfg.n_resamples, derive_seed(cfg.seed, 2 * j as u64 + 1));
            FeatureTest {
                feature: FEATURE_NAMES[j].to_string(),
                median_difference: ci_b.median - ci_a.median,
                class_a: ci_a,
                class_b: ci_b,
                n_pairs: diffs.len(),
                excluded_units: excluded,
                statistic,
                p_value,
                exact,
                significant: false,
            }
        })
        .collect();

    let p: Vec<f64> = per_feature.iter().map(|f| f.p_value).collect();
    for (f, flag) in per_feature.iter_mut().zip(benjamini_hochberg(&p, cfg.alpha)) {
        f.significant = flag;
    }
    let mut ranked: Vec<(usize, f64)> = per_feature
        .iter()
        .enumerate()
        .filter(|(_, f)| f.significant)
        .map(|(j, f)| (j, f.median_difference.abs()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    FeatureTestReport {
        task: data.task,
        classes: data.task.classes().map(String::from),
        alpha: cfg.alpha,
        pairing: cfg.pairing,
        confidence: cfg.confidence,
        n_resamples: cfg.n_resamples,
        per_feature,
        ranked: ranked.into_iter().map(|(j, _)| FEATURE_NAMES[j].to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Two-sided p by enumerating all 2^n sign assignments.
    fn brute_force_p(diffs: &[f64]) -> (f64, f64) {
        let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let n = nz.len();
        let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
        // Average ranks by counting.
        let rank = |v: f64| {
            let less = abs.iter().filter(|&&x| x < v).count() as f64;
            let eq = abs.iter().filter(|&&x| x == v).count() as f64;
            less + (eq + 1.0) / 2.0
        };
        let ranks: Vec<f64> = abs.iter().map(|&v| rank(v)).collect();
        let total: f64 = ranks.iter().sum();
        let plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
        let w = plus.min(total - plus);
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let t: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if t.min(total - t) <= w + 1e-9 {
                hits += 1;
            }
        }
        (w, hits as f64 / (1u64 << n) as f64)
    }

    /// Largest i with #{p <= i alpha / m} >= i; reject the smallest i.
    fn bh_oracle(p: &[f64], alpha: f64) -> Vec<bool> {
        let m = p.len();
        let mut k = 0;
        for i in 1..=m {
            let thr = i as f64 * alpha / m as f64;
            if p.iter().filter(|&&x| x <= thr).count() >= i {
                k = i;
            }
        }
        if k == 0 {
            return vec![false; m];
        }
        let thr = k as f64 * alpha / m as f64;
        p.iter().map(|&x| x <= thr).collect()
    }

    #[test]
    fn wilcoxon_examples() {
        let r = wilcoxon_signed_rank(&[1.0, -2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.statistic, 2.0);
        assert!((r.p_value - 0.1875).abs() < 1e-15);
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.03125).abs() < 1e-15);
        assert_eq!(wilcoxon_signed_rank(&[0.0, 0.0]), Err(StatsError::Degenerate));
    }

    #[test]
    fn normal_approximation_is_close_to_exact() {
        let d: Vec<f64> = (1..=40).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 + 0.5 }).collect();
        let approx = wilcoxon_signed_rank(&d).unwrap();
        assert!(!approx.exact);
        let d25: Vec<f64> = d[..25].to_vec();
        let exact = wilcoxon_signed_rank(&d25).unwrap();
        assert!(exact.exact);
        assert!(approx.p_value > 0.0 && approx.p_value < 1.0);
    }

    #[test]
    fn bh_examples() {
        assert_eq!(
            benjamini_hochberg(&[0.01, 0.02, 0.03, 0.04, 0.2], 0.05),
            vec![true, true, true, true, false]
        );
        assert_eq!(benjamini_hochberg(&[1.0; 4], 0.05), vec![false; 4]);
        assert_eq!(benjamini_hochberg(&[0.04], 0.05), vec![true]);
        assert!(benjamini_hochberg(&[], 0.05).is_empty());
    }

    #[test]
    fn bootstrap_examples() {
        let c = bootstrap_median_ci(&[3.0; 20], 0.95, 1000, 1);
        assert_eq!((c.median, c.lo, c.hi), (3.0, 3.0, 3.0));
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        let c = bootstrap_median_ci(&x, 0.95, 10_000, 42);
        assert_eq!(c.median, 50.5);
        assert!(c.lo <= 50.5 && c.hi >= 50.5);
        assert!(c.lo >= 40.0 && c.hi <= 61.0, "{c:?}");
        assert_eq!(c, bootstrap_median_ci(&x, 0.95, 10_000, 42));
    }

    #[test]
    fn bootstrap_matches_sorting_oracle() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 3.0).collect();
        let got = bootstrap_median_ci(&x, 0.9, 2000, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut meds: Vec<f64> = (0..2000)
            .map(|_| {
                let mut s: Vec<f64> = (0..x.len()).map(|_| x[rng.random_range(0..x.len())]).collect();
                s.sort_by(f64::total_cmp);
                crate::numeric::percentile_sorted(&s, 50.0)
            })
            .collect();
        meds.sort_by(f64::total_cmp);
        // floor(2000 * 0.05) = 100, ceil(2000 * 0.95) - 1 = 1899.
        assert_eq!(got.lo, meds[100]);
        assert_eq!(got.hi, meds[1899]);
    }

    proptest! {
        #[test]
        fn exact_p_equals_sign_enumeration(
            diffs in prop::collection::vec((-6i32..=6).prop_map(|v| v as f64 * 0.5), 1..=12)
        ) {
            prop_assume!(diffs.iter().any(|d| *d != 0.0));
            let r = wilcoxon_signed_rank(&diffs).unwrap();
            let (w, p) = brute_force_p(&diffs);
            prop_assert_eq!(r.statistic, w);
            prop_assert!((r.p_value - p).abs() < 1e-12, "{} vs {}", r.p_value, p);
        }

        #[test]
        fn bh_matches_definition(p in prop::collection::vec(0.0f64..=1.0, 0..30), alpha in 0.0f64..=1.0) {
            prop_assert_eq!(benjamini_hochberg(&p, alpha), bh_oracle(&p, alpha));
        }

        #[test]
        fn bh_is_monotone_in_alpha(p in prop::collection::vec(0.0f64..=1.0, 1..30), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let r_lo = benjamini_hochberg(&p, lo);
            let r_hi = benjamini_hochberg(&p, hi);
            prop_assert!(r_lo.iter().zip(&r_hi).all(|(x, y)| !x || *y));
            prop_assert!(benjamini_hochberg(&p, 1.0).iter().all(|&f| f));
            let zero = benjamini_hochberg(&p, 0.0);
            prop_assert!(zero.iter().zip(&p).all(|(f, &v)| !f || v == 0.0));
        }

        #[test]
        fn wider_confidence_nests(x in prop::collection::vec(-5.0f64..5.0, 1..40), seed in 0u64..1000) {
            let narrow = bootstrap_median_ci(&x, 0.8, 500, seed);
            let wide = bootstrap_median_ci(&x, 0.95, 500, seed);
            prop_assert!(wide.lo <= narrow.lo && narrow.hi <= wide.hi);
        }
    }
}
