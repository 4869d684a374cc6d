use serde::{Deserialize, Serialize};

use super::{Dataset, LearnError};
use crate::numeric::percentile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Anova,
    MutualInfo,
}

impl Selector {
    pub const ALL: [Selector; 2] = [Selector::Anova, Selector::MutualInfo];
}

/// One-way ANOVA F statistic. Constant columns score 0; a column that
/// separates the classes with no within-class spread scores infinity.
pub fn anova_f(col: &[f64], y: &[u8]) -> f64 {
    let k = y.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let n = col.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&v, &c) in col.iter().zip(y) {
        sums[c as usize] += v;
        counts[c as usize] += 1;
    }
    let groups = counts.iter().filter(|&&c| c > 0).count();
    if groups < 2 || n <= groups {
        return 0.0;
    }
    let grand = col.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let ssb: f64 = means.iter().zip(&counts).map(|(m, &c)| c as f64 * (m - grand).powi(2)).sum();
    let ssw: f64 = col.iter().zip(y).map(|(v, &c)| (v - means[c as usize]).powi(2)).sum();
    let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let tiny = 1e-24 * scale * scale * n as f64;
    if ssb <= tiny {
        return 0.0;
    }
    if ssw <= tiny {
        return f64::INFINITY;
    }
    (ssb / (groups - 1) as f64) / (ssw / (n - groups) as f64)
}

/// Plug-in mutual information (nats) between the label and the column
/// discretised at its deciles.
pub fn mutual_information(col: &[f64], y: &[u8]) -> f64 {
    const BINS: usize = 10;
    let n = col.len();
    if n == 0 {
        return 0.0;
    }
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..BINS).map(|i| percentile_sorted(&sorted, 100.0 * i as f64 / BINS as f64)).collect();
    edges.dedup();
    let k = y.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let nb = edges.len() + 1;
    let mut joint = vec![0usize; nb * k];
    for (&v, &c) in col.iter().zip(y) {
        let b = edges.partition_point(|&e| e < v);
        joint[b * k + c as usize] += 1;
    }
    let mut pb = vec![0usize; nb];
    let mut pc = vec![0usize; k];
    for b in 0..nb {
        for c in 0..k {
            pb[b] += joint[b * k + c];
            pc[c] += joint[b * k + c];
        }
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for b in 0..nb {
        for c in 0..k {
            let j = joint[b * k + c];
            if j > 0 {
                let pj = j as f64 / nf;
                mi += pj * (pj / ((pb[b] as f64 / nf) * (pc[c] as f64 / nf))).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Top-k local column indices by score (ties to the lower index), returned
/// in ascending order.
pub fn select_k_best(data: &Dataset, k: usize, method: Selector) -> Result<Vec<usize>, LearnError> {
    if k == 0 || k > data.d {
        return Err(LearnError::Params(format!("k = {k} outside 1..={}", data.d)));
    }
    if k == data.d {
        return Ok((0..data.d).collect());
    }
    let mut scored: Vec<(usize, f64)> = (0..data.d)
        .map(|j| {
            let col: Vec<f64> = (0..data.n).map(|i| data.value(i, j)).collect();
            let s = match method {
                Selector::Anova => anova_f(&col, &data.y),
                Selector::MutualInfo => mutual_information(&col, &data.y),
            };
            (j, if s.is_nan() { 0.0 } else { s })
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = scored[..k].iter().map(|s| s.0).collect();
    chosen.sort_unstable();
    Ok(chosen)
}
