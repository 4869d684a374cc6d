//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ctxsense::bench::nn_filter_benchmark;
use ctxsense::cluster::HdbscanParams;
use ctxsense::dsp::{lomb_scargle_psd, LombGrid};
use ctxsense::features::{
    build_task, condition_matrix, nn_features, process_slice, read_matrix_csv, ExtractConfig, ProcessedInterval, Task,
    N_FEATURES,
};
use ctxsense::hrv::{CleanedBy, NNSeries, NnCleaning};
use ctxsense::ingest::slice_intervals;
use ctxsense::learn::{conditioning_benchmark, conditioning_csv, kbest_curve, nlopocv, CvConfig, Dataset, InnerCv};
use ctxsense::numeric::{derive_seed, mean};
use ctxsense::pipeline::build_matrix;
use ctxsense::run::{cluster_task, RunConfig};
use ctxsense::stats::{benjamini_hochberg, wilcoxon_signed_rank};
use ctxsense::synth::{
    generate_session, synth_feature_matrix, FeatureArchetypes, FeatureEffect, FeatureSynthConfig,
    IntervalTruth, SynthConfig,
};

// Tolerances.
const C1_MIN_RECOVERY: f64 = 0.95;
/// Applied to the per-interval mean NN interval.
const C1_MAX_NN_ERROR_S: f64 = 0.005;
const C1_MATCH_WINDOW_S: f64 = 0.100;
const C1_MAX_RUNTIME: Duration = Duration::from_secs(30);
const C2_MIN_GAIN: f64 = 0.03;
const C2_MAX_SPREAD: f64 = 0.02;
const C3_N_SERIES: usize = 10_000;
const C4_N_VECTORS: usize = 1_000;
const C5_SEEDS: u64 = 20;
const C5_BAND: f64 = 0.05;
const C6_MIN_GAIN: f64 = 0.05;
const C7_MIN_PURITY: f64 = 0.90;
const C8_MAX_RUNTIME: Duration = Duration::from_secs(600);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Smaller forests and 5-fold inner CV keep the suite to minutes on one core.
fn fast_cv(seed: u64) -> CvConfig {
    let mut cv = CvConfig::default();
    cv.forest.n_trees = 50;
    cv.forest.seed = seed;
    cv.inner = InnerCv::GroupKFold { folds: 5 };
    cv
}

fn process_sessions(cfgs: &[SynthConfig], extract: &ExtractConfig) -> (Vec<ProcessedInterval>, Vec<IntervalTruth>) {
    let per: Vec<_> = cfgs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let session = generate_session(cfg, i).expect("session");
            let slices = slice_intervals(&session.streams, &session.timeline).expect("slices");
            let processed: Vec<_> = slices.iter().map(|s| process_slice(s, extract)).collect();
            (processed, session.truth)
        })
        .collect();
    let mut processed = Vec::new();
    let mut truth = Vec::new();
    for (p, t) in per {
        processed.extend(p);
        truth.extend(t);
    }
    (processed, truth)
}

/// Planted beats recovered by the detector, and matched-NN errors.
fn beat_match(p: &ProcessedInterval, t: &IntervalTruth) -> (usize, usize, Vec<f64>) {
    let Ok(nn) = &p.nn_raw else {
        return (0, t.beat_times.len(), Vec::new());
    };
    let mut detected: Vec<f64> = nn.times.iter().map(|x| p.start + x).collect();
    if let (Some(&last_t), Some(&last_nn)) = (nn.times.last(), nn.intervals.last()) {
        detected.push(p.start + last_t + last_nn);
    }
    // Nearest planted beat for each detection, if within the window.
    let nearest = |d: f64| -> Option<usize> {
        let i = t.beat_times.partition_point(|&b| b < d);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < t.beat_times.len())
            .min_by(|&a, &b| (t.beat_times[a] - d).abs().total_cmp(&(t.beat_times[b] - d).abs()))
            .filter(|&j| (t.beat_times[j] - d).abs() <= C1_MATCH_WINDOW_S)
    };
    let matched: Vec<Option<usize>> = detected.iter().map(|&d| nearest(d)).collect();
    let mut hit = vec![false; t.beat_times.len()];
    for j in matched.iter().flatten() {
        hit[*j] = true;
    }
    let mut errors = Vec::new();
    for k in 1..detected.len() {
        if let (Some(a), Some(b)) = (matched[k - 1], matched[k]) {
            if b == a + 1 {
                let planted = t.beat_times[b] - t.beat_times[a];
                errors.push(((detected[k] - detected[k - 1]) - planted).abs());
            }
        }
    }
    (hit.iter().filter(|&&h| h).count(), t.beat_times.len(), errors)
}

fn criterion_1() -> Outcome {
    // Participants span 60-120 bpm; no state effects on heart rate.
    let n = 46;
    let cfgs: Vec<SynthConfig> = (0..n)
        .map(|i| {
            let mut c = SynthConfig { participants: n, seed: 11, ..SynthConfig::default() };
            c.baseline.hr_bpm = 60.0 + 60.0 * i as f64 / (n - 1) as f64;
            c.spread.hr_bpm = 0.0;
            for d in [&mut c.effects.social, &mut c.effects.during, &mut c.effects.post, &mut c.effects.group, &mut c.effects.explicit] {
                d.hr_bpm = 0.0;
            }
            c
        })
        .collect();
    let start = Instant::now();
    let (processed, truth) = process_sessions(&cfgs, &ExtractConfig::default());
    let elapsed = start.elapsed();
    let (mut hits, mut planted, mut beat_errors, mut mean_errors) = (0, 0, Vec::new(), Vec::new());
    let mut worst = (1.0f64, String::new());
    for (p, t) in processed.iter().zip(&truth) {
        assert_eq!((p.participant_id.as_str(), p.event, p.phase), (t.participant_id.as_str(), t.event, t.phase));
        let (h, n, e) = beat_match(p, t);
        if n > 0 && (h as f64 / n as f64) < worst.0 {
            worst = (h as f64 / n as f64, format!("{} {} {} at {:.0} bpm", t.participant_id, t.event, t.phase, t.hr_bpm));
        }
        hits += h;
        planted += n;
        beat_errors.extend(e);
        if let Ok(nn) = &p.nn_raw {
            mean_errors.push((mean(&nn.intervals) - mean(&t.nn)).abs());
        }
    }
    let recovery = hits as f64 / planted as f64;
    let err = mean(&mean_errors);
    let pass = recovery >= C1_MIN_RECOVERY && err <= C1_MAX_NN_ERROR_S && elapsed < C1_MAX_RUNTIME;
    outcome(
        pass,
        format!(
            "recovered {hits}/{planted} beats ({:.2}%, need >= {:.0}%), mean-NN error {:.3} ms (<= {:.0} ms) over {} intervals \
             [per-beat matched |NN error| {:.2} ms, 64 Hz quantization floor {:.2} ms], worst interval {:.1}% ({}), \
             {:.1} s for {n} participants (< {} s)",
            100.0 * recovery,
            100.0 * C1_MIN_RECOVERY,
            1e3 * err,
            1e3 * C1_MAX_NN_ERROR_S,
            mean_errors.len(),
            1e3 * mean(&beat_errors),
            1e3 / 64.0 / 3.0,
            100.0 * worst.0,
            worst.1,
            elapsed.as_secs_f64(),
            C1_MAX_RUNTIME.as_secs()
        ),
    )
}

fn nn_bench(rate: f64, participants: usize, seed: u64) -> Vec<(String, f64)> {
    let base = SynthConfig { participants, artifact_rate_per_min: rate, seed, ..SynthConfig::default() };
    let cfgs = vec![base; participants];
    let (processed, _) = process_sessions(&cfgs, &ExtractConfig::default());
    let grid = LombGrid::default();
    let methods = NnCleaning::all_defaults();
    let cells: Vec<_> = methods
        .iter()
        .map(|m| {
            let (x, _) = build_matrix(&processed, m, None, &grid).expect("matrix");
            (*m, None, x)
        })
        .collect();
    let report = nn_filter_benchmark(&cells, &Task::ALL, &fast_cv(derive_seed(seed, 7))).expect("benchmark");
    report.cells.iter().map(|c| (c.method.clone(), c.mean_macro_acc)).collect()
}

fn criterion_2() -> Outcome {
    // A sixth of the recording saturated; three studies averaged because
    // a single study's method differences carry about a point of noise.
    let rate = 20.0;
    let seeds = [21u64, 22, 23];
    let runs: Vec<Vec<(String, f64)>> = seeds.iter().map(|&s| nn_bench(rate, 46, s)).collect();
    let dirty: Vec<(String, f64)> = runs[0]
        .iter()
        .map(|(m, _)| (m.clone(), mean(&runs.iter().map(|r| r.iter().find(|c| &c.0 == m).unwrap().1).collect::<Vec<_>>())))
        .collect();
    let clean = nn_bench(0.0, 46, seeds[0]);
    let acc = |v: &[(String, f64)], m: &str| v.iter().find(|c| c.0 == m).unwrap().1;
    let gain = acc(&dirty, "automatic").max(acc(&dirty, "median")) - acc(&dirty, "none");
    let vals: Vec<f64> = clean.iter().map(|c| c.1).collect();
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
    let fmt = |v: &[(String, f64)]| v.iter().map(|(m, a)| format!("{m} {:.1}", 100.0 * a)).collect::<Vec<_>>().join(", ");
    outcome(
        gain >= C2_MIN_GAIN && spread <= C2_MAX_SPREAD,
        format!(
            "artifacts {rate}/min, mean of {} studies: [{}], best filter gain {:.1} pts (need >= {:.0}); \
             clean: [{}], spread {:.1} pts (<= {:.0})",
            seeds.len(),
            fmt(&dirty),
            100.0 * gain,
            100.0 * C2_MIN_GAIN,
            fmt(&clean),
            100.0 * spread,
            100.0 * C2_MAX_SPREAD
        ),
    )
}

fn random_nn_series(rng: &mut ChaCha8Rng) -> NNSeries {
    let n = rng.random_range(8..400);
    let base: f64 = rng.random_range(0.3..1.5);
    let spread: f64 = rng.random_range(0.0..0.4);
    let mut t = 0.0;
    let mut times = Vec::with_capacity(n);
    let mut intervals = Vec::with_capacity(n);
    for _ in 0..n {
        let v: f64 = (base + spread * rng.random_range(-1.0..1.0)).max(0.25);
        times.push(t);
        intervals.push(v);
        t += v;
    }
    NNSeries { times, intervals, cleaned_by: CleanedBy::None }
}

fn criterion_3() -> Outcome {
    let grid = LombGrid::default();
    let step = grid.step();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    let trials = 200;
    for _ in 0..trials {
        let f0 = rng.random_range(0.04..0.45);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut t = 0.0;
        let (mut times, mut values) = (Vec::new(), Vec::new());
        while t < 300.0 {
            let v = 0.8 + 0.05 * (std::f64::consts::TAU * f0 * t + phase).sin() + 0.002 * rng.random_range(-1.0..1.0);
            times.push(t);
            values.push(v);
            t += v;
        }
        let psd = lomb_scargle_psd(&times, &values, grid.fmin, grid.fmax, grid.n_freqs).unwrap();
        worst = worst.max((psd.argmax_freq().unwrap() - f0).abs());
    }
    let mut max_sum = 0.0f64;
    let mut failures = 0;
    for _ in 0..C3_N_SERIES {
        let nn = random_nn_series(&mut rng);
        let f = nn_features(&nn, &grid).unwrap();
        let s = f[5] + f[6];
        max_sum = max_sum.max(s);
        if !(f[5] >= 0.0 && f[6] >= 0.0 && s <= 1.0 + 1e-12) {
            failures += 1;
        }
    }
    outcome(
        worst <= step && failures == 0,
        format!(
            "argmax off by <= {:.5} Hz over {trials} planted sinusoids (grid step {step:.5}); \
             LFn+HFn max {:.4} over {C3_N_SERIES} random series, {failures} violations",
            worst, max_sum
        ),
    )
}

/// Two-sided exact p by enumerating all 2^n sign assignments.
fn wilcoxon_oracle(diffs: &[f64]) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let less = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w = plus.min(total - plus);
    let mut count = 0u64;
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            count += 1;
        }
    }
    (2.0 * count as f64 / (1u64 << n) as f64).min(1.0)
}

/// Largest k with p_(k) <= k alpha / m; reject the k smallest.
fn bh_oracle(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut k = 0;
    for (rank, &i) in order.iter().enumerate() {
        if p[i] <= (rank + 1) as f64 * alpha / m as f64 {
            k = rank + 1;
        }
    }
    let mut out = vec![false; m];
    if k > 0 {
        let cut = p[order[k - 1]];
        for i in 0..m {
            out[i] = p[i] <= cut;
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut w_mismatch = 0;
    let mut tested = 0;
    while tested < C4_N_VECTORS {
        let n = rng.random_range(1..=12);
        // Integer-valued differences give ties and zeros.
        let ties = rng.random_bool(0.5);
        let d: Vec<f64> = (0..n)
            .map(|_| if ties { rng.random_range(-4i32..=4) as f64 } else { rng.random_range(-5.0..5.0) })
            .collect();
        if d.iter().all(|&x| x == 0.0) {
            continue;
        }
        tested += 1;
        let got = wilcoxon_signed_rank(&d).unwrap();
        if !got.exact || got.p_value != wilcoxon_oracle(&d) {
            w_mismatch += 1;
        }
    }
    let mut bh_mismatch = 0;
    for _ in 0..C4_N_VECTORS {
        let m = rng.random_range(1..=40);
        let coarse = rng.random_bool(0.3);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                let v: f64 = rng.random_range(0.0..1.0) * rng.random_range(0.0..1.0);
                if coarse { (v * 50.0).round() / 50.0 } else { v }
            })
            .collect();
        let alpha = [0.01, 0.05, 0.1, 0.2][rng.random_range(0..4)];
        if benjamini_hochberg(&p, alpha) != bh_oracle(&p, alpha) {
            bh_mismatch += 1;
        }
    }
    outcome(
        w_mismatch == 0 && bh_mismatch == 0,
        format!(
            "Wilcoxon exact p mismatches {w_mismatch}/{C4_N_VECTORS} (n <= 12, enumeration oracle); \
             BH mismatches {bh_mismatch}/{C4_N_VECTORS}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let task = Task::AloneVsSocial;
    let effects: Vec<FeatureEffect> = (0..3).map(|f| FeatureEffect { task, feature: f, shift: 1.0 }).collect();
    let nulls: Vec<f64> = (0..C5_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let cfg = FeatureSynthConfig { effects: effects.clone(), seed, ..FeatureSynthConfig::default() };
            let (m, _) = synth_feature_matrix(&cfg).unwrap();
            let ds = build_task(&condition_matrix(&m, true, false), task).unwrap();
            // Shuffle labels within each participant.
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 99));
            let mut labels = ds.labels();
            for g in 0..ds.groups.len() {
                let idx: Vec<usize> = (0..ds.rows.len()).filter(|&i| ds.rows[i].group == g).collect();
                let mut l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                l.shuffle(&mut rng);
                for (&i, v) in idx.iter().zip(l) {
                    labels[i] = v;
                }
            }
            let permuted = ds.with_labels(&labels);
            let all: Vec<usize> = (0..N_FEATURES).collect();
            let mut cv = fast_cv(derive_seed(seed, 5));
            cv.parallel = false;
            nlopocv(&Dataset::from_task(&permuted, &all), &cv, N_FEATURES).unwrap().mean
        })
        .collect();
    let grand = mean(&nulls);
    let inside = nulls.iter().filter(|&&m| (m - 0.5).abs() <= C5_BAND).count();

    // Two planted features, the rest noise.
    let cfg = FeatureSynthConfig {
        effects: vec![
            FeatureEffect { task, feature: 0, shift: 1.6 },
            FeatureEffect { task, feature: 10, shift: 1.6 },
        ],
        seed: 500,
        ..FeatureSynthConfig::default()
    };
    let (m, _) = synth_feature_matrix(&cfg).unwrap();
    let ds = build_task(&condition_matrix(&m, true, false), task).unwrap();
    let all: Vec<usize> = (0..N_FEATURES).collect();
    let curve = kbest_curve(&Dataset::from_task(&ds, &all), &fast_cv(5)).unwrap();
    let curve_txt: Vec<String> = curve.points.iter().take(4).map(|p| format!("k{} {:.1}", p.k, 100.0 * p.mean)).collect();
    outcome(
        (grand - 0.5).abs() <= C5_BAND && curve.minimal_k == 2,
        format!(
            "null mean over {C5_SEEDS} seeds {:.1}% (50 +/- {:.0}), {inside}/{C5_SEEDS} seeds individually inside \
             [min {:.1}, max {:.1}]; planted 2-feature minimal k = {} (peak k {}; {} ...)",
            100.0 * grand,
            100.0 * C5_BAND,
            100.0 * nulls.iter().cloned().fold(f64::MAX, f64::min),
            100.0 * nulls.iter().cloned().fold(f64::MIN, f64::max),
            curve.minimal_k,
            curve.peak_k,
            curve_txt.join(", ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let effects: Vec<FeatureEffect> = Task::ALL
        .iter()
        .enumerate()
        .flat_map(|(i, &task)| [FeatureEffect { task, feature: 2 * i, shift: 0.7 }, FeatureEffect { task, feature: 2 * i + 1, shift: 0.7 }])
        .collect();
    let cfg = FeatureSynthConfig { participant_offset_sd: 2.0, effects, seed: 600, ..FeatureSynthConfig::default() };
    let (m, _) = synth_feature_matrix(&cfg).unwrap();
    let rows = conditioning_benchmark(&m, &Task::ALL, &fast_cv(6)).unwrap();
    let csv = conditioning_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    let schema_ok = lines.len() == 5
        && lines[0] == "Center,Scale,Mean,SEM"
        && ["✓,✓,", "✓,X,", "X,✓,", "X,X,"].iter().zip(&lines[1..]).all(|(p, l)| l.starts_with(p));
    let get = |c: bool, s: bool| rows.iter().find(|r| r.center == c && r.scale == s).unwrap().mean;
    let gain = get(true, false) - get(false, false);
    outcome(
        gain >= C6_MIN_GAIN && schema_ok,
        format!(
            "center-only {:.1}% vs raw {:.1}% (gain {:.1} pts, need >= {:.0}); table [{}], schema {}",
            100.0 * get(true, false),
            100.0 * get(false, false),
            100.0 * gain,
            100.0 * C6_MIN_GAIN,
            lines[1..].join(" | "),
            if schema_ok { "ok" } else { "wrong" }
        ),
    )
}

fn criterion_7() -> Outcome {
    let task = Task::AloneVsSocial;
    let features = [0usize, 10];
    let cfg = FeatureSynthConfig {
        archetypes: Some(FeatureArchetypes { alone: 1, social: 6, features, separation: 8.0 }),
        seed: 700,
        ..FeatureSynthConfig::default()
    };
    let (m, _) = synth_feature_matrix(&cfg).unwrap();
    let run = RunConfig::default();
    let params = HdbscanParams { min_cluster_size: 10, min_samples: 5, ..HdbscanParams::default() };
    let out = cluster_task(&m, task, Some(&features), None, &params, &run).unwrap();
    let social = out.report.class("social").map(|c| (c.count, c.mean_purity)).unwrap_or((0, 0.0));
    let alone = out.report.class("alone").map(|c| (c.count, c.mean_purity)).unwrap_or((0, 0.0));
    let table = out.report.table_csv(task.token());
    let header_ok = table.lines().next() == Some("Task,Label,Count,E[Size],E[Purity],Outliers");
    let n = social.0 + alone.0;
    let purity = out.report.clusters.iter().map(|c| c.purity).sum::<f64>() / n.max(1) as f64;
    outcome(
        (5..=7).contains(&social.0) && alone.0 == 1 && purity >= C7_MIN_PURITY && header_ok,
        format!(
            "social clusters {} (6 +/- 1), alone clusters {}, mean purity {:.1}% (>= {:.0}%), outliers {}/{}; schema {}",
            social.0,
            alone.0,
            100.0 * purity,
            100.0 * C7_MIN_PURITY,
            out.assignment.n_outliers(),
            out.report.n_rows,
            if header_ok { "ok" } else { "wrong" }
        ),
    )
}

fn cli(args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_ctxsense"))
        .args(args)
        .env("CTXSENSE_LOG", "error")
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let other = fs::read_dir(b).unwrap().count();
    if other != names.len() {
        return Err(format!("{} vs {} files", names.len(), other));
    }
    for n in &names {
        if fs::read(a.join(n)).unwrap() != fs::read(b.join(n)).map_err(|e| e.to_string())? {
            return Err(format!("{n:?} differs"));
        }
    }
    Ok(names.len())
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let config = d.join("run.json");
    fs::write(&config, r#"{"cv": {"forest": {"n_trees": 50}, "inner": {"type": "group_k_fold", "folds": 5}}, "stats": {"n_resamples": 2000}, "importance_repeats": 5}"#).unwrap();
    let study = d.join("D");
    let start = Instant::now();
    let mut ok = cli(&["synth", "--preset", "paper594", "--seed", "1", "--out", &s(&study)]);
    // Same arguments twice; each run's outputs are moved aside afterwards.
    let f = d.join("f.csv");
    let r = d.join("r");
    let mut runs = Vec::new();
    let mut first_run = Duration::ZERO;
    for i in 0..2 {
        ok &= cli(&["extract", "--study", &s(&study), "--out", &s(&f)]);
        ok &= cli(&[
            "--config", &s(&config), "--seed", "1", "analyze", "--features", &s(&f), "--task", "all", "--study",
            &s(&study), "--out", &s(&r),
        ]);
        let kept = (d.join(format!("f{i}.csv")), d.join(format!("r{i}")));
        if ok {
            fs::rename(&f, &kept.0).unwrap();
            fs::rename(&r, &kept.1).unwrap();
        }
        runs.push(kept);
        if i == 0 {
            first_run = start.elapsed();
        }
    }
    if !ok {
        return outcome(false, "a CLI step failed".into());
    }
    let m = read_matrix_csv(&fs::read(&runs[0].0).unwrap()).unwrap();
    let n_cols = m.rows.first().map(|r| r.features.to_array().len()).unwrap_or(0);
    let features_same = fs::read(&runs[0].0).unwrap() == fs::read(&runs[1].0).unwrap();
    let reports = same_tree(&runs[0].1, &runs[1].1);
    let pass = m.len() == 594 && n_cols == 13 && features_same && reports.is_ok() && first_run < C8_MAX_RUNTIME;
    outcome(
        pass,
        format!(
            "feature matrix {} x {n_cols} (594 x 13), feature CSV identical: {features_same}, reports: {}, \
             synth + extract + analyze all (both benchmarks) in {:.0} s (< {} s)",
            m.len(),
            match reports {
                Ok(n) => format!("{n} files byte-identical"),
                Err(e) => e,
            },
            first_run.as_secs_f64(),
            C8_MAX_RUNTIME.as_secs()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("closed-loop PPG beat recovery", criterion_1),
        ("NN-cleaning benchmark", criterion_2),
        ("spectral features", criterion_3),
        ("exact statistics oracles", criterion_4),
        ("null calibration and k-best", criterion_5),
        ("conditioning ablation", criterion_6),
        ("clustering archetypes", criterion_7),
        ("end-to-end reproducibility", criterion_8),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {} [{}] {}: {} ({:.1} s)",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
