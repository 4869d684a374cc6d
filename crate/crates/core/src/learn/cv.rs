use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{macro_accuracy, select_k_best, train_forest, Dataset, Forest, ForestParams, LearnError, Selector};
use crate::features::{build_task, condition_matrix, FeatureMatrix, Task, N_FEATURES};
use crate::numeric::{derive_seed, mean, sem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum InnerCv {
    /// Leave one participant out, mirroring the outer loop.
    #[default]
    Lopo,
    /// Participants (sorted) assigned round-robin to `folds` folds.
    GroupKFold { folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub forest: ForestParams,
    pub alphas: Vec<f64>,
    pub selectors: Vec<Selector>,
    pub inner: InnerCv,
    /// Run outer folds on the rayon pool.
    pub parallel: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            alphas: vec![0.0, 0.001, 0.01, 0.05, 0.1],
            selectors: Selector::ALL.to_vec(),
            inner: InnerCv::Lopo,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub participant: String,
    pub macro_accuracy: f64,
    pub ccp_alpha: f64,
    /// `None` when every feature was used.
    pub selector: Option<Selector>,
    /// Source feature columns used by the refit model.
    pub features: Vec<usize>,
    pub n_test: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    /// Held-out participants with a single class.
    pub skipped: Vec<String>,
    pub mean: f64,
    pub sem: f64,
}

impl CvReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.macro_accuracy).collect()
    }
}

/// Candidate column sets for the grid: one per selector, deduplicated, or
/// all columns when `k >= d`.
fn candidate_sets(train: &Dataset, k: usize, selectors: &[Selector]) -> Result<Vec<(Option<Selector>, Vec<usize>)>, LearnError> {
    if k >= train.d {
        return Ok(vec![(None, (0..train.d).collect())]);
    }
    let mut out: Vec<(Option<Selector>, Vec<usize>)> = Vec::new();
    for &s in selectors {
        out.push((Some(s), select_k_best(train, k, s)?));
    }
    Ok(out)
}

fn has_both_classes(y: &[u8]) -> bool {
    y.contains(&0) && y.contains(&1)
}

fn fit(train: &Dataset, cols: &[usize], params: &ForestParams, seed: u64) -> Result<Forest, LearnError> {
    train_forest(&train.select_columns(cols), &ForestParams { seed, ccp_alpha: 0.0, ..*params })
}

/// Inner model selection: returns (selector, alpha) maximising mean inner
/// macro-accuracy, ties to grid order.
fn tune(train: &Dataset, k: usize, cfg: &CvConfig, seed: u64) -> Result<(usize, usize), LearnError> {
    let groups = train.present_groups();
    let folds: Vec<Vec<usize>> = match cfg.inner {
        InnerCv::Lopo => groups.iter().map(|&g| vec![g]).collect(),
        InnerCv::GroupKFold { folds } => {
            let f = folds.clamp(2, groups.len().max(2));
            (0..f)
                .map(|i| groups.iter().enumerate().filter(|(j, _)| j % f == i).map(|(_, &g)| g).collect())
                .collect()
        }
    };
    let n_sel = if k >= train.d { 1 } else { cfg.selectors.len() };
    let mut sums = vec![0.0; n_sel * cfg.alphas.len()];
    let mut used = 0usize;
    for (fi, held) in folds.iter().enumerate() {
        let (test_rows, train_rows): (Vec<usize>, Vec<usize>) = (0..train.n).partition(|&i| held.contains(&train.groups[i]));
        if test_rows.is_empty() || train_rows.is_empty() {
            continue;
        }
        let inner_train = train.subset(&train_rows);
        let inner_test = train.subset(&test_rows);
        if !has_both_classes(&inner_test.y) || !has_both_classes(&inner_train.y) {
            continue;
        }
        let sets = candidate_sets(&inner_train, k, &cfg.selectors)?;
        let fold_seed = derive_seed(seed, fi as u64);
        let mut scores: Vec<Vec<f64>> = Vec::with_capacity(sets.len());
        for (si, (_, cols)) in sets.iter().enumerate() {
            if let Some(prev) = sets[..si].iter().position(|(_, c)| c == cols) {
                scores.push(scores[prev].clone());
                continue;
            }
            let mut forest = fit(&inner_train, cols, &cfg.forest, fold_seed)?;
            let test = inner_test.select_columns(cols);
            let mut row = Vec::with_capacity(cfg.alphas.len());
            for &a in &cfg.alphas {
                forest.set_alpha(a);
                row.push(macro_accuracy(&test.y, &forest.predict(&test))?);
            }
            scores.push(row);
        }
        for (si, row) in scores.iter().enumerate() {
            for (ai, v) in row.iter().enumerate() {
                sums[si * cfg.alphas.len() + ai] += v;
            }
        }
        used += 1;
    }
    if used == 0 {
        debug!("no usable inner fold; falling back to the first grid point");
        return Ok((0, 0));
    }
    let mut best = 0;
    for (i, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = i;
        }
    }
    Ok((best / cfg.alphas.len(), best % cfg.alphas.len()))
}

/// Nested leave-one-participant-out evaluation with `k` selected features.
pub fn nlopocv(data: &Dataset, cfg: &CvConfig, k: usize) -> Result<CvReport, LearnError> {
    if cfg.alphas.is_empty() || cfg.selectors.is_empty() {
        return Err(LearnError::Params("empty hyperparameter grid".into()));
    }
    if k == 0 || k > data.d {
        return Err(LearnError::Params(format!("k = {k} outside 1..={}", data.d)));
    }
    let groups = data.present_groups();
    if groups.len() < 3 {
        return Err(LearnError::Cv(format!("need at least 3 participants, got {}", groups.len())));
    }
    let run = |(oi, &g): (usize, &usize)| -> Result<Option<FoldResult>, LearnError> {
        let (test_rows, train_rows): (Vec<usize>, Vec<usize>) = (0..data.n).partition(|&i| data.groups[i] == g);
        assert!(
            train_rows.iter().all(|&i| data.groups[i] != g),
            "held-out participant leaked into training rows"
        );
        let test = data.subset(&test_rows);
        if !has_both_classes(&test.y) {
            return Ok(None);
        }
        let train = data.subset(&train_rows);
        if !has_both_classes(&train.y) {
            return Err(LearnError::Cv(format!("training data without participant {g} has one class")));
        }
        let seed = derive_seed(cfg.forest.seed, oi as u64);
        let (si, ai) = tune(&train, k, cfg, seed)?;
        let sets = candidate_sets(&train, k, &cfg.selectors)?;
        let (selector, cols) = sets[si.min(sets.len() - 1)].clone();
        let alpha = cfg.alphas[ai];
        let mut forest = fit(&train, &cols, &cfg.forest, derive_seed(seed, u64::MAX))?;
        forest.set_alpha(alpha);
        let test_sel = test.select_columns(&cols);
        let acc = macro_accuracy(&test_sel.y, &forest.predict(&test_sel))?;
        Ok(Some(FoldResult {
            participant: data.group_names[g].clone(),
            macro_accuracy: acc,
            ccp_alpha: alpha,
            selector,
            features: cols.iter().map(|&c| data.columns[c]).collect(),
            n_test: test.n,
            n_train: train.n,
        }))
    };
    let results: Vec<Result<Option<FoldResult>, LearnError>> = if cfg.parallel {
        groups.par_iter().enumerate().map(run).collect()
    } else {
        groups.iter().enumerate().map(run).collect()
    };
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for (r, &g) in results.into_iter().zip(&groups) {
        match r? {
            Some(f) => folds.push(f),
            None => skipped.push(data.group_names[g].clone()),
        }
    }
    if !skipped.is_empty() {
        info!("{} outer fold(s) skipped: held-out participant has one class", skipped.len());
    }
    if folds.is_empty() {
        return Err(LearnError::Cv("every outer fold was skipped".into()));
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.macro_accuracy).collect();
    Ok(CvReport {
        k,
        mean: mean(&accs),
        sem: sem(&accs),
        folds,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KBestPoint {
    pub k: usize,
    pub mean: f64,
    pub sem: f64,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KBestCurve {
    pub points: Vec<KBestPoint>,
    pub peak_k: usize,
    /// Smallest k whose mean is within one SEM of the peak mean.
    pub minimal_k: usize,
    pub reports: Vec<CvReport>,
}

impl KBestCurve {
    pub fn figure_csv(&self) -> String {
        let mut out = String::from("k,mean,sem,n_folds\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.k, p.mean, p.sem, p.n_folds));
        }
        out
    }
}

pub fn kbest_curve(data: &Dataset, cfg: &CvConfig) -> Result<KBestCurve, LearnError> {
    let reports: Vec<CvReport> = (1..=data.d).map(|k| nlopocv(data, cfg, k)).collect::<Result<_, _>>()?;
    let points: Vec<KBestPoint> = reports
        .iter()
        .map(|r| KBestPoint {
            k: r.k,
            mean: r.mean,
            sem: r.sem,
            n_folds: r.folds.len(),
        })
        .collect();
    let mut peak = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean > points[peak].mean {
            peak = i;
        }
    }
    let bar = points[peak].mean - points[peak].sem;
    let minimal = points.iter().position(|p| p.mean >= bar).unwrap_or(peak);
    Ok(KBestCurve {
        peak_k: points[peak].k,
        minimal_k: points[minimal].k,
        points,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningRow {
    pub center: bool,
    pub scale: bool,
    /// Mean macro-accuracy over the outer folds of every task.
    pub mean: f64,
    pub sem: f64,
    pub per_task: Vec<(Task, f64)>,
}

/// Rows in the order (center, scale) = (yes, yes), (yes, no), (no, yes), (no, no).
pub fn conditioning_benchmark(matrix: &FeatureMatrix, tasks: &[Task], cfg: &CvConfig) -> Result<Vec<ConditioningRow>, LearnError> {
    let all: Vec<usize> = (0..N_FEATURES).collect();
    [(true, true), (true, false), (false, true), (false, false)]
        .into_iter()
        .map(|(center, scale)| {
            let conditioned = condition_matrix(matrix, center, scale);
            let mut pooled = Vec::new();
            let mut per_task = Vec::new();
            for &task in tasks {
                let ds = build_task(&conditioned, task).map_err(|e| LearnError::Cv(e.to_string()))?;
                let r = nlopocv(&Dataset::from_task(&ds, &all), cfg, N_FEATURES)?;
                per_task.push((task, r.mean));
                pooled.extend(r.accuracies());
            }
            Ok(ConditioningRow {
                center,
                scale,
                mean: mean(&pooled),
                sem: sem(&pooled),
                per_task,
            })
        })
        .collect()
}

/// Table form: check mark or X per flag, mean and SEM in percent.
pub fn conditioning_csv(rows: &[ConditioningRow]) -> String {
    let mark = |b: bool| if b { "\u{2713}" } else { "X" };
    let mut out = String::from("Center,Scale,Mean,SEM\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.1},{:.1}\n",
            mark(r.center),
            mark(r.scale),
            100.0 * r.mean,
            100.0 * r.sem
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Participants with `per` rows each, labels alternating; `signal`
    /// shifts the first `informative` columns by the label.
    pub(crate) fn grouped_data(participants: usize, per: usize, d: usize, informative: usize, signal: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        for p in 0..participants {
            for r in 0..per {
                let label = (r % 2) as u8;
                rows.push(
                    (0..d)
                        .map(|j| {
                            let base: f64 = rng.random_range(-1.0..1.0);
                            if j < informative { base + signal * label as f64 } else { base }
                        })
                        .collect(),
                );
                y.push(label);
                groups.push(p);
            }
        }
        Dataset::new(rows, y, groups, (0..participants).map(|p| format!("P{p:02}")).collect())
    }

    fn small_cfg(seed: u64) -> CvConfig {
        CvConfig {
            forest: ForestParams { n_trees: 15, seed, ..ForestParams::default() },
            inner: InnerCv::GroupKFold { folds: 3 },
            ..CvConfig::default()
        }
    }

    #[test]
    fn separable_task_scores_high() {
        let d = grouped_data(8, 6, 4, 1, 5.0, 1);
        let r = nlopocv(&d, &small_cfg(1), 2).unwrap();
        assert_eq!(r.folds.len(), 8);
        assert!(r.mean >= 0.95, "{}", r.mean);
        for f in &r.folds {
            assert!(f.features.contains(&0));
        }
    }

    #[test]
    fn single_class_participant_is_skipped() {
        let mut d = grouped_data(5, 4, 3, 1, 5.0, 2);
        for i in 0..d.n {
            if d.groups[i] == 2 {
                d.y[i] = 1;
            }
        }
        let r = nlopocv(&d, &small_cfg(2), 3).unwrap();
        assert_eq!(r.skipped, vec!["P02".to_string()]);
        assert_eq!(r.folds.len(), 4);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let d = grouped_data(6, 4, 5, 2, 1.0, 3);
        let mut cfg = small_cfg(3);
        cfg.inner = InnerCv::Lopo;
        let a = nlopocv(&d, &cfg, 2).unwrap();
        cfg.parallel = false;
        let b = nlopocv(&d, &cfg, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_participants() {
        let d = grouped_data(2, 4, 3, 1, 1.0, 4);
        assert!(matches!(nlopocv(&d, &small_cfg(0), 1), Err(LearnError::Cv(_))));
    }
}
