//! NN-cleaning benchmark: NN features only, one NLOPOCV run per task for
//! every (method, window) cell.

use log::info;
use serde::{Deserialize, Serialize};

use crate::features::{build_task, condition_matrix, FeatureMatrix, Task, NN_FEATURES};
use crate::hrv::NnCleaning;
use crate::learn::{nlopocv, CvConfig, Dataset, LearnError};
use crate::numeric::{mean, sem};

/// Window lengths in seconds; `None` is the whole interval.
pub const DEFAULT_WINDOWS: [Option<f64>; 5] = [Some(30.0), Some(60.0), Some(90.0), Some(120.0), None];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub method: String,
    pub window_s: Option<f64>,
    pub mean_macro_acc: f64,
    pub sem: f64,
    pub per_task: Vec<(Task, f64)>,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMethod {
    pub window_s: Option<f64>,
    pub method: String,
    pub mean_macro_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<BenchmarkCell>,
    pub best: Vec<BestMethod>,
}

impl BenchmarkReport {
    pub fn cell(&self, method: &str, window_s: Option<f64>) -> Option<&BenchmarkCell> {
        self.cells.iter().find(|c| c.method == method && c.window_s == window_s)
    }

    pub fn figure_csv(&self) -> String {
        let mut out = String::from("method,window_s,mean_macro_acc,sem\n");
        for c in &self.cells {
            let w = c.window_s.map(|w| w.to_string()).unwrap_or_else(|| "all".into());
            out.push_str(&format!("{},{},{},{}\n", c.method, w, c.mean_macro_acc, c.sem));
        }
        out
    }
}

/// One cell: participant-centred NN features, all seven used, fold
/// accuracies pooled over `tasks`.
pub fn benchmark_cell(
    method: &NnCleaning,
    window_s: Option<f64>,
    matrix: &FeatureMatrix,
    tasks: &[Task],
    cfg: &CvConfig,
) -> Result<BenchmarkCell, LearnError> {
    let centred = condition_matrix(matrix, true, false);
    let mut pooled = Vec::new();
    let mut per_task = Vec::new();
    for &task in tasks {
        let ds = build_task(&centred, task).map_err(|e| LearnError::Cv(format!("{task}: {e}")))?;
        let r = nlopocv(&Dataset::from_task(&ds, &NN_FEATURES), cfg, NN_FEATURES.len())?;
        per_task.push((task, r.mean));
        pooled.extend(r.accuracies());
    }
    info!("nn benchmark {} / {:?}: {:.3}", method.name(), window_s, mean(&pooled));
    Ok(BenchmarkCell {
        method: method.name().to_string(),
        window_s,
        mean_macro_acc: mean(&pooled),
        sem: sem(&pooled),
        per_task,
        n_folds: pooled.len(),
    })
}

/// `matrices` holds one feature matrix per (method, window) cell, in the
/// order they should be reported.
pub fn nn_filter_benchmark(
    matrices: &[(NnCleaning, Option<f64>, FeatureMatrix)],
    tasks: &[Task],
    cfg: &CvConfig,
) -> Result<BenchmarkReport, LearnError> {
    let cells: Vec<BenchmarkCell> = matrices
        .iter()
        .map(|(m, w, x)| benchmark_cell(m, *w, x, tasks, cfg))
        .collect::<Result<_, _>>()?;
    let mut windows: Vec<Option<f64>> = Vec::new();
    for c in &cells {
        if !windows.contains(&c.window_s) {
            windows.push(c.window_s);
        }
    }
    let best = windows
        .into_iter()
        .map(|w| {
            let mut top: Option<&BenchmarkCell> = None;
            for c in cells.iter().filter(|c| c.window_s == w) {
                if top.is_none_or(|t| c.mean_macro_acc > t.mean_macro_acc) {
                    top = Some(c);
                }
            }
            let t = top.expect("window has at least one cell");
            BestMethod {
                window_s: w,
                method: t.method.clone(),
                mean_macro_acc: t.mean_macro_acc,
            }
        })
        .collect();
    Ok(BenchmarkReport { cells, best })
}
