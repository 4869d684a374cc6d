//! Random forests, nested leave-one-participant-out evaluation, k-best
//! curves, permutation importance and the conditioning ablation.

mod cv;
mod forest;
mod importance;
mod select;
mod tree;

pub use cv::{
    conditioning_benchmark, conditioning_csv, kbest_curve, nlopocv, ConditioningRow, CvConfig, CvReport, FoldResult, InnerCv,
    KBestCurve, KBestPoint,
};
pub use forest::{train_forest, Forest, ForestParams, MaxFeatures};
pub use importance::{permutation_importance, FeatureImportance};
pub use select::{anova_f, mutual_information, select_k_best, Selector};
pub use tree::Tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::TaskDataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("training error: {0}")]
    Train(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("cross-validation error: {0}")]
    Cv(String),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// Dense row-major design matrix with labels and participant groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub y: Vec<u8>,
    /// Group index per row into `group_names`.
    pub groups: Vec<usize>,
    pub group_names: Vec<String>,
    /// Source column index of each of the `d` columns.
    pub columns: Vec<usize>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<u8>, groups: Vec<usize>, group_names: Vec<String>) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == d), "ragged design matrix");
        assert_eq!(y.len(), n);
        assert_eq!(groups.len(), n);
        Self {
            x: rows.into_iter().flatten().collect(),
            n,
            d,
            y,
            groups,
            group_names,
            columns: (0..d).collect(),
        }
    }

    /// Rows of a task restricted to the given feature columns.
    pub fn from_task(task: &TaskDataset, cols: &[usize]) -> Self {
        let mut ds = Dataset::new(task.columns(cols), task.labels(), task.group_ids(), task.groups.clone());
        ds.columns = cols.to_vec();
        ds
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.d + j]
    }

    pub fn n_classes(&self) -> usize {
        self.y.iter().map(|&c| c as usize + 1).max().unwrap_or(0)
    }

    /// Subset of rows, same columns.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            x,
            n: rows.len(),
            d: self.d,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            groups: rows.iter().map(|&i| self.groups[i]).collect(),
            group_names: self.group_names.clone(),
            columns: self.columns.clone(),
        }
    }

    /// Same rows, only the given local columns.
    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            let r = self.row(i);
            x.extend(cols.iter().map(|&j| r[j]));
        }
        Dataset {
            x,
            n: self.n,
            d: cols.len(),
            y: self.y.clone(),
            groups: self.groups.clone(),
            group_names: self.group_names.clone(),
            columns: cols.iter().map(|&j| self.columns[j]).collect(),
        }
    }

    pub fn with_labels(&self, y: Vec<u8>) -> Dataset {
        assert_eq!(y.len(), self.n);
        Dataset { y, ..self.clone() }
    }

    /// Distinct groups present, ascending.
    pub fn present_groups(&self) -> Vec<usize> {
        let mut g = self.groups.clone();
        g.sort_unstable();
        g.dedup();
        g
    }
}

/// Mean per-class recall. Every class that is predicted or present must
/// occur in `y_true`.
pub fn macro_accuracy(y_true: &[u8], y_pred: &[u8]) -> Result<f64, LearnError> {
    if y_true.len() != y_pred.len() {
        return Err(LearnError::Metric(format!(
            "length mismatch: {} true, {} predicted",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = y_true.iter().chain(y_pred).map(|&c| c as usize + 1).max().unwrap_or(0).max(2);
    let mut total = vec![0usize; k];
    let mut hit = vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        total[t as usize] += 1;
        if t == p {
            hit[t as usize] += 1;
        }
    }
    if let Some(c) = total.iter().position(|&t| t == 0) {
        return Err(LearnError::Metric(format!("class {c} absent from y_true")));
    }
    Ok(hit.iter().zip(&total).map(|(&h, &t)| h as f64 / t as f64).sum::<f64>() / k as f64)
}
