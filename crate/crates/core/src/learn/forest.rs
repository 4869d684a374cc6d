use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, LearnError, Tree};
use crate::numeric::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// floor(sqrt(d)), at least 1.
    #[default]
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::All => d,
            MaxFeatures::Count(k) => k.min(d),
        };
        m.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub ccp_alpha: f64,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_features: MaxFeatures::Sqrt,
            ccp_alpha: 0.0,
            seed: 0,
            bootstrap: true,
        }
    }
}

/// Bagged, fully grown trees. Pruning is applied at prediction time through
/// per-tree collapse flags, so one fit serves every `ccp_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    /// Bootstrap count of each training row, per tree.
    inbag: Vec<Vec<u32>>,
    n_classes: usize,
    d: usize,
    alpha: f64,
    collapsed: Vec<Vec<bool>>,
}

pub fn train_forest(data: &Dataset, params: &ForestParams) -> Result<Forest, LearnError> {
    if params.n_trees == 0 {
        return Err(LearnError::Params("n_trees must be at least 1".into()));
    }
    if !(params.ccp_alpha >= 0.0) {
        return Err(LearnError::Params(format!("ccp_alpha {} is negative", params.ccp_alpha)));
    }
    if data.n == 0 || data.d == 0 {
        return Err(LearnError::Train("empty training data".into()));
    }
    if data.x.iter().any(|v| !v.is_finite()) {
        return Err(LearnError::Train("non-finite feature value".into()));
    }
    let n_classes = data.n_classes().max(2);
    let mut present = vec![false; n_classes];
    data.y.iter().for_each(|&c| present[c as usize] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(LearnError::Train("need at least two classes".into()));
    }
    let mtry = params.max_features.resolve(data.d);
    let grown: Vec<(Tree, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let mut counts = vec![0u32; data.n];
            if params.bootstrap {
                for _ in 0..data.n {
                    counts[rng.random_range(0..data.n)] += 1;
                }
            } else {
                counts.iter_mut().for_each(|c| *c = 1);
            }
            (Tree::grow(data, &counts, n_classes, mtry, &mut rng), counts)
        })
        .collect();
    let (trees, inbag) = grown.into_iter().unzip();
    let mut forest = Forest {
        trees,
        inbag,
        n_classes,
        d: data.d,
        alpha: 0.0,
        collapsed: Vec::new(),
    };
    forest.set_alpha(params.ccp_alpha);
    Ok(forest)
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Re-prune every tree at `alpha`.
    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
        self.collapsed = self.trees.iter().map(|t| t.collapse_flags(alpha)).collect();
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.set_alpha(alpha);
        self
    }

    fn vote<'a>(&self, row: &[f64], trees: impl Iterator<Item = &'a usize>) -> u8 {
        let mut votes = [0u32; 8];
        let mut big = vec![0u32; if self.n_classes > 8 { self.n_classes } else { 0 }];
        for &t in trees {
            let c = self.trees[t].predict_row(row, Some(&self.collapsed[t])) as usize;
            if self.n_classes > 8 {
                big[c] += 1;
            } else {
                votes[c] += 1;
            }
        }
        let v: &[u32] = if self.n_classes > 8 { &big } else { &votes[..self.n_classes] };
        let mut best = 0;
        for (k, &c) in v.iter().enumerate() {
            if c > v[best] {
                best = k;
            }
        }
        best as u8
    }

    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let all: Vec<usize> = (0..self.trees.len()).collect();
        self.vote(row, all.iter())
    }

    pub fn predict(&self, data: &Dataset) -> Vec<u8> {
        assert_eq!(data.d, self.d, "feature count mismatch");
        let all: Vec<usize> = (0..self.trees.len()).collect();
        (0..data.n).map(|i| self.vote(data.row(i), all.iter())).collect()
    }

    /// Out-of-bag predictions for the training rows (`data` must be the
    /// training set, possibly with columns permuted). Rows that are in-bag
    /// for every tree use all trees.
    pub fn oob_predict(&self, data: &Dataset) -> Vec<u8> {
        assert_eq!(data.d, self.d, "feature count mismatch");
        let all: Vec<usize> = (0..self.trees.len()).collect();
        (0..data.n)
            .map(|i| {
                let oob: Vec<usize> = (0..self.trees.len()).filter(|&t| self.inbag[t].get(i) == Some(&0)).collect();
                if oob.is_empty() {
                    self.vote(data.row(i), all.iter())
                } else {
                    self.vote(data.row(i), oob.iter())
                }
            })
            .collect()
    }
}
