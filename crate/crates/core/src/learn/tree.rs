//! Weighted CART with Gini impurity and minimal cost-complexity pruning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    /// Majority class of the node's weighted samples (ties to the lower class).
    class: u8,
    /// Node weight share times Gini impurity.
    cost: f64,
}

/// A fully grown tree. Nodes are in pre-order, so children follow parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

struct Grower<'a, R: Rng> {
    data: &'a Dataset,
    weights: &'a [u32],
    n_classes: usize,
    mtry: usize,
    total_weight: f64,
    rng: &'a mut R,
    nodes: Vec<Node>,
    pairs: Vec<(f64, u32)>,
}

fn gini(counts: &[f64], w: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / w) * (c / w)).sum::<f64>()
}

fn majority(counts: &[f64]) -> u8 {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best as u8
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, samples: &mut [u32]) -> u32 {
        let mut counts = vec![0.0; self.n_classes];
        for &s in samples.iter() {
            counts[self.data.y[s as usize] as usize] += self.weights[s as usize] as f64;
        }
        let w: f64 = counts.iter().sum();
        let impurity = gini(&counts, w);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            class: majority(&counts),
            cost: w / self.total_weight * impurity,
        });
        if samples.len() < 2 || impurity <= 0.0 {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(samples, &counts) else {
            return id;
        };
        let mut split = 0;
        for i in 0..samples.len() {
            if self.data.value(samples[i] as usize, feature) <= threshold {
                samples.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = samples.split_at_mut(split);
        let left = self.grow(l);
        let right = self.grow(r);
        let node = &mut self.nodes[id as usize];
        node.feature = feature as u32;
        node.threshold = threshold;
        node.left = left;
        node.right = right;
        id
    }

    /// Features are drawn without replacement until `mtry` non-constant ones
    /// have been evaluated or none remain.
    fn best_split(&mut self, samples: &[u32], counts: &[f64]) -> Option<(usize, f64)> {
        let d = self.data.d;
        let mut order: Vec<usize> = (0..d).collect();
        let mut remaining = d;
        let mut evaluated = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        let w: f64 = counts.iter().sum();
        let mut left = vec![0.0; self.n_classes];
        while remaining > 0 && evaluated < self.mtry {
            let k = self.rng.random_range(0..remaining);
            order.swap(k, remaining - 1);
            let f = order[remaining - 1];
            remaining -= 1;

            self.pairs.clear();
            self.pairs
                .extend(samples.iter().map(|&s| (self.data.value(s as usize, f), s)));
            let (lo, hi) = self
                .pairs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
            if lo >= hi {
                continue;
            }
            evaluated += 1;
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            left.iter_mut().for_each(|c| *c = 0.0);
            let mut wl = 0.0;
            for p in 0..self.pairs.len() - 1 {
                let (v, s) = self.pairs[p];
                let sw = self.weights[s as usize] as f64;
                left[self.data.y[s as usize] as usize] += sw;
                wl += sw;
                let next = self.pairs[p + 1].0;
                if next <= v {
                    continue;
                }
                let wr = w - wl;
                // Maximising sum c^2/w over children minimises weighted Gini.
                let mut score = 0.0;
                for (c, &lc) in counts.iter().zip(&left) {
                    let rc = c - lc;
                    score += lc * lc / wl + if wr > 0.0 { rc * rc / wr } else { 0.0 };
                }
                if best.is_none_or(|b| score > b.0) {
                    let mut thr = 0.5 * (v + next);
                    if thr >= next {
                        thr = v;
                    }
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl Tree {
    /// Grow on rows with nonzero `weights` (bootstrap counts).
    pub(crate) fn grow<R: Rng>(data: &Dataset, weights: &[u32], n_classes: usize, mtry: usize, rng: &mut R) -> Tree {
        let mut samples: Vec<u32> = (0..data.n as u32).filter(|&i| weights[i as usize] > 0).collect();
        let total_weight: f64 = weights.iter().map(|&w| w as f64).sum();
        let mut g = Grower {
            data,
            weights,
            n_classes: n_classes.max(2),
            mtry: mtry.max(1),
            total_weight,
            rng,
            nodes: Vec::new(),
            pairs: Vec::with_capacity(samples.len()),
        };
        g.grow(&mut samples);
        Tree { nodes: g.nodes }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self, collapsed: Option<&[bool]>) -> usize {
        let mut stack = vec![0u32];
        let mut leaves = 0;
        while let Some(t) = stack.pop() {
            let n = &self.nodes[t as usize];
            if n.feature == LEAF || collapsed.is_some_and(|c| c[t as usize]) {
                leaves += 1;
            } else {
                stack.push(n.left);
                stack.push(n.right);
            }
        }
        leaves
    }

    /// Internal nodes that become leaves in the smallest subtree minimising
    /// `cost + alpha * leaves`. No pruning at `alpha <= 0`.
    pub fn collapse_flags(&self, alpha: f64) -> Vec<bool> {
        let mut collapsed = vec![false; self.nodes.len()];
        if !(alpha > 0.0) {
            return collapsed;
        }
        let mut best = vec![0.0; self.nodes.len()];
        for t in (0..self.nodes.len()).rev() {
            let n = &self.nodes[t];
            let as_leaf = n.cost + alpha;
            if n.feature == LEAF {
                best[t] = as_leaf;
            } else {
                let sub = best[n.left as usize] + best[n.right as usize];
                if as_leaf <= sub {
                    collapsed[t] = true;
                    best[t] = as_leaf;
                } else {
                    best[t] = sub;
                }
            }
        }
        collapsed
    }

    pub fn predict_row(&self, row: &[f64], collapsed: Option<&[bool]>) -> u8 {
        let mut t = 0usize;
        loop {
            let n = &self.nodes[t];
            if n.feature == LEAF || collapsed.is_some_and(|c| c[t]) {
                return n.class;
            }
            t = if row[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }
}
