//! HDBSCAN over Euclidean distance and per-class purity summaries.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("{n} rows is fewer than min_cluster_size {min}")]
    TooFewRows { n: usize, min: usize },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSelection {
    /// Excess of mass.
    #[default]
    Eom,
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub selection: ClusterSelection,
    /// Let the root of the condensed tree be selected.
    pub allow_single_cluster: bool,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 5,
            min_samples: 5,
            selection: ClusterSelection::Eom,
            allow_single_cluster: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster per row, -1 for outliers.
    pub labels: Vec<i64>,
    /// Stability of each selected cluster, indexed by label.
    pub stabilities: Vec<f64>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.stabilities.len()
    }

    pub fn n_outliers(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters()];
        for &l in &self.labels {
            if l >= 0 {
                s[l as usize] += 1;
            }
        }
        s
    }
}

/// Lambda used for zero distances (exact duplicates).
const MAX_LAMBDA: f64 = 1e300;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Prim's algorithm on the dense mutual-reachability graph. Returns edges
/// (a, b, weight) sorted by weight, ties by insertion order.
fn mst(x: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = x.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let mr = dist(&x[cur], &x[j]).max(core[cur]).max(core[j]);
            if mr < best[j] {
                best[j] = mr;
                from[j] = cur;
            }
            if next == usize::MAX || best[j] < best[next] {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        cur = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    edges
}

struct Dendrogram {
    /// Merge i creates node n + i from two children at a distance.
    merges: Vec<(usize, usize, f64)>,
    sizes: Vec<usize>,
    n: usize,
}

impl Dendrogram {
    fn from_mst(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut parent: Vec<usize> = (0..2 * n).collect();
        let mut sizes = vec![1usize; n];
        let mut merges = Vec::with_capacity(edges.len());
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(a, b, w) in edges {
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            let node = n + merges.len();
            parent[ra] = node;
            parent[rb] = node;
            sizes.push(sizes[ra] + sizes[rb]);
            merges.push((ra, rb, w));
        }
        Dendrogram { merges, sizes, n }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < self.n {
                out.push(v);
            } else {
                let (a, b, _) = self.merges[v - self.n];
                stack.push(a);
                stack.push(b);
            }
        }
    }
}

/// Condensed tree: clusters indexed from 0 (the root), each child cluster
/// created after its parent.
struct Condensed {
    parent: Vec<usize>,
    birth: Vec<f64>,
    children: Vec<Vec<usize>>,
    stability: Vec<f64>,
    /// (cluster, lambda) at which each point leaves the tree.
    fall: Vec<(usize, f64)>,
}

fn condense(dendro: &Dendrogram, min_cluster_size: usize) -> Condensed {
    let n = dendro.n;
    let mut c = Condensed {
        parent: vec![0],
        birth: vec![0.0],
        children: vec![Vec::new()],
        stability: vec![0.0],
        fall: vec![(0, 0.0); n],
    };
    if n < 2 {
        return c;
    }
    let root = 2 * n - 2;
    let mut queue = VecDeque::from([(root, 0usize)]);
    let mut leaves = Vec::new();
    while let Some((node, cl)) = queue.pop_front() {
        if node < n {
            c.fall[node] = (cl, f64::INFINITY);
            continue;
        }
        let d = dendro.merges[node - n].2;
        let lambda = if d > 0.0 { (1.0 / d).min(MAX_LAMBDA) } else { MAX_LAMBDA };
        // Merges tied at this distance form one multi-way split, so the
        // result does not depend on the order ties were merged in.
        let mut parts = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v >= n && dendro.merges[v - n].2 == d {
                let (a, b, _) = dendro.merges[v - n];
                stack.push(b);
                stack.push(a);
            } else {
                parts.push(v);
            }
        }
        let n_big = parts.iter().filter(|&&v| dendro.sizes[v] >= min_cluster_size).count();
        for &child in &parts {
            let size = dendro.sizes[child];
            if size < min_cluster_size {
                leaves.clear();
                dendro.leaves(child, &mut leaves);
                for &p in &leaves {
                    c.fall[p] = (cl, lambda);
                    c.stability[cl] += lambda - c.birth[cl];
                }
            } else if n_big >= 2 {
                let id = c.parent.len();
                c.parent.push(cl);
                c.birth.push(lambda);
                c.children.push(Vec::new());
                c.stability.push(0.0);
                c.children[cl].push(id);
                c.stability[cl] += (lambda - c.birth[cl]) * size as f64;
                queue.push_back((child, id));
            } else {
                queue.push_back((child, cl));
            }
        }
    }
    c
}

fn select(c: &Condensed, params: &HdbscanParams) -> Vec<bool> {
    let k = c.parent.len();
    let mut selected = vec![false; k];
    let first = if params.allow_single_cluster { 0 } else { 1 };
    match params.selection {
        ClusterSelection::Leaf => {
            for i in first..k {
                selected[i] = c.children[i].is_empty();
            }
        }
        ClusterSelection::Eom => {
            let mut subtree = c.stability.clone();
            for i in (first..k).rev() {
                if c.children[i].is_empty() {
                    selected[i] = true;
                    continue;
                }
                let child_sum: f64 = c.children[i].iter().map(|&ch| subtree[ch]).sum();
                if child_sum > c.stability[i] {
                    subtree[i] = child_sum;
                } else {
                    selected[i] = true;
                    let mut stack = c.children[i].clone();
                    while let Some(d) = stack.pop() {
                        selected[d] = false;
                        stack.extend(&c.children[d]);
                    }
                }
            }
        }
    }
    selected
}

pub fn hdbscan_fit(x: &[Vec<f64>], params: &HdbscanParams) -> Result<ClusterAssignment, ClusterError> {
    if params.min_cluster_size < 2 {
        return Err(ClusterError::Params("min_cluster_size must be at least 2".into()));
    }
    if params.min_samples < 1 {
        return Err(ClusterError::Params("min_samples must be at least 1".into()));
    }
    let n = x.len();
    if n < params.min_cluster_size {
        return Err(ClusterError::TooFewRows {
            n,
            min: params.min_cluster_size,
        });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(ClusterError::Input("rows must have equal length and finite values".into()));
    }
    let k = params.min_samples.min(n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut ds: Vec<f64> = (0..n).map(|j| dist(&x[i], &x[j])).collect();
            let (_, kth, _) = ds.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect();
    let dendro = Dendrogram::from_mst(n, &mst(x, &core));
    let condensed = condense(&dendro, params.min_cluster_size);
    let selected = select(&condensed, params);

    let mut label_of = vec![-1i64; selected.len()];
    let mut stabilities = Vec::new();
    for (i, &s) in selected.iter().enumerate() {
        if s {
            label_of[i] = stabilities.len() as i64;
            stabilities.push(condensed.stability[i]);
        }
    }
    let labels = (0..n)
        .map(|p| {
            let mut cl = condensed.fall[p].0;
            loop {
                if selected[cl] {
                    return label_of[cl];
                }
                if cl == 0 {
                    return -1;
                }
                cl = condensed.parent[cl];
            }
        })
        .collect();
    Ok(ClusterAssignment { labels, stabilities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassClusterSummary {
    pub label: String,
    /// Clusters whose majority is this class.
    pub count: usize,
    pub mean_size: f64,
    pub mean_purity: f64,
    /// Outlier rows carrying this class label.
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDetail {
    pub label: i64,
    pub size: usize,
    pub majority: String,
    pub purity: f64,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub classes: Vec<ClassClusterSummary>,
    pub clusters: Vec<ClusterDetail>,
    pub n_rows: usize,
}

impl ClusterReport {
    pub fn class(&self, name: &str) -> Option<&ClassClusterSummary> {
        self.classes.iter().find(|c| c.label == name)
    }

    /// One row per class label; purity in percent.
    pub fn table_csv(&self, task: &str) -> String {
        let mut out = String::from("Task,Label,Count,E[Size],E[Purity],Outliers\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{task},{},{},{:.1},{:.1},{}\n",
                c.label,
                c.count,
                c.mean_size,
                100.0 * c.mean_purity,
                c.outliers
            ));
        }
        out
    }
}

/// `class_labels[i]` indexes `class_names`. Majority ties go to the lower
/// class index.
pub fn cluster_report(assignment: &ClusterAssignment, class_labels: &[usize], class_names: &[String]) -> Result<ClusterReport, ClusterError> {
    let n = assignment.labels.len();
    if class_labels.len() != n {
        return Err(ClusterError::Input("labels and class labels differ in length".into()));
    }
    if class_labels.iter().any(|&c| c >= class_names.len()) {
        return Err(ClusterError::Input("class label out of range".into()));
    }
    let nc = assignment.n_clusters();
    let mut counts = vec![vec![0usize; class_names.len()]; nc];
    let mut outliers = vec![0usize; class_names.len()];
    for (&l, &c) in assignment.labels.iter().zip(class_labels) {
        if l < 0 {
            outliers[c] += 1;
        } else {
            counts[l as usize][c] += 1;
        }
    }
    let clusters: Vec<ClusterDetail> = counts
        .iter()
        .enumerate()
        .map(|(l, cnt)| {
            let size: usize = cnt.iter().sum();
            let mut maj = 0;
            for (c, &v) in cnt.iter().enumerate() {
                if v > cnt[maj] {
                    maj = c;
                }
            }
            ClusterDetail {
                label: l as i64,
                size,
                majority: class_names[maj].clone(),
                purity: if size > 0 { cnt[maj] as f64 / size as f64 } else { 0.0 },
                stability: assignment.stabilities[l],
            }
        })
        .collect();
    let classes = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let mine: Vec<&ClusterDetail> = clusters.iter().filter(|d| &d.majority == name).collect();
            let k = mine.len();
            ClassClusterSummary {
                label: name.clone(),
                count: k,
                mean_size: if k > 0 { mine.iter().map(|d| d.size as f64).sum::<f64>() / k as f64 } else { 0.0 },
                mean_purity: if k > 0 { mine.iter().map(|d| d.purity).sum::<f64>() / k as f64 } else { 0.0 },
                outliers: outliers[c],
            }
        })
        .collect();
    Ok(ClusterReport {
        classes,
        clusters,
        n_rows: n,
    })
}

/// Selected-feature coordinates with class and cluster label, for plotting.
pub fn points_csv(ids: &[String], feature_names: &[&str], x: &[Vec<f64>], classes: &[String], labels: &[i64]) -> String {
    let mut out = String::from("id");
    for f in feature_names {
        out.push(',');
        out.push_str(f);
    }
    out.push_str(",class,cluster\n");
    for i in 0..x.len() {
        out.push_str(&ids[i]);
        for v in &x[i] {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", classes[i], labels[i]));
    }
    out
}
