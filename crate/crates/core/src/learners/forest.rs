//! Bagged CART-style regression trees with per-split feature subsampling.
//!
//! Splits maximize the reduction in within-node sum of squares. For 0/1
//! targets this ordering is identical to Gini-impurity reduction (node Gini
//! is twice the node variance), so probability and regression targets share
//! one grower. Candidate thresholds come from per-feature quantile bins
//! computed once on the training data.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math::derive_seed;
use crate::matrix::Matrix;

const MAX_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 200, max_depth: 8, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature as usize] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    dim: usize,
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        s / self.trees.len() as f64
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

/// Quantile cut points for one feature; `x <= cuts[b]` iff `bin(x) <= b`.
fn cut_points(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    if v.len() <= 1 {
        return Vec::new();
    }
    if v.len() <= MAX_BINS {
        return v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let mut cuts = Vec::with_capacity(MAX_BINS - 1);
    for b in 1..MAX_BINS {
        let pos = b * (v.len() - 1) / MAX_BINS;
        let c = 0.5 * (v[pos] + v[pos + 1]);
        if cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }
    cuts
}

struct Binned {
    /// bins[j][i]: bin of row i for feature j.
    bins: Vec<Vec<u8>>,
    cuts: Vec<Vec<f64>>,
}

impl Binned {
    fn new(x: &Matrix) -> Self {
        let mut bins = Vec::with_capacity(x.cols());
        let mut cuts = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let col = x.col(j);
            let c = cut_points(&col);
            bins.push(col.iter().map(|&v| c.partition_point(|&t| t < v) as u8).collect());
            cuts.push(c);
        }
        Binned { bins, cuts }
    }
}

struct Grower<'a> {
    data: &'a Binned,
    y: &'a [f64],
    params: ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
    count: [u32; MAX_BINS],
    sum: [f64; MAX_BINS],
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [u32], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.y[i as usize]).sum();
        let leaf_value = total / n as f64;
        self.nodes.push(Node::Leaf(leaf_value));
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return id;
        }
        let first = self.y[rows[0] as usize];
        if rows.iter().all(|&i| self.y[i as usize] == first) {
            return id;
        }

        let p = self.data.bins.len();
        // partial Fisher-Yates to draw mtry distinct features
        let mut feats: Vec<usize> = (0..p).collect();
        for k in 0..self.mtry {
            let j = rng.random_range(k..p);
            feats.swap(k, j);
        }
        let parent_score = total * total / n as f64;
        let mut best: Option<(usize, usize, f64)> = None;
        for &f in &feats[..self.mtry] {
            let nb = self.data.cuts[f].len() + 1;
            if nb < 2 {
                continue;
            }
            let bins = &self.data.bins[f];
            self.count[..nb].fill(0);
            self.sum[..nb].fill(0.0);
            for &i in rows.iter() {
                let b = bins[i as usize] as usize;
                self.count[b] += 1;
                self.sum[b] += self.y[i as usize];
            }
            let (mut nl, mut sl) = (0usize, 0.0);
            for b in 0..nb - 1 {
                nl += self.count[b] as usize;
                sl += self.sum[b];
                let nr = n - nl;
                if nl < self.params.min_leaf {
                    continue;
                }
                if nr < self.params.min_leaf {
                    break;
                }
                let sr = total - sl;
                let score = sl * sl / nl as f64 + sr * sr / nr as f64;
                if best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((f, b, score));
                }
            }
        }
        let Some((feature, bin, score)) = best else { return id };
        if score - parent_score <= 1e-12 * parent_score.abs().max(1.0) {
            return id;
        }
        let bins = &self.data.bins[feature];
        // in-place partition: left block holds rows with bin <= split bin
        let mut mid = 0;
        for k in 0..n {
            if bins[rows[k] as usize] as usize <= bin {
                rows.swap(k, mid);
                mid += 1;
            }
        }
        let (lrows, rrows) = rows.split_at_mut(mid);
        let left = self.grow(lrows, depth + 1, rng);
        let right = self.grow(rrows, depth + 1, rng);
        self.nodes[id as usize] = Node::Split {
            feature: feature as u32,
            threshold: self.data.cuts[feature][bin],
            left,
            right,
        };
        id
    }
}

/// Fits a bagged forest. Tree `t` draws its bootstrap sample and feature
/// subsets from a generator seeded by `derive_seed(seed, t)`, so the result
/// does not depend on the order in which trees are grown.
pub fn fit_forest(x: &Matrix, y: &[f64], params: ForestParams, seed: u64) -> Result<Forest> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 {
        bail!(Estimation, "cannot fit a tree ensemble to zero rows");
    }
    if params.trees == 0 || params.max_depth == 0 || params.min_leaf == 0 {
        bail!(Argument, "tree count, depth, and minimum leaf size must all be at least 1");
    }
    if p == 0 {
        bail!(Argument, "tree ensemble needs at least one feature");
    }
    let data = Binned::new(x);
    let mtry = (libm::ceil(libm::sqrt(p as f64)) as usize).clamp(1, p);
    let mut grower = Grower {
        data: &data,
        y,
        params,
        mtry,
        nodes: Vec::new(),
        count: [0; MAX_BINS],
        sum: [0.0; MAX_BINS],
    };
    let mut trees = Vec::with_capacity(params.trees);
    let mut rows = vec![0u32; n];
    for t in 0..params.trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        for r in rows.iter_mut() {
            *r = rng.random_range(0..n as u32);
        }
        grower.nodes = Vec::new();
        grower.grow(&mut rows, 0, &mut rng);
        trees.push(Tree { nodes: core::mem::take(&mut grower.nodes) });
    }
    Ok(Forest { trees, dim: p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cut_points_respect_threshold_rule() {
        let v = [3.0, 1.0, 2.0, 2.0];
        let c = cut_points(&v);
        assert_eq!(c, vec![1.5, 2.5]);
        assert_eq!(c.partition_point(|&t| t < 1.0), 0);
        assert_eq!(c.partition_point(|&t| t < 2.0), 1);
        assert_eq!(c.partition_point(|&t| t < 3.0), 2);
    }

    #[test]
    fn many_values_cap_bins() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert!(cut_points(&v).len() < MAX_BINS);
    }

    #[test]
    fn step_function_is_learned() {
        let x = Matrix::from_vec(200, 1, (0..200).map(|i| i as f64 / 200.0).collect()).unwrap();
        let y: Vec<f64> = x.iter_rows().map(|r| if r[0] < 0.5 { 0.0 } else { 1.0 }).collect();
        let f = fit_forest(&x, &y, ForestParams { trees: 20, max_depth: 3, min_leaf: 2 }, 1).unwrap();
        assert!(f.predict_row(&[0.1]) < 0.05);
        assert!(f.predict_row(&[0.9]) > 0.95);
        assert!(f.trees().iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn seeded_fits_are_identical() {
        let x = Matrix::from_vec(50, 2, (0..100).map(|i| ((i * 37) % 17) as f64).collect()).unwrap();
        let y: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let p = ForestParams { trees: 5, max_depth: 4, min_leaf: 2 };
        assert_eq!(fit_forest(&x, &y, p, 9).unwrap(), fit_forest(&x, &y, p, 9).unwrap());
    }
}
