//! Bagged regression trees with per-node feature subsampling, out-of-bag
//! scoring and permutation importance.
//!
//! Every tree draws from the stream `(seed, tree index)` and every permutation
//! run from `(seed, member, repeat)`, so results do not depend on thread
//! scheduling.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None` means ceil(p / 3).
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf: 5, features_per_split: None, seed: 0 }
    }
}

impl ForestParams {
    pub fn mtry(&self, n_features: usize) -> usize {
        self.features_per_split.unwrap_or(n_features.div_ceil(3)).clamp(1, n_features.max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 || self.features_per_split == Some(0) {
            return invalid("forest counts must all be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64, n: usize },
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Depth counted in split levels; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn min_leaf_size(&self) -> usize {
        match self {
            Node::Leaf { n, .. } => *n,
            Node::Split { left, right, .. } => left.min_leaf_size().min(right.min_leaf_size()),
        }
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        match self {
            Node::Leaf { .. } => false,
            Node::Split { feature, left, right, .. } => *feature == f || left.uses_feature(f) || right.uses_feature(f),
        }
    }

    fn thresholds_finite(&self) -> bool {
        match self {
            Node::Leaf { value, .. } => value.is_finite(),
            Node::Split { threshold, left, right, .. } => {
                threshold.is_finite() && left.thresholds_finite() && right.thresholds_finite()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub feature_names: Vec<String>,
    /// `None` when undefined (constant target or no out-of-bag rows).
    pub oob_r2: Option<f64>,
    pub trees: Vec<Node>,
}

/// Per-row out-of-bag prediction sums and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct OobStats {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl OobStats {
    pub fn r2(&self, y: &[f64]) -> Option<f64> {
        let used: Vec<(f64, f64)> = self
            .sum
            .iter()
            .zip(&self.count)
            .zip(y)
            .filter(|((_, c), _)| **c > 0)
            .map(|((s, c), yi)| (s / *c as f64, *yi))
            .collect();
        r2(&used)
    }
}

fn r2(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 || pairs.iter().all(|p| p.1 == pairs[0].1) {
        return None;
    }
    let mean = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let sst: f64 = pairs.iter().map(|p| (p.1 - mean).powi(2)).sum();
    if sst <= 0.0 {
        return None;
    }
    let sse: f64 = pairs.iter().map(|p| (p.1 - p.0).powi(2)).sum();
    Some(1.0 - sse / sst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImportanceVector(pub Vec<f64>);

fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return invalid("feature rows and targets differ in length");
    }
    let p = x.first().map_or(0, |r| r.len());
    if p == 0 {
        return invalid("need at least one feature");
    }
    if x.iter().any(|r| r.len() != p) {
        return invalid("ragged feature rows");
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return invalid("features and targets must be finite");
    }
    Ok(p)
}

pub fn fit(x: &[Vec<f64>], y: &[f64], feature_names: Vec<String>, params: &ForestParams) -> Result<RandomForestModel> {
    fit_with_oob(x, y, feature_names, params).map(|(m, _)| m)
}

/// Fits a forest and also returns its out-of-bag accumulators.
pub fn fit_with_oob(
    x: &[Vec<f64>],
    y: &[f64],
    feature_names: Vec<String>,
    params: &ForestParams,
) -> Result<(RandomForestModel, OobStats)> {
    params.validate()?;
    let p = check_xy(x, y)?;
    if feature_names.len() != p {
        return invalid("feature name count does not match feature width");
    }
    let n = y.len();
    if n < 2 * params.min_leaf {
        return invalid(format!("need at least {} rows, got {n}", 2 * params.min_leaf));
    }
    let mtry = params.mtry(p);
    let grown: Vec<(Node, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(params.seed, &[t as u64]);
            let mut in_bag = vec![false; n];
            let sample: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let builder = TreeBuilder { x, y, p, mtry, max_depth: params.max_depth, min_leaf: params.min_leaf };
            (builder.grow(sample, 0, &mut rng), in_bag)
        })
        .collect();

    let mut oob = OobStats { sum: vec![0.0; n], count: vec![0; n] };
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob.sum[i] += tree.predict(&x[i]);
            oob.count[i] += 1;
        }
    }
    let model = RandomForestModel {
        feature_names,
        oob_r2: oob.r2(y),
        trees: grown.into_iter().map(|(t, _)| t).collect(),
    };
    debug_assert!(model.trees.iter().all(Node::thresholds_finite));
    Ok((model, oob))
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    p: usize,
    mtry: usize,
    max_depth: usize,
    min_leaf: usize,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
        n += 1;
    }
    // Constant inputs return the constant exactly.
    if lo == hi {
        lo
    } else {
        sum / n as f64
    }
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        Node::Leaf { value: mean(idx.iter().map(|&i| self.y[i])), n: idx.len() }
    }

    fn grow<R: Rng>(&self, idx: Vec<usize>, depth: usize, rng: &mut R) -> Node {
        let n = idx.len();
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return self.leaf(&idx);
        }
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let sum_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let sse = sum_sq - sum * sum / n as f64;
        if sse <= 0.0 || idx.iter().all(|&i| self.y[i] == self.y[idx[0]]) {
            return self.leaf(&idx);
        }
        let mut features = index::sample(rng, self.p, self.mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<BestSplit> = None;
        let mut order = idx.clone();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let base = sum * sum / n as f64;
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.y[order[k - 1]];
                let (lo, hi) = (self.x[order[k - 1]][f], self.x[order[k]][f]);
                if k < self.min_leaf || n - k < self.min_leaf || lo == hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64 - base;
                if gain > best.as_ref().map_or(sse * 1e-12, |b| b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit { gain, feature: f, threshold });
                }
            }
        }
        let Some(split) = best else { return self.leaf(&idx) };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x[i][split.feature] <= split.threshold);
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(left, depth + 1, rng)),
            right: Box::new(self.grow(right, depth + 1, rng)),
        }
    }
}

impl RandomForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features() {
            return invalid(format!("expected {} features, got {}", self.n_features(), features.len()));
        }
        if self.trees.is_empty() {
            return invalid("forest has no trees");
        }
        Ok(self.predict_unchecked(features))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        mean(self.trees.iter().map(|t| t.predict(x)))
    }

    pub fn predict_many(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter().map(|r| self.predict(r)).collect()
    }

    pub fn mse(&self, x: &[Vec<f64>], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(r, yi)| (self.predict_unchecked(r) - yi).powi(2)).sum::<f64>() / y.len() as f64
    }
}

pub const DEFAULT_PERMUTATION_REPEATS: usize = 5;

/// Mean increase in MSE when one member column is shuffled; negatives clipped to 0.
pub fn permutation_importance(
    model: &RandomForestModel,
    x: &[Vec<f64>],
    y: &[f64],
    seed: u64,
    n_repeats: usize,
) -> Result<ImportanceVector> {
    let p = check_xy(x, y)?;
    if x.is_empty() {
        return invalid("importance needs at least one row");
    }
    if p != model.n_features() {
        return invalid("feature width does not match the model");
    }
    if n_repeats == 0 {
        return invalid("n_repeats must be >= 1");
    }
    let baseline = model.mse(x, y);
    let values = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut column: Vec<f64> = x.iter().map(|r| r[j]).collect();
            let mut total = 0.0;
            for r in 0..n_repeats {
                let mut rng = rng::stream(seed, &[j as u64, r as u64]);
                column.copy_from_slice(&x.iter().map(|row| row[j]).collect::<Vec<_>>());
                column.shuffle(&mut rng);
                let mut row_buf = vec![0.0; p];
                let mse = x
                    .iter()
                    .zip(&column)
                    .zip(y)
                    .map(|((row, v), yi)| {
                        row_buf.copy_from_slice(row);
                        row_buf[j] = *v;
                        (model.predict_unchecked(&row_buf) - yi).powi(2)
                    })
                    .sum::<f64>()
                    / y.len() as f64;
                total += mse - baseline;
            }
            (total / n_repeats as f64).max(0.0)
        })
        .collect();
    Ok(ImportanceVector(values))
}
