use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};
use crate::features::{extract_features, DEFAULT_WINDOW_S};
use crate::model::{EpochTensor, Method, RejectionDecision, FEATURE_COUNT};
use crate::rng::PortableRng;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Harmonic numbers up to this index are summed exactly.
const EXACT_HARMONIC: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IForestConfig {
    pub n_trees: usize,
    pub subsample: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, subsample: 256, threshold: 0.5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, value: f64, left: usize, right: usize },
    Leaf { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IForest {
    pub trees: Vec<IsolationTree>,
    /// Effective subsample size ψ.
    pub subsample: usize,
    pub max_depth: usize,
    pub n_features: usize,
    pub seed: u64,
}

fn harmonic(k: usize) -> f64 {
    if k <= EXACT_HARMONIC {
        (1..=k).map(|i| 1.0 / i as f64).sum()
    } else {
        let k = k as f64;
        k.ln() + EULER_GAMMA + 1.0 / (2.0 * k) - 1.0 / (12.0 * k * k)
    }
}

/// Mean unsuccessful-search path length in a binary search tree of `n` nodes.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    max_depth: usize,
    rng: PortableRng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { size: idx.len() });
        if depth >= self.max_depth || idx.len() <= 1 {
            return at;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..self.x.ncols())
            .filter_map(|f| {
                let (lo, hi) = idx
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(self.x[[i, f]]), b.max(self.x[[i, f]])));
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return at;
        }
        let (feature, lo, hi) = ranges[self.rng.below(ranges.len())];
        let value = self.rng.uniform_in(lo, hi);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[[i, feature]] <= value);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[at] = Node::Split { feature, value, left, right };
        at
    }
}

/// Builds `n_trees` isolation trees on `min(ψ, n)`-point subsamples.
/// Tree `t` draws from stream `(seed, t)`.
pub fn iforest_fit(x: ArrayView2<'_, f64>, n_trees: usize, psi: usize, seed: u64) -> Result<IForest> {
    let n = x.nrows();
    if n < 2 {
        return Err(FaarError::TooFewEpochs { need: 2, got: n });
    }
    if x.ncols() == 0 || n_trees == 0 || psi < 2 {
        return Err(FaarError::BadConfig("need ≥ 1 feature, ≥ 1 tree and ψ ≥ 2".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FaarError::NonFinite("isolation forest input".into()));
    }
    let first = x.row(0);
    if x.outer_iter().all(|r| r == first) {
        return Err(FaarError::DegenerateFeatures);
    }
    let psi = psi.min(n);
    let max_depth = (psi as f64).log2().ceil() as usize;
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng = PortableRng::for_stream(seed, t as u64);
            let idx = rng.sample_indices(n, psi);
            let mut b = Builder { x, max_depth, rng, nodes: Vec::new() };
            b.build(idx, 0);
            IsolationTree { nodes: b.nodes }
        })
        .collect();
    Ok(IForest { trees, subsample: psi, max_depth, n_features: x.ncols(), seed })
}

impl IsolationTree {
    /// Depth of the leaf reached plus the `c(size)` continuation.
    pub fn path_length(&self, x: ArrayView1<'_, f64>) -> f64 {
        let (mut at, mut depth) = (0, 0usize);
        loop {
            match self.nodes[at] {
                Node::Split { feature, value, left, right } => {
                    at = if x[feature] <= value { left } else { right };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + c_factor(size),
            }
        }
    }
}

impl IForest {
    /// `2^(−E[h(x)] / c(ψ))`.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(FaarError::ShapeMismatch(format!("{} features, forest has {}", x.len(), self.n_features)));
        }
        let mean = self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        Ok(2f64.powf(-mean / c_factor(self.subsample)))
    }

    pub fn score_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        x.outer_iter().map(|r| self.score(r)).collect()
    }
}

/// Per-epoch mean feature vector of every channel, flattened channel-major
/// (`5 × channels` columns). The flat-channel kurtosis sentinel maps to 0.
pub fn epoch_feature_matrix(e: &EpochTensor, window_len_s: f64) -> Result<Array2<f64>> {
    let grids = extract_features(e, window_len_s)?;
    let c = e.n_channels();
    let mut x = Array2::zeros((grids.len(), c * FEATURE_COUNT));
    for (mut row, g) in x.outer_iter_mut().zip(&grids) {
        let w = g.n_windows() as f64;
        let mean = g.values.sum_axis(Axis(0)) / w;
        for ch in 0..c {
            for f in 0..FEATURE_COUNT {
                let v = mean[[ch, f]];
                row[ch * FEATURE_COUNT + f] = if v.is_finite() { v } else { 0.0 };
            }
        }
    }
    Ok(x)
}

fn decisions(ids: &[u64], scores: Vec<f64>, threshold: f64) -> Vec<RejectionDecision> {
    scores
        .into_iter()
        .zip(ids)
        .map(|(s, id)| RejectionDecision { epoch_id: *id, sqi: s, threshold, rejected: s > threshold, method: Method::Iforest })
        .collect()
}

/// Fitted forest with the feature geometry it expects.
#[derive(Debug, Clone)]
pub struct IForestRejector {
    pub forest: IForest,
    pub threshold: f64,
    pub window_len_s: f64,
}

impl IForestRejector {
    pub fn fit(e: &EpochTensor, cfg: &IForestConfig) -> Result<Self> {
        let x = epoch_feature_matrix(e, DEFAULT_WINDOW_S)?;
        let forest = iforest_fit(x.view(), cfg.n_trees, cfg.subsample, cfg.seed)?;
        Ok(Self { forest, threshold: cfg.threshold, window_len_s: DEFAULT_WINDOW_S })
    }

    pub fn decide(&self, e: &EpochTensor) -> Result<Vec<RejectionDecision>> {
        let x = epoch_feature_matrix(e, self.window_len_s)?;
        Ok(decisions(&e.epoch_ids, self.forest.score_rows(x.view())?, self.threshold))
    }
}

/// Fits on the batch itself and rejects epochs scoring above the threshold.
pub fn iforest_reject(e: &EpochTensor, cfg: &IForestConfig) -> Result<Vec<RejectionDecision>> {
    IForestRejector::fit(e, cfg)?.decide(e)
}
