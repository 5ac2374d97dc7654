//! Multi-class gradient-boosted decision trees with a softmax objective.
//!
//! Each boosting round fits one regression tree per class to the first and
//! second derivatives of the softmax cross-entropy, with L2-regularised
//! Newton leaf weights. Split search is exact greedy over sorted feature
//! values for moderate sample counts and switches to a 256-bin histogram
//! approximation above [`BoostParams::exact_max_samples`].

mod grow;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::RowMatrix;

use grow::{ColumnData, GrowParams};

/// Marker for a leaf in [`TreeNode::feature`].
pub const LEAF: i32 = -1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub max_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample: f64,
    pub min_child_weight: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum loss reduction for a split.
    pub gamma: f64,
    pub exact_max_samples: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            max_depth: 6,
            n_rounds: 300,
            learning_rate: 0.1,
            subsample: 0.8,
            colsample: 0.8,
            min_child_weight: 1.0,
            lambda: 1.0,
            gamma: 0.0,
            exact_max_samples: 256 * 1024,
            n_bins: 256,
            seed: 42,
        }
    }
}

/// One node of a regression tree. Leaves have `feature == LEAF` and carry
/// `value`; splits send `x[feature] < threshold` to `left`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: i32,
    pub threshold: f32,
    pub left: i32,
    pub right: i32,
    pub value: f32,
}

impl TreeNode {
    pub fn leaf(value: f32) -> Self {
        TreeNode {
            feature: LEAF,
            threshold: 0.0,
            left: -1,
            right: -1,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    #[inline]
    pub fn predict(&self, x: &[f32]) -> f32 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.value;
            }
            i = if x[n.feature as usize] < n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_splits()
    }

    /// Mean number of comparisons on a root-to-leaf walk, averaged over leaves.
    pub fn mean_leaf_depth(&self) -> f64 {
        let mut depth = vec![0usize; self.nodes.len()];
        let (mut sum, mut leaves) = (0usize, 0usize);
        for (i, n) in self.nodes.iter().enumerate() {
            if n.is_leaf() {
                sum += depth[i];
                leaves += 1;
            } else {
                depth[n.left as usize] = depth[i] + 1;
                depth[n.right as usize] = depth[i] + 1;
            }
        }
        if leaves == 0 {
            0.0
        } else {
            sum as f64 / leaves as f64
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        let len = self.nodes.len() as i32;
        for n in &self.nodes {
            let ok = if n.is_leaf() {
                n.value.is_finite()
            } else {
                n.feature >= 0
                    && (n.feature as usize) < n_features
                    && n.threshold.is_finite()
                    && (0..len).contains(&n.left)
                    && (0..len).contains(&n.right)
            };
            if !ok {
                return Err(Error::InvalidShape(format!("malformed tree node {n:?}")));
            }
        }
        if self.nodes.is_empty() {
            return Err(Error::InvalidShape("empty tree".into()));
        }
        Ok(())
    }
}

/// Boosted ensemble for one classification stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub n_classes: usize,
    pub n_features: usize,
    pub learning_rate: f64,
    /// Per-class prior log-odds.
    pub base_score: Vec<f64>,
    /// `rounds × n_classes` trees; leaf values already include the learning rate.
    pub trees: Vec<Vec<Tree>>,
}

impl TreeEnsemble {
    pub fn n_rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn all_trees(&self) -> impl Iterator<Item = &Tree> {
        self.trees.iter().flatten()
    }

    /// Checks structural invariants after deserialisation.
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.base_score.len() != self.n_classes {
            return Err(Error::InvalidShape(format!(
                "ensemble with {} classes and {} base scores",
                self.n_classes,
                self.base_score.len()
            )));
        }
        for round in &self.trees {
            if round.len() != self.n_classes {
                return Err(Error::InvalidShape("round with wrong tree count".into()));
            }
            for t in round {
                t.validate(self.n_features)?;
            }
        }
        Ok(())
    }

    #[inline]
    fn margins_into(&self, x: &[f32], out: &mut [f64]) {
        out.copy_from_slice(&self.base_score);
        for round in &self.trees {
            for (m, t) in out.iter_mut().zip(round) {
                *m += t.predict(x) as f64;
            }
        }
    }

    /// Soft decisions for one row.
    pub fn predict_row(&self, x: &[f32], out: &mut [f32]) {
        let mut m = vec![0.0; self.n_classes];
        self.margins_into(x, &mut m);
        softmax_into(&m, out);
    }
}

/// Numerically stable softmax; class sums are accumulated in class order.
#[inline]
fn softmax_f64(margins: &[f64], out: &mut [f64]) {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &m) in out.iter_mut().zip(margins) {
        *o = (m - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn softmax_into(margins: &[f64], out: &mut [f32]) {
    let mut p = vec![0.0; margins.len()];
    softmax_f64(margins, &mut p);
    for (o, v) in out.iter_mut().zip(p) {
        *o = v as f32;
    }
}

/// Class probabilities for every row of `features` (`n × n_classes`).
pub fn predict_proba(ensemble: &TreeEnsemble, features: &RowMatrix) -> Result<RowMatrix> {
    if features.cols != ensemble.n_features {
        return Err(Error::InvalidShape(format!(
            "ensemble expects {} features, got {}",
            ensemble.n_features, features.cols
        )));
    }
    let k = ensemble.n_classes;
    let mut out = RowMatrix::zeros(features.rows, k);
    out.data
        .par_chunks_mut(k * 1024)
        .enumerate()
        .for_each(|(chunk, dst)| {
            let mut m = vec![0.0; k];
            let mut p = vec![0.0; k];
            for (j, row_out) in dst.chunks_exact_mut(k).enumerate() {
                let x = features.row(chunk * 1024 + j);
                ensemble.margins_into(x, &mut m);
                softmax_f64(&m, &mut p);
                for (o, &v) in row_out.iter_mut().zip(&p) {
                    *o = v as f32;
                }
            }
        });
    Ok(out)
}

/// Per-round training diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitHistory {
    /// Mean softmax cross-entropy on all training rows, before round 1 and
    /// after every round.
    pub train_loss: Vec<f64>,
}

fn cross_entropy(probs: &[f64], labels: &[u8], k: usize) -> f64 {
    let n = labels.len();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -(probs[i * k + y as usize].max(1e-300)).ln())
        .sum();
    total / n as f64
}

/// Fits an ensemble; see [`ensemble_fit_with_history`].
pub fn ensemble_fit(
    features: &RowMatrix,
    labels: &[u8],
    n_classes: usize,
    params: &BoostParams,
) -> Result<TreeEnsemble> {
    Ok(ensemble_fit_with_history(features, labels, n_classes, params)?.0)
}

/// Fits a softmax gradient-boosted ensemble to `features` (`n × d`) and
/// integer `labels` in `0..n_classes`.
pub fn ensemble_fit_with_history(
    features: &RowMatrix,
    labels: &[u8],
    n_classes: usize,
    params: &BoostParams,
) -> Result<(TreeEnsemble, FitHistory)> {
    let n = features.rows;
    let d = features.cols;
    if d == 0 {
        return Err(Error::InvalidShape("feature dimension is zero".into()));
    }
    if labels.len() != n {
        return Err(Error::InvalidShape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    if n_classes < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 classes, configured {n_classes}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= n_classes) {
        return Err(Error::DegenerateLabels(format!(
            "label {bad} outside 0..{n_classes}"
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        counts[y as usize] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "all {n} samples carry the same label"
        )));
    }
    if let Some(p) = [params.subsample, params.colsample].iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Config(format!("sampling fraction {p} outside (0, 1]")));
    }

    let total: f64 = counts.iter().map(|&c| c.max(1) as f64).sum();
    let base_score: Vec<f64> = counts.iter().map(|&c| (c.max(1) as f64 / total).ln()).collect();

    let columns = ColumnData::build(features, params.exact_max_samples, params.n_bins);
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_child_weight: params.min_child_weight,
        lambda: params.lambda,
        gamma: params.gamma,
        learning_rate: params.learning_rate,
    };

    let k = n_classes;
    let mut margins: Vec<f64> = (0..n).flat_map(|_| base_score.iter().copied()).collect();
    let mut probs = vec![0.0; n * k];
    let refresh = |margins: &[f64], probs: &mut [f64]| {
        probs
            .par_chunks_mut(k)
            .zip(margins.par_chunks(k))
            .for_each(|(p, m)| softmax_f64(m, p));
    };
    refresh(&margins, &mut probs);
    let mut history = FitHistory {
        train_loss: vec![cross_entropy(&probs, labels, k)],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_cols = ((params.colsample * d as f64).round() as usize).clamp(1, d);
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _round in 0..params.n_rounds {
        let in_sample: Vec<bool> = if params.subsample < 1.0 {
            (0..n).map(|_| rng.random::<f64>() < params.subsample).collect()
        } else {
            vec![true; n]
        };
        let mut cols: Vec<usize> = if n_cols < d {
            index::sample(&mut rng, d, n_cols).into_vec()
        } else {
            (0..d).collect()
        };
        cols.sort_unstable();

        let mut round_trees = Vec::with_capacity(k);
        for class in 0..k {
            grad.par_iter_mut()
                .zip(hess.par_iter_mut())
                .enumerate()
                .for_each(|(i, (g, h))| {
                    let p = probs[i * k + class];
                    let y = if labels[i] as usize == class { 1.0 } else { 0.0 };
                    *g = p - y;
                    *h = (p * (1.0 - p)).max(1e-16);
                });
            round_trees.push(grow::grow_tree(&columns, &grad, &hess, &in_sample, &cols, &grow));
        }
        margins
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(i, m)| {
                let x = features.row(i);
                for (mm, t) in m.iter_mut().zip(&round_trees) {
                    *mm += t.predict(x) as f64;
                }
            });
        refresh(&margins, &mut probs);
        history.train_loss.push(cross_entropy(&probs, labels, k));
        trees.push(round_trees);
    }

    Ok((
        TreeEnsemble {
            n_classes,
            n_features: d,
            learning_rate: params.learning_rate,
            base_score,
            trees,
        },
        history,
    ))
}
