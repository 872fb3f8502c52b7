//! Multiclass gradient-boosted decision trees with a softmax objective.
//!
//! Each round fits one regression tree per class to the first and second
//! order gradients of the cross-entropy loss. Splits are found by exact
//! greedy enumeration over midpoints of adjacent distinct feature values and
//! maximize
//!
//! ```text
//! gain = ½ [ G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ) ]
//! ```
//!
//! Leaves store `−G/(H+λ)` already multiplied by the learning rate. Every
//! node records its cover (number of training rows reaching it), which the
//! tree Shapley explainer relies on.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

pub const MODEL_FORMAT: &str = "mpi-gbdt";
pub const MODEL_VERSION: u32 = 1;

/// Hessian floor for numerically saturated probabilities.
const MIN_HESSIAN: f64 = 1e-16;

/// Splits must improve the objective by more than rounding noise.
const MIN_GAIN: f64 = 1e-10;

/// Gains within this relative distance are ties (first candidate wins).
const GAIN_TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("empty training set")]
    Empty,
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("need at least two distinct labels")]
    SingleClass,
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature names differ from the model's: {0}")]
    FeatureSkew(String),
    #[error("unsupported model file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cover: Option<f64>,
    },
    Leaf {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cover: Option<f64>,
    },
}

impl Node {
    pub fn cover(&self) -> Option<f64> {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// A regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf {
                value,
                cover: Some(cover),
            }],
        }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn has_covers(&self) -> bool {
        self.nodes.iter().all(|n| n.cover().is_some())
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_leaf_reg: f64,
    pub min_child_weight: f64,
    pub feature_subsample: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            n_rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            l2_leaf_reg: 1.0,
            min_child_weight: 1.0,
            feature_subsample: 1.0,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::InvalidParams(m.to_string()));
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.l2_leaf_reg >= 0.0 && self.l2_leaf_reg.is_finite()) {
            return bad("l2_leaf_reg must be >= 0");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be >= 0");
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return bad("feature_subsample must be in (0, 1]");
        }
        Ok(())
    }
}

/// A fitted softmax boosted-tree model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format: String,
    pub version: u32,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    /// Per-class prior log-odds.
    pub base_score: Vec<f64>,
    pub learning_rate: f64,
    pub params: TrainParams,
    /// `rounds[r][k]` is the class-`k` tree of round `r`.
    pub rounds: Vec<Vec<Tree>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TreeEnsemble {
    /// A model with no trees; margins equal `base_score`.
    pub fn constant(feature_names: Vec<String>, base_score: Vec<f64>, params: TrainParams) -> Self {
        TreeEnsemble {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            n_classes: base_score.len(),
            feature_names,
            base_score,
            learning_rate: params.learning_rate,
            params,
            rounds: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Trees of class `k`, in round order.
    pub fn class_trees(&self, k: usize) -> impl Iterator<Item = &Tree> {
        self.rounds.iter().map(move |r| &r[k])
    }

    pub fn to_json(&self) -> Result<String, GbdtError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<TreeEnsemble, GbdtError> {
        let model: TreeEnsemble = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT {
            return Err(GbdtError::Format(format!("format `{}`", model.format)));
        }
        if model.version != MODEL_VERSION {
            return Err(GbdtError::Format(format!("version {}", model.version)));
        }
        if model.n_classes < 2 || model.base_score.len() != model.n_classes {
            return Err(GbdtError::Format("inconsistent class count".into()));
        }
        if model.rounds.iter().any(|r| r.len() != model.n_classes) {
            return Err(GbdtError::Format("rounds are not rectangular".into()));
        }
        Ok(model)
    }

    /// Errors unless `names` equal the training feature names.
    pub fn check_features(&self, names: &[String]) -> Result<(), GbdtError> {
        if names != self.feature_names.as_slice() {
            return Err(GbdtError::FeatureSkew(format!(
                "model {:?} vs data {:?}",
                self.feature_names, names
            )));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GbdtError> {
        if x.len() != self.n_features() {
            return Err(GbdtError::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Sum of leaf values over rounds `range`, per class.
    pub fn contribution(&self, x: &[f64], range: std::ops::Range<usize>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes];
        for round in &self.rounds[range] {
            for (o, tree) in out.iter_mut().zip(round) {
                *o += tree.predict(x);
            }
        }
        out
    }
}

/// Raw per-class scores: base score plus leaf values along each path.
pub fn predict_margin(model: &TreeEnsemble, x: &[f64]) -> Result<Vec<f64>, GbdtError> {
    model.check_dim(x)?;
    let c = model.contribution(x, 0..model.rounds.len());
    Ok(model.base_score.iter().zip(c).map(|(b, c)| b + c).collect())
}

/// Numerically stable softmax.
pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = margins.iter().map(|m| (m - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_proba(model: &TreeEnsemble, x: &[f64]) -> Result<Vec<f64>, GbdtError> {
    Ok(softmax(&predict_margin(model, x)?))
}

pub fn predict_class(model: &TreeEnsemble, x: &[f64]) -> Result<usize, GbdtError> {
    Ok(argmax(&predict_margin(model, x)?))
}

/// Mean multiclass cross-entropy of the model on `(rows, y)`.
pub fn log_loss(margins: &[Vec<f64>], y: &[usize]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(y)
        .map(|(m, &k)| {
            let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + m.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - m[k]
        })
        .sum();
    total / y.len() as f64
}

/// Trains a model on a feature matrix. See [`train_with_history`].
pub fn train(x: &FeatureMatrix, y: &[usize], params: &TrainParams) -> Result<TreeEnsemble, GbdtError> {
    Ok(train_with_history(x, y, params)?.0)
}

/// Trains a model and returns the training log-loss before the first round
/// and after each round.
pub fn train_with_history(
    x: &FeatureMatrix,
    y: &[usize],
    params: &TrainParams,
) -> Result<(TreeEnsemble, Vec<f64>), GbdtError> {
    params.validate()?;
    let n = x.n_rows();
    if n == 0 || x.n_cols() == 0 {
        return Err(GbdtError::Empty);
    }
    if y.len() != n {
        return Err(GbdtError::LengthMismatch {
            features: n,
            labels: y.len(),
        });
    }
    if let Some(row) = x.values.iter().find(|r| r.len() != x.n_cols()) {
        return Err(GbdtError::DimensionMismatch {
            expected: x.n_cols(),
            got: row.len(),
        });
    }
    let n_classes = y.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; n_classes];
    for &k in y {
        counts[k] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(GbdtError::SingleClass);
    }

    let base_score: Vec<f64> = counts
        .iter()
        .map(|&c| {
            let c = if c == 0 { 0.5 } else { c as f64 };
            (c / n as f64).ln()
        })
        .collect();
    let mut model = TreeEnsemble::constant(x.feature_names.clone(), base_score.clone(), *params);

    let sorted = presort(&x.values, x.n_cols());
    let distinct = distinct_values(&x.values, &sorted);
    let mut margins: Vec<Vec<f64>> = vec![base_score; n];
    let mut history = vec![log_loss(&margins, y)];
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let n_sub = ((x.n_cols() as f64 * params.feature_subsample).ceil() as usize).clamp(1, x.n_cols());

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.n_rounds {
        let probs: Vec<Vec<f64>> = margins.iter().map(|m| softmax(m)).collect();
        let mut round = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            for i in 0..n {
                let p = probs[i][k];
                grad[i] = p - if y[i] == k { 1.0 } else { 0.0 };
                hess[i] = (p * (1.0 - p)).max(MIN_HESSIAN);
            }
            let features = if n_sub == x.n_cols() {
                (0..x.n_cols()).collect()
            } else {
                let mut all: Vec<usize> = (0..x.n_cols()).collect();
                all.shuffle(&mut rng);
                let mut pick = all[..n_sub].to_vec();
                pick.sort_unstable();
                pick
            };
            let builder = TreeBuilder {
                x: &x.values,
                sorted: &sorted,
                distinct: &distinct,
                grad: &grad,
                hess: &hess,
                params,
                features: &features,
            };
            round.push(builder.build());
        }
        for (row, m) in x.values.iter().zip(margins.iter_mut()) {
            for (mk, tree) in m.iter_mut().zip(&round) {
                *mk += tree.predict(row);
            }
        }
        model.rounds.push(round);
        history.push(log_loss(&margins, y));
    }
    Ok((model, history))
}

/// Row indices sorted by each feature (stable: ties keep row order).
fn presort(rows: &[Vec<f64>], n_features: usize) -> Vec<Vec<usize>> {
    (0..n_features)
        .map(|j| {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.sort_by(|&a, &b| rows[a][j].total_cmp(&rows[b][j]));
            idx
        })
        .collect()
}

/// Sorted distinct values per feature.
fn distinct_values(rows: &[Vec<f64>], sorted: &[Vec<usize>]) -> Vec<Vec<f64>> {
    sorted
        .iter()
        .enumerate()
        .map(|(j, order)| {
            let mut v: Vec<f64> = order.iter().map(|&i| rows[i][j]).collect();
            v.dedup();
            v
        })
        .collect()
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    sorted: &'a [Vec<usize>],
    distinct: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a TrainParams,
    features: &'a [usize],
}

impl TreeBuilder<'_> {
    fn build(&self) -> Tree {
        let rows: Vec<usize> = (0..self.x.len()).collect();
        let mut nodes = Vec::new();
        self.grow(&rows, 0, &mut nodes);
        Tree { nodes }
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.l2_leaf_reg)
    }

    fn grow(&self, rows: &[usize], depth: usize, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        let cover = Some(rows.len() as f64);
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let leaf = Node::Leaf {
            value: -g / (h + self.params.l2_leaf_reg) * self.params.learning_rate,
            cover,
        };
        nodes.push(leaf.clone());
        if depth >= self.params.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(best) = self.best_split(rows, g, h) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i][best.feature] < best.threshold);
        let left = self.grow(&left_rows, depth + 1, nodes);
        let right = self.grow(&right_rows, depth + 1, nodes);
        nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            cover,
        };
        id
    }

    /// Midpoint between `value` and the next distinct training value of
    /// feature `j`, so every threshold sits between adjacent training values.
    fn threshold_above(&self, j: usize, value: f64) -> f64 {
        let d = &self.distinct[j];
        let pos = d.partition_point(|v| *v <= value);
        let next = d[pos];
        let mid = value + (next - value) / 2.0;
        if mid <= value {
            next
        } else {
            mid
        }
    }

    fn best_split(&self, rows: &[usize], g_total: f64, h_total: f64) -> Option<SplitCandidate> {
        let mut member = vec![false; self.x.len()];
        for &i in rows {
            member[i] = true;
        }
        let parent = self.score(g_total, h_total);
        let min_w = self.params.min_child_weight;
        let mut best: Option<SplitCandidate> = None;

        for &j in self.features {
            let ordered: Vec<usize> = self.sorted[j].iter().copied().filter(|&i| member[i]).collect();
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in ordered.windows(2) {
                let (a, b) = (w[0], w[1]);
                gl += self.grad[a];
                hl += self.hess[a];
                let (xa, xb) = (self.x[a][j], self.x[b][j]);
                if xb <= xa {
                    continue;
                }
                let (gr, hr) = (g_total - gl, h_total - hl);
                if hl < min_w || hr < min_w {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                if gain > MIN_GAIN
                    && best
                        .as_ref()
                        .is_none_or(|b| gain > b.gain * (1.0 + GAIN_TIE_RTOL))
                {
                    let threshold = self.threshold_above(j, xa);
                    best = Some(SplitCandidate {
                        gain,
                        feature: j,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::Rng;

    fn matrix(values: Vec<Vec<f64>>) -> FeatureMatrix {
        let p = values[0].len();
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        FeatureMatrix {
            dates: (0..values.len())
                .map(|i| d0 + chrono::Duration::days(i as i64))
                .collect(),
            feature_names: (0..p).map(|j| format!("f{j}")).collect(),
            values,
        }
    }

    /// 200 rows, 4 features in [0,1]; label is a fixed 3-band function of a
    /// weighted threshold count, mimicking the MPI labelling.
    fn banded(seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let r: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let score = 0.35 * f64::from(u8::from(r[0] > 0.7))
                + 0.25 * f64::from(u8::from(r[1] > 0.6))
                + 0.25 * f64::from(u8::from(r[2] > 0.5))
                + 0.15 * f64::from(u8::from(r[3] > 0.4));
            y.push(if score >= 0.6 {
                2
            } else if score >= 0.3 {
                1
            } else {
                0
            });
            rows.push(r);
        }
        (matrix(rows), y)
    }

    fn check_cover(tree: &Tree) {
        for n in &tree.nodes {
            if let Node::Split {
                left, right, cover, ..
            } = n
            {
                let c = tree.nodes[*left].cover().unwrap() + tree.nodes[*right].cover().unwrap();
                assert_eq!(cover.unwrap(), c);
            }
        }
    }

    #[test]
    fn learns_banded_labels() {
        let (x, y) = banded(1);
        let (model, history) = train_with_history(&x, &y, &TrainParams::default()).unwrap();
        let correct = x
            .values
            .iter()
            .zip(&y)
            .filter(|(r, &k)| predict_class(&model, r).unwrap() == k)
            .count();
        assert!(correct as f64 / 200.0 >= 0.99, "accuracy {correct}/200");
        for w in history.windows(2) {
            assert!(w[1] <= w[0], "loss increased: {} -> {}", w[0], w[1]);
        }
        for round in &model.rounds {
            assert_eq!(round.len(), model.n_classes);
            for t in round {
                check_cover(t);
                assert!(t.depth() <= 4);
                assert_eq!(t.nodes[0].cover(), Some(200.0));
            }
        }
    }

    #[test]
    fn constant_labels_rejected() {
        let (x, _) = banded(2);
        assert!(matches!(
            train(&x, &[1; 200], &TrainParams::default()),
            Err(GbdtError::SingleClass)
        ));
        let empty = FeatureMatrix {
            dates: vec![],
            feature_names: vec!["a".into()],
            values: vec![],
        };
        assert!(matches!(
            train(&empty, &[], &TrainParams::default()),
            Err(GbdtError::Empty)
        ));
        assert!(matches!(
            train(&x, &[0, 1], &TrainParams::default()),
            Err(GbdtError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn duplicating_rows_keeps_tree_structure() {
        let (x, y) = banded(3);
        let params = TrainParams {
            n_rounds: 15,
            l2_leaf_reg: 0.0,
            min_child_weight: 0.0,
            ..TrainParams::default()
        };
        let a = train(&x, &y, &params).unwrap();
        let mut rows = Vec::new();
        let mut y2 = Vec::new();
        for (r, &k) in x.values.iter().zip(&y) {
            rows.push(r.clone());
            rows.push(r.clone());
            y2.extend([k, k]);
        }
        let b = train(&matrix(rows), &y2, &params).unwrap();
        assert_eq!(a.base_score, b.base_score);
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            for (ta, tb) in ra.iter().zip(rb) {
                assert_eq!(ta.nodes.len(), tb.nodes.len());
                for (na, nb) in ta.nodes.iter().zip(&tb.nodes) {
                    match (na, nb) {
                        (
                            Node::Split { feature: fa, threshold: ha, left: la, right: ra, cover: ca },
                            Node::Split { feature: fb, threshold: hb, left: lb, right: rb, cover: cb },
                        ) => {
                            assert_eq!((fa, ha, la, ra), (fb, hb, lb, rb));
                            assert_eq!(ca.unwrap() * 2.0, cb.unwrap());
                        }
                        (Node::Leaf { value: va, cover: ca }, Node::Leaf { value: vb, cover: cb }) => {
                            assert!((va - vb).abs() <= 1e-9 * va.abs().max(1.0), "{va} vs {vb}");
                            assert_eq!(ca.unwrap() * 2.0, cb.unwrap());
                        }
                        _ => panic!("node kinds differ"),
                    }
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = banded(4);
        let params = TrainParams {
            n_rounds: 20,
            feature_subsample: 0.5,
            seed: 9,
            ..TrainParams::default()
        };
        let a = train(&x, &y, &params).unwrap().to_json().unwrap();
        let b = train(&x, &y, &params).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let back = TreeEnsemble::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn thresholds_are_midpoints_of_training_values() {
        let (x, y) = banded(5);
        let model = train(&x, &y, &TrainParams { n_rounds: 10, ..TrainParams::default() }).unwrap();
        for round in &model.rounds {
            for t in round {
                for n in &t.nodes {
                    if let Node::Split { feature, threshold, .. } = n {
                        let mut col: Vec<f64> = x.values.iter().map(|r| r[*feature]).collect();
                        col.sort_by(f64::total_cmp);
                        col.dedup();
                        let ok = col.windows(2).any(|w| {
                            (w[0] + (w[1] - w[0]) / 2.0 - threshold).abs() == 0.0
                        });
                        assert!(ok, "threshold {threshold} is not a midpoint");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_round_and_stump_margins() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut m = TreeEnsemble::constant(names, vec![0.5, -0.5], TrainParams::default());
        assert_eq!(predict_margin(&m, &[0.0, 0.0]).unwrap(), vec![0.5, -0.5]);
        m.rounds.push(vec![Tree::leaf(0.25, 10.0), Tree::leaf(-1.0, 10.0)]);
        assert_eq!(predict_margin(&m, &[0.0, 0.0]).unwrap(), vec![0.75, -1.5]);
        assert!(matches!(
            predict_margin(&m, &[0.0]),
            Err(GbdtError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn margins_are_additive_over_rounds() {
        let (x, y) = banded(6);
        let model = train(&x, &y, &TrainParams { n_rounds: 12, ..TrainParams::default() }).unwrap();
        for row in x.values.iter().take(20) {
            let full = predict_margin(&model, row).unwrap();
            let head = model.contribution(row, 0..5);
            let tail = model.contribution(row, 5..12);
            for k in 0..3 {
                let sum = model.base_score[k] + head[k] + tail[k];
                assert!((full[k] - sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.5, 1.5, 1.5]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[0.0, 2f64.ln()]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
        let a = softmax(&[0.2, -1.0, 3.0]);
        let b = softmax(&[100.2, 99.0, 103.0]);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 0.0]), 0);
    }

    #[test]
    fn predict_class_agrees_with_proba() {
        let (x, y) = banded(7);
        let model = train(&x, &y, &TrainParams { n_rounds: 30, ..TrainParams::default() }).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..100 {
            let r: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let p = predict_proba(&model, &r).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(predict_class(&model, &r).unwrap(), argmax(&p));
        }
    }

    #[test]
    fn rejects_foreign_model_files() {
        let (x, y) = banded(8);
        let model = train(&x, &y, &TrainParams { n_rounds: 2, ..TrainParams::default() }).unwrap();
        let text = model.to_json().unwrap().replace("mpi-gbdt", "other");
        assert!(matches!(TreeEnsemble::from_json(&text), Err(GbdtError::Format(_))));
        assert!(model.check_features(&["x".into()]).is_err());
        assert!(model.check_features(&x.feature_names).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn cover_conservation(seed in any::<u64>(), depth in 1usize..6) {
            let (x, y) = banded(seed);
            let params = TrainParams { n_rounds: 5, max_depth: depth, ..TrainParams::default() };
            let model = train(&x, &y, &params).unwrap();
            for round in &model.rounds {
                for t in round {
                    check_cover(t);
                    prop_assert!(t.depth() <= depth);
                }
            }
        }
    }
}
