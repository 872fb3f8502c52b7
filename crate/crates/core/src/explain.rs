//! Exact Shapley attributions for [`TreeEnsemble`] margins.
//!
//! The value of a coalition `S` is the path-dependent conditional
//! expectation `f_S(x)`: at a split on a feature in `S` the traversal follows
//! `x`; otherwise both children are averaged by training cover. Attributions
//! are on the margin (pre-softmax) scale, one vector per class.
//!
//! [`tree_shap`] runs the polynomial-time path algorithm per tree;
//! [`brute_force_shap`] enumerates all `2^|F|` coalitions and is kept as the
//! correctness oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::gbdt::{predict_margin, GbdtError, Node, Tree, TreeEnsemble};

/// Largest feature count the brute-force oracle accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 15;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("tree {round}/{class} has nodes without cover counts")]
    MissingCover { round: usize, class: usize },
    #[error("brute-force Shapley refuses {0} features (limit {BRUTE_FORCE_MAX_FEATURES})")]
    TooManyFeatures(usize),
    #[error("class {class} out of range for a {n_classes}-class model")]
    BadClass { class: usize, n_classes: usize },
    #[error(transparent)]
    Model(#[from] GbdtError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePhi {
    pub name: String,
    pub phi_per_class: Vec<f64>,
}

/// Per-sample attribution. Satisfies `base_values[k] + Σ_j phi_j[k] =
/// margins[k]` up to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapAttribution {
    pub base_values: Vec<f64>,
    pub features: Vec<FeaturePhi>,
    pub margins: Vec<f64>,
}

impl ShapAttribution {
    pub fn phi(&self, feature: usize, class: usize) -> f64 {
        self.features[feature].phi_per_class[class]
    }

    /// `|base + Σφ − margin|` maximized over classes.
    pub fn local_accuracy_error(&self) -> f64 {
        (0..self.margins.len())
            .map(|k| {
                let sum: f64 = self.features.iter().map(|f| f.phi_per_class[k]).sum();
                (self.base_values[k] + sum - self.margins[k]).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn check_covers(model: &TreeEnsemble) -> Result<(), ExplainError> {
    for (round, trees) in model.rounds.iter().enumerate() {
        for (class, tree) in trees.iter().enumerate() {
            if !tree.has_covers() {
                return Err(ExplainError::MissingCover { round, class });
            }
        }
    }
    Ok(())
}

fn cover(tree: &Tree, i: usize) -> f64 {
    tree.nodes[i].cover().expect("covers checked")
}

/// Cover-weighted mean leaf value of a tree (`f_∅`).
fn tree_expectation(tree: &Tree) -> f64 {
    conditional_expectation(tree, 0, &[], &|_| false)
}

fn conditional_expectation(tree: &Tree, i: usize, x: &[f64], in_set: &dyn Fn(usize) -> bool) -> f64 {
    match &tree.nodes[i] {
        Node::Leaf { value, .. } => *value,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            if in_set(*feature) {
                let next = if x[*feature] < *threshold { *left } else { *right };
                conditional_expectation(tree, next, x, in_set)
            } else {
                let (cl, cr) = (cover(tree, *left), cover(tree, *right));
                (cl * conditional_expectation(tree, *left, x, in_set)
                    + cr * conditional_expectation(tree, *right, x, in_set))
                    / (cl + cr)
            }
        }
    }
}

/// Expected margin per class under the training cover distribution.
pub fn expected_margin(model: &TreeEnsemble) -> Result<Vec<f64>, ExplainError> {
    check_covers(model)?;
    Ok((0..model.n_classes)
        .map(|k| model.base_score[k] + model.class_trees(k).map(tree_expectation).sum::<f64>())
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend_path(path: &mut Vec<PathElem>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElem {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero_fraction * path[i].weight * (depth - i) as f64 / denom;
    }
}

/// Removes element `index` from the path, undoing its extension.
fn unwind_path(path: &mut Vec<PathElem>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let denom = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * denom / ((i + 1) as f64 * one);
            next_one = tmp - path[i].weight * zero * (depth - i) as f64 / denom;
        } else {
            path[i].weight = path[i].weight * denom / (zero * (depth - i) as f64);
        }
    }
    // Weights are indexed by coalition size and stay put; only the
    // feature bookkeeping shifts down.
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total weight of the path with element `index` unwound, without
/// modifying it.
fn unwound_path_sum(path: &[PathElem], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    if one != 0.0 {
        for i in (0..depth).rev() {
            let tmp = next_one / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (depth - i) as f64;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].weight / (zero * (depth - i) as f64);
        }
    }
    total * (depth + 1) as f64
}

#[allow(clippy::too_many_arguments)]
fn tree_shap_recurse(
    tree: &Tree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElem>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend_path(&mut path, zero_fraction, one_fraction, feature);
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_path_sum(&path, i);
                let el = path[i];
                let f = el.feature.expect("only the root element has no feature");
                phi[f] += w * (el.one_fraction - el.zero_fraction) * value;
            }
        }
        Node::Split {
            feature: split,
            threshold,
            left,
            right,
            ..
        } => {
            let (hot, cold) = if x[*split] < *threshold {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let w = cover(tree, node);
            let hot_zero = cover(tree, hot) / w;
            let cold_zero = cover(tree, cold) / w;
            let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
            if let Some(k) = path.iter().position(|e| e.feature == Some(*split)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(&mut path, k);
            }
            tree_shap_recurse(
                tree,
                x,
                phi,
                hot,
                path.clone(),
                hot_zero * incoming_zero,
                incoming_one,
                Some(*split),
            );
            tree_shap_recurse(
                tree,
                x,
                phi,
                cold,
                path,
                cold_zero * incoming_zero,
                0.0,
                Some(*split),
            );
        }
    }
}

/// Shapley values of a single tree, accumulated into `phi`.
pub fn tree_shap_single(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    let depth = tree.depth();
    tree_shap_recurse(tree, x, phi, 0, Vec::with_capacity(depth + 2), 1.0, 1.0, None);
}

fn attribution(model: &TreeEnsemble, x: &[f64], phi: Vec<Vec<f64>>) -> Result<ShapAttribution, ExplainError> {
    Ok(ShapAttribution {
        base_values: expected_margin(model)?,
        features: model
            .feature_names
            .iter()
            .zip(phi)
            .map(|(name, phi_per_class)| FeaturePhi {
                name: name.clone(),
                phi_per_class,
            })
            .collect(),
        margins: predict_margin(model, x)?,
    })
}

/// Exact path-dependent Shapley values, polynomial per tree.
pub fn tree_shap(model: &TreeEnsemble, x: &[f64]) -> Result<ShapAttribution, ExplainError> {
    check_covers(model)?;
    predict_margin(model, x)?;
    let p = model.n_features();
    let mut phi = vec![vec![0.0; model.n_classes]; p];
    let mut buf = vec![0.0; p];
    for k in 0..model.n_classes {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for tree in model.class_trees(k) {
            tree_shap_single(tree, x, &mut buf);
        }
        for (row, v) in phi.iter_mut().zip(&buf) {
            row[k] = *v;
        }
    }
    attribution(model, x, phi)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Literal subset-sum Shapley values over all `2^|F|` coalitions.
pub fn brute_force_shap(model: &TreeEnsemble, x: &[f64]) -> Result<ShapAttribution, ExplainError> {
    let p = model.n_features();
    if p > BRUTE_FORCE_MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(p));
    }
    check_covers(model)?;
    predict_margin(model, x)?;

    let n_sets = 1usize << p;
    let weight: Vec<f64> = (0..p)
        .map(|s| factorial(s) * factorial(p - s - 1) / factorial(p))
        .collect();
    let mut phi = vec![vec![0.0; model.n_classes]; p];
    for k in 0..model.n_classes {
        let value: Vec<f64> = (0..n_sets)
            .map(|mask| {
                let in_set = move |f: usize| mask & (1 << f) != 0;
                model.base_score[k]
                    + model
                        .class_trees(k)
                        .map(|t| conditional_expectation(t, 0, x, &in_set))
                        .sum::<f64>()
            })
            .collect();
        for (j, row) in phi.iter_mut().enumerate() {
            let bit = 1usize << j;
            let mut total = 0.0;
            for mask in (0..n_sets).filter(|m| m & bit == 0) {
                let size = mask.count_ones() as usize;
                total += weight[size] * (value[mask | bit] - value[mask]);
            }
            row[k] = total;
        }
    }
    attribution(model, x, phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub index: usize,
    pub mean_abs_phi: f64,
}

/// Mean |φ| per feature over samples and classes, ranked descending (ties
/// by feature index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub ranking: Vec<ImportanceEntry>,
}

impl GlobalImportance {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranking.iter().position(|e| e.feature == feature)
    }

    pub fn top(&self, k: usize) -> Vec<&str> {
        self.ranking.iter().take(k).map(|e| e.feature.as_str()).collect()
    }
}

/// Attributions for every row of `x`, computed in parallel; output order
/// follows the rows.
pub fn shap_all(model: &TreeEnsemble, x: &FeatureMatrix) -> Result<Vec<ShapAttribution>, ExplainError> {
    model.check_features(&x.feature_names)?;
    check_covers(model)?;
    let n = x.n_rows();
    let threads = std::thread::available_parallelism()
        .map(|t| t.get())
        .unwrap_or(1)
        .min(n.max(1));
    let chunk = n.div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = x
            .values
            .chunks(chunk)
            .map(|rows| scope.spawn(move || rows.iter().map(|r| tree_shap(model, r)).collect::<Vec<_>>()))
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            for a in h.join().expect("shap worker panicked") {
                out.push(a?);
            }
        }
        Ok(out)
    })
}

/// Ranks features from precomputed attributions.
pub fn importance_from(attributions: &[ShapAttribution]) -> GlobalImportance {
    let Some(first) = attributions.first() else {
        return GlobalImportance { ranking: Vec::new() };
    };
    let n_classes = first.margins.len();
    let mut ranking: Vec<ImportanceEntry> = first
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let total: f64 = attributions
                .iter()
                .map(|a| a.features[j].phi_per_class.iter().map(|v| v.abs()).sum::<f64>())
                .sum();
            ImportanceEntry {
                feature: f.name.clone(),
                index: j,
                mean_abs_phi: total / (attributions.len() * n_classes) as f64,
            }
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then(a.index.cmp(&b.index))
    });
    GlobalImportance { ranking }
}

pub fn global_importance(model: &TreeEnsemble, x: &FeatureMatrix) -> Result<GlobalImportance, ExplainError> {
    Ok(importance_from(&shap_all(model, x)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallRow {
    pub feature: String,
    pub contribution: f64,
    pub running_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub class: usize,
    pub base_value: f64,
    pub margin: f64,
    /// Base row first, then non-zero contributions by |φ| descending.
    pub rows: Vec<WaterfallRow>,
}

/// Label of the leading row of a [`Waterfall`].
pub const BASE_ROW: &str = "base_value";

pub fn waterfall(attr: &ShapAttribution, class: usize) -> Result<Waterfall, ExplainError> {
    let n_classes = attr.margins.len();
    if class >= n_classes {
        return Err(ExplainError::BadClass { class, n_classes });
    }
    let base = attr.base_values[class];
    let mut contributions: Vec<(usize, f64)> = attr
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| (j, f.phi_per_class[class]))
        .filter(|(_, v)| *v != 0.0)
        .collect();
    contributions.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));

    let mut rows = vec![WaterfallRow {
        feature: BASE_ROW.into(),
        contribution: base,
        running_total: base,
    }];
    let mut running = base;
    for (j, v) in contributions {
        running += v;
        rows.push(WaterfallRow {
            feature: attr.features[j].name.clone(),
            contribution: v,
            running_total: running,
        });
    }
    Ok(Waterfall {
        class,
        base_value: base,
        margin: attr.margins[class],
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::TrainParams;

    fn stump(feature: usize, threshold: f64, a: f64, b: f64, ca: f64, cb: f64) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                    cover: Some(ca + cb),
                },
                Node::Leaf { value: a, cover: Some(ca) },
                Node::Leaf { value: b, cover: Some(cb) },
            ],
        }
    }

    fn two_class(names: usize, trees: Vec<Tree>) -> TreeEnsemble {
        let mut m = TreeEnsemble::constant(
            (0..names).map(|j| format!("f{j}")).collect(),
            vec![0.0, 0.0],
            TrainParams::default(),
        );
        for t in trees {
            m.rounds.push(vec![t, Tree::leaf(0.0, 100.0)]);
        }
        m
    }

    #[test]
    fn stump_example() {
        let m = two_class(3, vec![stump(0, 0.5, -1.0, 3.0, 50.0, 50.0)]);
        let x = [0.9, 0.1, 0.2];
        for attr in [tree_shap(&m, &x).unwrap(), brute_force_shap(&m, &x).unwrap()] {
            assert_eq!(attr.base_values[0], 1.0);
            assert_eq!(attr.margins[0], 3.0);
            assert!((attr.phi(0, 0) - 2.0).abs() < 1e-15);
            assert_eq!(attr.phi(1, 0), 0.0);
            assert_eq!(attr.phi(2, 0), 0.0);
            let w = waterfall(&attr, 0).unwrap();
            assert_eq!(w.rows.len(), 2);
            assert_eq!(w.rows[1].feature, "f0");
            assert!((w.rows[1].contribution - 2.0).abs() < 1e-15);
            assert!((w.rows[1].running_total - w.margin).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_copies_get_equal_phi() {
        let m = two_class(
            2,
            vec![
                stump(0, 0.5, -1.0, 2.0, 30.0, 70.0),
                stump(1, 0.5, -1.0, 2.0, 30.0, 70.0),
            ],
        );
        let x = [0.8, 0.9];
        let a = tree_shap(&m, &x).unwrap();
        let b = brute_force_shap(&m, &x).unwrap();
        assert!((a.phi(0, 0) - a.phi(1, 0)).abs() < 1e-9);
        assert!((b.phi(0, 0) - b.phi(1, 0)).abs() < 1e-9);
    }

    #[test]
    fn repeated_feature_on_path() {
        // Same feature split twice on one path exercises the unwind step.
        let tree = Tree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2, cover: Some(100.0) },
                Node::Split { feature: 1, threshold: 0.3, left: 3, right: 4, cover: Some(40.0) },
                Node::Split { feature: 0, threshold: 0.8, left: 5, right: 6, cover: Some(60.0) },
                Node::Leaf { value: 1.0, cover: Some(10.0) },
                Node::Leaf { value: -2.0, cover: Some(30.0) },
                Node::Split { feature: 1, threshold: 0.6, left: 7, right: 8, cover: Some(25.0) },
                Node::Leaf { value: 4.0, cover: Some(35.0) },
                Node::Leaf { value: 0.5, cover: Some(5.0) },
                Node::Leaf { value: -0.25, cover: Some(20.0) },
            ],
        };
        let m = two_class(3, vec![tree]);
        for x in [[0.6, 0.7, 0.0], [0.9, 0.1, 0.0], [0.2, 0.2, 0.0], [0.55, 0.5, 1.0]] {
            let a = tree_shap(&m, &x).unwrap();
            let b = brute_force_shap(&m, &x).unwrap();
            for j in 0..3 {
                assert!((a.phi(j, 0) - b.phi(j, 0)).abs() < 1e-12, "{x:?} f{j}");
            }
            assert!(a.local_accuracy_error() < 1e-12);
            assert_eq!(a.phi(2, 0), 0.0);
        }
    }

    #[test]
    fn missing_cover_is_error() {
        let mut t = stump(0, 0.5, -1.0, 3.0, 50.0, 50.0);
        if let Node::Leaf { cover, .. } = &mut t.nodes[1] {
            *cover = None;
        }
        let m = two_class(1, vec![t]);
        assert!(matches!(
            tree_shap(&m, &[0.1]),
            Err(ExplainError::MissingCover { round: 0, class: 0 })
        ));
    }

    #[test]
    fn brute_force_cost_guard() {
        let m = two_class(16, vec![stump(0, 0.5, -1.0, 3.0, 50.0, 50.0)]);
        assert!(matches!(
            brute_force_shap(&m, &[0.0; 16]),
            Err(ExplainError::TooManyFeatures(16))
        ));
    }

    #[test]
    fn waterfall_with_zero_phi_is_base_only() {
        let m = two_class(2, vec![]);
        let attr = tree_shap(&m, &[0.3, 0.4]).unwrap();
        let w = waterfall(&attr, 1).unwrap();
        assert_eq!(w.rows.len(), 1);
        assert_eq!(w.rows[0].feature, BASE_ROW);
        assert!(waterfall(&attr, 2).is_err());
    }

    #[test]
    fn importance_ranks_dummy_last() {
        let m = two_class(
            3,
            vec![stump(0, 0.5, -1.0, 3.0, 50.0, 50.0), stump(2, 0.5, 0.0, 0.5, 50.0, 50.0)],
        );
        let x = FeatureMatrix {
            dates: vec![chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()],
            feature_names: m.feature_names.clone(),
            values: vec![vec![0.9, 0.5, 0.9]],
        };
        let g = global_importance(&m, &x).unwrap();
        assert_eq!(g.top(3), ["f0", "f2", "f1"]);
        assert_eq!(g.ranking[2].mean_abs_phi, 0.0);
        // one sample, two classes: class 1 contributes zeros.
        assert!((g.ranking[0].mean_abs_phi - 1.0).abs() < 1e-15);
    }
}
