//! Second-order gradient-boosted regression trees with a logistic objective.

mod format;
mod train;
mod tree;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::sigmoid;

pub use format::{FORMAT_NAME, FORMAT_VERSION};
pub use train::{train, train_with_history, TrainingHistory};
pub use tree::{Node, RegressionTree};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("labels must contain both classes ({positives} positive, {negatives} negative)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("training data has no labels")]
    MissingLabels,
    #[error("need at least 2 training rows, found {0}")]
    TooFewRows(usize),
    #[error("non-finite value at row {row}, feature {feature}")]
    NonFinite { row: usize, feature: usize },
    #[error("instance has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),
    #[error("model format version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u64, supported: u64 },
    #[error("corrupt model payload: {0}")]
    CorruptPayload(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub scale_pos_weight: f64,
    pub min_child_weight: f64,
    pub lambda_l2: f64,
    /// Initial raw score; `None` means log-odds of the training prevalence.
    pub base_score: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_depth: 5,
            n_estimators: 10,
            scale_pos_weight: 1.0,
            min_child_weight: 1.0,
            lambda_l2: 1.0,
            base_score: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidHyperparams(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if !(self.scale_pos_weight > 0.0 && self.scale_pos_weight.is_finite()) {
            return bad("scale_pos_weight must be positive");
        }
        if !(self.min_child_weight >= 0.0) || !(self.lambda_l2 >= 0.0) {
            return bad("min_child_weight and lambda_l2 must be non-negative");
        }
        if self.base_score.is_some_and(|b| !b.is_finite()) {
            return bad("base_score must be finite");
        }
        Ok(())
    }
}

/// `sqrt(#negatives / #positives)`.
pub fn compute_scale_pos_weight(labels: &[u8]) -> Result<f64, ModelError> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(ModelError::DegenerateLabels {
            positives,
            negatives,
        });
    }
    Ok((negatives as f64 / positives as f64).sqrt())
}

/// Trained ensemble. Immutable after training; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTreesModel {
    pub feature_names: Vec<String>,
    pub hyperparams: Hyperparams,
    /// Resolved initial raw score.
    pub base_score: f64,
    pub seed: u64,
    pub trees: Vec<RegressionTree>,
}

impl BoostedTreesModel {
    /// Hand-assembled ensemble; used for constructed fixtures.
    pub fn from_trees(feature_names: Vec<String>, base_score: f64, trees: Vec<RegressionTree>) -> Self {
        Self {
            hyperparams: Hyperparams {
                n_estimators: trees.len(),
                base_score: Some(base_score),
                ..Hyperparams::default()
            },
            feature_names,
            base_score,
            seed: 0,
            trees,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_instance(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        if let Some(feature) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { row: 0, feature });
        }
        Ok(())
    }

    /// Raw score without validation; `x` must have `n_features()` finite entries.
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.predict(x))
    }

    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_instance(x)?;
        Ok(self.raw_score(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.predict_raw(x).map(sigmoid)
    }

    /// Class at the 0.5 probability threshold.
    pub fn predict_label(&self, x: &[f64]) -> Result<u8, ModelError> {
        Ok((self.predict_proba(x)? >= 0.5) as u8)
    }

    /// Raw scores at every hybrid point between `b` and `x` over the features in
    /// `differing`: `out[m]` takes `x[differing[q]]` where bit `q` of `m` is set and `b`
    /// elsewhere. Each tree is tabulated over the differing features it splits on, so
    /// the cost grows with those rather than with all `2^k` points; the sums are formed
    /// in the same order as [`raw_score`](Self::raw_score), so results agree bit for bit.
    pub fn raw_scores_over_coalitions(&self, x: &[f64], b: &[f64], differing: &[usize], out: &mut Vec<f64>) {
        let k = differing.len();
        let n = 1usize << k;
        out.clear();
        out.resize(n, self.base_score);
        let mut bit_of = vec![usize::MAX; x.len()];
        for (q, &j) in differing.iter().enumerate() {
            bit_of[j] = q;
        }
        let mut z = b.to_vec();
        let mut bits: Vec<usize> = Vec::new();
        let mut table: Vec<f64> = Vec::new();
        let mut index = vec![0u32; n];
        for tree in &self.trees {
            bits.clear();
            for f in tree.split_features() {
                let q = bit_of[f];
                if q != usize::MAX && !bits.contains(&q) {
                    bits.push(q);
                }
            }
            if bits.is_empty() {
                let v = tree.predict(b);
                out.iter_mut().for_each(|o| *o += v);
                continue;
            }
            table.clear();
            for sub in 0usize..1 << bits.len() {
                for (r, &q) in bits.iter().enumerate() {
                    let j = differing[q];
                    z[j] = if sub >> r & 1 == 1 { x[j] } else { b[j] };
                }
                table.push(tree.predict(&z));
            }
            for &q in &bits {
                z[differing[q]] = b[differing[q]];
            }
            // index[m] = m restricted to this tree's bits, packed; built from m without its lowest bit.
            let mut contrib = vec![0u32; k];
            for (r, &q) in bits.iter().enumerate() {
                contrib[q] = 1 << r;
            }
            for m in 1..n {
                index[m] = index[m & (m - 1)] | contrib[m.trailing_zeros() as usize];
            }
            for (o, &i) in out.iter_mut().zip(&index) {
                *o += table[i as usize];
            }
        }
    }

    /// Indices of features used by at least one split.
    pub fn used_features(&self) -> BTreeSet<usize> {
        self.trees.iter().flat_map(|t| t.split_features()).collect()
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(RegressionTree::depth).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn scale_pos_weight_examples() {
        let mut labels = vec![0u8; 4];
        labels.push(1);
        assert_eq!(compute_scale_pos_weight(&labels).unwrap(), 2.0);
        assert_eq!(compute_scale_pos_weight(&[0, 1, 1, 0]).unwrap(), 1.0);
        let mut cohort = vec![0u8; 17_767];
        cohort.extend(std::iter::repeat(1).take(601));
        let w = compute_scale_pos_weight(&cohort).unwrap();
        assert!((w - 5.4372).abs() < 1e-4, "{w}");
        assert!(matches!(
            compute_scale_pos_weight(&[1, 1]),
            Err(ModelError::DegenerateLabels { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let m = BoostedTreesModel::from_trees(names(2), 0.3, vec![]);
        assert_eq!(m.predict_raw(&[1.0, 2.0]).unwrap(), 0.3);
        assert_eq!(m.predict_proba(&[1.0, 2.0]).unwrap(), sigmoid(0.3));
    }

    #[test]
    fn single_leaf_adds_value() {
        let m = BoostedTreesModel::from_trees(names(1), 0.25, vec![RegressionTree::leaf(-1.5)]);
        assert_eq!(m.predict_raw(&[0.0]).unwrap(), 0.25 - 1.5);
    }

    #[test]
    fn hand_built_stump_left_branch() {
        let m = BoostedTreesModel::from_trees(
            names(2),
            0.5,
            vec![RegressionTree::stump(0, 10.0, -0.75, 0.9)],
        );
        assert_eq!(m.predict_raw(&[3.0, 100.0]).unwrap(), 0.5 - 0.75);
        assert_eq!(m.predict_raw(&[10.0, 100.0]).unwrap(), 0.5 + 0.9);
        assert_eq!(m.predict_label(&[3.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn dimension_checked() {
        let m = BoostedTreesModel::from_trees(names(2), 0.0, vec![]);
        assert!(matches!(
            m.predict_raw(&[1.0]),
            Err(ModelError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(matches!(m.predict_proba(&[1.0, f64::NAN]), Err(ModelError::NonFinite { .. })));
    }
}
