use serde::{Deserialize, Serialize};

use super::LimeError;
use crate::data::{EncodedMatrix, FeatureGroup, GroupKind};

/// Training-set marginal of one feature group, used to redraw perturbed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroupMarginal {
    /// Category frequencies aligned with the group's columns.
    Onehot { probabilities: Vec<f64> },
    /// Empirical values; the interpretable feature is "equal to the instance's code".
    Ordinal { values: Vec<f64> },
    /// Empirical values plus quartile edges; the interpretable feature is "in the
    /// instance's quartile bin".
    Numeric { values: Vec<f64>, quartiles: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub feature_names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub marginals: Vec<GroupMarginal>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TrainingStats {
    pub fn from_matrix(matrix: &EncodedMatrix) -> Result<Self, LimeError> {
        if matrix.n_rows() == 0 || matrix.groups.is_empty() {
            return Err(LimeError::EmptyTrainingStats);
        }
        let n = matrix.n_rows() as f64;
        let marginals = matrix
            .groups
            .iter()
            .map(|g| match g.kind {
                GroupKind::Onehot => GroupMarginal::Onehot {
                    probabilities: g
                        .columns()
                        .map(|j| matrix.column(j).iter().filter(|&&v| v == 1.0).count() as f64 / n)
                        .collect(),
                },
                GroupKind::Ordinal => GroupMarginal::Ordinal {
                    values: matrix.column(g.start).to_vec(),
                },
                GroupKind::Numeric => {
                    let values = matrix.column(g.start).to_vec();
                    let mut sorted = values.clone();
                    sorted.sort_by(f64::total_cmp);
                    GroupMarginal::Numeric {
                        quartiles: [0.25, 0.5, 0.75].map(|q| quantile(&sorted, q)),
                        values,
                    }
                }
            })
            .collect();
        Ok(Self {
            feature_names: matrix.feature_names.clone(),
            groups: matrix.groups.clone(),
            marginals,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Group index owning each encoded column.
    pub(crate) fn group_of_column(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_features()];
        for (k, g) in self.groups.iter().enumerate() {
            for j in g.columns() {
                out[j] = k;
            }
        }
        out
    }

    /// Human-readable condition describing the instance's interpretable feature `j`.
    pub fn condition(&self, j: usize, instance: &[f64]) -> String {
        let name = &self.feature_names[j];
        let k = self.group_of_column()[j];
        match &self.marginals[k] {
            GroupMarginal::Onehot { .. } | GroupMarginal::Ordinal { .. } => {
                format!("{name} = {}", instance[j])
            }
            GroupMarginal::Numeric { quartiles, .. } => {
                let b = quartile_bin(quartiles, instance[j]);
                match (b.checked_sub(1).map(|i| quartiles[i]), quartiles.get(b)) {
                    (None, Some(hi)) => format!("{name} <= {hi:.2}"),
                    (Some(lo), Some(hi)) => format!("{lo:.2} < {name} <= {hi:.2}"),
                    (Some(lo), None) => format!("{name} > {lo:.2}"),
                    (None, None) => unreachable!("three edges give four bins"),
                }
            }
        }
    }
}

/// Bin index in `0..4`: values equal to an edge fall in the lower bin.
pub(crate) fn quartile_bin(quartiles: &[f64; 3], v: f64) -> usize {
    quartiles.iter().filter(|&&e| v > e).count()
}
