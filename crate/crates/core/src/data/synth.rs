//! Synthetic stand-in cohorts: categorical and numeric columns drawn from
//! configurable marginals, labels drawn from a logistic model over encoded features.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{encode, Cell, ColumnKind, DataError, FeatureSchema, RawTable};
use crate::math::sigmoid;

/// Per-column sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum Marginal {
    /// Category probabilities aligned with the schema's category list.
    Categorical { probabilities: Vec<f64> },
    /// Gaussian rounded to the nearest integer and clamped to `[min, max]`.
    Normal { mean: f64, std: f64, min: f64, max: f64 },
    /// One of `values`, uniformly unless `probabilities` is given.
    Choice {
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probabilities: Option<Vec<f64>>,
    },
}

/// Column name → marginal. Categorical columns without an entry are sampled uniformly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CohortMarginals(pub BTreeMap<String, Marginal>);

impl CohortMarginals {
    /// Marginals loosely shaped like a regional COVID-19 inpatient/ED population.
    pub fn cohort_default() -> Self {
        let cat = |p: &[f64]| Marginal::Categorical {
            probabilities: p.to_vec(),
        };
        let mut m = BTreeMap::new();
        m.insert("encounter_type".into(), cat(&[0.45, 0.35, 0.20]));
        m.insert(
            "admission_source".into(),
            cat(&[0.08, 0.01, 0.45, 0.02, 0.005, 0.005, 0.25, 0.10, 0.03, 0.05]),
        );
        m.insert("race".into(), cat(&[0.10, 0.60, 0.30]));
        m.insert("ethnicity".into(), cat(&[0.45, 0.55]));
        m.insert("gender".into(), cat(&[0.52, 0.48]));
        m.insert("financial_class".into(), cat(&[0.30, 0.20, 0.15, 0.35]));
        m.insert(
            "age".into(),
            Marginal::Normal {
                mean: 52.0,
                std: 18.0,
                min: 18.0,
                max: 100.0,
            },
        );
        m.insert(
            "zip".into(),
            Marginal::Choice {
                values: vec![765.0, 766.0, 767.0, 768.0, 786.0, 787.0, 789.0],
                probabilities: None,
            },
        );
        m.insert(
            "admit_quarter".into(),
            Marginal::Choice {
                values: vec![1.0, 2.0, 3.0, 4.0],
                probabilities: None,
            },
        );
        m.insert(
            "admit_year".into(),
            Marginal::Choice {
                values: vec![2020.0, 2021.0],
                probabilities: Some(vec![0.45, 0.55]),
            },
        );
        Self(m)
    }
}

/// Logistic label model: `logit P(y=1) = intercept + Σ weights[f] · x_f` over encoded features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskSpec {
    pub intercept: f64,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

impl RiskSpec {
    pub fn cohort_default() -> Self {
        let weights = [
            ("encnt_Inpatient", 1.8),
            ("encnt_Outpatient", -0.5),
            ("age", 0.045),
            ("financ_Medicare", 0.7),
            ("financ_Medicaid", -0.3),
            ("gender_M", 0.4),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            intercept: -6.0,
            weights,
        }
    }
}

enum Sampler<'a> {
    Category(&'a [String], WeightedIndex<f64>),
    Normal(Normal<f64>, f64, f64),
    Choice(&'a [f64], Option<WeightedIndex<f64>>),
}

fn weighted(column: &str, p: &[f64], expected: usize) -> Result<WeightedIndex<f64>, DataError> {
    let invalid = |reason: String| DataError::InvalidMarginal {
        column: column.to_string(),
        reason,
    };
    if p.len() != expected {
        return Err(invalid(format!("{} probabilities for {expected} values", p.len())));
    }
    WeightedIndex::new(p).map_err(|e| invalid(e.to_string()))
}

/// Draws `n` complete rows (schema columns plus the label column) under `seed`.
pub fn generate_synthetic_cohort(
    n: usize,
    seed: u64,
    schema: &FeatureSchema,
    risk: &RiskSpec,
    marginals: &CohortMarginals,
) -> Result<RawTable, DataError> {
    if n == 0 {
        return Err(DataError::EmptyCohort);
    }
    schema.validate()?;
    let names = schema.encoded_names();
    let weights: Vec<(usize, f64)> = risk
        .weights
        .iter()
        .map(|(k, &w)| {
            names
                .iter()
                .position(|n| n == k)
                .map(|j| (j, w))
                .ok_or_else(|| DataError::UnknownRiskFeature(k.clone()))
        })
        .collect::<Result<_, _>>()?;
    for key in marginals.0.keys() {
        if schema.column(key).is_none() {
            return Err(DataError::InvalidMarginal {
                column: key.clone(),
                reason: "not a schema column".into(),
            });
        }
    }

    let samplers: Vec<Sampler> = schema
        .columns
        .iter()
        .map(|col| {
            let marginal = marginals.0.get(&col.name);
            match (&col.kind, marginal) {
                (ColumnKind::Onehot { categories, .. } | ColumnKind::Ordinal { categories, .. }, m) => {
                    let p = match m {
                        None => vec![1.0; categories.len()],
                        Some(Marginal::Categorical { probabilities }) => probabilities.clone(),
                        Some(_) => {
                            return Err(DataError::InvalidMarginal {
                                column: col.name.clone(),
                                reason: "categorical column needs a categorical marginal".into(),
                            })
                        }
                    };
                    Ok(Sampler::Category(categories, weighted(&col.name, &p, categories.len())?))
                }
                (ColumnKind::Numeric, Some(Marginal::Normal { mean, std, min, max })) => {
                    let normal = Normal::new(*mean, *std).map_err(|e| DataError::InvalidMarginal {
                        column: col.name.clone(),
                        reason: e.to_string(),
                    })?;
                    Ok(Sampler::Normal(normal, *min, *max))
                }
                (ColumnKind::Numeric, Some(Marginal::Choice { values, probabilities })) => {
                    if values.is_empty() {
                        return Err(DataError::InvalidMarginal {
                            column: col.name.clone(),
                            reason: "no values".into(),
                        });
                    }
                    let w = probabilities
                        .as_ref()
                        .map(|p| weighted(&col.name, p, values.len()))
                        .transpose()?;
                    Ok(Sampler::Choice(values, w))
                }
                (ColumnKind::Numeric, _) => Err(DataError::InvalidMarginal {
                    column: col.name.clone(),
                    reason: "numeric column needs a normal or choice marginal".into(),
                }),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = RawTable::new(schema.columns.iter().map(|c| c.name.clone()).collect());
    for _ in 0..n {
        let row = samplers
            .iter()
            .map(|s| match s {
                Sampler::Category(cats, w) => Cell::Text(cats[w.sample(&mut rng)].clone()),
                Sampler::Normal(dist, lo, hi) => {
                    Cell::Number(dist.sample(&mut rng).round().clamp(*lo, *hi))
                }
                Sampler::Choice(values, None) => Cell::Number(values[rng.random_range(0..values.len())]),
                Sampler::Choice(values, Some(w)) => Cell::Number(values[w.sample(&mut rng)]),
            })
            .collect();
        table.rows.push(row);
    }

    let encoded = encode(&table, schema)?;
    table.header.push(schema.label.clone());
    for (i, row) in table.rows.iter_mut().enumerate() {
        let x = encoded.row(i);
        let logit = risk.intercept + weights.iter().map(|&(j, w)| w * x[j]).sum::<f64>();
        let y = rng.random::<f64>() < sigmoid(logit);
        row.push(Cell::Number(y as u8 as f64));
    }
    Ok(table)
}
