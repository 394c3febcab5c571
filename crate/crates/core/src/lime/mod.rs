//! LIME local surrogates for tabular instances.
//!
//! A neighbourhood is sampled around the instance by keeping or redrawing each raw
//! feature group, the model is evaluated on every neighbour, and a proximity-weighted
//! ridge regression of the outputs on the binary "same as the instance" mask gives the
//! local explanation.

mod ridge;
mod sample;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{Attribution, Method, Predictor};

pub use ridge::{weighted_ridge, RidgeFit};
pub use sample::{sample_neighborhood, NeighborhoodSample};
pub use stats::{GroupMarginal, TrainingStats};

#[derive(Debug, Error, PartialEq)]
pub enum LimeError {
    #[error("training statistics are empty")]
    EmptyTrainingStats,
    #[error("instance has {found} features, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid surrogate config: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} neighbourhood rows, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("proximity weights must be positive and finite")]
    InvalidWeights,
    #[error("surrogate normal equations are singular")]
    SingularSystem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub n_samples: usize,
    /// `None` means `0.75 · sqrt(d)`.
    pub kernel_width: Option<f64>,
    /// Sparsity budget; `None` keeps every feature.
    pub max_features: Option<usize>,
    pub ridge_penalty: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            kernel_width: None,
            max_features: None,
            ridge_penalty: 1e-3,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn kernel_width_for(&self, d: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (d as f64).sqrt())
    }

    pub fn validate(&self, d: usize) -> Result<(), LimeError> {
        let bad = |m: String| Err(LimeError::InvalidConfig(m));
        if self.max_features.is_some_and(|k| k > d) {
            return bad(format!("max_features exceeds feature count {d}"));
        }
        if self.n_samples < d + 2 {
            return bad(format!("n_samples must be at least d + 2 = {}", d + 2));
        }
        if self.kernel_width.is_some_and(|w| !(w > 0.0 && w.is_finite())) {
            return bad("kernel_width must be positive".into());
        }
        if !(self.ridge_penalty >= 0.0 && self.ridge_penalty.is_finite()) {
            return bad("ridge_penalty must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeFeature {
    pub index: usize,
    pub feature: String,
    pub weight: f64,
    /// Interpretable condition satisfied by the instance, e.g. `61.00 < age <= 75.00`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    pub feature_names: Vec<String>,
    /// In selection order.
    pub selected: Vec<LimeFeature>,
    pub intercept: f64,
    /// Weighted R² of the surrogate on the neighbourhood.
    pub local_fit_r2: f64,
    pub prediction: f64,
}

impl LimeExplanation {
    /// Dense attribution over all features; unselected features get weight 0.
    pub fn to_attribution(&self) -> Attribution {
        let mut phi = vec![0.0; self.feature_names.len()];
        for f in &self.selected {
            phi[f.index] = f.weight;
        }
        Attribution {
            feature_names: self.feature_names.clone(),
            phi,
            baseline: self.intercept,
            prediction: self.prediction,
            method: Method::Lime,
            std_err: None,
        }
    }
}

fn weighted_correlation(x: &[f64], r: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mr = r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut cov, mut vx, mut vr) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (dx, dr) = (x[i] - mx, r[i] - mr);
        cov += w[i] * dx * dr;
        vx += w[i] * dx * dx;
        vr += w[i] * dr * dr;
    }
    if vx <= 0.0 || vr <= 0.0 {
        0.0
    } else {
        cov / (vx * vr).sqrt()
    }
}

fn columns_subset(mask: &ndarray::Array2<f64>, cols: &[usize]) -> Vec<f64> {
    mask.rows()
        .into_iter()
        .flat_map(|r| cols.iter().map(move |&j| r[j]))
        .collect()
}

/// Fits the weighted ridge surrogate on the mask matrix. With a sparsity budget `K < d`,
/// features are chosen by forward selection on the weighted correlation with the current
/// residual, and the final model is refit on the chosen set.
pub fn fit_surrogate(sample: &NeighborhoodSample, cfg: &SurrogateConfig) -> Result<LimeExplanation, LimeError> {
    let n = sample.outputs.len();
    let d = sample.mask.ncols();
    if n < d + 2 {
        return Err(LimeError::TooFewSamples { needed: d + 2, found: n });
    }
    if sample.weights.len() != n || sample.mask.nrows() != n {
        return Err(LimeError::DimensionMismatch {
            expected: n,
            found: sample.weights.len().min(sample.mask.nrows()),
        });
    }
    if sample.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(LimeError::InvalidWeights);
    }
    let k = cfg.max_features.unwrap_or(d);
    if k > d {
        return Err(LimeError::InvalidConfig(format!("max_features {k} exceeds {d}")));
    }
    let y = &sample.outputs;
    let w = &sample.weights;

    let selected: Vec<usize> = if k == d {
        (0..d).collect()
    } else {
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        let mut residual = y.clone();
        while chosen.len() < k {
            let mut best: Option<(usize, f64)> = None;
            for j in (0..d).filter(|j| !chosen.contains(j)) {
                let col: Vec<f64> = sample.mask.column(j).to_vec();
                let c = weighted_correlation(&col, &residual, w).abs();
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((j, c));
                }
            }
            chosen.push(best.expect("k < d leaves a candidate").0);
            let fit = weighted_ridge(&columns_subset(&sample.mask, &chosen), chosen.len(), y, w, cfg.ridge_penalty)?;
            for (i, r) in residual.iter_mut().enumerate() {
                let row: Vec<f64> = chosen.iter().map(|&j| sample.mask[[i, j]]).collect();
                *r = y[i] - fit.predict_row(&row);
            }
        }
        chosen
    };

    let design = columns_subset(&sample.mask, &selected);
    let fit = weighted_ridge(&design, selected.len(), y, w, cfg.ridge_penalty)?;
    let sw: f64 = w.iter().sum();
    let y_mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..n {
        let pred = fit.predict_row(&design[i * selected.len()..(i + 1) * selected.len()]);
        ss_res += w[i] * (y[i] - pred).powi(2);
        ss_tot += w[i] * (y[i] - y_mean).powi(2);
    }
    let local_fit_r2 = if ss_tot == 0.0 || y.iter().all(|v| *v == y[0]) {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };

    Ok(LimeExplanation {
        feature_names: sample.feature_names.clone(),
        selected: selected
            .iter()
            .zip(&fit.coef)
            .map(|(&j, &c)| LimeFeature {
                index: j,
                feature: sample.feature_names[j].clone(),
                weight: c,
                condition: None,
            })
            .collect(),
        intercept: fit.intercept,
        local_fit_r2,
        prediction: y[0],
    })
}

/// Samples a neighbourhood of `instance`, fits the surrogate and attaches the
/// interpretable condition of every selected feature.
pub fn explain_instance<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    stats: &TrainingStats,
    cfg: &SurrogateConfig,
) -> Result<LimeExplanation, LimeError> {
    let sample = sample_neighborhood(instance, stats, cfg, model)?;
    let mut explanation = fit_surrogate(&sample, cfg)?;
    for f in &mut explanation.selected {
        f.condition = Some(stats.condition(f.index, instance));
    }
    Ok(explanation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask_sample(n: usize, d: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> NeighborhoodSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = Array2::<f64>::ones((n, d));
        for i in 1..n {
            for j in 0..d {
                mask[[i, j]] = rng.random_bool(0.5) as u8 as f64;
            }
        }
        let width = 0.75 * (d as f64).sqrt();
        let weights = mask
            .rows()
            .into_iter()
            .map(|r| {
                let zeros = r.iter().filter(|&&v| v == 0.0).count() as f64;
                (-zeros / (width * width)).exp()
            })
            .collect();
        let outputs = mask.rows().into_iter().map(|r| f(r.as_slice().unwrap())).collect();
        NeighborhoodSample {
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
            points: mask.clone(),
            mask,
            outputs,
            weights,
        }
    }

    #[test]
    fn constant_target_gives_zero_weights() {
        let s = random_mask_sample(60, 4, 1, |_| 0.37);
        let e = fit_surrogate(&s, &SurrogateConfig::default()).unwrap();
        assert!(e.selected.iter().all(|f| f.weight == 0.0));
        assert!((e.intercept - 0.37).abs() < 1e-15);
        assert_eq!(e.local_fit_r2, 1.0);
    }

    #[test]
    fn output_equal_to_one_mask_column() {
        let s = random_mask_sample(400, 5, 2, |m| m[3]);
        let cfg = SurrogateConfig {
            ridge_penalty: 1e-6,
            ..SurrogateConfig::default()
        };
        let e = fit_surrogate(&s, &cfg).unwrap();
        for f in &e.selected {
            let want = if f.index == 3 { 1.0 } else { 0.0 };
            assert!((f.weight - want).abs() < 1e-6, "{f:?}");
        }
        assert!(e.local_fit_r2 > 0.999_999);
    }

    #[test]
    fn duplicated_rows_with_halved_weights() {
        let s = random_mask_sample(80, 3, 3, |m| 0.2 + 0.5 * m[0] - 0.1 * m[2] + 0.05 * m[0] * m[1]);
        let mut dup = s.clone();
        let n = s.outputs.len();
        dup.mask = ndarray::concatenate![ndarray::Axis(0), s.mask, s.mask];
        dup.points = dup.mask.clone();
        dup.outputs = s.outputs.iter().chain(&s.outputs).copied().collect();
        dup.weights = s.weights.iter().chain(&s.weights).map(|w| w / 2.0).collect();
        assert_eq!(dup.outputs.len(), 2 * n);
        // Pure weighted least squares: duplication with halved weights is the same problem.
        let cfg = SurrogateConfig {
            ridge_penalty: 0.0,
            ..SurrogateConfig::default()
        };
        let a = fit_surrogate(&s, &cfg).unwrap();
        let b = fit_surrogate(&dup, &cfg).unwrap();
        for (x, y) in a.selected.iter().zip(&b.selected) {
            assert!((x.weight - y.weight).abs() < 1e-10);
        }
        assert!((a.intercept - b.intercept).abs() < 1e-10);
    }

    #[test]
    fn forward_selection_picks_strongest_features() {
        let s = random_mask_sample(500, 6, 4, |m| 0.9 * m[4] - 0.5 * m[1] + 0.01 * m[0]);
        let cfg = SurrogateConfig {
            max_features: Some(2),
            ..SurrogateConfig::default()
        };
        let e = fit_surrogate(&s, &cfg).unwrap();
        let idx: Vec<usize> = e.selected.iter().map(|f| f.index).collect();
        assert_eq!(idx, vec![4, 1]);
        let attr = e.to_attribution();
        assert_eq!(attr.phi.iter().filter(|p| **p != 0.0).count(), 2);
        assert_eq!(attr.method, Method::Lime);
    }

    #[test]
    fn rejects_bad_samples_and_config() {
        let s = random_mask_sample(5, 4, 5, |m| m[0]);
        assert!(matches!(
            fit_surrogate(&s, &SurrogateConfig::default()),
            Err(LimeError::TooFewSamples { needed: 6, found: 5 })
        ));
        let mut s = random_mask_sample(20, 2, 5, |m| m[0]);
        s.weights[3] = 0.0;
        assert_eq!(
            fit_surrogate(&s, &SurrogateConfig::default()),
            Err(LimeError::InvalidWeights)
        );
        let cfg = SurrogateConfig {
            max_features: Some(9),
            ..SurrogateConfig::default()
        };
        assert!(cfg.validate(4).is_err());
        assert!(SurrogateConfig { n_samples: 5, ..SurrogateConfig::default() }.validate(4).is_err());
        assert!(SurrogateConfig::default().validate(19).is_ok());
    }
}
