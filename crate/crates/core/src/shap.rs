//! Interventional Shapley values: exact coalition enumeration and Monte-Carlo
//! permutation sampling, plus cohort-level importance and summary data.
//!
//! A coalition `S` is valued by `v(S) = mean_b f(z)` with `z_j = x_j` for `j ∈ S` and
//! `z_j = b_j` otherwise, `b` ranging over the background rows. By linearity the
//! attribution is the mean over background rows of the Shapley values of the
//! single-reference games `v_b`, and in `v_b` every feature with `x_j == b_j` is a
//! dummy. The exact method therefore enumerates only the coalitions of the features
//! that differ from each reference row.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{Attribution, Method, Predictor};
use crate::data::EncodedMatrix;

/// Default limit on the feature count accepted by [`exact_shapley`].
pub const EXACT_FEATURE_CAP: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum ShapError {
    #[error("instance has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("{features} features exceed the exact-enumeration cap of {cap}; use sampled Shapley values")]
    TooManyFeatures { features: usize, cap: usize },
    #[error("feature index {0} out of range")]
    BadSubset(usize),
    #[error("n_permutations must be at least 1")]
    NoPermutations,
    #[error("no attributions given")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Reference rows standing in for the data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: Array2<f64>,
}

impl BackgroundSet {
    pub fn new(rows: Array2<f64>) -> Result<Self, ShapError> {
        if rows.nrows() == 0 {
            return Err(ShapError::EmptyBackground);
        }
        Ok(Self { rows })
    }

    /// At most `max_rows` rows drawn without replacement under `seed`, in original order.
    pub fn sample(matrix: &EncodedMatrix, max_rows: usize, seed: u64) -> Result<Self, ShapError> {
        let n = matrix.n_rows();
        if n == 0 || max_rows == 0 {
            return Err(ShapError::EmptyBackground);
        }
        if n <= max_rows {
            return Self::new(matrix.values.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, max_rows).into_vec();
        idx.sort_unstable();
        Self::new(matrix.values.select(ndarray::Axis(0), &idx))
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }
}

fn check_dims<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    background: &BackgroundSet,
) -> Result<(), ShapError> {
    let d = model.n_features();
    for found in [instance.len(), background.n_features()] {
        if found != d {
            return Err(ShapError::DimensionMismatch { expected: d, found });
        }
    }
    Ok(())
}

fn mean_prediction<P: Predictor + ?Sized>(model: &P, rows: ArrayView2<'_, f64>) -> f64 {
    let mut buf = vec![0.0; rows.ncols()];
    let total: f64 = rows
        .rows()
        .into_iter()
        .map(|r| {
            buf.iter_mut().zip(r.iter()).for_each(|(d, s)| *d = *s);
            model.predict(&buf)
        })
        .sum();
    total / rows.nrows() as f64
}

/// Expected model output with features in `subset` fixed to the instance and the rest
/// taken from each background row.
pub fn value_function<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    subset: &[usize],
    background: &BackgroundSet,
) -> Result<f64, ShapError> {
    check_dims(model, instance, background)?;
    let d = instance.len();
    let mut present = vec![false; d];
    for &j in subset {
        *present.get_mut(j).ok_or(ShapError::BadSubset(j))? = true;
    }
    if present.iter().all(|&p| p) {
        return Ok(model.predict(instance));
    }
    let mut z = vec![0.0; d];
    let total: f64 = background
        .rows
        .rows()
        .into_iter()
        .map(|b| {
            for j in 0..d {
                z[j] = if present[j] { instance[j] } else { b[j] };
            }
            model.predict(&z)
        })
        .sum();
    Ok(total / background.len() as f64)
}

/// `s!(k-s-1)!/k!` for `s = 0..k`.
fn shapley_weights(k: usize) -> Vec<f64> {
    // 1 / (k · C(k-1, s))
    let mut binom = 1.0;
    (0..k)
        .map(|s| {
            if s > 0 {
                binom = binom * (k - s) as f64 / s as f64;
            }
            1.0 / (k as f64 * binom)
        })
        .collect()
}

/// Exact Shapley values by enumerating every coalition. Per background row only the
/// features that differ from the instance (and that the model can depend on) are
/// enumerated; the rest contribute exactly zero.
pub fn exact_shapley<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    background: &BackgroundSet,
    cap: usize,
) -> Result<Attribution, ShapError> {
    check_dims(model, instance, background)?;
    let d = instance.len();
    if d > cap {
        return Err(ShapError::TooManyFeatures { features: d, cap });
    }
    let relevant = match model.relevant_features() {
        Some(fs) => (0..d).map(|j| fs.contains(&j)).collect(),
        None => vec![true; d],
    };
    let mut phi = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut values: Vec<f64> = Vec::new();
    let mut baseline = 0.0;
    for row in background.rows.rows() {
        b.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
        baseline += model.predict(&b);
        let differing: Vec<usize> = (0..d).filter(|&j| relevant[j] && instance[j] != b[j]).collect();
        let k = differing.len();
        if k == 0 {
            continue;
        }
        model.predict_coalitions(instance, &b, &differing, &mut values);
        let weights = shapley_weights(k);
        for (bit, &j) in differing.iter().enumerate() {
            let flag = 1usize << bit;
            let low = flag - 1;
            let mut acc = 0.0;
            // every mask without `bit`: spread i's bits around the gap at `bit`
            for i in 0usize..1 << (k - 1) {
                let mask = (i & low) | ((i & !low) << 1);
                acc += weights[mask.count_ones() as usize] * (values[mask | flag] - values[mask]);
            }
            phi[j] += acc;
        }
    }
    let m = background.len() as f64;
    phi.iter_mut().for_each(|p| *p /= m);
    Ok(Attribution {
        feature_names: feature_names(d),
        phi,
        baseline: baseline / m,
        prediction: model.predict(instance),
        method: Method::ShapExact,
        std_err: None,
    })
}

/// Monte-Carlo Shapley values: mean marginal contribution over `n_permutations`
/// uniformly random feature orderings. Standard errors are reported when at least two
/// permutations are drawn.
pub fn sampled_shapley<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    background: &BackgroundSet,
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution, ShapError> {
    check_dims(model, instance, background)?;
    if n_permutations == 0 {
        return Err(ShapError::NoPermutations);
    }
    let d = instance.len();
    let baseline = mean_prediction(model, background.rows());
    let prediction = model.predict(instance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..d).collect();
    let mut hybrid = background.rows.clone();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        hybrid.assign(&background.rows);
        let mut prev = baseline;
        for (step, &j) in order.iter().enumerate() {
            let value = if step + 1 == d {
                prediction
            } else {
                hybrid.column_mut(j).fill(instance[j]);
                mean_prediction(model, hybrid.view())
            };
            let delta = value - prev;
            sum[j] += delta;
            sum_sq[j] += delta * delta;
            prev = value;
        }
    }
    let n = n_permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = (n_permutations > 1).then(|| {
        phi.iter()
            .zip(&sum_sq)
            .map(|(m, ss)| ((ss - n * m * m).max(0.0) / (n - 1.0) / n).sqrt())
            .collect()
    });
    Ok(Attribution {
        feature_names: feature_names(d),
        phi,
        baseline,
        prediction,
        method: Method::ShapSampled,
        std_err,
    })
}

fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

fn check_homogeneous(attributions: &[Attribution]) -> Result<&[String], ShapError> {
    let first = attributions.first().ok_or(ShapError::EmptyInput)?;
    if attributions
        .iter()
        .any(|a| a.feature_names != first.feature_names || a.phi.len() != first.phi.len())
    {
        return Err(ShapError::ShapeMismatch(
            "attributions have different feature sets".into(),
        ));
    }
    Ok(&first.feature_names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub index: usize,
    pub mean_abs_phi: f64,
}

/// Mean |phi| per feature, sorted descending; ties keep feature order.
pub fn global_importance(attributions: &[Attribution]) -> Result<Vec<ImportanceEntry>, ShapError> {
    let names = check_homogeneous(attributions)?;
    let n = attributions.len() as f64;
    let mut entries: Vec<ImportanceEntry> = names
        .iter()
        .enumerate()
        .map(|(j, name)| ImportanceEntry {
            feature: name.clone(),
            index: j,
            mean_abs_phi: attributions.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then(a.index.cmp(&b.index))
    });
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub feature: String,
    pub instance: usize,
    pub phi: f64,
    pub feature_value: f64,
    pub value_percentile: f64,
}

/// Mid-rank percentile of every value within `values`; a constant column maps to 0.5.
fn mid_rank_percentiles(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| {
            let below = sorted.partition_point(|s| s < v) as f64;
            let equal = sorted.partition_point(|s| s <= v) as f64 - below;
            (below + 0.5 * equal) / n
        })
        .collect()
}

/// Long-format beeswarm data: one record per (feature, instance), features in
/// descending global-importance order. `matrix` row `i` holds the values of instance `i`.
pub fn summary_data(
    attributions: &[Attribution],
    matrix: &EncodedMatrix,
) -> Result<Vec<SummaryRecord>, ShapError> {
    let importance = global_importance(attributions)?;
    if matrix.n_rows() != attributions.len() {
        return Err(ShapError::ShapeMismatch(format!(
            "{} attributions for {} matrix rows",
            attributions.len(),
            matrix.n_rows()
        )));
    }
    if matrix.n_features() != attributions[0].n_features() {
        return Err(ShapError::ShapeMismatch(format!(
            "{} attributed features for {} matrix columns",
            attributions[0].n_features(),
            matrix.n_features()
        )));
    }
    let mut out = Vec::with_capacity(importance.len() * attributions.len());
    for entry in importance {
        let column = matrix.column(entry.index).to_vec();
        let pct = mid_rank_percentiles(&column);
        for (i, a) in attributions.iter().enumerate() {
            out.push(SummaryRecord {
                feature: entry.feature.clone(),
                instance: i,
                phi: a.phi[entry.index],
                feature_value: column[i],
                value_percentile: pct[i],
            });
        }
    }
    Ok(out)
}
