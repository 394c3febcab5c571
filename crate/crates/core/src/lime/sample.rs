use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stats::{quartile_bin, GroupMarginal};
use super::{LimeError, SurrogateConfig, TrainingStats};
use crate::attribution::Predictor;

/// Perturbed neighbours of one instance. Row 0 is the instance itself.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSample {
    pub feature_names: Vec<String>,
    pub points: Array2<f64>,
    /// 1 where the neighbour's interpretable feature matches the instance.
    pub mask: Array2<f64>,
    pub outputs: Vec<f64>,
    /// Proximity `exp(-D² / width²)` with `D² = number of zeros in the mask row`.
    pub weights: Vec<f64>,
}

/// Draws `cfg.n_samples` rows (including the instance).
///
/// Each raw feature group is kept with probability 1/2 or redrawn from its training
/// marginal; one-hot groups are redrawn as a unit, so every neighbour stays a valid
/// encoding. A mask entry is 1 when the neighbour agrees with the instance on that
/// interpretable feature: same indicator value for one-hot columns, same code for
/// ordinal columns, same quartile bin for numeric columns.
pub fn sample_neighborhood<P: Predictor + ?Sized>(
    instance: &[f64],
    stats: &TrainingStats,
    cfg: &SurrogateConfig,
    model: &P,
) -> Result<NeighborhoodSample, LimeError> {
    if stats.groups.is_empty() || stats.marginals.is_empty() {
        return Err(LimeError::EmptyTrainingStats);
    }
    let d = stats.n_features();
    for found in [instance.len(), model.n_features()] {
        if found != d {
            return Err(LimeError::DimensionMismatch { expected: d, found });
        }
    }
    cfg.validate(d)?;
    let width = cfg.kernel_width_for(d);

    let onehot_dists: Vec<Option<WeightedIndex<f64>>> = stats
        .marginals
        .iter()
        .map(|m| match m {
            GroupMarginal::Onehot { probabilities } => WeightedIndex::new(probabilities).ok(),
            _ => None,
        })
        .collect();

    let n = cfg.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Array2::<f64>::zeros((n, d));
    let mut mask = Array2::<f64>::ones((n, d));
    points.row_mut(0).assign(&ndarray::ArrayView1::from(instance));
    for i in 1..n {
        let mut row = points.row_mut(i);
        row.assign(&ndarray::ArrayView1::from(instance));
        for (k, (group, marginal)) in stats.groups.iter().zip(&stats.marginals).enumerate() {
            if rng.random_bool(0.5) {
                continue;
            }
            match marginal {
                GroupMarginal::Onehot { .. } => {
                    if let Some(dist) = &onehot_dists[k] {
                        let pick = dist.sample(&mut rng);
                        for (offset, j) in group.columns().enumerate() {
                            row[j] = (offset == pick) as u8 as f64;
                        }
                    }
                }
                GroupMarginal::Ordinal { values } | GroupMarginal::Numeric { values, .. } => {
                    row[group.start] = values[rng.random_range(0..values.len())];
                }
            }
        }
        for (group, marginal) in stats.groups.iter().zip(&stats.marginals) {
            for j in group.columns() {
                let same = match marginal {
                    GroupMarginal::Onehot { .. } | GroupMarginal::Ordinal { .. } => row[j] == instance[j],
                    GroupMarginal::Numeric { quartiles, .. } => {
                        quartile_bin(quartiles, row[j]) == quartile_bin(quartiles, instance[j])
                    }
                };
                if !same {
                    mask[[i, j]] = 0.0;
                }
            }
        }
    }

    let mut buf = vec![0.0; d];
    let outputs = points
        .rows()
        .into_iter()
        .map(|r| {
            buf.iter_mut().zip(r.iter()).for_each(|(b, v)| *b = *v);
            model.predict(&buf)
        })
        .collect();
    let weights = mask
        .rows()
        .into_iter()
        .map(|r| {
            let dist_sq = r.iter().filter(|&&m| m == 0.0).count() as f64;
            (-dist_sq / (width * width)).exp()
        })
        .collect();
    Ok(NeighborhoodSample {
        feature_names: stats.feature_names.clone(),
        points,
        mask,
        outputs,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::FnPredictor;
    use crate::data::{encode, generate_synthetic_cohort, CohortMarginals, FeatureSchema, GroupKind, RiskSpec};

    fn stats() -> (TrainingStats, Vec<f64>) {
        let schema = FeatureSchema::cohort_default();
        let t = generate_synthetic_cohort(
            500,
            2,
            &schema,
            &RiskSpec::cohort_default(),
            &CohortMarginals::cohort_default(),
        )
        .unwrap();
        let m = encode(&t, &schema).unwrap();
        (TrainingStats::from_matrix(&m).unwrap(), m.row_vec(0))
    }

    #[test]
    fn first_row_is_instance_with_unit_weight() {
        let (stats, x) = stats();
        let f = FnPredictor::new(19, |z: &[f64]| z[0] + 0.01 * z[16]);
        let cfg = SurrogateConfig {
            n_samples: 300,
            ..SurrogateConfig::default()
        };
        let s = sample_neighborhood(&x, &stats, &cfg, &f).unwrap();
        assert_eq!(s.points.row(0).to_vec(), x);
        assert!(s.mask.row(0).iter().all(|&m| m == 1.0));
        assert_eq!(s.weights[0], 1.0);
        assert!(s.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        assert_eq!(s.outputs[0], f.predict(&x));
        for i in 0..300 {
            let zeros = s.mask.row(i).iter().filter(|&&m| m == 0.0).count() as f64;
            let width = 0.75 * 19f64.sqrt();
            assert_eq!(s.weights[i], (-zeros / (width * width)).exp());
        }
        assert_eq!(sample_neighborhood(&x, &stats, &cfg, &f).unwrap(), s);
    }

    #[test]
    fn onehot_groups_stay_valid() {
        let (stats, x) = stats();
        let f = FnPredictor::new(19, |_: &[f64]| 0.0);
        let cfg = SurrogateConfig {
            n_samples: 500,
            seed: 9,
            ..SurrogateConfig::default()
        };
        let s = sample_neighborhood(&x, &stats, &cfg, &f).unwrap();
        for g in stats.groups.iter().filter(|g| g.kind == GroupKind::Onehot) {
            for r in s.points.rows() {
                let sum: f64 = g.columns().map(|j| r[j]).sum();
                assert_eq!(sum, 1.0);
            }
        }
        // a redraw that changes the category flips exactly two indicator columns
        let g = &stats.groups[0];
        for r in s.mask.rows() {
            let zeros = g.columns().filter(|&j| r[j] == 0.0).count();
            assert!(zeros == 0 || zeros == 2);
        }
    }

    #[test]
    fn kernel_extremes() {
        let width: f64 = 1.3;
        let d = 5.0;
        assert_eq!((-0.0 / (width * width)).exp(), 1.0);
        assert!(((-d / (width * width)).exp() - (-5.0f64 / 1.69).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (stats, x) = stats();
        let f = FnPredictor::new(3, |_: &[f64]| 0.0);
        assert!(matches!(
            sample_neighborhood(&x, &stats, &SurrogateConfig::default(), &f),
            Err(LimeError::DimensionMismatch { .. })
        ));
        let empty = TrainingStats {
            feature_names: vec![],
            groups: vec![],
            marginals: vec![],
        };
        assert_eq!(
            sample_neighborhood(&[], &empty, &SurrogateConfig::default(), &f),
            Err(LimeError::EmptyTrainingStats)
        );
    }
}
