use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, EncodedMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: EncodedMatrix,
    pub test: EncodedMatrix,
    pub seed: u64,
    /// Row indices into the input matrix, ascending.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

fn test_count(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1)
}

/// Seeded random train/test partition. With `stratify`, each label class is
/// partitioned separately so both halves keep the class balance.
pub fn split(
    matrix: &EncodedMatrix,
    test_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<SplitPair, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidFraction(test_fraction));
    }
    let n = matrix.n_rows();
    if n < 2 {
        return Err(DataError::TooFewRows { needed: 2, found: n });
    }
    let labels = matrix
        .labels
        .as_ref()
        .ok_or_else(|| DataError::MissingLabels("label".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut test = Vec::new();
    let mut train = Vec::new();
    if stratify {
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let k = match idx.len() {
                0 => 0,
                1 => (test_fraction >= 0.5) as usize,
                m => test_count(m, test_fraction),
            };
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        if test.is_empty() || train.is_empty() {
            return Err(DataError::TooFewRows { needed: 2, found: n });
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let k = test_count(n, test_fraction);
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPair {
        train: matrix.select_rows(&train),
        test: matrix.select_rows(&test),
        seed,
        train_indices: train,
        test_indices: test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureGroup, GroupKind};
    use ndarray::Array2;

    fn matrix(n: usize) -> EncodedMatrix {
        EncodedMatrix {
            feature_names: vec!["x".into()],
            values: Array2::from_shape_fn((n, 1), |(i, _)| i as f64),
            labels: Some((0..n).map(|i| (i % 5 == 0) as u8).collect()),
            groups: vec![FeatureGroup {
                name: "x".into(),
                kind: GroupKind::Numeric,
                start: 0,
                len: 1,
            }],
        }
    }

    #[test]
    fn ten_rows_eight_two() {
        let s = split(&matrix(10), 0.2, 7, false).unwrap();
        assert_eq!(s.train.n_rows(), 8);
        assert_eq!(s.test.n_rows(), 2);
        assert!(s.test_indices.iter().all(|i| !s.train_indices.contains(i)));
        let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split(&matrix(10), 0.2, 7, false).unwrap(), s);
    }

    #[test]
    fn cohort_scale_test_size() {
        assert_eq!(test_count(18_368, 0.2), 3674);
    }

    #[test]
    fn different_seeds_give_different_train_sets() {
        let m = matrix(200);
        let a = split(&m, 0.2, 1, false).unwrap();
        let b = split(&m, 0.2, 2, false).unwrap();
        assert_ne!(a.train_indices, b.train_indices);
    }

    #[test]
    fn stratified_keeps_class_ratio() {
        let m = matrix(100);
        let s = split(&m, 0.2, 3, true).unwrap();
        let pos_test = s.test.labels.as_ref().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(pos_test, 4);
        assert_eq!(s.test.n_rows(), 20);
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(matches!(split(&matrix(1), 0.2, 0, false), Err(DataError::TooFewRows { .. })));
        assert!(matches!(split(&matrix(10), 1.0, 0, false), Err(DataError::InvalidFraction(_))));
        let mut m = matrix(10);
        m.labels = None;
        assert!(matches!(split(&m, 0.2, 0, false), Err(DataError::MissingLabels(_))));
    }
}
