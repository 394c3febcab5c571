use super::{BoostedTreesModel, Hyperparams, ModelError, Node, RegressionTree};
use crate::data::EncodedMatrix;
use crate::math::{logit, sigmoid};

/// Weighted training log-loss, recorded before the first round and after each round.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub loss: Vec<f64>,
}

pub fn train(data: &EncodedMatrix, hp: &Hyperparams, seed: u64) -> Result<BoostedTreesModel, ModelError> {
    train_with_history(data, hp, seed).map(|(m, _)| m)
}

/// Boosts `hp.n_estimators` trees on the weighted logistic loss.
///
/// Rows are weighted `scale_pos_weight` for positives and 1 for negatives. Each round
/// grows one tree by exact greedy search over the gradient/hessian statistics and
/// shrinks its leaf values by the learning rate. No sampling is involved, so `seed`
/// is only recorded in the model.
pub fn train_with_history(
    data: &EncodedMatrix,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(BoostedTreesModel, TrainingHistory), ModelError> {
    hp.validate()?;
    let labels = data.labels.as_ref().ok_or(ModelError::MissingLabels)?;
    let n = data.n_rows();
    if n < 2 {
        return Err(ModelError::TooFewRows(n));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == n {
        return Err(ModelError::DegenerateLabels {
            positives,
            negatives: n - positives,
        });
    }
    for ((row, feature), v) in data.values.indexed_iter() {
        if !v.is_finite() {
            return Err(ModelError::NonFinite { row, feature });
        }
    }

    let base_score = hp
        .base_score
        .unwrap_or_else(|| logit(positives as f64 / n as f64));
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let w: Vec<f64> = labels
        .iter()
        .map(|&l| if l == 1 { hp.scale_pos_weight } else { 1.0 })
        .collect();
    let columns: Vec<Vec<f64>> = (0..data.n_features())
        .map(|j| data.column(j).to_vec())
        .collect();
    let sorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut raw = vec![base_score; n];
    let mut history = TrainingHistory {
        loss: vec![weighted_log_loss(&raw, &y, &w)],
    };
    let mut trees = Vec::with_capacity(hp.n_estimators);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..hp.n_estimators {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            grad[i] = w[i] * (p - y[i]);
            hess[i] = w[i] * p * (1.0 - p);
        }
        let (tree, leaf_of) = grow_tree(&columns, &sorted, &grad, &hess, hp);
        for i in 0..n {
            if let Node::Leaf { value } = tree.nodes[leaf_of[i]] {
                raw[i] += value;
            }
        }
        history.loss.push(weighted_log_loss(&raw, &y, &w));
        trees.push(tree);
    }

    let model = BoostedTreesModel {
        feature_names: data.feature_names.clone(),
        hyperparams: hp.clone(),
        base_score,
        seed,
        trees,
    };
    Ok((model, history))
}

/// Mean of `w_i · logloss(y_i, sigmoid(r_i))` normalised by the total weight.
pub(crate) fn weighted_log_loss(raw: &[f64], y: &[f64], w: &[f64]) -> f64 {
    // -log sigmoid(r) = softplus(-r), -log(1 - sigmoid(r)) = softplus(r)
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let total: f64 = raw
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&r, &y), &w)| w * (y * softplus(-r) + (1.0 - y) * softplus(r)))
        .sum();
    total / w.iter().sum::<f64>()
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_weight(g: f64, h: f64, hp: &Hyperparams) -> f64 {
    -g / (h + hp.lambda_l2) * hp.learning_rate
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda == 0.0 {
        0.0
    } else {
        g * g / (h + lambda)
    }
}

/// Grows one tree breadth-first. Returns the tree and the leaf index of every row.
fn grow_tree(
    columns: &[Vec<f64>],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    hp: &Hyperparams,
) -> (RegressionTree, Vec<usize>) {
    let n = grad.len();
    let mut node_of = vec![0usize; n];
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut frontier = vec![0usize];
    for depth in 0..=hp.max_depth {
        // per-node gradient sums
        let mut g_sum = vec![0.0; nodes.len()];
        let mut h_sum = vec![0.0; nodes.len()];
        for i in 0..n {
            g_sum[node_of[i]] += grad[i];
            h_sum[node_of[i]] += hess[i];
        }
        let mut best: Vec<Option<Candidate>> = (0..nodes.len()).map(|_| None).collect();
        if depth < hp.max_depth {
            let active: Vec<bool> = (0..nodes.len()).map(|k| frontier.contains(&k)).collect();
            for (feature, order) in sorted.iter().enumerate() {
                let col = &columns[feature];
                let mut gl = vec![0.0; nodes.len()];
                let mut hl = vec![0.0; nodes.len()];
                let mut last: Vec<Option<usize>> = vec![None; nodes.len()];
                for &i in order {
                    let k = node_of[i];
                    if !active[k] {
                        continue;
                    }
                    if let Some(prev) = last[k] {
                        if col[i] > col[prev] {
                            let (gr, hr) = (g_sum[k] - gl[k], h_sum[k] - hl[k]);
                            if hl[k] >= hp.min_child_weight && hr >= hp.min_child_weight {
                                let gain = 0.5
                                    * (score(gl[k], hl[k], hp.lambda_l2) + score(gr, hr, hp.lambda_l2)
                                        - score(g_sum[k], h_sum[k], hp.lambda_l2));
                                if gain > 0.0 && best[k].as_ref().is_none_or(|b| gain > b.gain) {
                                    let mid = 0.5 * (col[prev] + col[i]);
                                    let threshold = if mid > col[prev] { mid } else { col[i] };
                                    best[k] = Some(Candidate {
                                        gain,
                                        feature,
                                        threshold,
                                    });
                                }
                            }
                        }
                    }
                    gl[k] += grad[i];
                    hl[k] += hess[i];
                    last[k] = Some(i);
                }
            }
        }

        let mut next = Vec::new();
        for &k in &frontier {
            match best[k].take() {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[k] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    next.push(left);
                    next.push(left + 1);
                }
                None => {
                    nodes[k] = Node::Leaf {
                        value: leaf_weight(g_sum[k], h_sum[k], hp),
                    };
                }
            }
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = nodes[node_of[i]]
            {
                node_of[i] = if columns[feature][i] < threshold { left } else { right };
            }
        }
        frontier = next;
    }
    (RegressionTree { nodes }, node_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureGroup, GroupKind};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> EncodedMatrix {
        let d = rows[0].len();
        let n = rows.len();
        EncodedMatrix {
            feature_names: (0..d).map(|j| format!("x{j}")).collect(),
            values: Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).unwrap(),
            labels: Some(labels),
            groups: (0..d)
                .map(|j| FeatureGroup {
                    name: format!("x{j}"),
                    kind: GroupKind::Numeric,
                    start: j,
                    len: 1,
                })
                .collect(),
        }
    }

    fn random_data(seed: u64, n: usize, d: usize) -> EncodedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let logit = x[0] - 0.5 * x[1 % d] + rng.random_range(-1.0..1.0);
            labels.push((logit > 0.0) as u8);
            rows.push(x);
        }
        labels[0] = 0;
        labels[1] = 1;
        matrix(rows, labels)
    }

    #[test]
    fn separable_one_dimensional() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 - 99.5) / 10.0).collect();
        let labels: Vec<u8> = xs.iter().map(|&x| (x > 0.0) as u8).collect();
        let m = matrix(xs.iter().map(|&x| vec![x]).collect(), labels.clone());
        let model = train(&m, &Hyperparams::default(), 0).unwrap();
        let correct = xs
            .iter()
            .zip(&labels)
            .filter(|(&x, &y)| model.predict_label(&[x]).unwrap() == y)
            .count();
        assert_eq!(correct, 200);
    }

    #[test]
    fn zero_rounds_predict_base_score() {
        let m = random_data(1, 50, 3);
        let hp = Hyperparams {
            n_estimators: 0,
            ..Hyperparams::default()
        };
        let model = train(&m, &hp, 0).unwrap();
        let prevalence = m.labels.as_ref().unwrap().iter().map(|&y| y as f64).sum::<f64>() / 50.0;
        assert!(model.trees.is_empty());
        assert!((model.predict_proba(&[0.0, 1.0, 2.0]).unwrap() - prevalence).abs() < 1e-12);
    }

    #[test]
    fn loss_never_increases_and_depth_bounded() {
        for seed in 0..5 {
            let m = random_data(seed, 150, 4);
            let hp = Hyperparams {
                n_estimators: 25,
                max_depth: 3,
                scale_pos_weight: 1.7,
                ..Hyperparams::default()
            };
            let (model, hist) = train_with_history(&m, &hp, seed).unwrap();
            assert_eq!(hist.loss.len(), 26);
            for w in hist.loss.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{:?}", hist.loss);
            }
            assert!(model.max_depth() <= 3);
        }
    }

    #[test]
    fn deterministic() {
        let m = random_data(9, 120, 3);
        let a = train(&m, &Hyperparams::default(), 4).unwrap();
        let b = train(&m, &Hyperparams::default(), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_input() {
        let m = matrix(vec![vec![1.0], vec![2.0]], vec![1, 1]);
        assert!(matches!(
            train(&m, &Hyperparams::default(), 0),
            Err(ModelError::DegenerateLabels { .. })
        ));
        let m = matrix(vec![vec![1.0], vec![f64::INFINITY]], vec![0, 1]);
        assert!(matches!(
            train(&m, &Hyperparams::default(), 0),
            Err(ModelError::NonFinite { row: 1, feature: 0 })
        ));
    }

    #[test]
    fn weighted_loss_matches_direct_formula() {
        let raw = [0.3, -1.2, 2.0];
        let y = [1.0, 0.0, 1.0];
        let w = [2.0, 1.0, 2.0];
        let direct: f64 = raw
            .iter()
            .zip(&y)
            .zip(&w)
            .map(|((&r, &y), &w)| {
                let p = sigmoid(r);
                -w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 5.0;
        assert!((weighted_log_loss(&raw, &y, &w) - direct).abs() < 1e-14);
    }

    #[test]
    fn coalition_scores_match_pointwise_prediction() {
        let data = random_data(5, 200, 6);
        let hp = Hyperparams {
            max_depth: 3,
            n_estimators: 8,
            ..Hyperparams::default()
        };
        let model = train(&data, &hp, 0).unwrap();
        let x = data.row_vec(0);
        let b = data.row_vec(1);
        let differing: Vec<usize> = (0..6).filter(|&j| x[j] != b[j]).collect();
        let mut out = Vec::new();
        model.raw_scores_over_coalitions(&x, &b, &differing, &mut out);
        assert_eq!(out.len(), 1 << differing.len());
        for (m, v) in out.iter().enumerate() {
            let mut z = b.clone();
            for (q, &j) in differing.iter().enumerate() {
                if m >> q & 1 == 1 {
                    z[j] = x[j];
                }
            }
            assert_eq!(*v, model.raw_score(&z), "mask {m}");
        }
    }
}
