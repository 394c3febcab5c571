//! Versioned JSON model payload. See `docs/model-format.md` for the layout.

use serde::{Deserialize, Serialize};

use super::{BoostedTreesModel, Hyperparams, ModelError, RegressionTree};

pub const FORMAT_NAME: &str = "cohort-xai-gbt";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    format: String,
    version: u64,
    feature_names: Vec<String>,
    hyperparams: Hyperparams,
    base_score: f64,
    seed: u64,
    trees: Vec<RegressionTree>,
}

#[derive(Deserialize)]
struct Envelope {
    format: String,
    version: u64,
}

impl BoostedTreesModel {
    /// Pretty-printed JSON with a trailing newline. Floats use shortest round-trip
    /// notation, so a reloaded model predicts bit-identically.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = Payload {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            feature_names: self.feature_names.clone(),
            hyperparams: self.hyperparams.clone(),
            base_score: self.base_score,
            seed: self.seed,
            trees: self.trees.clone(),
        };
        let mut out = serde_json::to_vec_pretty(&payload).expect("model serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |e: &dyn std::fmt::Display| ModelError::CorruptPayload(e.to_string());
        let envelope: Envelope = serde_json::from_slice(bytes).map_err(|e| corrupt(&e))?;
        if envelope.format != FORMAT_NAME {
            return Err(ModelError::CorruptPayload(format!(
                "unexpected format tag `{}`",
                envelope.format
            )));
        }
        if envelope.version != FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: envelope.version,
                supported: FORMAT_VERSION,
            });
        }
        let p: Payload = serde_json::from_slice(bytes).map_err(|e| corrupt(&e))?;
        p.hyperparams
            .validate()
            .map_err(|e| corrupt(&e))?;
        if !p.base_score.is_finite() {
            return Err(ModelError::CorruptPayload("non-finite base score".into()));
        }
        for (i, tree) in p.trees.iter().enumerate() {
            tree.check(p.feature_names.len())
                .map_err(|e| ModelError::CorruptPayload(format!("tree {i}: {e}")))?;
        }
        Ok(BoostedTreesModel {
            feature_names: p.feature_names,
            hyperparams: p.hyperparams,
            base_score: p.base_score,
            seed: p.seed,
            trees: p.trees,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::Node;

    fn model() -> BoostedTreesModel {
        BoostedTreesModel::from_trees(
            vec!["age".into(), "gender_F".into()],
            -3.123456789012345,
            vec![
                RegressionTree::stump(0, 64.5, -0.0123, 0.1 + 0.2),
                RegressionTree {
                    nodes: vec![
                        Node::Split { feature: 1, threshold: 0.5, left: 1, right: 2 },
                        Node::Split { feature: 0, threshold: 80.25, left: 3, right: 4 },
                        Node::Leaf { value: -1e-300 },
                        Node::Leaf { value: 2.5e-7 },
                        Node::Leaf { value: std::f64::consts::PI },
                    ],
                },
            ],
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = BoostedTreesModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = model().to_bytes();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(
            BoostedTreesModel::from_bytes(cut),
            Err(ModelError::CorruptPayload(_))
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let text = String::from_utf8(model().to_bytes()).unwrap();
        let future = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            BoostedTreesModel::from_bytes(future.as_bytes()),
            Err(ModelError::VersionMismatch { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn structural_damage_is_corrupt() {
        let text = String::from_utf8(model().to_bytes()).unwrap();
        let bad = text.replacen("\"feature\": 1", "\"feature\": 7", 1);
        assert!(matches!(
            BoostedTreesModel::from_bytes(bad.as_bytes()),
            Err(ModelError::CorruptPayload(_))
        ));
        let bad = text.replacen(FORMAT_NAME, "other-model", 1);
        assert!(BoostedTreesModel::from_bytes(bad.as_bytes()).is_err());
    }
}
