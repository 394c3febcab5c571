//! Model-agnostic prediction interface and the per-instance attribution record
//! shared by the Shapley and LIME explainers.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::gbt::BoostedTreesModel;
use crate::math::sigmoid;

/// Black-box scalar model explained by the attribution methods.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    /// `x` has exactly `n_features()` finite entries.
    fn predict(&self, x: &[f64]) -> f64;

    /// Features the output can depend on, if known. Every other feature must leave
    /// the prediction unchanged; explainers may skip them.
    fn relevant_features(&self) -> Option<Vec<usize>> {
        None
    }

    /// Predictions at every hybrid point between `b` and `x`: `out[m]` takes
    /// `x[differing[q]]` where bit `q` of `m` is set and `b` elsewhere.
    fn predict_coalitions(&self, x: &[f64], b: &[f64], differing: &[usize], out: &mut Vec<f64>) {
        let mut z = b.to_vec();
        out.clear();
        for mask in 0usize..1 << differing.len() {
            for (bit, &j) in differing.iter().enumerate() {
                z[j] = if mask >> bit & 1 == 1 { x[j] } else { b[j] };
            }
            out.push(self.predict(&z));
        }
    }
}

/// Which output of the boosted model is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputSpace {
    #[default]
    Probability,
    /// Log-odds; Shapley values are exactly additive across trees in this space.
    RawScore,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutput<'a> {
    pub model: &'a BoostedTreesModel,
    pub space: OutputSpace,
}

impl<'a> ModelOutput<'a> {
    pub fn new(model: &'a BoostedTreesModel, space: OutputSpace) -> Self {
        Self { model, space }
    }
}

impl Predictor for ModelOutput<'_> {
    fn n_features(&self) -> usize {
        self.model.n_features()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let raw = self.model.raw_score(x);
        match self.space {
            OutputSpace::Probability => sigmoid(raw),
            OutputSpace::RawScore => raw,
        }
    }

    fn relevant_features(&self) -> Option<Vec<usize>> {
        Some(self.model.used_features().into_iter().collect())
    }

    fn predict_coalitions(&self, x: &[f64], b: &[f64], differing: &[usize], out: &mut Vec<f64>) {
        self.model.raw_scores_over_coalitions(x, b, differing, out);
        if self.space == OutputSpace::Probability {
            out.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
    }
}

/// Closure-backed predictor for hand-built models.
pub struct FnPredictor<F> {
    n_features: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnPredictor<F> {
    pub fn new(n_features: usize, f: F) -> Self {
        Self { n_features, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ShapExact,
    ShapSampled,
    Lime,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ShapExact => "shap-exact",
            Method::ShapSampled => "shap-sampled",
            Method::Lime => "lime",
        }
    }
}

/// Signed per-feature impacts for one instance.
///
/// For Shapley methods `baseline` is the expected output over the background set;
/// for LIME it is the surrogate intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature_names: Vec<String>,
    pub phi: Vec<f64>,
    pub baseline: f64,
    pub prediction: f64,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_err: Option<Vec<f64>>,
}

impl Attribution {
    pub fn n_features(&self) -> usize {
        self.phi.len()
    }

    pub fn with_names(mut self, names: &[String]) -> Self {
        assert_eq!(names.len(), self.phi.len(), "feature name count");
        self.feature_names = names.to_vec();
        self
    }

    /// `prediction - (baseline + Σ phi)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.prediction - (self.baseline + self.phi.iter().sum::<f64>())
    }
}

/// One line of an attribution JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub instance: usize,
    #[serde(flatten)]
    pub attribution: Attribution,
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[AttributionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> std::io::Result<Vec<AttributionRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            serde_json::from_str(&line?).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}

/// Long-format CSV: `instance,feature,phi,baseline,prediction,method`.
pub fn write_csv<W: Write>(w: W, records: &[AttributionRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["instance", "feature", "phi", "baseline", "prediction", "method"])?;
    for r in records {
        let a = &r.attribution;
        for (name, phi) in a.feature_names.iter().zip(&a.phi) {
            out.write_record([
                r.instance.to_string(),
                name.clone(),
                phi.to_string(),
                a.baseline.to_string(),
                a.prediction.to_string(),
                a.method.as_str().to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Independent per-instance seed: SplitMix64 finaliser over (master, index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr() -> Attribution {
        Attribution {
            feature_names: vec!["a".into(), "b".into()],
            phi: vec![0.25, -0.125],
            baseline: 0.1,
            prediction: 0.225,
            method: Method::ShapExact,
            std_err: None,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            AttributionRecord { instance: 0, attribution: attr() },
            AttributionRecord {
                instance: 3,
                attribution: Attribution { method: Method::Lime, ..attr() },
            },
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn csv_has_one_row_per_feature() {
        let records = vec![AttributionRecord { instance: 7, attribution: attr() }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "instance,feature,phi,baseline,prediction,method");
        assert_eq!(lines[1], "7,a,0.25,0.1,0.225,shap-exact");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn efficiency_gap_and_seeds() {
        assert!(attr().efficiency_gap().abs() < 1e-15);
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
