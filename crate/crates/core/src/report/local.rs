use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::attribution::Attribution;
use crate::crossval::{rank_features, Sign, SignedRanking};
use crate::data::{ColumnKind, FeatureSchema};

/// One feature of a side-by-side SHAP/LIME explanation of a single instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalComparisonRow {
    pub feature: String,
    /// Encoded value fed to the model.
    pub value: f64,
    /// Value of the owning raw column, e.g. the active category of a one-hot group.
    pub raw_value: String,
    pub shap_phi: f64,
    pub shap_sign: Sign,
    /// Rank within the sign group; empty for zero impacts.
    pub shap_rank: Option<usize>,
    pub lime_weight: f64,
    pub lime_sign: Sign,
    pub lime_rank: Option<usize>,
    pub sign_match: bool,
}

/// Raw-column reading of each encoded column of `x`.
pub fn raw_value_strings(x: &[f64], schema: &FeatureSchema) -> Vec<String> {
    let mut out = Vec::with_capacity(x.len());
    let mut start = 0;
    for col in &schema.columns {
        match &col.kind {
            ColumnKind::Onehot { categories, .. } => {
                let active = categories
                    .iter()
                    .enumerate()
                    .find(|(k, _)| x.get(start + k) == Some(&1.0))
                    .map_or_else(|| "?".to_string(), |(_, c)| c.clone());
                out.extend(std::iter::repeat_n(active, categories.len()));
                start += categories.len();
            }
            ColumnKind::Ordinal { ordinal_map, .. } => {
                let v = x.get(start).copied().unwrap_or(f64::NAN);
                out.push(
                    ordinal_map
                        .iter()
                        .find(|(_, &code)| code as f64 == v)
                        .map_or_else(|| v.to_string(), |(c, _)| c.clone()),
                );
                start += 1;
            }
            ColumnKind::Numeric => {
                out.push(x.get(start).map_or_else(String::new, |v| v.to_string()));
                start += 1;
            }
        }
    }
    out
}

fn rank_map(r: &SignedRanking, d: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; d];
    for &(j, rank) in r.positive.iter().chain(&r.negative) {
        out[j] = Some(rank);
    }
    out
}

/// One row per encoded feature, sorted by |SHAP phi| descending (ties by feature order).
pub fn export_local_comparison(
    shap: &Attribution,
    lime: &Attribution,
    values: &[f64],
    raw_values: &[String],
) -> Result<Vec<LocalComparisonRow>, ReportError> {
    let d = shap.phi.len();
    if shap.feature_names != lime.feature_names || lime.phi.len() != d || values.len() != d || raw_values.len() != d {
        return Err(ReportError::VocabularyMismatch);
    }
    let shap_ranks = rank_map(&rank_features(shap), d);
    let lime_ranks = rank_map(&rank_features(lime), d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| shap.phi[b].abs().total_cmp(&shap.phi[a].abs()).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .map(|j| {
            let (ss, ls) = (Sign::of(shap.phi[j]), Sign::of(lime.phi[j]));
            LocalComparisonRow {
                feature: shap.feature_names[j].clone(),
                value: values[j],
                raw_value: raw_values[j].clone(),
                shap_phi: shap.phi[j],
                shap_sign: ss,
                shap_rank: shap_ranks[j],
                lime_weight: lime.phi[j],
                lime_sign: ls,
                lime_rank: lime_ranks[j],
                sign_match: ss == ls,
            }
        })
        .collect())
}

pub fn write_local_csv<W: Write>(w: W, rows: &[LocalComparisonRow]) -> Result<(), ReportError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "feature",
        "value",
        "raw_value",
        "shap_phi",
        "shap_sign",
        "shap_rank",
        "lime_weight",
        "lime_sign",
        "lime_rank",
        "sign_match",
    ])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_local_csv<R: Read>(r: R) -> Result<Vec<LocalComparisonRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(ReportError::from)).collect()
}
