//! Declarative description of the raw cohort columns and how each one is encoded.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Encoding rule for a single raw column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ColumnKind {
    /// Expanded into one indicator column per category, named `<prefix>_<category>`.
    /// The prefix defaults to the raw column name.
    Onehot {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prefix: Option<String>,
        categories: Vec<String>,
    },
    /// Mapped to a single integer-valued column through `ordinal_map`.
    Ordinal {
        categories: Vec<String>,
        ordinal_map: BTreeMap<String, i64>,
    },
    /// Passed through unchanged.
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn onehot(name: &str, prefix: Option<&str>, categories: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Onehot {
                prefix: prefix.map(str::to_string),
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    /// Ordinal column whose codes are the category positions `0..n`.
    pub fn ordinal(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Ordinal {
                categories: categories.iter().map(|c| c.to_string()).collect(),
                ordinal_map: categories
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.to_string(), i as i64))
                    .collect(),
            },
        }
    }

    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, ColumnKind::Numeric)
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Onehot { categories, .. } | ColumnKind::Ordinal { categories, .. } => {
                Some(categories)
            }
            ColumnKind::Numeric => None,
        }
    }

    /// Names of the encoded columns this raw column expands into.
    pub fn encoded_names(&self) -> Vec<String> {
        match &self.kind {
            ColumnKind::Onehot { prefix, categories } => {
                let prefix = prefix.as_deref().unwrap_or(&self.name);
                categories
                    .iter()
                    .map(|c| format!("{prefix}_{c}"))
                    .collect()
            }
            ColumnKind::Ordinal { .. } | ColumnKind::Numeric => vec![self.name.clone()],
        }
    }
}

/// Kind of an encoded feature group, mirroring [`ColumnKind`] without the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    Onehot,
    Ordinal,
    Numeric,
}

/// Contiguous block of encoded columns produced by one raw column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub kind: GroupKind,
    pub start: usize,
    pub len: usize,
}

impl FeatureGroup {
    pub fn columns(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    #[serde(default = "default_label")]
    pub label: String,
    pub columns: Vec<ColumnSpec>,
}

fn default_label() -> String {
    "mortality".to_string()
}

/// Admission-source categories in ordinal order (code = position).
pub const ADMISSION_SOURCES: [&str; 10] = [
    "clinic referral",
    "court/law enforcement",
    "emergency room",
    "HMO referral",
    "newborn (extramural birth)",
    "newborn (normal delivery)",
    "physician referral",
    "transfer from a hospital",
    "transfer from a skilled nursing facility",
    "transfer from another health care facility",
];

impl FeatureSchema {
    /// The ten-column COVID-19 cohort layout: six categorical columns (five one-hot,
    /// one ordinal) and four numeric passthrough columns, 19 encoded features in total.
    pub fn cohort_default() -> Self {
        Self {
            label: default_label(),
            columns: vec![
                ColumnSpec::onehot(
                    "encounter_type",
                    Some("encnt"),
                    &["Emergency", "Outpatient", "Inpatient"],
                ),
                ColumnSpec::ordinal("admission_source", &ADMISSION_SOURCES),
                ColumnSpec::onehot(
                    "race",
                    None,
                    &["BlackAfricanAmerican", "White", "Other"],
                ),
                ColumnSpec::onehot("ethnicity", None, &["HispanicLatino", "Not"]),
                ColumnSpec::onehot("gender", None, &["F", "M"]),
                ColumnSpec::onehot(
                    "financial_class",
                    Some("financ"),
                    &["Medicare", "Medicaid", "Self", "Commercial"],
                ),
                ColumnSpec::numeric("age"),
                ColumnSpec::numeric("zip"),
                ColumnSpec::numeric("admit_quarter"),
                ColumnSpec::numeric("admit_year"),
            ],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let schema: Self =
            toml::from_str(text).map_err(|e| DataError::InvalidSchema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to toml")
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |msg: String| Err(DataError::InvalidSchema(msg));
        if self.columns.is_empty() {
            return invalid("schema has no columns".into());
        }
        let mut raw = HashSet::new();
        for col in &self.columns {
            if col.name.is_empty() {
                return invalid("empty column name".into());
            }
            if !raw.insert(col.name.as_str()) || col.name == self.label {
                return invalid(format!("duplicate column name `{}`", col.name));
            }
            if let Some(cats) = col.categories() {
                if cats.is_empty() {
                    return invalid(format!("column `{}` declares no categories", col.name));
                }
                let distinct: HashSet<_> = cats.iter().collect();
                if distinct.len() != cats.len() {
                    return invalid(format!("column `{}` repeats a category", col.name));
                }
            }
            if let ColumnKind::Ordinal {
                categories,
                ordinal_map,
            } = &col.kind
            {
                for cat in categories {
                    if !ordinal_map.contains_key(cat) {
                        return invalid(format!(
                            "ordinal column `{}` has no code for `{cat}`",
                            col.name
                        ));
                    }
                }
                if ordinal_map.len() != categories.len() {
                    return invalid(format!(
                        "ordinal column `{}` maps undeclared categories",
                        col.name
                    ));
                }
                let codes: HashSet<_> = ordinal_map.values().collect();
                if codes.len() != ordinal_map.len() {
                    return invalid(format!("ordinal column `{}` reuses a code", col.name));
                }
            }
        }
        let mut encoded = HashSet::new();
        for name in self.encoded_names() {
            if !encoded.insert(name.clone()) {
                return invalid(format!("duplicate encoded column `{name}`"));
            }
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn encoded_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(|c| c.encoded_names()).collect()
    }

    pub fn n_encoded(&self) -> usize {
        self.groups().iter().map(|g| g.len).sum()
    }

    pub fn groups(&self) -> Vec<FeatureGroup> {
        let mut start = 0;
        self.columns
            .iter()
            .map(|c| {
                let (kind, len) = match &c.kind {
                    ColumnKind::Onehot { categories, .. } => (GroupKind::Onehot, categories.len()),
                    ColumnKind::Ordinal { .. } => (GroupKind::Ordinal, 1),
                    ColumnKind::Numeric => (GroupKind::Numeric, 1),
                };
                let group = FeatureGroup {
                    name: c.name.clone(),
                    kind,
                    start,
                    len,
                };
                start += len;
                group
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_default_has_nineteen_encoded_features() {
        let schema = FeatureSchema::cohort_default();
        schema.validate().unwrap();
        let names = schema.encoded_names();
        assert_eq!(names.len(), 19);
        assert_eq!(&names[..3], ["encnt_Emergency", "encnt_Outpatient", "encnt_Inpatient"]);
        assert!(names.contains(&"gender_F".to_string()));
        assert!(names.contains(&"financ_Medicare".to_string()));
        assert!(names.contains(&"race_BlackAfricanAmerican".to_string()));
        assert!(names.contains(&"ethnicity_Not".to_string()));
    }

    #[test]
    fn admission_source_codes_follow_table_order() {
        let schema = FeatureSchema::cohort_default();
        let ColumnKind::Ordinal { ordinal_map, .. } = &schema.column("admission_source").unwrap().kind
        else {
            panic!("admission_source must be ordinal");
        };
        assert_eq!(ordinal_map["clinic referral"], 0);
        assert_eq!(ordinal_map["emergency room"], 2);
        assert_eq!(ordinal_map["physician referral"], 6);
        assert_eq!(ordinal_map["transfer from another health care facility"], 9);
    }

    #[test]
    fn toml_round_trip() {
        let schema = FeatureSchema::cohort_default();
        let text = schema.to_toml_string();
        assert_eq!(FeatureSchema::from_toml_str(&text).unwrap(), schema);
    }

    #[test]
    fn shipped_schema_file_matches_default() {
        let text = include_str!("../../schemas/cohort.toml");
        assert_eq!(
            FeatureSchema::from_toml_str(text).unwrap(),
            FeatureSchema::cohort_default()
        );
    }

    #[test]
    fn rejects_partial_ordinal_map() {
        let mut schema = FeatureSchema::cohort_default();
        if let ColumnKind::Ordinal { ordinal_map, .. } = &mut schema.columns[1].kind {
            ordinal_map.remove("emergency room");
        }
        assert!(matches!(schema.validate(), Err(DataError::InvalidSchema(_))));
    }

    #[test]
    fn rejects_duplicate_codes_and_names() {
        let mut schema = FeatureSchema::cohort_default();
        if let ColumnKind::Ordinal { ordinal_map, .. } = &mut schema.columns[1].kind {
            *ordinal_map.get_mut("emergency room").unwrap() = 0;
        }
        assert!(schema.validate().is_err());

        let mut schema = FeatureSchema::cohort_default();
        schema.columns.push(ColumnSpec::numeric("age"));
        assert!(schema.validate().is_err());

        let schema = FeatureSchema {
            label: "mortality".into(),
            columns: vec![
                ColumnSpec::onehot("a", Some("x"), &["1"]),
                ColumnSpec::onehot("b", Some("x"), &["1"]),
            ],
        };
        assert!(schema.validate().is_err());
    }
}
