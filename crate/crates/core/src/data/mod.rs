//! Cohort ingestion: schema, CSV loading, completeness filtering, encoding,
//! train/test splitting and synthetic cohort generation.

mod encode;
mod schema;
mod split;
mod synth;
mod table;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use encode::{decode, encode, EncodedMatrix};
pub use schema::{ColumnKind, ColumnSpec, FeatureGroup, FeatureSchema, GroupKind, ADMISSION_SOURCES};
pub use split::{split, SplitPair};
pub use synth::{generate_synthetic_cohort, CohortMarginals, Marginal, RiskSpec};
pub use table::{filter_complete, load_csv, read_csv, Cell, RawTable};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("header mismatch: missing columns [{}], unexpected columns [{}]", missing.join(", "), extra.join(", "))]
    HeaderMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("row {row}: expected {expected} cells, found {found}")]
    MalformedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: label `{value}` is not 0 or 1")]
    InvalidLabel { row: usize, value: String },
    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("unknown category `{value}` in column `{column}`")]
    UnknownCategory { column: String, value: String },
    #[error("row {row}: column `{column}` expects a number")]
    ExpectedNumber { row: usize, column: String },
    #[error("labels are required but the table has no `{0}` column")]
    MissingLabels(String),
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("unknown feature `{0}` in risk spec")]
    UnknownRiskFeature(String),
    #[error("invalid marginal for column `{column}`: {reason}")]
    InvalidMarginal { column: String, reason: String },
    #[error("cohort size must be at least 1")]
    EmptyCohort,
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
