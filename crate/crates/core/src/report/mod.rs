//! Evaluation and plotting artifacts: classification report, local SHAP/LIME
//! comparison tables, and plot data with static SVG renderings.

mod classification;
mod local;
mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use classification::{classification_report, ClassMetrics, ClassificationReport};
pub use local::{export_local_comparison, raw_value_strings, read_local_csv, write_local_csv, LocalComparisonRow};
pub use plot::{
    export_plot_data, read_plot_csv, render_svg, write_plot_csv, PlotFiles, PlotKind, PlotPayload,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("label {0} is not binary")]
    NonBinary(u8),
    #[error("feature vocabularies differ")]
    VocabularyMismatch,
    #[error("unknown plot kind {0:?} (expected importance, summary or local)")]
    UnknownKind(String),
    #[error("payload does not match plot kind {0}")]
    PayloadMismatch(&'static str),
    #[error("malformed report file: {0}")]
    Malformed(String),
}

impl ReportError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ReportError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| ReportError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| ReportError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| ReportError::io(path, e))?;
    tmp.persist(path).map_err(|e| ReportError::io(path, e.error))?;
    Ok(())
}
