//! Run configuration: a sectioned TOML file whose every value can be overridden
//! on the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::OutputSpace;
use crate::data::RiskSpec;
use crate::gbt::Hyperparams;
use crate::shap::EXACT_FEATURE_CAP;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for per-instance explanation; 0 lets the runtime decide.
    pub threads: usize,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub explain: ExplainConfig,
    pub crossval: CrossvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            threads: 0,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            explain: ExplainConfig::default(),
            crossval: CrossvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Schema TOML; the built-in cohort schema when absent.
    pub schema: Option<PathBuf>,
    /// Cohort CSV; `<out>/cohort.csv` when absent.
    pub input: Option<PathBuf>,
    pub test_fraction: f64,
    pub stratify: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            schema: None,
            input: None,
            test_fraction: 0.2,
            stratify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_rows: usize,
    pub risk: RiskSpec,
    /// JSON file of per-column marginals; built-in cohort marginals when absent.
    pub marginals: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_rows: 5000,
            risk: RiskSpec::cohort_default(),
            marginals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub hyperparams: Hyperparams,
    /// Replace `scale_pos_weight` with sqrt(#neg/#pos) of the training split.
    pub auto_scale_pos_weight: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hyperparams: Hyperparams::default(),
            auto_scale_pos_weight: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub background_size: usize,
    /// Used when the feature count exceeds `exact_cap`.
    pub n_permutations: usize,
    pub exact_cap: usize,
    pub output_space: OutputSpace,
    /// `all` or a comma-separated list of test-row indices.
    pub instances: String,
    pub check_efficiency: bool,
    pub lime: LimeConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            background_size: 100,
            n_permutations: 1000,
            exact_cap: EXACT_FEATURE_CAP,
            output_space: OutputSpace::Probability,
            instances: "all".to_string(),
            check_efficiency: false,
            lime: LimeConfig::default(),
        }
    }
}

/// LIME settings; the per-instance seed comes from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: Option<f64>,
    pub max_features: Option<usize>,
    pub ridge_penalty: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        let d = crate::lime::SurrogateConfig::default();
        Self {
            n_samples: d.n_samples,
            kernel_width: d.kernel_width,
            max_features: d.max_features,
            ridge_penalty: d.ridge_penalty,
        }
    }
}

impl LimeConfig {
    pub fn surrogate(&self, seed: u64) -> crate::lime::SurrogateConfig {
        crate::lime::SurrogateConfig {
            n_samples: self.n_samples,
            kernel_width: self.kernel_width,
            max_features: self.max_features,
            ridge_penalty: self.ridge_penalty,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalConfig {
    /// Consistency denominator counts only features used in tree splits.
    pub split_used_only: bool,
    /// Debug: replace LIME weights by the SHAP values (self-agreement check).
    pub lime_equals_shap: bool,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Built-in cohort schema and the published boosting settings
    /// (learning rate 0.1, depth 5, 10 trees, sqrt class-ratio weighting, 80/20 split).
    pub fn apply_paper_defaults(&mut self) {
        self.data.schema = None;
        self.data.test_fraction = 0.2;
        self.data.stratify = false;
        self.model = ModelConfig::default();
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return bad("data.test_fraction must be in (0, 1)");
        }
        if self.explain.background_size == 0 {
            return bad("explain.background_size must be positive");
        }
        if self.explain.n_permutations == 0 {
            return bad("explain.n_permutations must be positive");
        }
        self.model
            .hyperparams
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
