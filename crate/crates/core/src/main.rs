use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cohort_xai::attribution::OutputSpace;
use cohort_xai::config::RunConfig;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "cohort-xai", version, about = "Train a boosted-tree cohort classifier and cross-check its SHAP and LIME explanations")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Built-in cohort schema and the published boosting hyperparameters.
    #[arg(long, global = true)]
    paper_defaults: bool,
    /// Worker threads for per-instance explanations (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ExplainArgs {
    /// Explain log-odds instead of probabilities.
    #[arg(long)]
    raw_score: bool,
    /// Background rows for the Shapley value function.
    #[arg(long)]
    background: Option<usize>,
    /// Perturbed samples per LIME explanation.
    #[arg(long)]
    lime_samples: Option<usize>,
    /// Permutations for sampled Shapley values (used above the exact feature cap).
    #[arg(long)]
    permutations: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort CSV.
    Synth {
        /// Number of patients.
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Train the classifier and write the test-set classification report.
    Train {
        /// Cohort CSV (default: <out>/cohort.csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Schema TOML (default: built-in cohort schema).
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Preserve the label ratio in the train/test split.
        #[arg(long)]
        stratify: bool,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Explain selected test instances with both SHAP and LIME.
    Explain {
        /// `all` or comma-separated test-row indices.
        #[arg(long)]
        instances: Option<String>,
        /// Fail unless baseline + sum(phi) equals the prediction for every SHAP record.
        #[arg(long)]
        check_efficiency: bool,
        #[command(flatten)]
        explain: ExplainArgs,
    },
    /// Explain every test instance and aggregate SHAP/LIME agreement.
    Crossval {
        /// Consistency denominator counts only features used in tree splits.
        #[arg(long)]
        split_used_only: bool,
        /// Debug: use the SHAP values as LIME weights.
        #[arg(long)]
        lime_equals_shap: bool,
        #[command(flatten)]
        explain: ExplainArgs,
    },
    /// Global importance and summary plot data from stored SHAP attributions.
    Report {
        /// Attribution JSONL (default: <out>/crossval/attributions.jsonl, then <out>/explain/attributions.jsonl).
        #[arg(long)]
        attributions: Option<PathBuf>,
    },
}

fn apply_explain_args(cfg: &mut RunConfig, a: &ExplainArgs) {
    if a.raw_score {
        cfg.explain.output_space = OutputSpace::RawScore;
    }
    if let Some(n) = a.background {
        cfg.explain.background_size = n;
    }
    if let Some(n) = a.lime_samples {
        cfg.explain.lime.n_samples = n;
    }
    if let Some(n) = a.permutations {
        cfg.explain.n_permutations = n;
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if c.paper_defaults {
        cfg.apply_paper_defaults();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    match &cli.command {
        Command::Synth { rows } => {
            if let Some(n) = rows {
                cfg.synth.n_rows = *n;
            }
        }
        Command::Train {
            data,
            schema,
            stratify,
            test_fraction,
        } => {
            if data.is_some() {
                cfg.data.input = data.clone();
            }
            if schema.is_some() {
                cfg.data.schema = schema.clone();
            }
            cfg.data.stratify |= *stratify;
            if let Some(f) = test_fraction {
                cfg.data.test_fraction = *f;
            }
        }
        Command::Explain {
            instances,
            check_efficiency,
            explain,
        } => {
            if let Some(sel) = instances {
                cfg.explain.instances = sel.clone();
            }
            cfg.explain.check_efficiency |= *check_efficiency;
            apply_explain_args(&mut cfg, explain);
        }
        Command::Crossval {
            split_used_only,
            lime_equals_shap,
            explain,
        } => {
            cfg.crossval.split_used_only |= *split_used_only;
            cfg.crossval.lime_equals_shap |= *lime_equals_shap;
            apply_explain_args(&mut cfg, explain);
        }
        Command::Report { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = resolve_config(&cli)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .context("building thread pool")?;
    pool.install(|| match &cli.command {
        Command::Synth { .. } => commands::synth(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Explain { .. } => commands::explain(&cfg),
        Command::Crossval { .. } => commands::crossval(&cfg),
        Command::Report { attributions } => commands::report(&cfg, attributions.as_deref()),
    })
}
