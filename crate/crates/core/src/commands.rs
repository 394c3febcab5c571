//! Subcommand implementations. Every command writes its files under the run's
//! output directory together with a manifest, and nothing time-dependent, so a
//! rerun with the same configuration reproduces every byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use cohort_xai::attribution::{self, derive_seed, Attribution, AttributionRecord, Method, ModelOutput};
use cohort_xai::config::RunConfig;
use cohort_xai::crossval::cohort_crossval;
use cohort_xai::data::{self, encode, filter_complete, load_csv, CohortMarginals, EncodedMatrix, FeatureSchema};
use cohort_xai::gbt::{self, compute_scale_pos_weight, BoostedTreesModel};
use cohort_xai::lime::{self, TrainingStats};
use cohort_xai::report::{
    self, classification_report, export_local_comparison, export_plot_data, raw_value_strings, PlotKind,
    PlotPayload,
};
use cohort_xai::shap::{self, BackgroundSet};

const STAGE_BACKGROUND: u64 = 1;
const STAGE_LIME: u64 = 2;
const STAGE_SHAP_SAMPLED: u64 = 3;

/// Tracks the files written by one command for its manifest.
struct Run<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    outputs: Vec<(String, usize)>,
}

#[derive(Serialize)]
struct OutputFile<'a> {
    path: &'a str,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seeds: BTreeMap<&'static str, u64>,
    config: RunConfig,
    details: serde_json::Value,
    outputs: Vec<OutputFile<'a>>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig, command: &'static str) -> Self {
        Self {
            cfg,
            command,
            outputs: Vec::new(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        report::write_atomic(&path, bytes)?;
        self.outputs.push((rel.to_string(), bytes.len()));
        Ok(())
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let len = std::fs::metadata(self.path(rel))
            .with_context(|| format!("reading {rel}"))?
            .len();
        self.outputs.push((rel.to_string(), len as usize));
        Ok(())
    }

    fn finish(mut self, seeds: BTreeMap<&'static str, u64>, details: serde_json::Value) -> Result<()> {
        // The output directory itself is not part of the recorded configuration, so
        // identical runs into different directories produce identical manifests.
        let mut config = self.cfg.clone();
        config.out = PathBuf::from(".");
        let outputs = std::mem::take(&mut self.outputs);
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seeds,
            config,
            details,
            outputs: outputs.iter().map(|(p, b)| OutputFile { path: p, bytes: *b }).collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let name = format!("manifest_{}.json", self.command);
        report::write_atomic(&self.path(&name), &bytes)?;
        Ok(())
    }
}

fn load_schema(cfg: &RunConfig) -> Result<FeatureSchema> {
    Ok(match &cfg.data.schema {
        Some(p) => FeatureSchema::load(p)?,
        None => FeatureSchema::cohort_default(),
    })
}

fn load_marginals(cfg: &RunConfig) -> Result<CohortMarginals> {
    Ok(match &cfg.synth.marginals {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CohortMarginals::cohort_default(),
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let schema = load_schema(cfg)?;
    ensure!(cfg.synth.n_rows > 0, "synth: number of rows must be positive");
    let marginals = load_marginals(cfg)?;
    let table = data::generate_synthetic_cohort(cfg.synth.n_rows, cfg.seed, &schema, &cfg.synth.risk, &marginals)?;
    let positives = table
        .rows
        .iter()
        .filter(|r| r.last().and_then(|c| c.as_number()) == Some(1.0))
        .count();
    let mut run = Run::new(cfg, "synth");
    run.write("cohort.csv", &csv_bytes(|b| Ok(table.write_csv(b)?))?)?;
    run.finish(
        BTreeMap::from([("cohort", cfg.seed)]),
        json!({
            "rows": table.n_rows(),
            "positives": positives,
            "risk_spec": cfg.synth.risk,
            "marginals": marginals,
        }),
    )?;
    eprintln!("wrote {} rows ({} positive) to {}", table.n_rows(), positives, run_path(cfg, "cohort.csv"));
    Ok(())
}

fn run_path(cfg: &RunConfig, rel: &str) -> String {
    cfg.out.join(rel).display().to_string()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let schema = load_schema(cfg)?;
    let input = cfg.data.input.clone().unwrap_or_else(|| cfg.out.join("cohort.csv"));
    let raw = load_csv(&input, &schema)?;
    if raw.column_index(&schema.label).is_none() {
        bail!("schema error: label column {:?} missing from {}", schema.label, input.display());
    }
    let complete = filter_complete(&raw);
    let matrix = encode(&complete, &schema)?;
    let pair = data::split(&matrix, cfg.data.test_fraction, cfg.seed, cfg.data.stratify)?;
    let train_labels = pair.train.labels.as_deref().context("training labels")?;
    let mut hp = cfg.model.hyperparams.clone();
    if cfg.model.auto_scale_pos_weight {
        hp.scale_pos_weight = compute_scale_pos_weight(train_labels)?;
    }
    let (model, history) = gbt::train_with_history(&pair.train, &hp, cfg.seed)?;

    let test_labels = pair.test.labels.as_deref().context("test labels")?;
    let predictions = (0..pair.test.n_rows())
        .map(|i| model.predict_label(&pair.test.row_vec(i)))
        .collect::<Result<Vec<u8>, _>>()?;
    let cr = classification_report(test_labels, &predictions)?;

    let mut run = Run::new(cfg, "train");
    run.write("model.json", &model.to_bytes())?;
    run.write("train.csv", &csv_bytes(|b| Ok(pair.train.write_csv(b, &schema.label)?))?)?;
    run.write("test.csv", &csv_bytes(|b| Ok(pair.test.write_csv(b, &schema.label)?))?)?;
    let text = cr.render_text();
    run.write("classification_report.txt", text.as_bytes())?;
    run.write("classification_report.csv", &csv_bytes(|b| Ok(cr.write_csv(b)?))?)?;
    run.finish(
        BTreeMap::from([("split", cfg.seed), ("train", cfg.seed)]),
        json!({
            "input": input.file_name().map(|n| n.to_string_lossy().into_owned()),
            "rows_loaded": raw.n_rows(),
            "rows_complete": complete.n_rows(),
            "train_rows": pair.train.n_rows(),
            "test_rows": pair.test.n_rows(),
            "train_positives": train_labels.iter().filter(|&&y| y == 1).count(),
            "scale_pos_weight": hp.scale_pos_weight,
            "training_loss": history.loss,
            "test_accuracy": cr.accuracy,
        }),
    )?;
    print!("{text}");
    Ok(())
}

/// Model plus encoded splits written by `train`.
struct Trained {
    schema: FeatureSchema,
    model: BoostedTreesModel,
    train: EncodedMatrix,
    test: EncodedMatrix,
}

fn load_trained(cfg: &RunConfig) -> Result<Trained> {
    let schema = load_schema(cfg)?;
    let read = |name: &str| -> Result<EncodedMatrix> {
        let p = cfg.out.join(name);
        let f = File::open(&p).with_context(|| format!("opening {} (run `train` first)", p.display()))?;
        Ok(EncodedMatrix::read_csv(BufReader::new(f), &schema)?)
    };
    let model_path = cfg.out.join("model.json");
    let bytes = std::fs::read(&model_path).with_context(|| format!("reading {} (run `train` first)", model_path.display()))?;
    let model = BoostedTreesModel::from_bytes(&bytes)?;
    let train = read("train.csv")?;
    let test = read("test.csv")?;
    ensure!(
        model.feature_names == test.feature_names,
        "model features do not match the encoded test set"
    );
    Ok(Trained {
        schema,
        model,
        train,
        test,
    })
}

fn parse_selector(sel: &str, n: usize) -> Result<Vec<usize>> {
    let sel = sel.trim();
    if sel == "all" {
        return Ok((0..n).collect());
    }
    let mut out = Vec::new();
    for part in sel.split(',') {
        let i: usize = part
            .trim()
            .parse()
            .with_context(|| format!("instance selector {part:?} is not `all` or an index"))?;
        ensure!(i < n, "instance {i} out of range: test set has {n} rows");
        out.push(i);
    }
    Ok(out)
}

struct Explained {
    instance: usize,
    shap: Attribution,
    lime: Attribution,
}

/// SHAP (exact up to the feature cap, sampled above it) and LIME for each selected
/// test row. Runs in parallel; results keep the order of `instances`.
fn explain_rows(cfg: &RunConfig, t: &Trained, instances: &[usize]) -> Result<Vec<Explained>> {
    let predictor = ModelOutput::new(&t.model, cfg.explain.output_space);
    let background = BackgroundSet::sample(
        &t.train,
        cfg.explain.background_size,
        derive_seed(cfg.seed, STAGE_BACKGROUND),
    )?;
    let stats = TrainingStats::from_matrix(&t.train)?;
    let names = &t.model.feature_names;
    let lime_seed = derive_seed(cfg.seed, STAGE_LIME);
    let shap_seed = derive_seed(cfg.seed, STAGE_SHAP_SAMPLED);
    instances
        .par_iter()
        .map(|&i| -> Result<Explained> {
            let x = t.test.row_vec(i);
            let shap = if x.len() <= cfg.explain.exact_cap {
                shap::exact_shapley(&predictor, &x, &background, cfg.explain.exact_cap)?
            } else {
                shap::sampled_shapley(
                    &predictor,
                    &x,
                    &background,
                    cfg.explain.n_permutations,
                    derive_seed(shap_seed, i as u64),
                )?
            }
            .with_names(names);
            let lime_cfg = cfg.explain.lime.surrogate(derive_seed(lime_seed, i as u64));
            let lime = lime::explain_instance(&predictor, &x, &stats, &lime_cfg)?.to_attribution();
            Ok(Explained { instance: i, shap, lime })
        })
        .collect()
}

fn records(explained: &[Explained]) -> Vec<AttributionRecord> {
    explained
        .iter()
        .flat_map(|e| {
            [&e.shap, &e.lime].map(|a| AttributionRecord {
                instance: e.instance,
                attribution: a.clone(),
            })
        })
        .collect()
}

fn write_attributions(run: &mut Run, dir: &str, recs: &[AttributionRecord]) -> Result<()> {
    let mut jsonl = Vec::new();
    attribution::write_jsonl(&mut jsonl, recs)?;
    run.write(&format!("{dir}/attributions.jsonl"), &jsonl)?;
    run.write(
        &format!("{dir}/attributions.csv"),
        &csv_bytes(|b| Ok(attribution::write_csv(b, recs)?))?,
    )?;
    Ok(())
}

const EFFICIENCY_TOL: f64 = 1e-8;

pub fn explain(cfg: &RunConfig) -> Result<()> {
    let t = load_trained(cfg)?;
    let instances = parse_selector(&cfg.explain.instances, t.test.n_rows())?;
    let explained = explain_rows(cfg, &t, &instances)?;
    if cfg.explain.check_efficiency {
        for e in &explained {
            let gap = e.shap.efficiency_gap();
            ensure!(
                gap.abs() <= EFFICIENCY_TOL,
                "efficiency check failed for instance {}: baseline + sum(phi) differs from the prediction by {gap:e}",
                e.instance
            );
        }
    }
    let mut run = Run::new(cfg, "explain");
    let recs = records(&explained);
    write_attributions(&mut run, "explain", &recs)?;
    let local_dir = run.path("explain/local");
    std::fs::create_dir_all(&local_dir)?;
    for e in &explained {
        let x = t.test.row_vec(e.instance);
        let rows = export_local_comparison(&e.shap, &e.lime, &x, &raw_value_strings(&x, &t.schema))?;
        let stem = format!("instance_{}", e.instance);
        let files = export_plot_data(PlotKind::Local, &PlotPayload::Local(rows), &local_dir, &stem)?;
        run.record(&format!("explain/local/{stem}.csv"))?;
        if files.svg.is_some() {
            run.record(&format!("explain/local/{stem}.svg"))?;
        }
    }
    run.finish(
        BTreeMap::from([
            ("background", derive_seed(cfg.seed, STAGE_BACKGROUND)),
            ("lime", derive_seed(cfg.seed, STAGE_LIME)),
            ("shap_sampled", derive_seed(cfg.seed, STAGE_SHAP_SAMPLED)),
        ]),
        json!({
            "instances": instances,
            "records": recs.len(),
            "shap_method": explained.first().map(|e| e.shap.method.as_str()),
            "max_efficiency_gap": explained.iter().map(|e| e.shap.efficiency_gap().abs()).fold(0.0, f64::max),
        }),
    )?;
    eprintln!("wrote {} attribution records to {}", recs.len(), run_path(cfg, "explain"));
    Ok(())
}

pub fn crossval(cfg: &RunConfig) -> Result<()> {
    let t = load_trained(cfg)?;
    let instances: Vec<usize> = (0..t.test.n_rows()).collect();
    let mut explained = explain_rows(cfg, &t, &instances)?;
    if cfg.crossval.lime_equals_shap {
        for e in &mut explained {
            e.lime = Attribution {
                method: Method::Lime,
                std_err: None,
                ..e.shap.clone()
            };
        }
    }
    let used: Vec<usize> = t.model.used_features().into_iter().collect();
    let scope = cfg.crossval.split_used_only.then_some(used.as_slice());
    let pairs: Vec<(Attribution, Attribution)> = explained.iter().map(|e| (e.shap.clone(), e.lime.clone())).collect();
    let rep = cohort_crossval(&pairs, scope)?;

    let mut run = Run::new(cfg, "crossval");
    write_attributions(&mut run, "crossval", &records(&explained))?;
    let text = rep.summary.render_text();
    run.write("crossval/report.txt", text.as_bytes())?;
    run.write("crossval/summary.csv", &csv_bytes(|b| Ok(rep.summary.write_csv(b)?))?)?;
    run.write("crossval/ranking_differences.csv", &csv_bytes(|b| Ok(rep.write_diffs_csv(b)?))?)?;
    let mut per_instance = serde_json::to_vec_pretty(&rep)?;
    per_instance.push(b'\n');
    run.write("crossval/report.json", &per_instance)?;
    run.finish(
        BTreeMap::from([
            ("background", derive_seed(cfg.seed, STAGE_BACKGROUND)),
            ("lime", derive_seed(cfg.seed, STAGE_LIME)),
            ("shap_sampled", derive_seed(cfg.seed, STAGE_SHAP_SAMPLED)),
        ]),
        json!({
            "n_instances": rep.summary.n_instances,
            "split_used_features": used,
            "consistency_scope": if cfg.crossval.split_used_only { "split-used" } else { "all" },
        }),
    )?;
    print!("{text}");
    Ok(())
}

pub fn report(cfg: &RunConfig, attributions: Option<&Path>) -> Result<()> {
    let path = match attributions {
        Some(p) => p.to_path_buf(),
        None => ["crossval/attributions.jsonl", "explain/attributions.jsonl"]
            .iter()
            .map(|r| cfg.out.join(r))
            .find(|p| p.exists())
            .context("no attribution file found; run `crossval` or `explain` first")?,
    };
    let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let recs = attribution::read_jsonl(BufReader::new(f))?;
    let shap_recs: Vec<&AttributionRecord> = recs
        .iter()
        .filter(|r| matches!(r.attribution.method, Method::ShapExact | Method::ShapSampled))
        .collect();
    ensure!(!shap_recs.is_empty(), "{} holds no SHAP attributions", path.display());
    let shap_attrs: Vec<Attribution> = shap_recs.iter().map(|r| r.attribution.clone()).collect();
    let importance = shap::global_importance(&shap_attrs)?;

    let t = load_trained(cfg)?;
    let rows: Vec<usize> = shap_recs.iter().map(|r| r.instance).collect();
    ensure!(
        rows.iter().all(|&i| i < t.test.n_rows()),
        "attribution instances exceed the test set"
    );
    let summary = shap::summary_data(&shap_attrs, &t.test.select_rows(&rows))?;

    let mut run = Run::new(cfg, "report");
    let plots = run.path("plots");
    std::fs::create_dir_all(&plots)?;
    for (stem, kind, payload) in [
        ("importance", PlotKind::Importance, PlotPayload::Importance(importance.clone())),
        ("summary", PlotKind::Summary, PlotPayload::Summary(summary)),
    ] {
        let files = export_plot_data(kind, &payload, &plots, stem)?;
        run.record(&format!("plots/{stem}.csv"))?;
        if files.svg.is_some() {
            run.record(&format!("plots/{stem}.svg"))?;
        }
    }
    let mut text = String::from("feature                         mean |phi|\n");
    for e in &importance {
        text.push_str(&format!("{:<30}{:>12.6}\n", e.feature, e.mean_abs_phi));
    }
    run.write("plots/importance.txt", text.as_bytes())?;
    run.finish(
        BTreeMap::new(),
        json!({
            "attributions": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            "instances": rows.len(),
            "top_feature": importance.first().map(|e| e.feature.clone()),
        }),
    )?;
    print!("{text}");
    Ok(())
}
