//! Implementations behind the command-line subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::data::{self, DatasetBundle, DatasetStats, SchemaFile, Split};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport, RankingOptions};
use crate::exec::Execution;
use crate::explain::{self, HeatmapExport, InstanceSpec};
use crate::model::{Model, ModelKind};
use crate::synthetic::{self, SyntheticSpec};
use crate::train::{self, TrainConfig, TrainOptions, TrainOutcome};

#[derive(Debug, Clone)]
pub struct PreprocessArgs {
    pub schema: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub min_freq: Option<usize>,
}

/// Raw file to dataset container; returns the written statistics.
pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<DatasetStats> {
    let mut schema = SchemaFile::load(&args.schema)?;
    if let Some(seed) = args.seed {
        schema.seed = seed;
    }
    if let Some(m) = args.min_freq {
        schema.min_freq = m;
    }
    schema.validate()?;
    let records = data::read_raw(&schema, &args.input)?;
    let bundle = data::preprocess(&schema, records)?;
    data::write_bundle(&bundle, &args.out)?;
    let path = args.out.join("schema.toml");
    std::fs::write(&path, schema.to_toml())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(DatasetStats::of(&bundle))
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub exec: Execution,
}

/// Trains into a run directory and writes validation metrics of the best
/// checkpoint next to it.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(model) = args.model {
        config.model = model;
    }
    config.validate()?;
    let bundle = data::load_bundle(&args.data)?;
    config.resolve(bundle.task)?;
    let outcome = train::train(
        &config,
        &bundle,
        &TrainOptions {
            exec: args.exec,
            run_dir: Some(args.out.clone()),
        },
    )?;
    let opts = RankingOptions {
        seed: config.seed,
        ..RankingOptions::default()
    };
    let digest = eval::digest(&config.to_toml());
    eval::evaluate(
        &outcome.best.model,
        &bundle,
        Split::Val,
        &opts,
        args.exec,
        &digest,
    )?
    .write(&args.out, "metrics_val")?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: Split,
    /// Defaults to the checkpoint's directory.
    pub out: Option<PathBuf>,
    /// Keep the user's validation items in test candidate pools.
    pub keep_val_candidates: bool,
    pub exec: Execution,
}

fn check_compatible(ck: &Checkpoint, bundle: &DatasetBundle) -> Result<()> {
    if ck.task != bundle.task {
        return Err(Error::Data(format!(
            "checkpoint was trained for {} but the dataset is {}",
            ck.task, bundle.task
        )));
    }
    if ck.model.feature_count() != bundle.feature_count() {
        return Err(Error::Data(format!(
            "checkpoint has {} features but the dataset has {}",
            ck.model.feature_count(),
            bundle.feature_count()
        )));
    }
    Ok(())
}

/// Full-pool ranking or CTR metrics on one split; writes
/// `metrics_<split>.txt` and `.kv`.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricsReport> {
    if args.split == Split::Train {
        return Err(Error::Config("evaluate on val or test".into()));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let bundle = data::load_bundle(&args.data)?;
    check_compatible(&ck, &bundle)?;
    let run_dir = args
        .checkpoint
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let digest = match std::fs::read_to_string(run_dir.join("config.toml")) {
        Ok(text) => eval::digest(&text),
        Err(_) => "-".to_string(),
    };
    let opts = RankingOptions {
        exclude_val: !args.keep_val_candidates,
        subsample: None,
        seed: ck.seed,
    };
    let report = eval::evaluate(&ck.model, &bundle, args.split, &opts, args.exec, &digest)?;
    let out = args.out.clone().unwrap_or(run_dir);
    report.write(&out, &format!("metrics_{}", args.split))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ExplainArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub instance: InstanceSpec,
    pub out: PathBuf,
    pub name: String,
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<HeatmapExport> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let bundle = data::load_bundle(&args.data)?;
    check_compatible(&ck, &bundle)?;
    let export = explain::explain(&ck.model, &bundle, &args.instance)?;
    export.write(&args.out, &args.name)?;
    Ok(export)
}

/// Summary of a checkpoint file or a dataset directory.
pub fn cmd_inspect(target: &Path) -> Result<String> {
    let mut out = String::new();
    if target.is_dir() {
        let bundle = data::load_bundle(target)?;
        let _ = writeln!(out, "dataset: {}", target.display());
        let _ = writeln!(out, "task: {}", bundle.task);
        out.push_str(&DatasetStats::of(&bundle).to_text());
        return Ok(out);
    }
    let ck = Checkpoint::load(target)?;
    let m = &ck.model;
    let _ = writeln!(out, "checkpoint: {}", target.display());
    let _ = writeln!(out, "model: {}", m.kind());
    let _ = writeln!(out, "task: {}", ck.task);
    let _ = writeln!(out, "features: {}", m.feature_count());
    let _ = writeln!(out, "embedding_size: {}", m.dim());
    let _ = writeln!(out, "free_parameters: {}", m.free_parameters());
    let _ = writeln!(out, "epoch: {}", ck.epoch);
    let _ = writeln!(out, "seed: {}", ck.seed);
    match m.max_residual() {
        Some(r) => {
            let _ = writeln!(out, "max_manifold_residual: {r:e}");
        }
        None => out.push_str("max_manifold_residual: -\n"),
    }
    if let Some(state) = &ck.adam {
        let _ = writeln!(out, "optimizer_steps: {}", state.step);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

/// Writes a synthetic CTR dataset container plus `synthetic.txt` with the
/// generator's Bayes AUC.
pub fn cmd_synth(args: &SynthArgs) -> Result<DatasetStats> {
    let spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?
        }
        None => SyntheticSpec::default(),
    };
    let d = synthetic::generate_synthetic(&spec, args.seed)?;
    data::write_bundle(&d.bundle, &args.out)?;
    let body = format!(
        "seed\t{}\nbayes_auc\t{}\nbayes_val_auc\t{}\n{}",
        args.seed,
        d.bayes_auc,
        d.bayes_val_auc,
        toml::to_string(&spec).expect("spec serializes")
    );
    let path = args.out.join("synthetic.txt");
    std::fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(DatasetStats::of(&d.bundle))
}

/// Checkpoint for an untrained model, handy for inspection and tests.
pub fn blank_checkpoint(
    kind: ModelKind,
    task: data::Task,
    features: usize,
    dim: usize,
) -> Result<Checkpoint> {
    let model = match kind {
        ModelKind::LorentzFm => {
            Model::Lorentz(crate::model::EmbeddingTable::at_origin(features, dim)?)
        }
        ModelKind::Fm => Model::Fm(crate::model::FmParameters::zeros(features, dim)),
    };
    Ok(Checkpoint {
        model,
        task,
        seed: 0,
        epoch: 0,
        adam: None,
    })
}
