//! Command-line interface: dataset generation, splitting, training,
//! prediction, the geometric baseline, evaluation, and model comparison.
//!
//! Every command resolves its configuration (file values overridden by
//! flags), funnels all randomness through one seed, and writes a
//! `<out>.run.json` manifest with the resolved config and content digests of
//! its inputs, on success and on handled failure alike. Commands never
//! mutate their inputs.
//!
//! Exit codes: 0 success, 2 validation errors (bad flags, configs, or input
//! file contents), 3 runtime failures (e.g. non-finite training loss),
//! 4 i/o errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::dataset::{
    self, read_predictions, read_records, split_records, write_predictions, write_records,
    DatasetError, PredictionRecord, SkipReason,
};
use crate::evaluation::{
    compare_models, evaluate_predictions, render_comparison, scatter_csv, EvalError, EvalReport,
};
use crate::geom::{estimate_gaze_geom, GeomError};
use crate::manifest::{
    sha256_bytes, sha256_file, write_json_atomic, InputDigest, RunManifest, RunStatus,
};
use crate::network::{InputVariant, ModelError, ModelMeta, ModelWeights};
use crate::synthetic::{generate_dataset, SynthError, SynthParams};
use crate::training::{self, Augmentation, TrainConfig, TrainError};

/// Environment variable naming the default artifact directory; relative
/// output paths are resolved under it when set.
pub const OUT_DIR_ENV: &str = "GAZEKIT_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::DegeneratePrediction => {
                CliError::Runtime(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gazekit", version, about = "Apparent-gaze estimation from facial keypoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Suppress status output.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Seed override for the command's random generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration file (JSON) for commands that take one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Primary output path. Relative paths resolve under $GAZEKIT_OUT_DIR
    /// when it is set.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Train a model (optionally fine-tuning a base model).
    Train(TrainArgs),
    /// Run a model (or the geometric baseline) over a dataset.
    Predict(PredictArgs),
    /// Run the geometric baseline over a dataset.
    Baseline(BaselineArgs),
    /// Score a prediction file against its dataset.
    Eval(EvalArgs),
    /// Tabulate several evaluation reports side by side.
    Compare(CompareArgs),
    /// Split a dataset into train/val/test, keeping sequences together.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Sample count override.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub l2_hidden: Option<f64>,
    /// Input-layer variant: gated, coords-only, or relu-conf.
    #[arg(long)]
    pub variant: Option<InputVariant>,
    /// Mirror-augment the under-represented gaze quadrant.
    #[arg(long)]
    pub balance_quadrants: bool,
    /// Fine-tune from this base model instead of training from scratch.
    #[arg(long)]
    pub finetune: Option<PathBuf>,
    /// Keep the base model's confidence statistics when fine-tuning.
    #[arg(long)]
    pub freeze_conf_stats: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Use a non-learned baseline instead of a model ("geom").
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also export the flat per-sample table (angle, sigma, error, k).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Model label recorded in the report.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Evaluation report files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Comma-separated row labels, in report order.
    #[arg(long)]
    pub labels: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving train.jsonl, val.jsonl, and test.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Train,val,test fractions.
    #[arg(long, default_value = "0.5,0.2,0.3")]
    pub proportions: String,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(&cli, args),
        Command::Train(args) => cmd_train(&cli, args),
        Command::Predict(args) => cmd_predict(&cli, args, args.baseline.as_deref()),
        Command::Baseline(args) => {
            let predict = PredictArgs { model: None, data: args.data.clone(), baseline: None };
            cmd_predict(&cli, &predict, Some("geom"))
        }
        Command::Eval(args) => cmd_eval(&cli, args),
        Command::Compare(args) => cmd_compare(&cli, args),
        Command::Split(args) => cmd_split(&cli, args),
    }
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir).join(path);
            }
        }
    }
    path.to_path_buf()
}

fn require_out(cli: &Cli) -> Result<PathBuf, CliError> {
    cli.out
        .as_ref()
        .map(|p| resolve_out(p))
        .ok_or_else(|| CliError::Validation("--out is required".into()))
}

fn status(cli: &Cli, message: &str) {
    if !cli.quiet {
        println!("{message}");
    }
}

/// Runs a command body and writes the run manifest whether it succeeds or
/// fails; the body reports its inputs/outputs through the manifest skeleton.
fn with_manifest(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    resolved_config: serde_json::Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    body: impl FnOnce() -> Result<(), CliError>,
) -> Result<(), CliError> {
    let start = Instant::now();
    let result = body();
    let manifest = RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        resolved_config,
        inputs,
        outputs,
        status: if result.is_ok() { RunStatus::Ok } else { RunStatus::Failed },
        error: result.as_ref().err().map(|e| e.to_string()),
        duration_ms: start.elapsed().as_millis(),
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    manifest.write(out)?;
    result
}

fn digest_input(path: &Path) -> Result<InputDigest, CliError> {
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
    })
}

fn load_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<(), CliError> {
    let out = require_out(cli)?;
    let mut params: SynthParams = match &cli.config {
        Some(path) => load_config_file(path)?,
        None => SynthParams::default(),
    };
    if let Some(seed) = cli.seed {
        params.seed = seed;
    }
    if let Some(n) = args.n {
        params.n_samples = n;
    }
    params.validate()?;

    let resolved = serde_json::to_value(&params).expect("params serialize");
    let inputs = match &cli.config {
        Some(p) => vec![digest_input(p)?],
        None => vec![],
    };
    let manifest_path = out.with_file_name(format!(
        "{}.manifest.json",
        out.file_name().unwrap_or_default().to_string_lossy()
    ));
    let outputs = vec![out.display().to_string(), manifest_path.display().to_string()];
    with_manifest(&out, "synth", Some(params.seed), resolved, inputs, outputs, || {
        let (records, gen_manifest) = generate_dataset(&params)?;
        write_records(&out, &records)?;
        write_json_atomic(&manifest_path, &gen_manifest)?;
        status(
            cli,
            &format!(
                "synth: wrote {} records to {} ({} degenerate poses, {} under-detected resampled)",
                records.len(),
                out.display(),
                gen_manifest.rejected_degenerate_label,
                gen_manifest.rejected_too_few_keypoints
            ),
        );
        Ok(())
    })
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy().to_string();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let out = require_out(cli)?;
    let mut config: TrainConfig = match &cli.config {
        Some(path) => load_config_file(path)?,
        None if args.finetune.is_some() => TrainConfig::fine_tune_default(),
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.patience {
        config.patience = v;
    }
    if let Some(v) = args.l2_hidden {
        config.l2_hidden = v;
    }
    if let Some(v) = args.variant {
        config.input_variant = v;
    }
    if args.balance_quadrants {
        config.augmentation = Augmentation::QuadrantBalance;
    }
    if args.freeze_conf_stats {
        config.freeze_conf_stats = true;
    }
    config.validate()?;

    let resolved = serde_json::to_value(&config).expect("config serialize");
    let config_digest = sha256_bytes(serde_json::to_string(&resolved).unwrap().as_bytes());

    let mut inputs = vec![digest_input(&args.train)?, digest_input(&args.val)?];
    if let Some(base) = &args.finetune {
        inputs.push(digest_input(base)?);
    }
    if let Some(c) = &cli.config {
        inputs.push(digest_input(c)?);
    }
    let report_path = sibling(&out, "report.json");
    let frozen_config_path = sibling(&out, "config.json");
    let outputs = vec![
        out.display().to_string(),
        report_path.display().to_string(),
        frozen_config_path.display().to_string(),
    ];

    with_manifest(&out, "train", Some(config.seed), resolved.clone(), inputs, outputs, || {
        let train_records = read_records(&args.train)?;
        let val_records = read_records(&args.val)?;
        let (train_samples, train_skipped) = dataset::load_labeled(&train_records);
        let (val_samples, val_skipped) = dataset::load_labeled(&val_records);
        if !train_skipped.is_empty() || !val_skipped.is_empty() {
            status(
                cli,
                &format!(
                    "train: skipped {} train / {} val records failing admission",
                    train_skipped.len(),
                    val_skipped.len()
                ),
            );
        }

        let (weights, report) = match &args.finetune {
            Some(base_path) => {
                let (base, _) = ModelWeights::load(base_path)?;
                training::fine_tune(&base, &config, &train_samples, &val_samples)?
            }
            None => training::train(&config, &train_samples, &val_samples)?,
        };

        let meta = ModelMeta {
            seed: config.seed,
            config_digest: config_digest.clone(),
            train_records: train_samples.len(),
            best_epoch: report.best_epoch,
            val_error_deg: report.final_val_error_deg,
        };
        weights.save(&out, &meta)?;
        write_json_atomic(&report_path, &report)?;
        write_json_atomic(&frozen_config_path, &resolved)?;
        status(
            cli,
            &format!(
                "train: {} epochs, best val error {:.2} deg at epoch {:?}, model at {}",
                report.history.len(),
                report.final_val_error_deg,
                report.best_epoch,
                out.display()
            ),
        );
        Ok(())
    })
}

fn cmd_predict(cli: &Cli, args: &PredictArgs, baseline: Option<&str>) -> Result<(), CliError> {
    let out = require_out(cli)?;
    let use_geom = match baseline {
        None => false,
        Some("geom") => true,
        Some(other) => {
            return Err(CliError::Validation(format!(
                "unknown baseline '{other}' (expected geom)"
            )))
        }
    };
    if !use_geom && args.model.is_none() {
        return Err(CliError::Validation("--model is required unless --baseline geom".into()));
    }

    let mut inputs = vec![digest_input(&args.data)?];
    let model = match (&args.model, use_geom) {
        (Some(path), false) => {
            inputs.push(digest_input(path)?);
            Some(ModelWeights::load(path)?.0)
        }
        _ => None,
    };
    let resolved = json!({
        "data": args.data.display().to_string(),
        "model": args.model.as_ref().map(|p| p.display().to_string()),
        "baseline": use_geom.then_some("geom"),
    });
    let outputs = vec![out.display().to_string()];

    with_manifest(&out, "predict", cli.seed, resolved, inputs, outputs, || {
        let records = read_records(&args.data)?;
        let mut predictions = Vec::with_capacity(records.len());
        for r in &records {
            let base = PredictionRecord {
                frame: r.frame.clone(),
                camera: r.camera.clone(),
                person: r.person.clone(),
                k: 0,
                g: None,
                g_raw: None,
                sigma: None,
                skip: None,
            };
            let row = match r.detections() {
                Err(e) => PredictionRecord {
                    skip: Some(SkipReason::from_feature_error(&e)),
                    ..base
                },
                Ok(detections) => {
                    let k = detections.num_detected();
                    if let Some(weights) = &model {
                        match crate::features::build_feature_vector(&detections) {
                            Err(e) => PredictionRecord {
                                k,
                                skip: Some(SkipReason::from_feature_error(&e)),
                                ..base
                            },
                            Ok(features) => {
                                let p = weights.forward(&features).prediction;
                                match p.unit() {
                                    Some(unit) => PredictionRecord {
                                        k,
                                        g: Some(unit),
                                        g_raw: Some(p.g),
                                        sigma: Some(p.sigma),
                                        ..base
                                    },
                                    None => PredictionRecord {
                                        k,
                                        sigma: Some(p.sigma),
                                        skip: Some(SkipReason::DegeneratePrediction),
                                        ..base
                                    },
                                }
                            }
                        }
                    } else {
                        match estimate_gaze_geom(&detections) {
                            Ok(e) => PredictionRecord { k, g: Some(e.gaze), ..base },
                            Err(GeomError::MissingNose) => PredictionRecord {
                                k,
                                skip: Some(SkipReason::MissingNose),
                                ..base
                            },
                            Err(GeomError::MissingEyes) => PredictionRecord {
                                k,
                                skip: Some(SkipReason::MissingEyes),
                                ..base
                            },
                        }
                    }
                }
            };
            predictions.push(row);
        }
        write_predictions(&out, &predictions)?;
        let estimated = predictions.iter().filter(|p| p.g.is_some()).count();
        status(
            cli,
            &format!(
                "predict: {} of {} records estimated, written to {}",
                estimated,
                predictions.len(),
                out.display()
            ),
        );
        Ok(())
    })
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let out = require_out(cli)?;
    let inputs = vec![digest_input(&args.predictions)?, digest_input(&args.data)?];
    let dataset_digest = inputs[1].sha256.clone();
    let resolved = json!({
        "predictions": args.predictions.display().to_string(),
        "data": args.data.display().to_string(),
        "label": args.label,
    });
    let mut outputs = vec![out.display().to_string()];
    if let Some(csv) = &args.csv {
        outputs.push(csv.display().to_string());
    }

    with_manifest(&out, "eval", cli.seed, resolved, inputs, outputs, || {
        let predictions = read_predictions(&args.predictions)?;
        let records = read_records(&args.data)?;
        let label = args.label.clone().unwrap_or_else(|| "model".to_string());
        let mut report: EvalReport = evaluate_predictions(&predictions, &records, &label)?;
        report.dataset_digest = dataset_digest.clone();
        write_json_atomic(&out, &report)?;
        if let Some(csv_path) = &args.csv {
            crate::manifest::write_atomic(csv_path, scatter_csv(&report).as_bytes())?;
        }
        let rho = report
            .pearson_rho
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "undefined".to_string());
        status(
            cli,
            &format!(
                "eval: {}/{} estimable ({:.1}% coverage), mean error {:.2} deg, rho {}",
                report.n_estimable,
                report.n_total,
                100.0 * report.coverage,
                report.mean_error_deg,
                rho
            ),
        );
        if let Some(join) = &report.join {
            if join.missing_labels > 0 || join.missing_predictions > 0 {
                status(
                    cli,
                    &format!(
                        "eval: join gaps: {} predictions without labels, {} labels without predictions",
                        join.missing_labels, join.missing_predictions
                    ),
                );
            }
        }
        Ok(())
    })
}

fn cmd_compare(cli: &Cli, args: &CompareArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    let mut inputs = Vec::new();
    for path in &args.reports {
        inputs.push(digest_input(path)?);
        let report: EvalReport = load_config_file(path)?;
        reports.push(report);
    }
    let labels: Vec<String> = match &args.labels {
        Some(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
        None => args
            .reports
            .iter()
            .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().to_string())
            .collect(),
    };
    if labels.len() != reports.len() {
        return Err(CliError::Validation(format!(
            "{} labels for {} reports",
            labels.len(),
            reports.len()
        )));
    }
    let comparison = compare_models(&reports, &labels);
    print!("{}", render_comparison(&comparison));

    if let Some(out) = &cli.out {
        let out = resolve_out(out);
        let resolved = json!({
            "reports": args.reports.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "labels": labels,
        });
        let outputs = vec![out.display().to_string()];
        return with_manifest(&out, "compare", cli.seed, resolved, inputs, outputs, || {
            write_json_atomic(&out, &comparison)?;
            Ok(())
        });
    }
    Ok(())
}

fn cmd_split(cli: &Cli, args: &SplitArgs) -> Result<(), CliError> {
    let proportions = parse_proportions(&args.proportions)?;
    let seed = cli.seed.unwrap_or(0);
    let inputs = vec![digest_input(&args.data)?];
    let out_dir = resolve_out(&args.out_dir);
    let paths = [
        out_dir.join("train.jsonl"),
        out_dir.join("val.jsonl"),
        out_dir.join("test.jsonl"),
    ];
    let resolved = json!({
        "data": args.data.display().to_string(),
        "proportions": proportions,
        "seed": seed,
    });
    let outputs = paths.iter().map(|p| p.display().to_string()).collect();
    let manifest_anchor = out_dir.join("split");
    with_manifest(&manifest_anchor, "split", Some(seed), resolved, inputs, outputs, || {
        let records = read_records(&args.data)?;
        let (train, val, test) = split_records(&records, proportions, seed);
        std::fs::create_dir_all(&out_dir)?;
        write_records(&paths[0], &train)?;
        write_records(&paths[1], &val)?;
        write_records(&paths[2], &test)?;
        status(
            cli,
            &format!(
                "split: {} train / {} val / {} test records into {}",
                train.len(),
                val.len(),
                test.len(),
                out_dir.display()
            ),
        );
        Ok(())
    })
}

fn parse_proportions(s: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(format!("proportions '{s}': {e}")))?;
    if parts.len() != 3 {
        return Err(CliError::Validation(format!(
            "proportions '{s}': expected three comma-separated fractions"
        )));
    }
    let sum: f64 = parts.iter().sum();
    if parts.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(CliError::Validation(format!(
            "proportions '{s}': fractions must be non-negative and sum to 1"
        )));
    }
    Ok([parts[0], parts[1], parts[2]])
}
