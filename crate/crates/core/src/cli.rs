//! Command-line entry point: the whole workflow as subcommands over a
//! declarative JSON config.
//!
//! Every config field can be overridden with repeated `--set key=value`
//! flags (dotted paths, e.g. `--set train.loss.lambda=200`); common knobs
//! also have direct flags. The effective config is echoed to the output
//! directory so any run can be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset_io::{dataset_stats, load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::evaluation::{
    ablation_sweep, dump_trajectories, emit_plot_data, evaluate_with_options, format_report_table,
    published_reference, write_trajectory_dumps, PublishedReference,
};
use crate::model::{
    count_parameters, load_checkpoint, save_checkpoint, ModelConfig, ModelKind, ModelParameters,
};
use crate::pipeline::{
    apply_lane_cap, build_samples, parse_records, split_by_vehicle, DatasetSplit, PipelineConfig,
};
use crate::synth::{generate_dataset, generate_episode_at, records_to_csv};
use crate::training::{gradient_check, metrics_to_csv, resume, train, TrainConfig};
use crate::types::ManeuverLabel;

/// Published full-scale parameter-count reference for the default setup.
const PUBLISHED_PARAM_COUNT: usize = 729_979;

/// Dataset generation knobs for `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub n_per_class: usize,
    pub n_neighbors: usize,
    pub noise_sigma: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_per_class: 12,
            n_neighbors: 2,
            noise_sigma: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationOptions {
    pub lambdas: Vec<f64>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            lambdas: vec![1.0, 10.0, 50.0, 80.0, 100.0, 200.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Also report the cumulative-sum RMSE formula variant.
    pub cumulative_rmse: bool,
    /// Samples per qualitative trajectory dump.
    pub dump_limit: usize,
    /// Which split to evaluate: train | validation | test.
    pub split: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cumulative_rmse: false,
            dump_limit: 16,
            split: "test".into(),
        }
    }
}

/// The full declarative configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub model_kind: ModelKind,
    pub data: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthOptions,
    pub ablation: AblationOptions,
    pub eval: EvalOptions,
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::IntentAware
    }
}

impl AppConfig {
    /// The data config is the source of truth for sequence dims and the
    /// grid; mirror them into the model config.
    pub fn reconcile(&mut self) {
        self.model.history_len = self.data.history_len;
        self.model.future_len = self.data.future_len;
        self.model.d_in = self.data.feature_dim();
        self.model.grid = self.data.grid;
        self.train.loss.validate().ok();
    }
}

#[derive(Parser)]
#[command(
    name = "lanecast",
    about = "Maneuver-aware trajectory prediction lab: preprocess, train, evaluate, ablate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config field by dotted path, e.g. --set train.loss.lambda=200.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory for artifacts (created if missing).
    #[arg(long, default_value = "out", global = true)]
    out_dir: PathBuf,
    /// Cap the worker thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an NGSIM-style CSV into a dataset file plus a stats report.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Input CSV path.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Split/shuffle seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a balanced synthetic dataset with known maneuvers.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        n_neighbors: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Also write the raw records as an NGSIM-style CSV.
        #[arg(long)]
        emit_csv: bool,
    },
    /// Train a model on a dataset file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// intent_aware | vanilla.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        warmup_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Resume from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// train | validation | test.
        #[arg(long)]
        split: Option<String>,
        /// Also report the cumulative-sum RMSE formula variant.
        #[arg(long)]
        cumulative_rmse: bool,
    },
    /// Sweep the maneuver-loss weight: one training run per lambda.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated lambda list, e.g. 1,10,50,80,100,200.
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write qualitative trajectory dumps for external plotting.
    DumpTrajectories {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// Parse argv and run; returns the process exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { common, input, seed } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.reconcile();
            setup_threads(&common)?;
            let input = input.ok_or_else(|| Error::Config("missing required field: input".into()))?;
            echo_config(&common, &cfg, "preprocess", &[("input", &input)])?;

            let file = std::fs::File::open(&input)?;
            let parsed = parse_records(std::io::BufReader::new(file))?;
            let mut records = parsed.records;
            apply_lane_cap(&mut records)?;
            let samples = build_samples(&records, &cfg.data)?;
            let split = split_by_vehicle(samples, (0.7, 0.1, 0.2), cfg.train.seed)?;
            write_dataset_artifacts(&common.out_dir, &split)?;
            println!(
                "parsed {} records ({} rows skipped); {} samples -> train {} / val {} / test {}",
                records.len(),
                parsed.skipped_rows,
                split.total(),
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
            Ok(())
        }

        Command::Synth {
            common,
            seed,
            n_per_class,
            n_neighbors,
            noise_sigma,
            emit_csv,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = n_per_class {
                cfg.synth.n_per_class = n;
            }
            if let Some(n) = n_neighbors {
                cfg.synth.n_neighbors = n;
            }
            if let Some(s) = noise_sigma {
                cfg.synth.noise_sigma = s;
            }
            cfg.reconcile();
            setup_threads(&common)?;
            echo_config(&common, &cfg, "synth", &[])?;

            let split = generate_dataset(
                cfg.train.seed,
                cfg.synth.n_per_class,
                cfg.synth.n_neighbors,
                cfg.synth.noise_sigma,
                &cfg.data,
            )?;
            write_dataset_artifacts(&common.out_dir, &split)?;
            if emit_csv {
                let mut records = Vec::new();
                let mut episode = 0u64;
                for label in ManeuverLabel::all() {
                    for _ in 0..cfg.synth.n_per_class {
                        let ep_seed = crate::training::splitmix64(
                            cfg.train.seed ^ crate::training::splitmix64(episode + 1),
                        );
                        records.extend(generate_episode_at(
                            ep_seed,
                            label,
                            cfg.synth.n_neighbors,
                            cfg.synth.noise_sigma,
                            episode * 64 + 1,
                            episode * 10_000,
                        ));
                        episode += 1;
                    }
                }
                records.sort_by_key(|r| (r.vehicle_id, r.frame_id));
                let mut w = std::io::BufWriter::new(std::fs::File::create(
                    common.out_dir.join("records.csv"),
                )?);
                records_to_csv(&records, &mut w)?;
            }
            println!(
                "synthetic dataset: {} samples -> train {} / val {} / test {}",
                split.total(),
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
            Ok(())
        }

        Command::Train {
            common,
            dataset,
            kind,
            epochs,
            seed,
            lambda,
            warmup_epochs,
            batch_size,
            learning_rate,
            resume_from,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = kind {
                cfg.model_kind = parse_kind(&k)?;
            }
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = seed {
                cfg.train.seed = v;
            }
            if let Some(v) = lambda {
                cfg.train.loss.lambda = v;
            }
            if let Some(v) = warmup_epochs {
                cfg.train.loss.warmup_epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = learning_rate {
                cfg.train.learning_rate = v;
            }
            setup_threads(&common)?;
            let dataset =
                dataset.ok_or_else(|| Error::Config("missing required field: dataset".into()))?;
            let split = load_dataset(&dataset)?;
            adopt_dataset_dims(&mut cfg, &split)?;
            echo_config(&common, &cfg, "train", &[("dataset", &dataset)])?;

            let outcome = match &resume_from {
                Some(ckpt_path) => {
                    let ckpt = load_checkpoint(ckpt_path)?;
                    ckpt.require_config(&cfg.model)?;
                    resume(&split, ckpt, &cfg.train)?
                }
                None => train(&split, cfg.model_kind, &cfg.model, &cfg.train)?,
            };

            std::fs::write(
                common.out_dir.join("metrics.csv"),
                metrics_to_csv(&outcome.metrics),
            )?;
            save_checkpoint(&outcome.best, None, common.out_dir.join("checkpoint.bin"))?;
            save_checkpoint(
                &outcome.params,
                Some(&outcome.train_state),
                common.out_dir.join("checkpoint_last.bin"),
            )?;
            println!(
                "trained {} epochs; parameters: {} (published full-scale reference: {})",
                outcome.metrics.len(),
                count_parameters(&outcome.params),
                PUBLISHED_PARAM_COUNT
            );
            if let Some(epoch) = outcome.best_epoch {
                println!("best validation epoch: {epoch}");
            }
            if let Some(diag) = outcome.diverged {
                return Err(Error::Validation(format!(
                    "training diverged ({diag}); last good checkpoint written to {}",
                    common.out_dir.join("checkpoint_last.bin").display()
                )));
            }
            Ok(())
        }

        Command::Eval {
            common,
            checkpoint,
            dataset,
            split,
            cumulative_rmse,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = split {
                cfg.eval.split = s;
            }
            if cumulative_rmse {
                cfg.eval.cumulative_rmse = true;
            }
            setup_threads(&common)?;
            let checkpoint = checkpoint
                .ok_or_else(|| Error::Config("missing required field: checkpoint".into()))?;
            let dataset =
                dataset.ok_or_else(|| Error::Config("missing required field: dataset".into()))?;
            let data = load_dataset(&dataset)?;
            let samples = pick_split(&data, &cfg.eval.split)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            cfg.model = ckpt.params.config.clone();
            echo_config(
                &common,
                &cfg,
                "eval",
                &[("checkpoint", &checkpoint), ("dataset", &dataset)],
            )?;

            let report = evaluate_with_options(&ckpt.params, samples, cfg.eval.cumulative_rmse)?;
            #[derive(Serialize)]
            struct EvalOutput<'a> {
                model_kind: ModelKind,
                parameter_count: usize,
                parameter_count_published_reference: usize,
                split: &'a str,
                convention: &'a str,
                report: &'a crate::evaluation::EvalReport,
                reference: PublishedReference,
            }
            let out = EvalOutput {
                model_kind: ckpt.params.kind,
                parameter_count: count_parameters(&ckpt.params),
                parameter_count_published_reference: PUBLISHED_PARAM_COUNT,
                split: &cfg.eval.split,
                convention: "per-horizon RMSE (one step per column); the cumulative-sum \
                             variant appears under rmse_cumulative when requested",
                report: &report,
                reference: published_reference(),
            };
            write_json(common.out_dir.join("report.json"), &out)?;
            println!("split: {} ({} samples)", cfg.eval.split, report.n_samples);
            print!("rmse(m) @ ");
            for (h, r) in report.horizons_s.iter().zip(report.rmse.iter()) {
                print!("{h}s: {r:.3}  ");
            }
            println!();
            if ckpt.params.kind == ModelKind::IntentAware {
                println!(
                    "maneuver accuracy: lateral {:.3}, longitudinal {:.3}",
                    report.maneuver_acc_lateral, report.maneuver_acc_longitudinal
                );
            }
            Ok(())
        }

        Command::Ablate {
            common,
            dataset,
            lambdas,
            epochs,
            seed,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(list) = lambdas {
                cfg.ablation.lambdas = list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad lambda value {s:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
            }
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = seed {
                cfg.train.seed = v;
            }
            setup_threads(&common)?;
            let dataset =
                dataset.ok_or_else(|| Error::Config("missing required field: dataset".into()))?;
            let split = load_dataset(&dataset)?;
            adopt_dataset_dims(&mut cfg, &split)?;
            echo_config(&common, &cfg, "ablate", &[("dataset", &dataset)])?;

            let report = ablation_sweep(&split, &cfg.model, &cfg.train, &cfg.ablation.lambdas)?;
            write_json(common.out_dir.join("report.json"), &report)?;
            emit_plot_data(&report, &common.out_dir)?;
            print!("{}", format_report_table(&report));
            Ok(())
        }

        Command::Gradcheck { common, seed } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.reconcile();
            setup_threads(&common)?;
            echo_config(&common, &cfg, "gradcheck", &[])?;

            // frozen synthetic sample with occupied neighbor cells
            let split = generate_dataset(cfg.train.seed, 1, 3, 0.0, &cfg.data)?;
            let sample = split
                .train
                .iter()
                .chain(split.validation.iter())
                .chain(split.test.iter())
                .find(|s| s.neighbor_mask.iter().any(|&m| m))
                .ok_or_else(|| Error::Validation("no sample with neighbors generated".into()))?;
            let params =
                ModelParameters::init(cfg.model_kind, cfg.model.clone(), cfg.train.seed)?;
            let report = gradient_check(&params, sample, &cfg.train.loss)?;

            let mut worst = report.per_group_worst.clone();
            worst.sort_by(|a, b| b.1.total_cmp(&a.1));
            println!(
                "gradient check: max relative error {:.3e} over {} probed entries",
                report.max_rel_error, report.checked
            );
            for (name, err) in worst.iter().take(5) {
                println!("  {name}: {err:.3e}");
            }
            #[derive(Serialize)]
            struct GradOut {
                max_rel_error: f64,
                checked: usize,
                threshold: f64,
                pass: bool,
            }
            let pass = report.max_rel_error < 1e-4;
            write_json(
                common.out_dir.join("gradcheck.json"),
                &GradOut {
                    max_rel_error: report.max_rel_error,
                    checked: report.checked,
                    threshold: 1e-4,
                    pass,
                },
            )?;
            if !pass {
                return Err(Error::Validation(format!(
                    "gradient check failed: {:.3e} >= 1e-4",
                    report.max_rel_error
                )));
            }
            Ok(())
        }

        Command::DumpTrajectories {
            common,
            checkpoint,
            dataset,
            split,
            limit,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = split {
                cfg.eval.split = s;
            }
            if let Some(n) = limit {
                cfg.eval.dump_limit = n;
            }
            setup_threads(&common)?;
            let checkpoint = checkpoint
                .ok_or_else(|| Error::Config("missing required field: checkpoint".into()))?;
            let dataset =
                dataset.ok_or_else(|| Error::Config("missing required field: dataset".into()))?;
            let data = load_dataset(&dataset)?;
            let samples = pick_split(&data, &cfg.eval.split)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            cfg.model = ckpt.params.config.clone();
            echo_config(
                &common,
                &cfg,
                "dump-trajectories",
                &[("checkpoint", &checkpoint), ("dataset", &dataset)],
            )?;

            let dumps = dump_trajectories(&ckpt.params, samples, cfg.eval.dump_limit)?;
            let path = common.out_dir.join("trajectories.json");
            write_trajectory_dumps(&dumps, &path)?;
            println!("wrote {} trajectory dumps to {}", dumps.len(), path.display());
            Ok(())
        }
    }
}

fn parse_kind(s: &str) -> Result<ModelKind> {
    match s {
        "intent_aware" | "intent-aware" => Ok(ModelKind::IntentAware),
        "vanilla" => Ok(ModelKind::Vanilla),
        other => Err(Error::Config(format!(
            "unknown model kind {other:?}; expected intent_aware or vanilla"
        ))),
    }
}

fn pick_split<'a>(data: &'a DatasetSplit, name: &str) -> Result<&'a Vec<crate::types::TrajectorySample>> {
    match name {
        "train" => Ok(&data.train),
        "validation" | "val" => Ok(&data.validation),
        "test" => Ok(&data.test),
        other => Err(Error::Config(format!(
            "unknown split {other:?}; expected train, validation, or test"
        ))),
    }
}

/// Load the config file (or defaults) and apply `--set` overrides.
fn load_config(common: &Common) -> Result<AppConfig> {
    let mut value: serde_json::Value = match &common.config {
        Some(path) => serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?,
        None => serde_json::to_value(AppConfig::default())?,
    };
    for kv in &common.set {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        let parsed: serde_json::Value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let mut slot = &mut value;
        for part in key.split('.') {
            if !slot.is_object() {
                return Err(Error::Config(format!("--set path {key:?} is not an object")));
            }
            slot = slot
                .as_object_mut()
                .unwrap()
                .entry(part.to_string())
                .or_insert(serde_json::Value::Object(Default::default()));
        }
        *slot = parsed;
    }
    let cfg: AppConfig = serde_json::from_value(value)?;
    cfg.data.validate()?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Adopt sequence dims and feature width from loaded samples so the model
/// always matches the dataset on disk.
fn adopt_dataset_dims(cfg: &mut AppConfig, split: &DatasetSplit) -> Result<()> {
    let sample = split
        .splits()
        .iter()
        .find_map(|(_, s)| s.first())
        .ok_or_else(|| Error::Validation("dataset is empty".into()))?;
    cfg.data.history_len = sample.history_len();
    cfg.data.future_len = sample.future_len();
    cfg.model.history_len = sample.history_len();
    cfg.model.future_len = sample.future_len();
    cfg.model.d_in = sample.feature_dim();
    if cfg.model.grid.num_cells() != sample.num_cells() {
        return Err(Error::Validation(format!(
            "dataset has {} grid cells, config grid has {}",
            sample.num_cells(),
            cfg.model.grid.num_cells()
        )));
    }
    Ok(())
}

fn setup_threads(common: &Common) -> Result<()> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

/// Echo the effective config plus the invocation inputs into the output
/// directory; a run is reproducible from this file alone.
fn echo_config(common: &Common, cfg: &AppConfig, command: &str, inputs: &[(&str, &PathBuf)]) -> Result<()> {
    std::fs::create_dir_all(&common.out_dir)?;
    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'a str,
        inputs: std::collections::BTreeMap<&'a str, String>,
        config: &'a AppConfig,
    }
    let echo = Echo {
        command,
        inputs: inputs
            .iter()
            .map(|(k, v)| (*k, v.display().to_string()))
            .collect(),
        config: cfg,
    };
    write_json(common.out_dir.join("config.json"), &echo)
}

fn write_dataset_artifacts(out_dir: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    save_dataset(split, out_dir.join("dataset.bin"))?;
    write_json(out_dir.join("stats.json"), &dataset_stats(split))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json() {
        let cfg = AppConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: AppConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_config_fields_rejected() {
        let bad = r#"{"trian": {}}"#;
        assert!(serde_json::from_str::<AppConfig>(bad).is_err());
    }

    #[test]
    fn reconcile_mirrors_data_dims() {
        let mut cfg = AppConfig::default();
        cfg.data.history_len = 12;
        cfg.data.future_len = 20;
        cfg.data.include_velocity = true;
        cfg.reconcile();
        assert_eq!(cfg.model.history_len, 12);
        assert_eq!(cfg.model.future_len, 20);
        assert_eq!(cfg.model.d_in, 3);
    }
}
