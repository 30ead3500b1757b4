//! Command-line front end: `gen-data`, `train`, `eval` and `report`.

mod config;

pub use config::{RunConfig, PRESETS};

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::measure::Measurement;
use crate::metrics::{comparison_table, EvaluationReport, MetricsError};
use crate::nn::{load_checkpoint, save_checkpoint, CheckpointError, ModelState, NnError};
use crate::phantom::{prepare_output_dir, Dataset, PhantomError, Scaler, Split, Volume3D};
use crate::train::{evaluate_volumes, LogRow, LogWriter, TrainData, TrainError, TrainObserver, Trainer};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best_adam.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.toml";

pub fn snapshot_checkpoint(cycle: usize) -> String {
    format!("swa_snapshot_{cycle}.ckpt")
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: arguments, configuration or preconditions. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while doing the work. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::Io(_) | PhantomError::Csv(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Phantom(p) => p.into(),
            TrainError::Config(_) | TrainError::EmptySplit(_) | TrainError::MeasurementCount { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(_) | MetricsError::Csv(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "herston", version, about = "Multi-head 3D regression on synthetic morphometry phantoms")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Start from a named preset: desk, paper or smoke.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Seed for phantom sampling and the subject split.
    #[arg(long, global = true)]
    pub seed_data: Option<u64>,
    /// Seed for weight initialization.
    #[arg(long, global = true)]
    pub seed_model: Option<u64>,
    /// Seed for batch order and augmentation.
    #[arg(long, global = true)]
    pub seed_train: Option<u64>,
    /// Output directory (dataset for gen-data, run directory otherwise).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset: volumes, manifest and metadata.
    GenData {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        /// Same as --seed-data.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train with Adam, then weight-averaged cyclic SGD; evaluate on test.
    Train {
        /// Dataset directory or manifest (defaults to data_dir).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Baseline report CSV; adds improvement percentages to the summary.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Side-by-side comparison of report CSVs.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        markdown: bool,
    },
}

/// Resolves the run configuration: preset, then config file, then flags.
pub fn resolve_config(g: &GlobalArgs, cmd: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path, g.preset.as_deref())?,
        None => RunConfig::preset(g.preset.as_deref().unwrap_or("desk"))?,
    };
    if let Some(s) = g.seed_data {
        cfg.seed_data = s;
    }
    if let Some(s) = g.seed_model {
        cfg.seed_model = s;
    }
    if let Some(s) = g.seed_train {
        cfg.seed_train = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    match cmd {
        Command::GenData { subjects, dim, seed } => {
            if let Some(n) = subjects {
                cfg.subjects = *n;
            }
            if let Some(d) = dim {
                cfg.dim = *d;
            }
            if let Some(s) = seed {
                cfg.seed_data = *s;
            }
            if g.out.is_none() {
                cfg.out = cfg.data_dir.clone();
            }
        }
        Command::Train { data: Some(d) } | Command::Eval { data: Some(d), .. } => cfg.data_dir = d.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global, &cli.command)?;
    if cli.global.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match cli.command {
        Command::GenData { .. } => cmd_gen_data(&cfg, cli.global.force).map(|_| ()),
        Command::Train { .. } => cmd_train(&cfg, cli.global.force).map(|_| ()),
        Command::Eval {
            checkpoint,
            split,
            compare,
            ..
        } => {
            let split = Split::parse(&split)
                .ok_or_else(|| CliError::Validation(format!("unknown split {split:?}")))?;
            let out = cli.global.out.as_deref();
            let (report, summary) = cmd_eval(&checkpoint, &cfg.data_dir, split, compare.as_deref(), out)?;
            print_report(&report)?;
            print!("{summary}");
            Ok(())
        }
        Command::Report { reports, markdown } => {
            print!("{}", cmd_report(&reports, markdown)?);
            Ok(())
        }
    }
}

fn print_report(report: &EvaluationReport) -> Result<(), CliError> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

pub fn cmd_gen_data(cfg: &RunConfig, force: bool) -> Result<PathBuf, CliError> {
    let dir = &cfg.out;
    // Check the directory before spending time on rendering.
    prepare_output_dir(dir, force)?;
    let ds = Dataset::generate(&cfg.dataset_config())?;
    let manifest = ds.save(dir, true)?;
    let c = ds.meta.split_counts;
    log::info!(
        "wrote {} scans of {} subjects ({}/{}/{}) to {}",
        ds.meta.scans,
        ds.meta.subjects,
        c[0],
        c[1],
        c[2],
        dir.display()
    );
    Ok(manifest)
}

/// Checkpoint metadata: measurement list and the training scaler, so
/// evaluation can map predictions back to physical units.
pub fn checkpoint_metadata(measurements: &[Measurement], scaler: &Scaler) -> toml::Table {
    let mut t = toml::Table::new();
    let ms = toml::Value::try_from(measurements).expect("measurements serialize");
    t.insert("measurements".into(), ms);
    t.insert("scaler".into(), toml::Value::try_from(scaler).expect("scaler serializes"));
    t
}

fn scaler_from_metadata(meta: Option<&toml::Table>) -> Option<Scaler> {
    meta?.get("scaler")?.clone().try_into().ok()
}

struct RunObserver {
    dir: PathBuf,
    log: LogWriter<File>,
    meta: toml::Table,
    failure: Option<String>,
}

impl RunObserver {
    fn record<E: std::fmt::Display>(&mut self, r: Result<(), E>) {
        if let Err(e) = r {
            if self.failure.is_none() {
                self.failure = Some(e.to_string());
            }
        }
    }
}

impl TrainObserver for RunObserver {
    fn on_step(&mut self, row: &LogRow) {
        if let Some(icc) = row.val_mean_icc {
            log::info!(
                "{} epoch {} step {} lr {:.3e} mse {:.5} val mean ICC {:.4}",
                row.phase.as_str(),
                row.epoch,
                row.step,
                row.lr,
                row.train_mse,
                icc
            );
        }
        let r = self.log.append(row);
        self.record(r);
    }

    fn on_best(&mut self, _epoch: usize, model: &ModelState) {
        let r = save_checkpoint(self.dir.join(BEST_CHECKPOINT), model, Some(&self.meta));
        self.record(r);
    }

    fn on_snapshot(&mut self, cycle: usize, model: &ModelState) {
        let r = save_checkpoint(self.dir.join(snapshot_checkpoint(cycle)), model, Some(&self.meta));
        self.record(r);
    }
}

/// Summary of a finished training run.
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub report: EvaluationReport,
    pub best_epoch: Option<usize>,
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<TrainArtifacts, CliError> {
    let ds = Dataset::load(&cfg.data_dir).map_err(|e| match e {
        PhantomError::Io(io) => CliError::Validation(format!("cannot load dataset {}: {io}", cfg.data_dir.display())),
        other => other.into(),
    })?;
    let dir = cfg.out.clone();
    prepare_output_dir(&dir, force)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;

    let data = Arc::new(TrainData::from_dataset(&ds)?);
    let dim = ds.meta.dims[0];
    if ds.meta.dims.iter().any(|&d| d != dim) {
        return Err(CliError::Validation(format!("dataset dims {:?} are not cubic", ds.meta.dims)));
    }
    let spec = cfg.network_spec(dim, data.measurements.len())?;
    let model = ModelState::build(spec, cfg.seed_model)?;
    log::info!(
        "model with {} parameters, {} training / {} validation scans",
        model.param_count(),
        data.train.len(),
        data.val.len()
    );
    let meta = checkpoint_metadata(&data.measurements, &data.scaler);
    let mut obs = RunObserver {
        log: LogWriter::new(File::create(dir.join(LOG_FILE))?).map_err(|e| CliError::Runtime(e.to_string()))?,
        dir: dir.clone(),
        meta: meta.clone(),
        failure: None,
    };

    let mut trainer = Trainer::new(model, Arc::clone(&data), cfg.train_config())?;
    let epochs = trainer.config().adam_epochs;
    let outcome = trainer
        .run_adam(epochs, &mut obs)
        .and_then(|_| {
            trainer.restore_best(&mut obs);
            trainer.run_swa(&mut obs)
        });
    if let Err(e) = outcome {
        // Optimizer steps are rejected before touching weights, so the
        // current model is the last good one.
        let path = dir.join(LAST_GOOD_CHECKPOINT);
        save_checkpoint(&path, trainer.model(), Some(&meta))?;
        log::error!("training aborted; last good weights in {}", path.display());
        return Err(e.into());
    }
    if let Some(f) = obs.failure.take() {
        return Err(CliError::Runtime(format!("writing run artifacts: {f}")));
    }
    let best_epoch = trainer.best_epoch();
    let final_model = trainer.finish().model;
    let final_checkpoint = dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &final_model, Some(&meta))?;

    let eval = evaluate_split(&final_model, &ds, Split::Test, &data.scaler)?;
    write_report(&dir, &eval, None)?;
    Ok(TrainArtifacts {
        dir,
        final_checkpoint,
        report: eval,
        best_epoch,
    })
}

/// Scores `model` on `split`, predictions mapped through `scaler`.
pub fn evaluate_split(
    model: &ModelState,
    ds: &Dataset,
    split: Split,
    scaler: &Scaler,
) -> Result<EvaluationReport, CliError> {
    let rows: Vec<_> = ds.manifest.rows_in(split).collect();
    if rows.len() < 3 {
        return Err(CliError::Validation(format!(
            "the {split} split has {} scans; ICC needs at least 3",
            rows.len()
        )));
    }
    let volumes: Vec<&Volume3D> = rows.iter().map(|(i, _)| &ds.volumes[*i]).collect();
    let targets: Vec<Vec<f64>> = rows.iter().map(|(_, r)| r.targets.clone()).collect();
    let ev = evaluate_volumes(model, &volumes, &targets, &ds.manifest.measurements, scaler, 6)?;
    Ok(ev.report)
}

fn write_report(dir: &Path, report: &EvaluationReport, baseline: Option<(&str, &EvaluationReport)>) -> Result<String, CliError> {
    fs::create_dir_all(dir)?;
    report.save_csv(dir.join(REPORT_FILE))?;
    let summary = report.summary(baseline)?.to_toml();
    fs::write(dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Evaluates a checkpoint; writes `report.csv` and `summary.toml` to `out`
/// when given. Returns the report and the summary text.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    compare: Option<&Path>,
    out: Option<&Path>,
) -> Result<(EvaluationReport, String), CliError> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(data)?;
    let m_model = model.spec().measurements;
    let m_data = ds.manifest.measurements.len();
    if m_model != m_data {
        return Err(CliError::Validation(format!(
            "checkpoint predicts M={m_model} measurements but the manifest has M={m_data}"
        )));
    }
    let scaler = match scaler_from_metadata(meta.as_ref()) {
        Some(s) => s,
        None => ds.manifest.fit_scaler()?,
    };
    let report = evaluate_split(&model, &ds, split, &scaler)?;
    let baseline = compare.map(EvaluationReport::load_csv).transpose()?;
    let base_name = compare.map(|p| p.display().to_string()).unwrap_or_default();
    let base = baseline.as_ref().map(|b| (base_name.as_str(), b));
    let summary = match out {
        Some(dir) => write_report(dir, &report, base)?,
        None => report.summary(base)?.to_toml(),
    };
    Ok((report, summary))
}

pub fn cmd_report(paths: &[PathBuf], markdown: bool) -> Result<String, CliError> {
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let r = EvaluationReport::load_csv(p)?;
        let name = p
            .parent()
            .and_then(|d| d.file_name())
            .or_else(|| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        reports.push((name, r));
    }
    Ok(comparison_table(&reports, markdown)?)
}
