//! Single training runs: data, calibration, training and artifacts.

use std::path::{Path, PathBuf};

use anyhow::Context;
use layertime_core::data::{generate_peaks, split, Split};
use layertime_core::exec::{Executor, SystemClock};
use layertime_core::optimizer::{Trained, Trainer, TrainingMode};

use crate::artifacts::{
    curve_points, write_controls, write_curve, write_log, write_summary, RunSummary, TraceWriter, CONTROLS_FILE,
    CURVE_FILE, LOG_FILE, SUMMARY_FILE,
};
use crate::config::{ConfigError, DataSourceKind, RunConfig};
use crate::dataset_io::load_csv;

/// Failure of a command, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<TrainingMode>,
    pub seconds_per_unit: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.run.out = out.clone();
        }
        if let Some(mode) = self.mode {
            cfg.optimizer.mode = match mode {
                TrainingMode::Nested => "nested",
                TrainingMode::NonNested => "non-nested",
            }
            .into();
        }
        if let Some(s) = self.seconds_per_unit {
            cfg.run.seconds_per_unit = Some(s);
        }
        cfg.validate()
    }
}

/// Loads or generates the dataset and splits it.
pub fn load_data(cfg: &RunConfig) -> anyhow::Result<Split> {
    let ds = match cfg.data.source {
        DataSourceKind::Peaks => generate_peaks(cfg.data.samples, cfg.data_seed())?,
        DataSourceKind::Csv => {
            let path = cfg.data.path.as_deref().context("data.path is required for csv data")?;
            load_csv(
                path,
                cfg.data.n_features.context("data.n_features is required")?,
                cfg.data.n_classes.context("data.n_classes is required")?,
                cfg.data.label_mode,
                cfg.data.normalize,
            )?
        }
    };
    Ok(split(&ds, cfg.split.train, cfg.split.validation, cfg.split_seed())?)
}

pub struct RunOutcome {
    pub trained: Trained,
    pub summary: RunSummary,
}

/// Trains per `cfg` without writing anything.
pub fn train<E: Executor>(cfg: &RunConfig, exec: &E) -> anyhow::Result<RunOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let train = data.train.to_batch();
    let validation = data.validation.to_batch();
    let shape = cfg.shape(data.train.n_features(), data.train.n_classes())?;
    let clock = SystemClock::default();
    let trace = cfg.run.trace.as_deref().map(TraceWriter::append).transpose()?;
    let mut trainer = Trainer {
        hyper: cfg.hyperparameters(),
        optimizer: cfg.optimizer_config(),
        mgrit: cfg.mgrit_config(),
        policy: cfg.policy(),
        train: &train,
        validation: &validation,
        exec,
        clock: &clock,
        seconds_per_unit: 1.0,
        observer: None,
    };
    let seed = cfg.run.seed;
    let scale = cfg.opening_scale();
    let (seconds_per_unit, calibrated) = match cfg.run.seconds_per_unit {
        Some(s) => (s, false),
        None => (
            trainer
                .calibrate_work_unit(shape, cfg.run.calibration_iters, scale, seed)
                .context("calibrating the work unit")?,
            true,
        ),
    };
    trainer.seconds_per_unit = seconds_per_unit;
    trainer.observer = trace.as_ref().map(|t| t as _);
    let trained = match cfg.mode() {
        TrainingMode::Nested => layertime_core::nested::nested_train(&trainer, &cfg.schedule(), shape, scale, seed)?,
        TrainingMode::NonNested => trainer.train_non_nested(shape, cfg.non_nested_iterations(), scale, seed)?,
    };
    if let Some(t) = trace {
        t.finish()?;
    }
    let summary = RunSummary {
        config: cfg.clone(),
        seed,
        mode: cfg.optimizer.mode.clone(),
        seconds_per_unit,
        calibrated,
        final_metrics: RunSummary::final_metrics(&trained.log),
        events: trained.log.events.iter().map(Into::into).collect(),
        train_provenance: (&data.train.provenance).into(),
        validation_provenance: (&data.validation.provenance).into(),
    };
    Ok(RunOutcome { trained, summary })
}

/// Writes `log.csv`, `curve.csv`, `summary.json` and `controls.bin` to `dir`.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let records = &outcome.trained.log.records;
    write_log(records, &dir.join(LOG_FILE))?;
    if !records.is_empty() {
        write_curve(&curve_points(records)?, &dir.join(CURVE_FILE))?;
    }
    write_controls(&outcome.trained.theta, &dir.join(CONTROLS_FILE))?;
    write_summary(&outcome.summary, &dir.join(SUMMARY_FILE))?;
    Ok(())
}

/// Trains and writes the artifacts to `cfg.run.out`.
pub fn run<E: Executor>(cfg: &RunConfig, exec: &E) -> anyhow::Result<RunOutcome> {
    let outcome = train(cfg, exec)?;
    write_artifacts(&outcome, &cfg.run.out)?;
    Ok(outcome)
}

/// Reads, overrides and validates the config at `path`, then runs it.
pub fn run_file<E: Executor>(path: &Path, overrides: &Overrides, exec: &E) -> Result<RunOutcome, CliError> {
    let cfg = load_config(path, overrides)?;
    Ok(run(&cfg, exec)?)
}

/// Reads the config file and applies `overrides` before validating.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (k, v) in crate::config::read_raw(path)? {
        cfg.set(&k, &v)?;
    }
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}
