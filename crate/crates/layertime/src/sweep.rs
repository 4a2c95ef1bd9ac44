//! Seed and hyperparameter sweeps with summary statistics.

use std::path::{Path, PathBuf};

use anyhow::bail;
use rayon::prelude::*;
use serde::Serialize;
use statrs::statistics::{Data, Distribution, Max, Median, Min};

use crate::artifacts::write_atomic;
use crate::config::{ConfigError, RunConfig};
use crate::executor::Threaded;
use crate::run::{run, CliError};

pub const RAW_FILE: &str = "sweep_raw.csv";
pub const SUMMARY_FILE: &str = "sweep_summary.csv";
pub const POOLED: &str = "pooled";

/// One grid axis: a config key and the values it takes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl GridAxis {
    /// Parses `key=v1,v2,…`.
    pub fn parse(arg: &str) -> Result<Self, ConfigError> {
        let (key, values) = arg
            .split_once('=')
            .ok_or_else(|| ConfigError::new("--grid", format!("expected key=v1,v2 in `{arg}`")))?;
        let key = key.trim().to_string();
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(ConfigError::new(key, "empty grid value"));
        }
        // reject unknown keys and unparsable values before running anything
        let mut probe = RunConfig::default();
        for v in &values {
            probe.set(&key, v)?;
        }
        Ok(Self { key, values })
    }
}

/// Cartesian product of the axes, first axis slowest. An empty grid is a
/// single cell with no overrides.
pub fn grid_cells(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut cells = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                axis.values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells
}

pub fn cell_label(cell: &[(String, String)]) -> String {
    if cell.is_empty() {
        return "base".into();
    }
    cell.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawEntry {
    pub config: String,
    pub seed: u64,
    pub status: String,
    pub val_acc: Option<f64>,
    pub train_acc: Option<f64>,
    pub objective: Option<f64>,
    pub total_work_units: Option<f64>,
    pub error: Option<String>,
}

/// Aggregates of final validation accuracy over the successful runs of one
/// config (or all configs, for the pooled row).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config: String,
    pub runs: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
    /// Sample standard deviation (n − 1); absent for fewer than two runs.
    pub stddev: Option<f64>,
}

impl SummaryRow {
    pub fn from_values(config: &str, values: &[f64], failed: usize) -> Self {
        let data = Data::new(values.to_vec());
        let some = |v: f64| (!values.is_empty()).then_some(v);
        Self {
            config: config.into(),
            runs: values.len(),
            failed,
            mean: data.mean(),
            median: some(data.median()),
            max: some(data.max()),
            min: some(data.min()),
            stddev: if values.len() >= 2 { data.std_dev() } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub raw: Vec<RawEntry>,
    /// One row per config in grid order, then the pooled row.
    pub rows: Vec<SummaryRow>,
}

impl SweepSummary {
    pub fn from_raw(raw: Vec<RawEntry>) -> Self {
        let mut labels: Vec<&str> = Vec::new();
        for e in &raw {
            if !labels.contains(&e.config.as_str()) {
                labels.push(&e.config);
            }
        }
        let summarize = |label: &str, entries: &mut dyn Iterator<Item = &RawEntry>| {
            let (mut vals, mut failed) = (Vec::new(), 0);
            for e in entries {
                match e.val_acc {
                    Some(v) => vals.push(v),
                    None => failed += 1,
                }
            }
            SummaryRow::from_values(label, &vals, failed)
        };
        let mut rows: Vec<SummaryRow> = labels
            .iter()
            .map(|l| summarize(l, &mut raw.iter().filter(|e| e.config == *l)))
            .collect();
        rows.push(summarize(POOLED, &mut raw.iter()));
        Self { raw, rows }
    }

    pub fn pooled(&self) -> &SummaryRow {
        self.rows.last().expect("pooled row is always present")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn write_raw(raw: &[RawEntry], path: &Path) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "config",
            "seed",
            "status",
            "val_acc",
            "train_acc",
            "objective",
            "total_work_units",
            "error",
        ])?;
        for e in raw {
            out.write_record([
                e.config.clone(),
                e.seed.to_string(),
                e.status.clone(),
                opt(e.val_acc),
                opt(e.train_acc),
                opt(e.objective),
                opt(e.total_work_units),
                e.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn write_summary_table(rows: &[SummaryRow], path: &Path) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["config", "runs", "failed", "mean", "median", "max", "min", "stddev"])?;
        for r in rows {
            out.write_record([
                r.config.clone(),
                r.runs.to_string(),
                r.failed.to_string(),
                opt(r.mean),
                opt(r.median),
                opt(r.max),
                opt(r.min),
                opt(r.stddev),
            ])?;
        }
        out.flush()?;
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub seeds: Vec<u64>,
    pub grid: Vec<GridAxis>,
    /// Run configurations concurrently, each with a single solver thread.
    pub parallel: bool,
}

struct Job {
    label: String,
    seed: u64,
    cfg: Result<RunConfig, ConfigError>,
}

fn run_dir(base: &Path, cell: usize, seed: u64) -> PathBuf {
    base.join(format!("cfg{cell}_seed{seed}"))
}

fn execute(job: &Job, threads: Option<&Threaded>) -> RawEntry {
    let result = job.cfg.clone().map_err(anyhow::Error::from).and_then(|cfg| match threads {
        Some(t) => run(&cfg, t),
        None => run(&cfg, &layertime_core::exec::Sequential),
    });
    match result {
        Ok(out) => {
            let m = &out.summary.final_metrics;
            RawEntry {
                config: job.label.clone(),
                seed: job.seed,
                status: "ok".into(),
                val_acc: Some(m.val_acc),
                train_acc: Some(m.train_acc),
                objective: Some(m.objective),
                total_work_units: Some(m.total_work_units),
                error: None,
            }
        }
        Err(e) => RawEntry {
            config: job.label.clone(),
            seed: job.seed,
            status: "failed".into(),
            val_acc: None,
            train_acc: None,
            objective: None,
            total_work_units: None,
            error: Some(format!("{e:#}")),
        },
    }
}

/// Runs every grid cell for every seed under `base.run.out`, writes the two
/// sweep tables there and returns the summary. Fails when no run succeeds.
pub fn sweep(base: &RunConfig, plan: &SweepPlan) -> Result<SweepSummary, CliError> {
    if plan.seeds.is_empty() {
        return Err(ConfigError::new("--seeds", "at least one seed is required").into());
    }
    let out = base.run.out.clone();
    let jobs: Vec<Job> = grid_cells(&plan.grid)
        .iter()
        .enumerate()
        .flat_map(|(ci, cell)| {
            let out = &out;
            plan.seeds.iter().map(move |&seed| {
                let mut cfg = base.clone();
                let applied = cell
                    .iter()
                    .try_for_each(|(k, v)| cfg.set(k, v))
                    .and_then(|_| {
                        cfg.run.seed = seed;
                        cfg.run.out = run_dir(out, ci, seed);
                        cfg.validate()
                    });
                Job {
                    label: cell_label(cell),
                    seed,
                    cfg: applied.map(|_| cfg),
                }
            })
        })
        .collect();

    let raw: Vec<RawEntry> = if plan.parallel {
        jobs.par_iter().map(|j| execute(j, None)).collect()
    } else {
        let threads = Threaded::from_env()?;
        jobs.iter().map(|j| execute(j, Some(&threads))).collect()
    };
    let summary = SweepSummary::from_raw(raw);
    write_raw(&summary.raw, &out.join(RAW_FILE))?;
    write_summary_table(&summary.rows, &out.join(SUMMARY_FILE))?;
    if summary.pooled().runs == 0 {
        let first = summary.raw.iter().find_map(|e| e.error.clone()).unwrap_or_default();
        return Err(anyhow::anyhow!("all {} runs failed; first error: {first}", summary.raw.len()).into());
    }
    Ok(summary)
}

/// Parses `a,b,c` into seeds.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, ConfigError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ConfigError::new("--seeds", format!("`{s}` is not a seed")))
        })
        .collect()
}

/// Sanity check for callers that build rows by hand.
pub fn check_row(r: &SummaryRow) -> anyhow::Result<()> {
    if let (Some(min), Some(med), Some(max), Some(mean)) = (r.min, r.median, r.max, r.mean) {
        if !(min <= med && med <= max && min <= mean && mean <= max) {
            bail!("inconsistent statistics in row {}", r.config);
        }
    }
    Ok(())
}
