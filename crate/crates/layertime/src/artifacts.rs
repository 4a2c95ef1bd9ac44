//! Files written by a run: `log.csv`, `curve.csv`, `summary.json`,
//! `controls.bin` and the optional solver trace.
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! a reader sees either the complete file or nothing.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use layertime_core::data::Provenance;
use layertime_core::mgrit::MgritStatus;
use layertime_core::nested::Interpolation;
use layertime_core::network::{ControlTrajectory, NetworkShape};
use layertime_core::optimizer::{IterationRecord, RefinementEvent, SolveKind, SolveObserver, TrainingLog};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const LOG_FILE: &str = "log.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONTROLS_FILE: &str = "controls.bin";

/// Writes `path` through `fill` into a temporary file in the same directory,
/// then renames it over `path`.
pub fn write_atomic<F>(path: &Path, fill: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut w = BufWriter::new(tmp);
    fill(&mut w)?;
    let tmp = w.into_inner().map_err(|e| e.into_error())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Log columns: the per-iteration metrics first, then solver diagnostics.
pub const LOG_COLUMNS: [&str; 18] = [
    "iteration",
    "level",
    "work_units",
    "objective",
    "train_acc",
    "val_acc",
    "d_used",
    "fwd_residual",
    "bwd_residual",
    "step_size",
    "wall_seconds",
    "layers",
    "grad_norm",
    "objective_after",
    "backtracks",
    "stalled",
    "fwd_iters",
    "bwd_iters",
];

/// Columns that depend on wall-clock time.
pub const WALL_CLOCK_COLUMNS: [&str; 2] = ["work_units", "wall_seconds"];

fn record_fields(r: &IterationRecord) -> [String; 18] {
    [
        r.iteration.to_string(),
        r.level.to_string(),
        r.work_units.to_string(),
        r.objective.to_string(),
        r.train_acc.to_string(),
        r.val_acc.to_string(),
        r.d_used.to_string(),
        r.fwd_residual.to_string(),
        r.bwd_residual.to_string(),
        r.step_size.to_string(),
        r.wall_seconds.to_string(),
        r.layers.to_string(),
        r.grad_norm.to_string(),
        r.objective_after.to_string(),
        r.backtracks.to_string(),
        r.stalled.to_string(),
        r.fwd_iters.to_string(),
        r.bwd_iters.to_string(),
    ]
}

pub fn write_log(records: &[IterationRecord], path: &Path) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(LOG_COLUMNS)?;
        for r in records {
            out.write_record(record_fields(r))?;
        }
        out.flush()?;
        Ok(())
    })
}

#[derive(Debug, thiserror::Error)]
#[error("{path}, line {line}: {message}")]
pub struct LogParseError {
    pub path: String,
    /// 1-based line in the file; the header is line 1.
    pub line: usize,
    pub message: String,
}

/// Reads a `log.csv` written by [`write_log`].
pub fn read_log(path: &Path) -> anyhow::Result<Vec<IterationRecord>> {
    let name = path.display().to_string();
    let err = |line: usize, message: String| LogParseError {
        path: name.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("opening {name}"))?;
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != LOG_COLUMNS {
        return Err(err(1, "unexpected header".into()).into());
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| err(line, e.to_string()))?;
        if row.len() != LOG_COLUMNS.len() {
            return Err(err(line, format!("{} fields, expected {}", row.len(), LOG_COLUMNS.len())).into());
        }
        let f = |j: usize| -> Result<f64, LogParseError> {
            row[j]
                .parse()
                .map_err(|_| err(line, format!("{}: `{}` is not a number", LOG_COLUMNS[j], &row[j])))
        };
        let u = |j: usize| -> Result<usize, LogParseError> {
            row[j]
                .parse()
                .map_err(|_| err(line, format!("{}: `{}` is not an integer", LOG_COLUMNS[j], &row[j])))
        };
        let stalled = row[15]
            .parse()
            .map_err(|_| err(line, format!("stalled: `{}` is not a boolean", &row[15])))?;
        records.push(IterationRecord {
            iteration: u(0)?,
            level: u(1)?,
            work_units: f(2)?,
            objective: f(3)?,
            train_acc: f(4)?,
            val_acc: f(5)?,
            d_used: u(6)?,
            fwd_residual: f(7)?,
            bwd_residual: f(8)?,
            step_size: f(9)?,
            wall_seconds: f(10)?,
            layers: u(11)?,
            grad_norm: f(12)?,
            objective_after: f(13)?,
            backtracks: u(14)?,
            stalled,
            fwd_iters: u(16)?,
            bwd_iters: u(17)?,
        });
    }
    Ok(records)
}

/// One row of `curve.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub work_units: f64,
    pub objective: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub level: usize,
}

/// Projects log records onto the plotting columns. Work units must be
/// strictly increasing.
pub fn curve_points(records: &[IterationRecord]) -> anyhow::Result<Vec<CurvePoint>> {
    if records.is_empty() {
        bail!("log has no records");
    }
    let mut prev = f64::NEG_INFINITY;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if !(r.work_units > prev) {
                bail!(
                    "record {} (line {}): work units {} do not increase past {prev}",
                    i,
                    i + 2,
                    r.work_units
                );
            }
            prev = r.work_units;
            Ok(CurvePoint {
                work_units: r.work_units,
                objective: r.objective,
                train_acc: r.train_acc,
                val_acc: r.val_acc,
                level: r.level,
            })
        })
        .collect()
}

pub fn write_curve(points: &[CurvePoint], path: &Path) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["work_units", "objective", "train_acc", "val_acc", "level"])?;
        for p in points {
            out.write_record([
                p.work_units.to_string(),
                p.objective.to_string(),
                p.train_acc.to_string(),
                p.val_acc.to_string(),
                p.level.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    })
}

/// Reads `log_path` and writes its curve to `out_path`. Returns the row count.
pub fn emit_curve(log_path: &Path, out_path: &Path) -> anyhow::Result<usize> {
    let points = curve_points(&read_log(log_path)?)?;
    write_curve(&points, out_path)?;
    Ok(points.len())
}

pub fn read_curve(path: &Path) -> anyhow::Result<Vec<CurvePoint>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let parse = |j: usize| -> anyhow::Result<f64> {
            row.get(j)
                .and_then(|v| v.parse().ok())
                .with_context(|| format!("{}, line {}: bad field {j}", path.display(), i + 2))
        };
        out.push(CurvePoint {
            work_units: parse(0)?,
            objective: parse(1)?,
            train_acc: parse(2)?,
            val_acc: parse(3)?,
            level: parse(4)? as usize,
        });
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"LTCT";
const CONTROLS_VERSION: u32 = 1;

/// Little-endian: magic, version, `n_f, width, n_c, N` as u64, `T, h` as
/// f64, then every parameter in [`ControlTrajectory::flatten`] order.
pub fn encode_controls(theta: &ControlTrajectory) -> Vec<u8> {
    let s = theta.shape;
    let params = theta.flatten();
    let mut out = Vec::with_capacity(8 + 48 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTROLS_VERSION.to_le_bytes());
    for v in [s.n_f, s.width, s.n_c, s.layers] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&s.t_final.to_le_bytes());
    out.extend_from_slice(&s.h.to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_controls(bytes: &[u8]) -> anyhow::Result<ControlTrajectory> {
    const HEADER: usize = 8 + 6 * 8;
    if bytes.len() < HEADER {
        bail!("controls file truncated");
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes") };
    if &bytes[..4] != MAGIC {
        bail!("not a controls file (bad magic)");
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into()?);
    if version != CONTROLS_VERSION {
        bail!("unsupported controls version {version}");
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = usize::try_from(u64::from_le_bytes(word(i)))?;
    }
    let t_final = f64::from_le_bytes(word(4));
    let h = f64::from_le_bytes(word(5));
    let [n_f, width, n_c, layers] = dims;
    let shape = if layers == 0 {
        NetworkShape::without_layers(n_f, width, n_c)
    } else {
        NetworkShape::new(n_f, width, n_c, layers, t_final)?
    };
    if shape.h.to_bits() != h.to_bits() {
        bail!("step size {h} inconsistent with T = {t_final}, N = {layers}");
    }
    let body = &bytes[HEADER..];
    if body.len() % 8 != 0 {
        bail!("controls body is not a whole number of f64 values");
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(ControlTrajectory::unflatten(shape, &params)?)
}

pub fn write_controls(theta: &ControlTrajectory, path: &Path) -> anyhow::Result<()> {
    let bytes = encode_controls(theta);
    write_atomic(path, |w| Ok(w.write_all(&bytes)?))
}

pub fn read_controls(path: &Path) -> anyhow::Result<ControlTrajectory> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .with_context(|| format!("reading {}", path.display()))?;
    decode_controls(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProvenanceJson {
    Generated { generator: String, samples: usize, seed: u64 },
    Loaded { path: String, sha256: String },
    Split { parent: Box<ProvenanceJson>, seed: u64, part: String },
}

impl From<&Provenance> for ProvenanceJson {
    fn from(p: &Provenance) -> Self {
        match p {
            Provenance::Generated {
                generator,
                samples,
                seed,
            } => Self::Generated {
                generator: generator.clone(),
                samples: *samples,
                seed: *seed,
            },
            Provenance::Loaded { path, sha256 } => Self::Loaded {
                path: path.clone(),
                sha256: sha256.clone(),
            },
            Provenance::Split { parent, seed, part } => Self::Split {
                parent: Box::new(parent.as_ref().into()),
                seed: *seed,
                part: part.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventJson {
    pub after_record: usize,
    pub from_level: usize,
    pub to_level: usize,
    pub layers: usize,
    pub interpolation: String,
    pub wall_seconds: f64,
}

impl From<&RefinementEvent> for EventJson {
    fn from(e: &RefinementEvent) -> Self {
        Self {
            after_record: e.after_record,
            from_level: e.from_level,
            to_level: e.to_level,
            layers: e.layers,
            interpolation: match e.interpolation {
                Interpolation::Constant => "constant",
                Interpolation::Linear => "linear",
            }
            .into(),
            wall_seconds: e.wall_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub iterations: usize,
    pub layers: usize,
    pub objective: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub total_work_units: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub seed: u64,
    pub mode: String,
    pub seconds_per_unit: f64,
    pub calibrated: bool,
    pub final_metrics: FinalMetrics,
    pub events: Vec<EventJson>,
    pub train_provenance: ProvenanceJson,
    pub validation_provenance: ProvenanceJson,
}

impl RunSummary {
    pub fn final_metrics(log: &TrainingLog) -> FinalMetrics {
        let last = log.records.last();
        FinalMetrics {
            iterations: log.records.len(),
            layers: last.map_or(0, |r| r.layers),
            objective: last.map_or(f64::NAN, |r| r.objective_after),
            train_acc: last.map_or(f64::NAN, |r| r.train_acc),
            val_acc: last.map_or(f64::NAN, |r| r.val_acc),
            total_work_units: log.total_work_units(),
            wall_seconds: log.elapsed_seconds,
        }
    }
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, summary)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_summary(path: &Path) -> anyhow::Result<RunSummary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Appends `level_count, iter, abs_residual, rel_residual` for every cycle
/// of every solve, iteration 0 being the initial guess.
pub struct TraceWriter {
    out: RefCell<BufWriter<File>>,
    error: RefCell<Option<std::io::Error>>,
}

impl TraceWriter {
    pub fn append(path: &Path) -> anyhow::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening trace {}", path.display()))?;
        Ok(Self {
            out: RefCell::new(BufWriter::new(file)),
            error: RefCell::new(None),
        })
    }

    /// Flushes and reports the first write error, if any.
    pub fn finish(self) -> anyhow::Result<()> {
        if let Some(e) = self.error.into_inner() {
            return Err(e.into());
        }
        self.out.into_inner().flush()?;
        Ok(())
    }
}

impl SolveObserver for TraceWriter {
    fn on_solve(&self, _kind: SolveKind, status: &MgritStatus) {
        let mut out = self.out.borrow_mut();
        let mut res = Ok(());
        for (i, (abs, rel)) in status
            .residual_history
            .iter()
            .zip(status.relative_history())
            .enumerate()
        {
            res = res.and_then(|_| writeln!(out, "{}, {i}, {abs:e}, {rel:e}", status.levels));
        }
        if let Err(e) = res {
            self.error.borrow_mut().get_or_insert(e);
        }
    }
}
