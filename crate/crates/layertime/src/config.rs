//! Run configuration: a flat `key = value` file with dotted section names.
//!
//! ```text
//! # comment
//! network.width = 8
//! nested.iterations = 120, 75, 45
//! optimizer.rel_tol_mgrit = none
//! ```
//!
//! Every key has a default; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use layertime_core::mgrit::MgritConfig;
use layertime_core::nested::{BudgetPolicy, Interpolation, NestedSchedule};
use layertime_core::network::{Hyperparameters, NetworkShape};
use layertime_core::optimizer::{OptimizerConfig, TrainingMode};

use crate::dataset_io::LabelMode;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Key/value pairs in file order is irrelevant; later duplicates are errors.
pub type RawConfig = BTreeMap<String, String>;

pub fn parse_flat(text: &str) -> Result<RawConfig, ConfigError> {
    let mut map = RawConfig::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new(format!("line {}", i + 1), "expected `key = value`"))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::new(format!("line {}", i + 1), "empty key"));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(ConfigError::new(key, "given more than once"));
        }
    }
    Ok(map)
}

pub fn read_raw(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
    parse_flat(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSourceKind {
    Peaks,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub width: usize,
    /// Residual layers of the finest network.
    pub layers: usize,
    pub t_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSection {
    pub w_i: f64,
    pub gamma_tik: f64,
    pub gamma_ddt: f64,
    pub eps_relu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSection {
    /// Defaults to `1/√width`.
    pub opening_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSection {
    pub levels: usize,
    pub n_coarsest: usize,
    /// Coarsest level first.
    pub iterations: Vec<usize>,
    pub interpolation: String,
    pub d_post_refine: usize,
    pub post_refine_span: usize,
    pub d_steady: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSection {
    pub step_init: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub rel_tol_mgrit: Option<f64>,
    pub mode: String,
    pub serial_line_search: bool,
    /// Iterations of a non-nested run; defaults to the nested total.
    pub non_nested_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgritSection {
    pub c: usize,
    pub max_levels: usize,
    pub coarsest_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub source: DataSourceKind,
    /// Generated samples (peaks).
    pub samples: usize,
    /// Generator seed; defaults to the run seed.
    pub seed: Option<u64>,
    pub path: Option<PathBuf>,
    pub n_features: Option<usize>,
    pub n_classes: Option<usize>,
    pub label_mode: LabelMode,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    pub train: usize,
    pub validation: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    /// Skip calibration and use this work unit.
    pub seconds_per_unit: Option<f64>,
    pub calibration_iters: usize,
    /// Append one line per multigrid iteration to this file.
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub hyper: HyperSection,
    pub init: InitSection,
    pub nested: NestedSection,
    pub optimizer: OptimizerSection,
    pub mgrit: MgritSection,
    pub data: DataSection,
    pub split: SplitSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let mg = MgritConfig::default();
        let policy = BudgetPolicy::default();
        let hyper = Hyperparameters::default();
        Self {
            network: NetworkSection {
                width: 8,
                layers: 64,
                t_final: 5.0,
            },
            hyper: HyperSection {
                w_i: hyper.w_i,
                gamma_tik: 1e-5,
                gamma_ddt: hyper.gamma_ddt,
                eps_relu: hyper.eps_relu,
            },
            init: InitSection {
                opening_scale: None,
            },
            nested: NestedSection {
                levels: 3,
                n_coarsest: 16,
                iterations: vec![120, 75, 45],
                interpolation: "constant".into(),
                d_post_refine: policy.d_post_refine,
                post_refine_span: policy.post_refine_span,
                d_steady: policy.d_steady,
            },
            optimizer: OptimizerSection {
                step_init: opt.step_init,
                armijo_c: opt.armijo_c,
                shrink: opt.shrink,
                max_backtracks: opt.max_backtracks,
                rel_tol_mgrit: opt.rel_tol_mgrit,
                mode: "nested".into(),
                serial_line_search: opt.serial_line_search,
                non_nested_iterations: None,
            },
            mgrit: MgritSection {
                c: mg.c,
                max_levels: mg.max_levels,
                coarsest_max: mg.coarsest_max,
            },
            data: DataSection {
                source: DataSourceKind::Peaks,
                samples: 2000,
                seed: None,
                path: None,
                n_features: None,
                n_classes: None,
                label_mode: LabelMode::Index,
                normalize: false,
            },
            split: SplitSection {
                train: 1000,
                validation: 1000,
                seed: None,
            },
            run: RunSection {
                seed: 0,
                out: PathBuf::from("out"),
                seconds_per_unit: None,
                calibration_iters: 5,
                trace: None,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError::new(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// Defaults overridden by `raw`, then validated.
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (k, v) in raw {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_raw(&read_raw(path)?)
    }

    /// Sets one key. Does not validate.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let k = key;
        match key {
            "network.width" => self.network.width = parse(k, v)?,
            "network.layers" => self.network.layers = parse(k, v)?,
            "network.t_final" => self.network.t_final = parse(k, v)?,
            "hyper.w_i" => self.hyper.w_i = parse(k, v)?,
            "hyper.gamma_tik" => self.hyper.gamma_tik = parse(k, v)?,
            "hyper.gamma_ddt" => self.hyper.gamma_ddt = parse(k, v)?,
            "hyper.eps_relu" => self.hyper.eps_relu = parse(k, v)?,
            "init.opening_scale" => self.init.opening_scale = parse_opt(k, v)?,
            "nested.levels" => self.nested.levels = parse(k, v)?,
            "nested.n_coarsest" => self.nested.n_coarsest = parse(k, v)?,
            "nested.iterations" => self.nested.iterations = parse_list(k, v)?,
            "nested.interpolation" => self.nested.interpolation = v.to_string(),
            "nested.d_post_refine" => self.nested.d_post_refine = parse(k, v)?,
            "nested.post_refine_span" => self.nested.post_refine_span = parse(k, v)?,
            "nested.d_steady" => self.nested.d_steady = parse(k, v)?,
            "optimizer.step_init" => self.optimizer.step_init = parse(k, v)?,
            "optimizer.armijo_c" => self.optimizer.armijo_c = parse(k, v)?,
            "optimizer.shrink" => self.optimizer.shrink = parse(k, v)?,
            "optimizer.max_backtracks" => self.optimizer.max_backtracks = parse(k, v)?,
            "optimizer.rel_tol_mgrit" => self.optimizer.rel_tol_mgrit = parse_opt(k, v)?,
            "optimizer.mode" => self.optimizer.mode = v.to_string(),
            "optimizer.serial_line_search" => self.optimizer.serial_line_search = parse(k, v)?,
            "optimizer.non_nested_iterations" => {
                self.optimizer.non_nested_iterations = parse_opt(k, v)?
            }
            "mgrit.c" => self.mgrit.c = parse(k, v)?,
            "mgrit.max_levels" => self.mgrit.max_levels = parse(k, v)?,
            "mgrit.coarsest_max" => self.mgrit.coarsest_max = parse(k, v)?,
            "data.source" => {
                self.data.source = match v {
                    "peaks" => DataSourceKind::Peaks,
                    "csv" => DataSourceKind::Csv,
                    _ => return Err(ConfigError::new(k, format!("unknown source `{v}`"))),
                }
            }
            "data.samples" => self.data.samples = parse(k, v)?,
            "data.seed" => self.data.seed = parse_opt(k, v)?,
            "data.path" => self.data.path = parse_opt(k, v)?,
            "data.n_features" => self.data.n_features = parse_opt(k, v)?,
            "data.n_classes" => self.data.n_classes = parse_opt(k, v)?,
            "data.label_mode" => {
                self.data.label_mode = match v {
                    "index" => LabelMode::Index,
                    "onehot" | "one-hot" => LabelMode::OneHot,
                    _ => return Err(ConfigError::new(k, format!("unknown label mode `{v}`"))),
                }
            }
            "data.normalize" => self.data.normalize = parse(k, v)?,
            "split.train" => self.split.train = parse(k, v)?,
            "split.validation" => self.split.validation = parse(k, v)?,
            "split.seed" => self.split.seed = parse_opt(k, v)?,
            "run.seed" => self.run.seed = parse(k, v)?,
            "run.out" => self.run.out = PathBuf::from(v),
            "run.seconds_per_unit" => self.run.seconds_per_unit = parse_opt(k, v)?,
            "run.calibration_iters" => self.run.calibration_iters = parse(k, v)?,
            "run.trace" => self.run.trace = parse_opt(k, v)?,
            _ => return Err(ConfigError::new(k, "unknown key")),
        }
        Ok(())
    }

    pub fn mode(&self) -> TrainingMode {
        if self.optimizer.mode == "non-nested" {
            TrainingMode::NonNested
        } else {
            TrainingMode::Nested
        }
    }

    pub fn interpolation(&self) -> Interpolation {
        if self.nested.interpolation == "linear" {
            Interpolation::Linear
        } else {
            Interpolation::Constant
        }
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            w_i: self.hyper.w_i,
            gamma_tik: self.hyper.gamma_tik,
            gamma_ddt: self.hyper.gamma_ddt,
            eps_relu: self.hyper.eps_relu,
        }
    }

    pub fn policy(&self) -> BudgetPolicy {
        BudgetPolicy {
            d_post_refine: self.nested.d_post_refine,
            post_refine_span: self.nested.post_refine_span,
            d_steady: self.nested.d_steady,
        }
    }

    pub fn schedule(&self) -> NestedSchedule {
        NestedSchedule {
            levels: self.nested.levels,
            n_coarsest: self.nested.n_coarsest,
            iterations: self.nested.iterations.clone(),
            interpolation: self.interpolation(),
            policy: self.policy(),
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            step_init: self.optimizer.step_init,
            armijo_c: self.optimizer.armijo_c,
            shrink: self.optimizer.shrink,
            max_backtracks: self.optimizer.max_backtracks,
            rel_tol_mgrit: self.optimizer.rel_tol_mgrit,
            mode: self.mode(),
            serial_line_search: self.optimizer.serial_line_search,
        }
    }

    pub fn mgrit_config(&self) -> MgritConfig {
        MgritConfig {
            c: self.mgrit.c,
            max_levels: self.mgrit.max_levels,
            coarsest_max: self.mgrit.coarsest_max,
        }
    }

    pub fn non_nested_iterations(&self) -> usize {
        self.optimizer
            .non_nested_iterations
            .unwrap_or_else(|| self.nested.iterations.iter().sum())
    }

    pub fn opening_scale(&self) -> f64 {
        self.init
            .opening_scale
            .unwrap_or_else(|| layertime_core::nested::default_opening_scale(self.network.width))
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.run.seed)
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.run.seed)
    }

    /// Finest network shape for data with `n_f` features and `n_c` classes.
    pub fn shape(&self, n_f: usize, n_c: usize) -> Result<NetworkShape, ConfigError> {
        NetworkShape::new(n_f, self.network.width, n_c, self.network.layers, self.network.t_final)
            .map_err(|e| ConfigError::new("network", e.to_string()))
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |f: &str, m: &str| Err(ConfigError::new(f, m));
        if self.network.width == 0 {
            return err("network.width", "must be at least 1");
        }
        if self.network.layers == 0 {
            return err("network.layers", "must be at least 1");
        }
        if !(self.network.t_final.is_finite() && self.network.t_final > 0.0) {
            return err("network.t_final", "must be positive");
        }
        self.hyperparameters()
            .validate()
            .map_err(|e| ConfigError::new("hyper", e.to_string()))?;
        if let Some(s) = self.init.opening_scale {
            if !(s.is_finite() && s >= 0.0) {
                return err("init.opening_scale", "must be finite and nonnegative");
            }
        }
        if !matches!(self.nested.interpolation.as_str(), "constant" | "linear") {
            return err("nested.interpolation", "expected `constant` or `linear`");
        }
        self.schedule()
            .validate()
            .map_err(|e| ConfigError::new("nested", e.to_string()))?;
        if self.schedule().finest_layers() != self.network.layers {
            return Err(ConfigError::new(
                "nested.n_coarsest",
                format!(
                    "n_coarsest·2^(levels-1) = {} does not match network.layers = {}",
                    self.schedule().finest_layers(),
                    self.network.layers
                ),
            ));
        }
        if !matches!(self.optimizer.mode.as_str(), "nested" | "non-nested") {
            return err("optimizer.mode", "expected `nested` or `non-nested`");
        }
        self.optimizer_config()
            .validate()
            .map_err(|e| ConfigError::new("optimizer", e.to_string()))?;
        self.validate_mgrit()?;
        self.validate_data()?;
        if let Some(s) = self.run.seconds_per_unit {
            if !(s.is_finite() && s > 0.0) {
                return err("run.seconds_per_unit", "must be positive");
            }
        } else if self.run.calibration_iters < 3 {
            return err("run.calibration_iters", "must be at least 3");
        }
        Ok(())
    }

    fn validate_mgrit(&self) -> Result<(), ConfigError> {
        let mg = self.mgrit_config();
        if mg.c < 2 {
            return Err(ConfigError::new("mgrit.c", "must be at least 2"));
        }
        if mg.max_levels == 0 {
            return Err(ConfigError::new("mgrit.max_levels", "must be at least 1"));
        }
        let schedule = self.schedule();
        let mut grids: Vec<usize> = (0..schedule.levels).map(|l| schedule.layers_at(l)).collect();
        if self.mode() == TrainingMode::NonNested {
            grids = vec![self.network.layers];
        }
        for n in grids {
            let h = mg
                .hierarchy(n)
                .map_err(|e| ConfigError::new("mgrit", e.to_string()))?;
            let last = h.coarsest();
            if h.num_levels() < mg.max_levels && last.intervals > mg.coarsest_max {
                return Err(ConfigError::new(
                    "mgrit.c",
                    format!(
                        "{n} layers stop coarsening at {} intervals, above coarsest_max = {}",
                        last.intervals, mg.coarsest_max
                    ),
                ));
            }
        }
        Ok(())
    }

    fn validate_data(&self) -> Result<(), ConfigError> {
        if self.split.train == 0 {
            return Err(ConfigError::new("split.train", "must be at least 1"));
        }
        match self.data.source {
            DataSourceKind::Peaks => {
                if self.data.samples < self.split.train + self.split.validation {
                    return Err(ConfigError::new(
                        "data.samples",
                        "smaller than split.train + split.validation",
                    ));
                }
            }
            DataSourceKind::Csv => {
                let path = self
                    .data
                    .path
                    .as_ref()
                    .ok_or_else(|| ConfigError::new("data.path", "required for csv data"))?;
                if !path.is_file() {
                    return Err(ConfigError::new(
                        "data.path",
                        format!("{} does not exist", path.display()),
                    ));
                }
                if self.data.n_features.unwrap_or(0) == 0 {
                    return Err(ConfigError::new("data.n_features", "required for csv data"));
                }
                if self.data.n_classes.unwrap_or(0) < 2 {
                    return Err(ConfigError::new("data.n_classes", "required for csv data (at least 2)"));
                }
            }
        }
        Ok(())
    }
}
