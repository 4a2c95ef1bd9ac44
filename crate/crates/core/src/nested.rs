//! Nested iteration: train a shallow network, interpolate its controls onto a
//! grid with twice as many layers, and continue training there.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{Clock, Executor};
use crate::linalg::Matrix;
use crate::network::{ControlTrajectory, Hyperparameters, Layer, NetworkShape};
use crate::optimizer::{RefinementEvent, Trained, Trainer, TrainingLog, WarmStart};
use crate::serial::{AdjointTrajectory, StateTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Constant,
    Linear,
}

/// Multigrid iterations per solve as a function of the distance to the last
/// refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetPolicy {
    pub d_post_refine: usize,
    pub post_refine_span: usize,
    pub d_steady: usize,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        Self {
            d_post_refine: 10,
            post_refine_span: 3,
            d_steady: 2,
        }
    }
}

/// `d_post_refine` for the first `post_refine_span` iterations after an
/// interpolation, `d_steady` otherwise (and before the first refinement).
pub fn d_for_iteration(iters_since_refinement: Option<usize>, policy: &BudgetPolicy) -> usize {
    match iters_since_refinement {
        Some(k) if k < policy.post_refine_span => policy.d_post_refine,
        _ => policy.d_steady,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedSchedule {
    /// Number of nested levels `L`.
    pub levels: usize,
    /// Residual layers on the coarsest level `L - 1`.
    pub n_coarsest: usize,
    /// Optimization iterations per level, coarsest first.
    pub iterations: Vec<usize>,
    pub interpolation: Interpolation,
    pub policy: BudgetPolicy,
}

impl NestedSchedule {
    pub fn new(
        levels: usize,
        n_coarsest: usize,
        iterations: Vec<usize>,
        interpolation: Interpolation,
        policy: BudgetPolicy,
    ) -> Result<Self> {
        let s = Self {
            levels,
            n_coarsest,
            iterations,
            interpolation,
            policy,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.levels == 0 {
            return bad("nested.levels must be at least 1");
        }
        if self.n_coarsest == 0 {
            return bad("nested.n_coarsest must be at least 1");
        }
        if self.iterations.len() != self.levels {
            return Err(Error::InvalidConfig(alloc::format!(
                "nested.iterations has {} entries for {} levels",
                self.iterations.len(),
                self.levels
            )));
        }
        if self.iterations.iter().any(|&m| m == 0) {
            return bad("nested.iterations entries must be at least 1");
        }
        let p = &self.policy;
        if p.d_steady == 0 || p.d_post_refine < p.d_steady {
            return bad("need d_post_refine >= d_steady >= 1");
        }
        if self.levels > 1 && self.n_coarsest.checked_shl(self.levels as u32 - 1).is_none() {
            return bad("nested.levels too large");
        }
        Ok(())
    }

    /// Residual layers on nested level `level` (0 is finest).
    pub fn layers_at(&self, level: usize) -> usize {
        self.n_coarsest << (self.levels - 1 - level)
    }

    pub fn finest_layers(&self) -> usize {
        self.layers_at(0)
    }

    /// Iterations on nested level `level`.
    pub fn iterations_at(&self, level: usize) -> usize {
        self.iterations[self.levels - 1 - level]
    }

    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }
}

fn refined(theta: &ControlTrajectory, layers: Vec<Layer>) -> ControlTrajectory {
    let shape = theta.shape.with_layers(layers.len());
    ControlTrajectory {
        w_in: theta.w_in.clone(),
        layers,
        w_out: theta.w_out.clone(),
        b_out: theta.b_out.clone(),
        shape,
    }
}

/// Fine layers `2n` and `2n + 1` both take coarse layer `n`.
pub fn interpolate_constant(theta: &ControlTrajectory) -> ControlTrajectory {
    let layers = theta
        .layers
        .iter()
        .flat_map(|l| [l.clone(), l.clone()])
        .collect();
    refined(theta, layers)
}

fn midpoint(a: &Layer, b: &Layer) -> Layer {
    let avg = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect()
    };
    Layer {
        w: Matrix::from_vec(a.w.rows(), a.w.cols(), avg(a.w.as_slice(), b.w.as_slice())),
        b: avg(&a.b, &b.b),
    }
}

/// Fine layer `2n` takes coarse layer `n`; layer `2n + 1` the midpoint of
/// coarse layers `n` and `n + 1`, or a copy of the last coarse layer.
pub fn interpolate_linear(theta: &ControlTrajectory) -> ControlTrajectory {
    let n = theta.layers.len();
    let mut layers = Vec::with_capacity(2 * n);
    for (i, l) in theta.layers.iter().enumerate() {
        layers.push(l.clone());
        layers.push(match theta.layers.get(i + 1) {
            Some(next) => midpoint(l, next),
            None => l.clone(),
        });
    }
    refined(theta, layers)
}

pub fn interpolate(theta: &ControlTrajectory, mode: Interpolation) -> ControlTrajectory {
    match mode {
        Interpolation::Constant => interpolate_constant(theta),
        Interpolation::Linear => interpolate_linear(theta),
    }
}

/// Fine point `k` of the doubled grid takes coarse point `⌊k / 2⌋`.
fn refine_points(points: &[Matrix]) -> Vec<Matrix> {
    let n = points.len() - 1;
    (0..=2 * n).map(|k| points[k / 2].clone()).collect()
}

/// Piecewise-constant transfer of warm-start data to the refined grid.
pub fn interpolate_warm_start(warm: &WarmStart) -> WarmStart {
    WarmStart {
        states: warm.states.as_ref().map(|s| StateTrajectory {
            states: refine_points(&s.states),
            h: s.h / 2.0,
        }),
        adjoint: warm.adjoint.as_ref().map(|a| AdjointTrajectory {
            costates: refine_points(&a.costates),
        }),
    }
}

/// `1/√w`, the default range of the opening and classification weights.
pub fn default_opening_scale(width: usize) -> f64 {
    1.0 / libm::sqrt(width as f64)
}

/// Seeded initialization with ChaCha8: first `W_in`, `W_out` and `b_out`
/// uniform in `[-opening_scale, opening_scale]`, then the internal layers
/// uniform in `[-w_i, w_i]` (exactly zero for `w_i = 0`).
pub fn init_controls(
    shape: NetworkShape,
    hyper: &Hyperparameters,
    opening_scale: f64,
    seed: u64,
) -> ControlTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: f64| r * (2.0 * rng.random::<f64>() - 1.0);
    let mut theta = ControlTrajectory::zeros(shape);
    for v in theta.w_in.as_mut_slice() {
        *v = draw(opening_scale);
    }
    for v in theta.w_out.as_mut_slice() {
        *v = draw(opening_scale);
    }
    for v in &mut theta.b_out {
        *v = draw(opening_scale);
    }
    for layer in &mut theta.layers {
        for v in layer.w.as_mut_slice() {
            *v = draw(hyper.w_i);
        }
        for v in &mut layer.b {
            *v = draw(hyper.w_i);
        }
    }
    theta
}

/// Trains on `schedule.n_coarsest` layers, then repeatedly doubles the depth
/// and continues, ending on `shape.layers` layers.
pub fn nested_train<E: Executor, C: Clock>(
    trainer: &Trainer<'_, E, C>,
    schedule: &NestedSchedule,
    shape: NetworkShape,
    opening_scale: f64,
    seed: u64,
) -> Result<Trained> {
    schedule.validate()?;
    if shape.layers != schedule.finest_layers() {
        return Err(Error::InvalidConfig(alloc::format!(
            "network has {} layers but the nested schedule ends at {}",
            shape.layers,
            schedule.finest_layers()
        )));
    }
    let top = schedule.levels - 1;
    let mut theta = init_controls(
        shape.with_layers(schedule.n_coarsest),
        &trainer.hyper,
        opening_scale,
        seed,
    );
    let mut log = TrainingLog::new(trainer.seconds_per_unit);
    let mut warm = WarmStart::default();
    let mut since = None;
    for level in (0..=top).rev() {
        theta = trainer
            .train_level(
                theta,
                schedule.iterations_at(level),
                level,
                since,
                &mut warm,
                &mut log,
            )
            .map_err(|e| e.at_level(level))?;
        if level > 0 {
            let t0 = trainer.clock.now();
            theta = interpolate(&theta, schedule.interpolation);
            warm = interpolate_warm_start(&warm);
            log.elapsed_seconds += trainer.clock.now() - t0;
            log.events.push(RefinementEvent {
                after_record: log.records.len(),
                from_level: level,
                to_level: level - 1,
                layers: theta.layers.len(),
                interpolation: schedule.interpolation,
                wall_seconds: log.elapsed_seconds,
            });
            since = Some(0);
        }
    }
    Ok(Trained { theta, log })
}
