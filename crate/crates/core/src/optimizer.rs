//! One-shot training: every optimization iteration runs `d` multigrid cycles
//! for the states and the adjoint, then takes a steepest-descent step with
//! Armijo backtracking on the resulting inexact gradient.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Clock, Executor};
use crate::mgrit::{
    solve_backward, solve_forward, Budget, MgritConfig, MgritStatus, MultigridHierarchy,
};
use crate::nested::{d_for_iteration, init_controls, BudgetPolicy, Interpolation};
use crate::network::{
    accuracy, logits, Batch, ControlTrajectory, Hyperparameters, NetworkShape,
};
use crate::serial::{self, AdjointTrajectory, StateTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    Nested,
    NonNested,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub step_init: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Early-stop tolerance for the inner solves, on top of the `d` budget.
    pub rel_tol_mgrit: Option<f64>,
    pub mode: TrainingMode,
    /// Evaluate line-search trials by serial propagation instead of a
    /// `d`-cycle warm-started solve.
    pub serial_line_search: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_init: 1.0,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 20,
            rel_tol_mgrit: None,
            mode: TrainingMode::Nested,
            serial_line_search: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(alloc::format!("optimizer.{what}")));
        if !(self.step_init.is_finite() && self.step_init > 0.0) {
            return bad("step_init must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if let Some(tol) = self.rel_tol_mgrit {
            if !(tol.is_finite() && tol > 0.0) {
                return bad("rel_tol_mgrit must be positive");
            }
        }
        Ok(())
    }
}

/// Outcome of a backtracking line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    /// Accepted step, zero on a stall.
    pub step: f64,
    /// Objective at the accepted point, or `f0` on a stall.
    pub value: f64,
    /// Rejected trials before acceptance.
    pub backtracks: usize,
    pub stalled: bool,
}

/// Tries `α = step_init, step_init·shrink, …` (at most `max_backtracks + 1`
/// trials) and accepts the first with `f(α) ≤ f0 − armijo_c·α·‖g‖²`.
///
/// `eval` returns the trial objective and any data to keep for the accepted
/// trial. Trials whose evaluation blows up count as rejected.
pub fn armijo_backtrack<T>(
    f0: f64,
    grad_norm_sq: f64,
    config: &OptimizerConfig,
    mut eval: impl FnMut(f64) -> Result<(f64, T)>,
) -> Result<(LineSearch, Option<T>)> {
    let mut alpha = config.step_init;
    for trial in 0..=config.max_backtracks {
        match eval(alpha) {
            Ok((value, data)) => {
                if sufficient_decrease(f0, value, alpha, grad_norm_sq, config.armijo_c) {
                    let ls = LineSearch {
                        step: alpha,
                        value,
                        backtracks: trial,
                        stalled: false,
                    };
                    return Ok((ls, Some(data)));
                }
            }
            Err(Error::ForwardBlowUp { .. } | Error::RelaxationBlowUp { .. } | Error::LossOverflow) => {}
            Err(e) => return Err(e),
        }
        alpha *= config.shrink;
    }
    let ls = LineSearch {
        step: 0.0,
        value: f0,
        backtracks: config.max_backtracks + 1,
        stalled: true,
    };
    Ok((ls, None))
}

/// The Armijo test as applied by the line search, for re-checking logs.
pub fn sufficient_decrease(f0: f64, value: f64, step: f64, grad_norm_sq: f64, c: f64) -> bool {
    value <= f0 - c * step * grad_norm_sq
}

/// Per-iteration log entry. Wall-clock dependent fields are `work_units`
/// and `wall_seconds`; everything else is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Index within the nested level, starting at 0.
    pub iteration: usize,
    pub level: usize,
    /// Cumulative training cost in work units.
    pub work_units: f64,
    /// Objective at the start of the iteration, from the inexact states.
    pub objective: f64,
    /// Accuracy on the training batch at the updated controls.
    pub train_acc: f64,
    /// Accuracy on the validation set at the updated controls, by serial
    /// propagation. NaN when there is no validation data.
    pub val_acc: f64,
    pub d_used: usize,
    /// Final relative residual of the forward solve.
    pub fwd_residual: f64,
    /// Final relative residual of the adjoint solve.
    pub bwd_residual: f64,
    pub step_size: f64,
    /// Cumulative training time in seconds.
    pub wall_seconds: f64,
    pub layers: usize,
    pub grad_norm: f64,
    /// Objective at the accepted trial.
    pub objective_after: f64,
    pub backtracks: usize,
    pub stalled: bool,
    pub fwd_iters: usize,
    pub bwd_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementEvent {
    /// Number of records logged before the refinement.
    pub after_record: usize,
    pub from_level: usize,
    pub to_level: usize,
    /// Residual layers after refinement.
    pub layers: usize,
    pub interpolation: Interpolation,
    /// Cumulative training time at the end of the refinement.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
    pub events: Vec<RefinementEvent>,
    pub seconds_per_unit: f64,
    /// Training time accumulated so far.
    pub elapsed_seconds: f64,
}

impl TrainingLog {
    pub fn new(seconds_per_unit: f64) -> Self {
        Self {
            records: Vec::new(),
            events: Vec::new(),
            seconds_per_unit,
            elapsed_seconds: 0.0,
        }
    }

    pub fn total_work_units(&self) -> f64 {
        self.elapsed_seconds / self.seconds_per_unit
    }
}

/// Previous solutions used to start the next solves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub states: Option<StateTrajectory>,
    pub adjoint: Option<AdjointTrajectory>,
}

/// Which solve a status belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    Forward,
    Adjoint,
    LineSearch,
}

/// Receives the status of every multigrid solve.
pub trait SolveObserver {
    fn on_solve(&self, kind: SolveKind, status: &MgritStatus);
}

/// Result of one optimization iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub theta: ControlTrajectory,
    pub objective: f64,
    pub grad_norm: f64,
    pub line_search: LineSearch,
    pub train_acc: f64,
    pub forward: MgritStatus,
    pub adjoint: MgritStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub theta: ControlTrajectory,
    pub log: TrainingLog,
}

/// Everything an optimization run needs besides the controls.
pub struct Trainer<'a, E: Executor, C: Clock> {
    pub hyper: Hyperparameters,
    pub optimizer: OptimizerConfig,
    pub mgrit: MgritConfig,
    pub policy: BudgetPolicy,
    pub train: &'a Batch,
    pub validation: &'a Batch,
    pub exec: &'a E,
    pub clock: &'a C,
    pub seconds_per_unit: f64,
    pub observer: Option<&'a dyn SolveObserver>,
}

impl<E: Executor, C: Clock> Trainer<'_, E, C> {
    fn observe(&self, kind: SolveKind, status: &MgritStatus) {
        if let Some(o) = self.observer {
            o.on_solve(kind, status);
        }
    }

    fn budget(&self, d: usize) -> Budget {
        Budget {
            max_iters: d,
            rel_tol: self.optimizer.rel_tol_mgrit,
        }
    }

    /// Forward and adjoint solves with `d` cycles each, then one Armijo step
    /// along the negative gradient. `warm` is read for the starting guesses
    /// and replaced by the solutions that belong to the returned controls.
    pub fn one_shot_step(
        &self,
        theta: &ControlTrajectory,
        hierarchy: &MultigridHierarchy,
        d: usize,
        warm: &mut WarmStart,
    ) -> Result<Step> {
        let budget = self.budget(d);
        let batch = self.train;
        let (states, forward) = solve_forward(
            theta,
            batch,
            &self.hyper,
            hierarchy,
            self.exec,
            budget,
            warm.states.as_ref(),
        )?;
        self.observe(SolveKind::Forward, &forward);
        let objective = serial::objective_from_states(theta, &states, batch, &self.hyper)?;
        let back = solve_backward(
            theta,
            &states,
            batch,
            &self.hyper,
            hierarchy,
            self.exec,
            budget,
            warm.adjoint.as_ref(),
        )?;
        self.observe(SolveKind::Adjoint, &back.status);
        let grad = back.grad;
        let grad_norm_sq = grad.norm_sq();

        let (line_search, accepted) = if grad_norm_sq == 0.0 {
            let ls = LineSearch {
                step: 0.0,
                value: objective,
                backtracks: 0,
                stalled: false,
            };
            (ls, None)
        } else {
            armijo_backtrack(objective, grad_norm_sq, &self.optimizer, |alpha| {
                let mut trial = theta.clone();
                trial.axpy(-alpha, &grad);
                let trial_states = if self.optimizer.serial_line_search {
                    serial::forward_serial(&trial, batch, &self.hyper)?
                } else {
                    let (st, status) = solve_forward(
                        &trial,
                        batch,
                        &self.hyper,
                        hierarchy,
                        self.exec,
                        budget,
                        Some(&states),
                    )?;
                    self.observe(SolveKind::LineSearch, &status);
                    st
                };
                let value =
                    serial::objective_from_states(&trial, &trial_states, batch, &self.hyper)?;
                Ok((value, (trial, trial_states)))
            })?
        };

        let (theta_next, states_next) = match accepted {
            Some(pair) => pair,
            None => (theta.clone(), states),
        };
        let train_acc = accuracy(
            &logits(states_next.last(), &theta_next.w_out, &theta_next.b_out),
            &batch.labels,
        )
        .unwrap_or(f64::NAN);
        warm.states = Some(states_next);
        warm.adjoint = Some(back.adjoint);
        Ok(Step {
            theta: theta_next,
            objective,
            grad_norm: libm::sqrt(grad_norm_sq),
            line_search,
            train_acc,
            forward,
            adjoint: back.status,
        })
    }

    /// Validation accuracy by serial propagation; NaN for an empty set.
    pub fn validation_accuracy(&self, theta: &ControlTrajectory) -> Result<f64> {
        if self.validation.is_empty() {
            return Ok(f64::NAN);
        }
        let z = serial::predict(theta, self.validation, &self.hyper)?;
        accuracy(&z, &self.validation.labels)
    }

    /// `iterations` one-shot steps on one grid, with `d` from the budget
    /// policy. `since_refinement` is the number of iterations already taken
    /// since the last interpolation, `None` before any.
    pub fn train_level(
        &self,
        mut theta: ControlTrajectory,
        iterations: usize,
        level: usize,
        since_refinement: Option<usize>,
        warm: &mut WarmStart,
        log: &mut TrainingLog,
    ) -> Result<ControlTrajectory> {
        let hierarchy = self.mgrit.hierarchy(theta.layers.len())?;
        for k in 0..iterations {
            let d = d_for_iteration(since_refinement.map(|s| s + k), &self.policy);
            let t0 = self.clock.now();
            let step = self.one_shot_step(&theta, &hierarchy, d, warm)?;
            log.elapsed_seconds += self.clock.now() - t0;
            theta = step.theta;
            let val_acc = self.validation_accuracy(&theta)?;
            log.records.push(IterationRecord {
                iteration: k,
                level,
                work_units: log.total_work_units(),
                objective: step.objective,
                train_acc: step.train_acc,
                val_acc,
                d_used: d,
                fwd_residual: step.forward.final_relative_residual,
                bwd_residual: step.adjoint.final_relative_residual,
                step_size: step.line_search.step,
                wall_seconds: log.elapsed_seconds,
                layers: theta.layers.len(),
                grad_norm: step.grad_norm,
                objective_after: step.line_search.value,
                backtracks: step.line_search.backtracks,
                stalled: step.line_search.stalled,
                fwd_iters: step.forward.iterations_performed,
                bwd_iters: step.adjoint.iterations_performed,
            });
        }
        Ok(theta)
    }

    /// Trains directly on the finest grid from a fresh initialization.
    pub fn train_non_nested(
        &self,
        shape: NetworkShape,
        iterations: usize,
        opening_scale: f64,
        seed: u64,
    ) -> Result<Trained> {
        let theta = init_controls(shape, &self.hyper, opening_scale, seed);
        let mut log = TrainingLog::new(self.seconds_per_unit);
        let mut warm = WarmStart::default();
        let theta = self.train_level(theta, iterations, 0, None, &mut warm, &mut log)?;
        Ok(Trained { theta, log })
    }

    /// Mean wall-clock seconds of a non-nested iteration on `shape`, over
    /// `probe_iters` iterations from a fresh initialization.
    pub fn calibrate_work_unit(
        &self,
        shape: NetworkShape,
        probe_iters: usize,
        opening_scale: f64,
        seed: u64,
    ) -> Result<f64> {
        if probe_iters < 3 {
            return Err(Error::InvalidConfig("calibration needs at least 3 probe iterations".into()));
        }
        let probe = Trainer {
            seconds_per_unit: 1.0,
            observer: None,
            ..*self
        };
        let run = probe.train_non_nested(shape, probe_iters, opening_scale, seed)?;
        // a frozen clock still yields a usable positive unit
        Ok((run.log.elapsed_seconds / probe_iters as f64).max(f64::MIN_POSITIVE))
    }
}

impl<E: Executor, C: Clock> Clone for Trainer<'_, E, C> {
    fn clone(&self) -> Self {
        Self { ..*self }
    }
}

impl<E: Executor, C: Clock> Copy for Trainer<'_, E, C> {}
