use alloc::vec::Vec;

use super::{solve, Budget, MgritStatus, MultigridHierarchy, Propagator};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::linalg::{matmul_tn_acc, Matrix};
use crate::network::{
    accumulate_layer_grad, activation_slopes, adjoint_step, batch_loss_and_grad,
    layer_step_batch, open_batch, regularizer_and_grad, Batch, ControlTrajectory,
    Hyperparameters,
};
use crate::serial::{AdjointTrajectory, StateTrajectory};

/// Injects controls onto the next coarser grid: coarse layer `n` takes fine
/// layer `c n`. Opening and classification blocks are shared.
pub fn restrict_controls(theta: &ControlTrajectory, c: usize) -> ControlTrajectory {
    let n = theta.layers.len();
    assert!(c >= 1 && n % c == 0, "{n} layers cannot be coarsened by {c}");
    let mut shape = theta.shape;
    shape.layers = n / c;
    shape.h = theta.shape.h * c as f64;
    ControlTrajectory {
        w_in: theta.w_in.clone(),
        layers: theta.layers.iter().step_by(c).cloned().collect(),
        w_out: theta.w_out.clone(),
        b_out: theta.b_out.clone(),
        shape,
    }
}

/// `Φ_{h_l}(u, θ^l_{n-1})` with the controls injected onto each level.
pub struct ForwardPropagator {
    levels: Vec<ControlTrajectory>,
    eps: f64,
}

impl ForwardPropagator {
    pub fn new(theta: &ControlTrajectory, hierarchy: &MultigridHierarchy, eps: f64) -> Self {
        let mut levels = Vec::with_capacity(hierarchy.num_levels());
        levels.push(theta.clone());
        for _ in 1..hierarchy.num_levels() {
            let next = restrict_controls(levels.last().unwrap(), hierarchy.c());
            levels.push(next);
        }
        Self { levels, eps }
    }
}

impl Propagator for ForwardPropagator {
    fn step(&self, level: usize, n: usize, input: &Matrix, out: &mut Matrix) {
        let theta = &self.levels[level];
        layer_step_batch(input, &theta.layers[n - 1], theta.shape.h, self.eps, out);
    }
}

/// Transposed state Jacobians of the forward steps, in reversed time.
///
/// Solver point `k` on level `l` is layer `m = N_l - k`, which is fine layer
/// `m c^l`; the linearization uses the frozen fine state there, so the
/// activation slopes of the finest layers serve every level.
pub struct AdjointPropagator<'a> {
    theta: &'a ControlTrajectory,
    slopes: Vec<Matrix>,
    strides: Vec<usize>,
}

impl<'a> AdjointPropagator<'a> {
    pub fn new<E: Executor>(
        theta: &'a ControlTrajectory,
        states: &StateTrajectory,
        hierarchy: &MultigridHierarchy,
        eps: f64,
        exec: &E,
    ) -> Self {
        let mut slopes: Vec<(usize, Matrix)> = (0..theta.layers.len())
            .map(|n| (n, Matrix::zeros(0, 0)))
            .collect();
        exec.for_each_mut(&mut slopes, |_, (n, out)| {
            *out = activation_slopes(&states.states[*n], &theta.layers[*n], eps);
        });
        Self::from_slopes(theta, slopes.into_iter().map(|(_, s)| s).collect(), hierarchy)
    }

    /// Builds the propagator from precomputed activation slopes `σ'(W_n u_n + b_n)`.
    pub fn from_slopes(
        theta: &'a ControlTrajectory,
        slopes: Vec<Matrix>,
        hierarchy: &MultigridHierarchy,
    ) -> Self {
        assert_eq!(slopes.len(), theta.layers.len(), "one slope matrix per layer");
        Self {
            theta,
            slopes,
            strides: hierarchy.levels().iter().map(|g| g.stride).collect(),
        }
    }

    pub fn slopes(&self) -> &[Matrix] {
        &self.slopes
    }
}

impl Propagator for AdjointPropagator<'_> {
    fn step(&self, level: usize, k: usize, input: &Matrix, out: &mut Matrix) {
        let stride = self.strides[level];
        let n_level = self.theta.layers.len() / stride;
        let fine = (n_level - k) * stride;
        let h = self.theta.shape.h * stride as f64;
        let mut scratch = Matrix::zeros(input.rows(), input.cols());
        adjoint_step(
            &self.slopes[fine],
            &self.theta.layers[fine],
            h,
            input,
            &mut scratch,
            out,
        );
    }
}

fn check_grid(theta: &ControlTrajectory, hierarchy: &MultigridHierarchy) -> Result<()> {
    if hierarchy.finest().intervals != theta.layers.len() {
        return Err(Error::InvalidShape(alloc::format!(
            "hierarchy has {} intervals but the network has {} layers",
            hierarchy.finest().intervals,
            theta.layers.len()
        )));
    }
    Ok(())
}

/// Layer-parallel forward propagation.
///
/// Without a warm start every unknown state is initialized to `u^0`.
pub fn solve_forward<E: Executor>(
    theta: &ControlTrajectory,
    batch: &Batch,
    hyper: &Hyperparameters,
    hierarchy: &MultigridHierarchy,
    exec: &E,
    budget: Budget,
    warm_start: Option<&StateTrajectory>,
) -> Result<(StateTrajectory, MgritStatus)> {
    check_grid(theta, hierarchy)?;
    let u0 = open_batch(&batch.features, &theta.w_in);
    let mut states = match warm_start {
        Some(w) => {
            assert_eq!(w.states.len(), theta.layers.len() + 1, "warm start length mismatch");
            w.states.clone()
        }
        None => alloc::vec![u0.clone(); theta.layers.len() + 1],
    };
    states[0] = u0;
    let prop = ForwardPropagator::new(theta, hierarchy, hyper.eps_relu);
    let (states, status) = solve(hierarchy, &prop, exec, states, budget)?;
    Ok((
        StateTrajectory {
            states,
            h: theta.shape.h,
        },
        status,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolve {
    pub adjoint: AdjointTrajectory,
    /// Gradient of the full objective, regularizer included.
    pub grad: ControlTrajectory,
    /// Batch-mean data loss at the final state.
    pub loss: f64,
    pub status: MgritStatus,
}

/// Layer-parallel adjoint solve and gradient assembly on frozen states.
pub fn solve_backward<E: Executor>(
    theta: &ControlTrajectory,
    states: &StateTrajectory,
    batch: &Batch,
    hyper: &Hyperparameters,
    hierarchy: &MultigridHierarchy,
    exec: &E,
    budget: Budget,
    warm_start: Option<&AdjointTrajectory>,
) -> Result<BackwardSolve> {
    check_grid(theta, hierarchy)?;
    let n_layers = theta.layers.len();
    let seed = batch_loss_and_grad(states.last(), &batch.labels, &theta.w_out, &theta.b_out)?;

    // solver point k holds λ^{N-k}
    let mut reversed: Vec<Matrix> = match warm_start {
        Some(w) => {
            assert_eq!(w.costates.len(), n_layers + 1, "warm start length mismatch");
            w.costates.iter().rev().cloned().collect()
        }
        None => alloc::vec![seed.d_u.clone(); n_layers + 1],
    };
    reversed[0] = seed.d_u.clone();

    let prop = AdjointPropagator::new(theta, states, hierarchy, hyper.eps_relu, exec);
    let (reversed, status) = solve(hierarchy, &prop, exec, reversed, budget)
        .map_err(|e| match e {
            Error::RelaxationBlowUp { level, layer } => {
                let grid = hierarchy.levels()[level];
                Error::AdjointBlowUp {
                    layer: (grid.intervals - layer) * grid.stride,
                }
            }
            other => other,
        })?;
    let costates: Vec<Matrix> = reversed.into_iter().rev().collect();

    let (_, mut grad) = regularizer_and_grad(theta, hyper);
    grad.w_out.axpy(1.0, &seed.d_w_out);
    for (g, d) in grad.b_out.iter_mut().zip(&seed.d_b_out) {
        *g += d;
    }
    let h = theta.shape.h;
    let slopes = prop.slopes();
    exec.for_each_mut(&mut grad.layers, |n, layer_grad| {
        let lam = &costates[n + 1];
        let mut scratch = Matrix::zeros(lam.rows(), lam.cols());
        accumulate_layer_grad(&slopes[n], &states.states[n], h, lam, &mut scratch, layer_grad);
    });
    matmul_tn_acc(1.0, &costates[0], &batch.features, &mut grad.w_in);

    Ok(BackwardSolve {
        adjoint: AdjointTrajectory { costates },
        grad,
        loss: seed.loss,
        status,
    })
}
