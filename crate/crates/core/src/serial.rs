//! Layer-serial forward propagation and exact discrete adjoint.
//!
//! This is the reference the multigrid solver converges to, and the solver
//! used on the coarsest multigrid level.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{
    batch_loss, batch_loss_and_grad, layer_step_batch, layer_vjp_batch, logits, open_batch,
    regularizer_and_grad, Batch, ControlTrajectory, Hyperparameters,
};

/// Network states `u^0 … u^N` for a batch on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub states: Vec<Matrix>,
    pub h: f64,
}

impl StateTrajectory {
    pub fn layers(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &Matrix {
        self.states.last().expect("trajectory has at least u^0")
    }

    pub fn max_abs_diff(&self, other: &StateTrajectory) -> f64 {
        assert_eq!(self.states.len(), other.states.len(), "length mismatch");
        self.states
            .iter()
            .zip(&other.states)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }
}

/// Co-states `λ^0 … λ^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub costates: Vec<Matrix>,
}

impl AdjointTrajectory {
    pub fn max_abs_diff(&self, other: &AdjointTrajectory) -> f64 {
        assert_eq!(self.costates.len(), other.costates.len(), "length mismatch");
        self.costates
            .iter()
            .zip(&other.costates)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }
}

pub fn forward_serial(
    theta: &ControlTrajectory,
    batch: &Batch,
    hyper: &Hyperparameters,
) -> Result<StateTrajectory> {
    let h = theta.shape.h;
    let mut states = Vec::with_capacity(theta.layers.len() + 1);
    states.push(open_batch(&batch.features, &theta.w_in));
    for (n, layer) in theta.layers.iter().enumerate() {
        let mut next = Matrix::zeros(batch.len(), theta.shape.width);
        layer_step_batch(&states[n], layer, h, hyper.eps_relu, &mut next);
        if !next.is_finite() {
            return Err(Error::ForwardBlowUp { layer: n + 1 });
        }
        states.push(next);
    }
    Ok(StateTrajectory { states, h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    pub adjoint: AdjointTrajectory,
    /// Gradient of the full objective, regularizer included.
    pub grad: ControlTrajectory,
    /// Batch-mean data loss at `u^N`.
    pub loss: f64,
}

pub fn backward_serial(
    theta: &ControlTrajectory,
    states: &StateTrajectory,
    batch: &Batch,
    hyper: &Hyperparameters,
) -> Result<Backward> {
    let n_layers = theta.layers.len();
    let h = theta.shape.h;
    let seed = batch_loss_and_grad(states.last(), &batch.labels, &theta.w_out, &theta.b_out)?;

    let (_, mut grad) = regularizer_and_grad(theta, hyper);
    grad.w_out.axpy(1.0, &seed.d_w_out);
    for (g, d) in grad.b_out.iter_mut().zip(&seed.d_b_out) {
        *g += d;
    }

    let mut costates = alloc::vec![Matrix::zeros(0, 0); n_layers + 1];
    costates[n_layers] = seed.d_u;
    for n in (0..n_layers).rev() {
        let mut lam = Matrix::zeros(batch.len(), theta.shape.width);
        layer_vjp_batch(
            &states.states[n],
            &theta.layers[n],
            h,
            hyper.eps_relu,
            &costates[n + 1],
            &mut lam,
            &mut grad.layers[n],
        );
        if !lam.is_finite() {
            return Err(Error::AdjointBlowUp { layer: n });
        }
        costates[n] = lam;
    }
    // u^0 = Y W_inᵀ, so ∂/∂W_in = Λ^0ᵀ Y
    crate::linalg::matmul_tn_acc(1.0, &costates[0], &batch.features, &mut grad.w_in);

    Ok(Backward {
        adjoint: AdjointTrajectory { costates },
        grad,
        loss: seed.loss,
    })
}

/// Batch-mean loss at the final state plus the regularizer.
pub fn objective(
    theta: &ControlTrajectory,
    batch: &Batch,
    hyper: &Hyperparameters,
) -> Result<f64> {
    let states = forward_serial(theta, batch, hyper)?;
    objective_from_states(theta, &states, batch, hyper)
}

/// Objective evaluated from (possibly inexact) states.
pub fn objective_from_states(
    theta: &ControlTrajectory,
    states: &StateTrajectory,
    batch: &Batch,
    hyper: &Hyperparameters,
) -> Result<f64> {
    let loss = batch_loss(states.last(), &batch.labels, &theta.w_out, &theta.b_out)?;
    Ok(loss + regularizer_and_grad(theta, hyper).0)
}

/// Classifier logits after serial propagation.
pub fn predict(
    theta: &ControlTrajectory,
    batch: &Batch,
    hyper: &Hyperparameters,
) -> Result<Matrix> {
    let states = forward_serial(theta, batch, hyper)?;
    Ok(logits(states.last(), &theta.w_out, &theta.b_out))
}
