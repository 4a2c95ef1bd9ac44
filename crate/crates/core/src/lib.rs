//! Layer-parallel training of ODE residual networks.
//!
//! A residual network `u^{n+1} = u^n + h σ(W_n u^n + b_n)` is treated as the
//! explicit Euler discretization of a controlled ODE. Forward propagation and
//! adjoint backpropagation can be computed either serially ([`serial`]) or by
//! a nonlinear multigrid-in-time solver ([`mgrit`]) that updates all layers
//! at once and converges to the serial result. Deep networks are initialized
//! by nested iteration ([`nested`]): train a shallow network, interpolate its
//! controls onto a grid with twice as many layers, and repeat.
//!
//! The crate is `no_std` (it needs `alloc`). Parallelism and wall-clock time
//! are injected through the [`exec::Executor`] and [`exec::Clock`] traits so
//! the host decides how work is scheduled and measured.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod mgrit;
pub mod nested;
pub mod network;
pub mod optimizer;
pub mod serial;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use linalg::Matrix;
