//! Shared fixtures for unit tests.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::Executor;
use crate::linalg::Matrix;
use crate::network::{Batch, ControlTrajectory, NetworkShape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_theta(rng: &mut ChaCha8Rng, shape: NetworkShape, r: f64) -> ControlTrajectory {
    let n = ControlTrajectory::zeros(shape).num_params();
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(-r..r)).collect();
    ControlTrajectory::unflatten(shape, &p).unwrap()
}

/// Features in `[-range, range]`, one-hot labels cycling through the classes.
pub fn random_batch(rng: &mut ChaCha8Rng, s: usize, n_f: usize, n_c: usize, range: f64) -> Batch {
    let features = Matrix::from_fn(s, n_f, |_, _| rng.random_range(-range..range));
    let labels = Matrix::from_fn(s, n_c, |k, j| if j == k % n_c { 1.0 } else { 0.0 });
    Batch::new(features, labels, (0..s).collect()).unwrap()
}

/// Runs items back to front, to expose any dependence on scheduling order.
pub struct Reversed;

impl Executor for Reversed {
    fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        for (i, item) in items.iter_mut().enumerate().rev() {
            f(i, item);
        }
    }

    fn workers(&self) -> usize {
        2
    }
}
