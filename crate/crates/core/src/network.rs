//! The discrete ODE network: activation, layer propagator and its
//! derivatives, opening and classification layers, loss and regularization.
//!
//! Everything here is local math with no notion of a solver. States for a
//! batch are stored as `s_b × w` matrices, one row per sample.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn_acc, matvec, Matrix};

/// Widths, depth and time horizon of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub n_f: usize,
    pub width: usize,
    pub n_c: usize,
    /// Number of residual layers (time steps).
    pub layers: usize,
    pub t_final: f64,
    pub h: f64,
}

impl NetworkShape {
    pub fn new(n_f: usize, width: usize, n_c: usize, layers: usize, t_final: f64) -> Result<Self> {
        if n_f == 0 || width == 0 {
            return Err(Error::InvalidShape("feature dimension and width must be positive".into()));
        }
        if n_c < 2 {
            return Err(Error::InvalidShape(format!("need at least 2 classes, got {n_c}")));
        }
        if layers == 0 {
            return Err(Error::InvalidShape("need at least one residual layer".into()));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidShape(format!("final time must be positive, got {t_final}")));
        }
        Ok(Self {
            n_f,
            width,
            n_c,
            layers,
            t_final,
            h: t_final / layers as f64,
        })
    }

    /// A network with no residual layers: opening map followed directly by
    /// the classifier. `t_final` and `h` are zero.
    pub fn without_layers(n_f: usize, width: usize, n_c: usize) -> Self {
        Self {
            n_f,
            width,
            n_c,
            layers: 0,
            t_final: 0.0,
            h: 0.0,
        }
    }

    /// Same widths and horizon with `layers` steps.
    pub fn with_layers(&self, layers: usize) -> Self {
        Self {
            layers,
            h: self.t_final / layers as f64,
            ..*self
        }
    }
}

/// Weights and bias of one residual layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(width: usize) -> Self {
        Self {
            w: Matrix::zeros(width, width),
            b: vec![0.0; width],
        }
    }

    fn norm_sq(&self) -> f64 {
        self.w.norm_sq() + self.b.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn axpy(&mut self, alpha: f64, other: &Layer) {
        self.w.axpy(alpha, &other.w);
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += alpha * b;
        }
    }

    fn dist_sq(&self, other: &Layer) -> f64 {
        self.w.dist_sq(&other.w)
            + self
                .b
                .iter()
                .zip(&other.b)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
    }
}

/// All trainable parameters, with the internal layers pinned to a time grid.
///
/// Also used for gradients, which share the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub w_in: Matrix,
    pub layers: Vec<Layer>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
    pub shape: NetworkShape,
}

impl ControlTrajectory {
    pub fn zeros(shape: NetworkShape) -> Self {
        Self {
            w_in: Matrix::zeros(shape.width, shape.n_f),
            layers: (0..shape.layers).map(|_| Layer::zeros(shape.width)).collect(),
            w_out: Matrix::zeros(shape.n_c, shape.width),
            b_out: vec![0.0; shape.n_c],
            shape,
        }
    }

    pub fn num_params(&self) -> usize {
        let w = self.shape.width;
        w * self.shape.n_f + self.layers.len() * (w * w + w) + self.shape.n_c * w + self.shape.n_c
    }

    /// Parameters in field order: `W_in`, then `W_n, b_n` per layer, then
    /// `W_out`, `b_out`. Matrices are row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w_in.as_slice());
        for layer in &self.layers {
            out.extend_from_slice(layer.w.as_slice());
            out.extend_from_slice(&layer.b);
        }
        out.extend_from_slice(self.w_out.as_slice());
        out.extend_from_slice(&self.b_out);
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(shape: NetworkShape, params: &[f64]) -> Result<Self> {
        let mut theta = Self::zeros(shape);
        if params.len() != theta.num_params() {
            return Err(Error::InvalidShape(format!(
                "expected {} parameters, got {}",
                theta.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(theta.w_in.as_mut_slice());
        for layer in &mut theta.layers {
            take(layer.w.as_mut_slice());
            take(&mut layer.b);
        }
        take(theta.w_out.as_mut_slice());
        take(&mut theta.b_out);
        Ok(theta)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ControlTrajectory) {
        assert_eq!(self.layers.len(), other.layers.len(), "layer count mismatch");
        self.w_in.axpy(alpha, &other.w_in);
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.axpy(alpha, b);
        }
        self.w_out.axpy(alpha, &other.w_out);
        for (a, b) in self.b_out.iter_mut().zip(&other.b_out) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.w_in.scale(alpha);
        for layer in &mut self.layers {
            layer.w.scale(alpha);
            layer.b.iter_mut().for_each(|x| *x *= alpha);
        }
        self.w_out.scale(alpha);
        self.b_out.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn dot(&self, other: &ControlTrajectory) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten().iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.w_in.norm_sq()
            + self.layers.iter().map(Layer::norm_sq).sum::<f64>()
            + self.w_out.norm_sq()
            + self.b_out.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &ControlTrajectory) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten().iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

/// Features and probability-vector labels, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Matrix,
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Matrix, ids: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.rows() || ids.len() != features.rows() {
            return Err(Error::InvalidShape(format!(
                "batch has {} feature rows, {} label rows and {} ids",
                features.rows(),
                labels.rows(),
                ids.len()
            )));
        }
        for k in 0..labels.rows() {
            let row = labels.row(k);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&c| !(c >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidShape(format!(
                    "label row {k} is not a probability vector"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Magnitude of the uniform initialization of internal layers.
    pub w_i: f64,
    /// Tikhonov coefficient.
    pub gamma_tik: f64,
    /// Coefficient of the penalty on differences between consecutive layers.
    pub gamma_ddt: f64,
    /// Half-width of the quadratic smoothing of ReLU around zero.
    pub eps_relu: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            w_i: 0.0,
            gamma_tik: 0.0,
            gamma_ddt: 0.0,
            eps_relu: 0.1,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.w_i) && ok(self.gamma_tik) && ok(self.gamma_ddt)) {
            return Err(Error::InvalidConfig(
                "hyperparameters must be finite and nonnegative".into(),
            ));
        }
        if !(self.eps_relu.is_finite() && self.eps_relu > 0.0) {
            return Err(Error::InvalidConfig("eps_relu must be positive".into()));
        }
        Ok(())
    }
}

/// ReLU with a quadratic C¹ blend on `[-eps, eps]`.
#[inline]
pub fn activation(x: f64, eps: f64) -> f64 {
    if x <= -eps {
        0.0
    } else if x >= eps {
        x
    } else {
        (x + eps) * (x + eps) / (4.0 * eps)
    }
}

#[inline]
pub fn activation_deriv(x: f64, eps: f64) -> f64 {
    if x <= -eps {
        0.0
    } else if x >= eps {
        1.0
    } else {
        (x + eps) / (2.0 * eps)
    }
}

/// `out = U W^T + b`, one row per sample.
pub fn preactivation(u: &Matrix, layer: &Layer, out: &mut Matrix) {
    matmul_nt(u, &layer.w, out);
    for k in 0..out.rows() {
        for (z, b) in out.row_mut(k).iter_mut().zip(&layer.b) {
            *z += b;
        }
    }
}

/// Applies `u + h σ(W u + b)` to every row of `u`, writing into `out`.
pub fn layer_step_batch(u: &Matrix, layer: &Layer, h: f64, eps: f64, out: &mut Matrix) {
    preactivation(u, layer, out);
    for (o, x) in out.as_mut_slice().iter_mut().zip(u.as_slice()) {
        *o = x + h * activation(*o, eps);
    }
}

pub fn layer_step(u: &[f64], layer: &Layer, h: f64, eps: f64) -> Vec<f64> {
    let um = Matrix::from_vec(1, u.len(), u.to_vec());
    let mut out = Matrix::zeros(1, layer.b.len());
    layer_step_batch(&um, layer, h, eps, &mut out);
    out.into_vec()
}

/// `σ'(W u + b)` for every row of `u`.
pub fn activation_slopes(u: &Matrix, layer: &Layer, eps: f64) -> Matrix {
    let mut z = Matrix::zeros(u.rows(), layer.b.len());
    preactivation(u, layer, &mut z);
    z.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = activation_deriv(*x, eps));
    z
}

/// Transposed state Jacobian applied to `lam`:
/// `out = lam + h (slopes ⊙ lam) W`.
///
/// `scratch` receives `slopes ⊙ lam`.
pub fn adjoint_step(
    slopes: &Matrix,
    layer: &Layer,
    h: f64,
    lam: &Matrix,
    scratch: &mut Matrix,
    out: &mut Matrix,
) {
    for ((g, s), l) in scratch
        .as_mut_slice()
        .iter_mut()
        .zip(slopes.as_slice())
        .zip(lam.as_slice())
    {
        *g = s * l;
    }
    matmul_nn(scratch, &layer.w, out);
    for (o, l) in out.as_mut_slice().iter_mut().zip(lam.as_slice()) {
        *o = l + h * *o;
    }
}

/// Adds the parameter part of the layer VJP, `h Gᵀ U` and `h Σ_k G_k` with
/// `G = slopes ⊙ lam`, to `grad`. Rows are reduced in index order.
pub fn accumulate_layer_grad(
    slopes: &Matrix,
    u: &Matrix,
    h: f64,
    lam: &Matrix,
    scratch: &mut Matrix,
    grad: &mut Layer,
) {
    for ((g, s), l) in scratch
        .as_mut_slice()
        .iter_mut()
        .zip(slopes.as_slice())
        .zip(lam.as_slice())
    {
        *g = s * l;
    }
    matmul_tn_acc(h, scratch, u, &mut grad.w);
    for k in 0..scratch.rows() {
        for (db, g) in grad.b.iter_mut().zip(scratch.row(k)) {
            *db += h * g;
        }
    }
}

/// Batched VJP of the layer step. Writes `(∂Φ/∂u)ᵀ lam` into `du` and adds
/// the parameter cotangents into `grad`.
pub fn layer_vjp_batch(
    u: &Matrix,
    layer: &Layer,
    h: f64,
    eps: f64,
    lam: &Matrix,
    du: &mut Matrix,
    grad: &mut Layer,
) {
    let slopes = activation_slopes(u, layer, eps);
    let mut scratch = Matrix::zeros(u.rows(), u.cols());
    adjoint_step(&slopes, layer, h, lam, &mut scratch, du);
    accumulate_layer_grad(&slopes, u, h, lam, &mut scratch, grad);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerVjp {
    pub du: Vec<f64>,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

pub fn layer_step_vjp(u: &[f64], layer: &Layer, h: f64, eps: f64, lam: &[f64]) -> LayerVjp {
    let w = u.len();
    let um = Matrix::from_vec(1, w, u.to_vec());
    let lm = Matrix::from_vec(1, w, lam.to_vec());
    let mut du = Matrix::zeros(1, w);
    let mut grad = Layer::zeros(w);
    layer_vjp_batch(&um, layer, h, eps, &lm, &mut du, &mut grad);
    LayerVjp {
        du: du.into_vec(),
        dw: grad.w,
        db: grad.b,
    }
}

/// Opening layer: `W_in y`, purely linear.
pub fn open(y: &[f64], w_in: &Matrix) -> Vec<f64> {
    matvec(w_in, y)
}

pub fn open_batch(features: &Matrix, w_in: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(features.rows(), w_in.rows());
    matmul_nt(features, w_in, &mut out);
    out
}

/// Classifier logits `W_out u + b_out` for every row of `u`.
pub fn logits(u: &Matrix, w_out: &Matrix, b_out: &[f64]) -> Matrix {
    let mut z = Matrix::zeros(u.rows(), w_out.rows());
    matmul_nt(u, w_out, &mut z);
    for k in 0..z.rows() {
        for (zj, bj) in z.row_mut(k).iter_mut().zip(b_out) {
            *zj += bj;
        }
    }
    z
}

/// Cross-entropy of `softmax(z)` against `c`, and `∂/∂z`.
fn cross_entropy(z: &[f64], c: &[f64], dz: &mut [f64]) -> Result<f64> {
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::LossOverflow);
    }
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = z.iter().map(|&x| libm::exp(x - zmax)).sum();
    let lse = zmax + libm::log(sum_exp);
    let mass: f64 = c.iter().sum();
    let mut loss = 0.0;
    for j in 0..z.len() {
        loss += c[j] * (lse - z[j]);
        dz[j] = mass * libm::exp(z[j] - lse) - c[j];
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_u: Vec<f64>,
    pub d_w_out: Matrix,
    pub d_b_out: Vec<f64>,
}

/// Softmax cross-entropy of one sample and its exact gradients.
pub fn loss_and_grad(u_t: &[f64], c: &[f64], w_out: &Matrix, b_out: &[f64]) -> Result<LossGrad> {
    let um = Matrix::from_vec(1, u_t.len(), u_t.to_vec());
    let cm = Matrix::from_vec(1, c.len(), c.to_vec());
    let b = batch_loss_and_grad(&um, &cm, w_out, b_out)?;
    Ok(LossGrad {
        loss: b.loss,
        d_u: b.d_u.into_vec(),
        d_w_out: b.d_w_out,
        d_b_out: b.d_b_out,
    })
}

/// Batch-mean loss and gradients. `d_u` already carries the `1/s` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub d_u: Matrix,
    pub d_w_out: Matrix,
    pub d_b_out: Vec<f64>,
}

pub fn batch_loss_and_grad(
    u: &Matrix,
    labels: &Matrix,
    w_out: &Matrix,
    b_out: &[f64],
) -> Result<BatchLoss> {
    let s = u.rows();
    let n_c = w_out.rows();
    let z = logits(u, w_out, b_out);
    let mut dz = Matrix::zeros(s, n_c);
    let inv_s = 1.0 / s as f64;
    let mut loss = 0.0;
    for k in 0..s {
        loss += cross_entropy(z.row(k), labels.row(k), dz.row_mut(k))?;
    }
    dz.scale(inv_s);
    let mut d_u = Matrix::zeros(s, u.cols());
    matmul_nn(&dz, w_out, &mut d_u);
    let mut d_w_out = Matrix::zeros(n_c, u.cols());
    matmul_tn_acc(1.0, &dz, u, &mut d_w_out);
    let mut d_b_out = vec![0.0; n_c];
    for k in 0..s {
        for (db, g) in d_b_out.iter_mut().zip(dz.row(k)) {
            *db += g;
        }
    }
    Ok(BatchLoss {
        loss: loss * inv_s,
        d_u,
        d_w_out,
        d_b_out,
    })
}

/// Batch-mean loss without gradients.
pub fn batch_loss(u: &Matrix, labels: &Matrix, w_out: &Matrix, b_out: &[f64]) -> Result<f64> {
    let z = logits(u, w_out, b_out);
    let mut dz = vec![0.0; w_out.rows()];
    let mut loss = 0.0;
    for k in 0..u.rows() {
        loss += cross_entropy(z.row(k), labels.row(k), &mut dz)?;
    }
    Ok(loss / u.rows() as f64)
}

/// Tikhonov penalty on all blocks (internal layers weighted by `h`) plus the
/// time-difference penalty on internal layers. Returns the value and its
/// gradient.
pub fn regularizer_and_grad(
    theta: &ControlTrajectory,
    hyper: &Hyperparameters,
) -> (f64, ControlTrajectory) {
    let h = theta.shape.h;
    let gt = hyper.gamma_tik;
    let gd = hyper.gamma_ddt;
    let mut grad = ControlTrajectory::zeros(theta.shape);
    grad.layers.truncate(theta.layers.len());

    let mut value = 0.5 * gt * (theta.w_in.norm_sq() + theta.w_out.norm_sq());
    value += 0.5 * gt * theta.b_out.iter().map(|x| x * x).sum::<f64>();
    grad.w_in.axpy(gt, &theta.w_in);
    grad.w_out.axpy(gt, &theta.w_out);
    for (g, b) in grad.b_out.iter_mut().zip(&theta.b_out) {
        *g += gt * b;
    }

    for (n, layer) in theta.layers.iter().enumerate() {
        value += 0.5 * gt * h * layer.norm_sq();
        grad.layers[n].axpy(gt * h, layer);
    }

    if gd != 0.0 && theta.layers.len() > 1 {
        for n in 0..theta.layers.len() - 1 {
            let (a, b) = (&theta.layers[n], &theta.layers[n + 1]);
            value += 0.5 * gd * a.dist_sq(b) / h;
            // d/dθ_{n+1} = gd (θ_{n+1} - θ_n)/h, d/dθ_n is its negative
            grad.layers[n + 1].axpy(gd / h, b);
            grad.layers[n + 1].axpy(-gd / h, a);
            grad.layers[n].axpy(gd / h, a);
            grad.layers[n].axpy(-gd / h, b);
        }
    }
    (value, grad)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose argmax agrees; ties go to the lowest index.
pub fn accuracy(predictions: &Matrix, labels: &Matrix) -> Result<f64> {
    assert_eq!(predictions.rows(), labels.rows(), "row count mismatch");
    if predictions.rows() == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let hits = (0..predictions.rows())
        .filter(|&k| argmax(predictions.row(k)) == argmax(labels.row(k)))
        .count();
    Ok(hits as f64 / predictions.rows() as f64)
}
