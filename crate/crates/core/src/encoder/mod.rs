//! The embedding network and its momentum twin.
//!
//! Architecture: `x (D) -> affine -> activation -> affine (N) -> L2 normalize`.
//! Parameters live in one flat buffer in the order `W1 (H×D, row-major)`,
//! `b1 (H)`, `W2 (N×H, row-major)`, `b2 (N)`. The same order is used by the
//! checkpoint format and by the finite-difference tests.

mod io;

pub use io::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC_PREFIX};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{dot, norm, Rng};

/// Pre-normalization outputs with a norm below this are rejected.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Only meaningful for tests and the identity configuration.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// A unit-norm representation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v`, rejecting vectors too small to normalize.
    pub fn normalize(mut v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if !(n >= DEGENERATE_NORM) {
            return Err(Error::DegenerateEmbedding { norm: n });
        }
        for x in &mut v {
            *x /= n;
        }
        Ok(Embedding(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Weights and biases of one encoder. Also used as the gradient type, since
/// a gradient has exactly the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    activation: Activation,
    values: Vec<f64>,
}

pub type Gradient = EncoderParams;

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    embedding: Embedding,
    pre_norm: f64,
}

impl ForwardTrace {
    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }
}

fn param_count(d: usize, h: usize, n: usize) -> usize {
    h * d + h + n * h + n
}

impl EncoderParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize, activation: Activation) -> Self {
        assert!(
            input_dim > 0 && hidden_dim > 0 && output_dim > 0,
            "encoder dims must be positive"
        );
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation,
            values: vec![0.0; param_count(input_dim, hidden_dim, output_dim)],
        }
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialization for weights and biases.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, output_dim, Activation::Tanh);
        let b1 = 1.0 / (input_dim as f64).sqrt();
        let b2 = 1.0 / (hidden_dim as f64).sqrt();
        let (first, second) = p.values.split_at_mut(hidden_dim * input_dim + hidden_dim);
        for v in first {
            *v = rng.uniform_in(-b1, b1);
        }
        for v in second {
            *v = rng.uniform_in(-b2, b2);
        }
        p
    }

    /// `D = H = N = dim`, identity weights, zero bias, identity activation.
    pub fn identity(dim: usize) -> Self {
        let mut p = Self::zeros(dim, dim, dim, Activation::Identity);
        for i in 0..dim {
            p.w1_mut()[i * dim + i] = 1.0;
            p.w2_mut()[i * dim + i] = 1.0;
        }
        p
    }

    /// Builds parameters from a flat buffer in declared order.
    pub fn from_flat(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = param_count(input_dim, hidden_dim, output_dim);
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::Shape("encoder dims must be positive".into()));
        }
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} parameters for ({input_dim}, {hidden_dim}, {output_dim}), got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("encoder parameters must be finite"));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation,
            values,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offsets(&self) -> [usize; 4] {
        let (d, h, n) = (self.input_dim, self.hidden_dim, self.output_dim);
        [0, h * d, h * d + h, h * d + h + n * h]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[0]..o[1]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[1]..o[2]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[2]..o[3]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[3]..]
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.values[o[0]..o[1]]
    }

    fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.values[o[2]..o[3]]
    }

    pub fn same_shape(&self, other: &EncoderParams) -> bool {
        self.input_dim == other.input_dim && self.hidden_dim == other.hidden_dim && self.output_dim == other.output_dim
    }

    fn check_same_shape(&self, other: &EncoderParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "encoder shapes ({}, {}, {}) and ({}, {}, {}) differ",
                self.input_dim, self.hidden_dim, self.output_dim, other.input_dim, other.hidden_dim, other.output_dim
            )))
        }
    }

    /// Zero-valued gradient buffer of matching shape.
    pub fn zeros_like(&self) -> Gradient {
        Self::zeros(self.input_dim, self.hidden_dim, self.output_dim, self.activation)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Embedding> {
        self.forward_trace(x).map(|t| t.embedding)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "encoder expects input dim {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let (d, h) = (self.input_dim, self.hidden_dim);
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let hidden: Vec<f64> = (0..h)
            .map(|j| self.activation.apply(dot(&w1[j * d..(j + 1) * d], x) + b1[j]))
            .collect();
        let out: Vec<f64> = (0..self.output_dim)
            .map(|k| dot(&w2[k * h..(k + 1) * h], &hidden) + b2[k])
            .collect();
        let pre_norm = norm(&out);
        let embedding = Embedding::normalize(out)?;
        Ok(ForwardTrace {
            input: x.to_vec(),
            hidden,
            embedding,
            pre_norm,
        })
    }

    /// Gradient of `upstream · forward(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradient> {
        let trace = self.forward_trace(x)?;
        let mut grad = self.zeros_like();
        self.backward_into(&trace, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates the gradient of `upstream · z` into `grad`.
    pub fn backward_into(&self, trace: &ForwardTrace, upstream: &[f64], grad: &mut Gradient) -> Result<()> {
        if upstream.len() != self.output_dim {
            return Err(Error::Shape(format!(
                "upstream gradient has dim {}, expected {}",
                upstream.len(),
                self.output_dim
            )));
        }
        self.check_same_shape(grad)?;
        let (d, h, n) = (self.input_dim, self.hidden_dim, self.output_dim);
        let z = trace.embedding.as_slice();

        // normalization Jacobian: (I - z zᵀ) / ‖y‖
        let gz = dot(upstream, z);
        let gy: Vec<f64> = (0..n).map(|k| (upstream[k] - gz * z[k]) / trace.pre_norm).collect();

        let w2 = self.w2();
        let mut g_hidden = vec![0.0; h];
        for k in 0..n {
            for j in 0..h {
                g_hidden[j] += w2[k * h + j] * gy[k];
            }
        }
        let g_pre: Vec<f64> = g_hidden
            .iter()
            .zip(&trace.hidden)
            .map(|(g, y)| g * self.activation.derivative_from_output(*y))
            .collect();

        let o = self.offsets();
        let gv = &mut grad.values;
        for j in 0..h {
            let row = &mut gv[o[0] + j * d..o[0] + (j + 1) * d];
            for (r, xi) in row.iter_mut().zip(&trace.input) {
                *r += g_pre[j] * xi;
            }
            gv[o[1] + j] += g_pre[j];
        }
        for k in 0..n {
            let row = &mut gv[o[2] + k * h..o[2] + (k + 1) * h];
            for (r, hj) in row.iter_mut().zip(&trace.hidden) {
                *r += gy[k] * hj;
            }
            gv[o[3] + k] += gy[k];
        }
        Ok(())
    }

    /// Plain SGD: `self -= lr * grad`.
    pub fn sgd_step(&mut self, grad: &Gradient, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::domain(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        self.check_same_shape(grad)?;
        for (p, g) in self.values.iter_mut().zip(&grad.values) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// Momentum-encoder update `self <- ω·self + (1-ω)·online`.
    pub fn momentum_update(&mut self, online: &EncoderParams, omega: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(Error::domain(format!(
                "momentum coefficient must lie in [0, 1], got {omega}"
            )));
        }
        self.check_same_shape(online)?;
        if omega == 1.0 {
            return Ok(());
        }
        if omega == 0.0 {
            self.values.copy_from_slice(&online.values);
            return Ok(());
        }
        for (t, k) in self.values.iter_mut().zip(&online.values) {
            *t += (1.0 - omega) * (k - *t);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// The online encoder κ and its momentum copy κ̃.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub online: EncoderParams,
    pub momentum: EncoderParams,
}

impl EncoderState {
    /// Random online encoder; the momentum encoder starts as an exact copy.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut Rng) -> Self {
        let online = EncoderParams::init(input_dim, hidden_dim, output_dim, rng);
        Self {
            momentum: online.clone(),
            online,
        }
    }
}
