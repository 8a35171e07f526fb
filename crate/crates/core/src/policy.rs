//! Softmax policy over the outputs of a one-hidden-layer network.
//!
//! The action scores are `φ(s, a, θ) = W₂[a]·tanh(W₁ x + b₁) + b₂[a]` where
//! `x` is the encoded state. With `hidden_width == 0` the network degenerates
//! to a linear map `W[a]·x + b[a]`. Gradients of `log π_θ(a|s)` are computed
//! analytically by backpropagation.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::sample_index;
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN_WIDTH: usize = 16;
pub const INIT_SCALE: f64 = 0.05;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite policy parameters")]
    NonFinite,
    #[error("feature vector has length {got}, expected {expected}")]
    Features { expected: usize, got: usize },
    #[error("parameter vector has length {got}, expected {expected}")]
    Params { expected: usize, got: usize },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy<T> {
    input_dim: usize,
    hidden_width: usize,
    n_actions: usize,
    params: Vec<T>,
}

/// Reusable buffers for forward/backward passes.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    hidden: Vec<T>,
    logits: Vec<T>,
    probs: Vec<T>,
    grad_hidden: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

impl<T: Scalar> SoftmaxPolicy<T> {
    pub fn param_count(input_dim: usize, hidden_width: usize, n_actions: usize) -> usize {
        if hidden_width == 0 {
            n_actions * input_dim + n_actions
        } else {
            hidden_width * input_dim + hidden_width + n_actions * hidden_width + n_actions
        }
    }

    pub fn zeros(input_dim: usize, hidden_width: usize, n_actions: usize) -> Self {
        let n = Self::param_count(input_dim, hidden_width, n_actions);
        SoftmaxPolicy { input_dim, hidden_width, n_actions, params: vec![T::zero(); n] }
    }

    /// Parameters drawn uniformly from `[-0.05, 0.05]`.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_width: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_width, n_actions);
        let scale = T::lit(INIT_SCALE);
        for x in &mut p.params {
            *x = (T::lit(2.0) * T::sample_unit(rng) - T::one()) * scale;
        }
        p
    }

    pub fn from_params(
        input_dim: usize,
        hidden_width: usize,
        n_actions: usize,
        params: Vec<T>,
    ) -> Result<Self, PolicyError> {
        let expected = Self::param_count(input_dim, hidden_width, n_actions);
        if params.len() != expected {
            return Err(PolicyError::Params { expected, got: params.len() });
        }
        Ok(SoftmaxPolicy { input_dim, hidden_width, n_actions, params })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Offsets of (W₁, b₁, W₂, b₂); W₁ and b₁ are empty in linear mode.
    fn layout(&self) -> (usize, usize, usize, usize) {
        let (d, h, na) = (self.input_dim, self.hidden_width, self.n_actions);
        if h == 0 {
            (0, 0, 0, na * d)
        } else {
            let b1 = h * d;
            let w2 = b1 + h;
            (0, b1, w2, w2 + na * h)
        }
    }

    /// Offset of the output bias for `action`.
    pub fn output_bias_index(&self, action: usize) -> usize {
        self.layout().3 + action
    }

    fn check(&self, x: &[T]) -> Result<(), PolicyError> {
        if x.len() != self.input_dim {
            return Err(PolicyError::Features { expected: self.input_dim, got: x.len() });
        }
        if !self.is_finite() {
            return Err(PolicyError::NonFinite);
        }
        Ok(())
    }

    /// Forward pass into `ws`; no validation.
    fn forward(&self, x: &[T], ws: &mut Workspace<T>) {
        let (d, h, na) = (self.input_dim, self.hidden_width, self.n_actions);
        let (_, b1, w2, b2) = self.layout();
        let p = &self.params;
        ws.logits.clear();
        if h == 0 {
            for a in 0..na {
                let w = &p[a * d..(a + 1) * d];
                let z: T = w.iter().zip(x).map(|(wi, xi)| *wi * *xi).sum();
                ws.logits.push(z + p[b2 + a]);
            }
        } else {
            ws.hidden.clear();
            for j in 0..h {
                let w = &p[j * d..(j + 1) * d];
                let z: T = w.iter().zip(x).map(|(wi, xi)| *wi * *xi).sum();
                ws.hidden.push(tanh(z + p[b1 + j]));
            }
            for a in 0..na {
                let w = &p[w2 + a * h..w2 + (a + 1) * h];
                let z: T = w.iter().zip(&ws.hidden).map(|(wi, hi)| *wi * *hi).sum();
                ws.logits.push(z + p[b2 + a]);
            }
        }
        ws.probs.clear();
        if na == 2 {
            // logistic form, evaluated on the side that cannot overflow
            let (z0, z1) = (ws.logits[0], ws.logits[1]);
            let e = (-(z0 - z1).abs()).exp();
            let (hi, lo) = (T::one() / (T::one() + e), e / (T::one() + e));
            ws.probs.extend(if z0 >= z1 { [hi, lo] } else { [lo, hi] });
            return;
        }
        let shift = ws.logits.iter().copied().fold(T::neg_infinity(), T::max);
        ws.probs.extend(ws.logits.iter().map(|z| (*z - shift).exp()));
        let total: T = ws.probs.iter().copied().sum();
        ws.probs.iter_mut().for_each(|q| *q /= total);
    }

    /// `π_θ(· | x)` via a max-shifted softmax.
    pub fn action_probs(&self, x: &[T]) -> Result<Vec<T>, PolicyError> {
        self.check(x)?;
        let mut ws = Workspace::default();
        self.forward(x, &mut ws);
        Ok(ws.probs)
    }

    /// Probabilities for `x` computed into `ws`; no validation.
    pub fn probs_with<'w>(&self, x: &[T], ws: &'w mut Workspace<T>) -> &'w [T] {
        self.forward(x, ws);
        &ws.probs
    }

    /// Raw action scores `φ(x, ·, θ)`.
    pub fn logits(&self, x: &[T]) -> Result<Vec<T>, PolicyError> {
        self.check(x)?;
        let mut ws = Workspace::default();
        self.forward(x, &mut ws);
        Ok(ws.logits)
    }

    /// `∇_θ log π_θ(a | x)`.
    pub fn grad_log_prob(&self, x: &[T], action: usize) -> Result<Vec<T>, PolicyError> {
        self.check(x)?;
        let mut ws = Workspace::default();
        let mut grad = vec![T::zero(); self.params.len()];
        self.forward(x, &mut ws);
        self.accumulate_score(x, action, T::one(), &mut ws, &mut grad);
        Ok(grad)
    }

    /// Samples an action and, when `score` is given, adds `∇ log π(a|x)` to it.
    /// Inputs are assumed valid; this is the rollout hot path.
    pub fn act<R: Rng + ?Sized>(
        &self,
        x: &[T],
        ws: &mut Workspace<T>,
        score: Option<&mut [T]>,
        rng: &mut R,
    ) -> usize {
        self.forward(x, ws);
        let a = sample_index(&ws.probs, rng);
        if let Some(g) = score {
            self.accumulate_score(x, a, T::one(), ws, g);
        }
        a
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<usize, PolicyError> {
        self.check(x)?;
        let mut ws = Workspace::default();
        Ok(self.act(x, &mut ws, None, rng))
    }

    /// Adds `scale · ∇ log π(a|x)` to `grad`; `ws` must hold the forward pass for `x`.
    fn accumulate_score(&self, x: &[T], action: usize, scale: T, ws: &mut Workspace<T>, grad: &mut [T]) {
        let (d, h, na) = (self.input_dim, self.hidden_width, self.n_actions);
        let (_, b1, w2, b2) = self.layout();
        // d log softmax_a / d logit_b = 1{a=b} - π_b
        let dz = |b: usize| -> T {
            let ind = if b == action { T::one() } else { T::zero() };
            scale * (ind - ws.probs[b])
        };
        if h == 0 {
            for b in 0..na {
                let g = dz(b);
                for (slot, xi) in grad[b * d..(b + 1) * d].iter_mut().zip(x) {
                    *slot += g * *xi;
                }
                grad[b2 + b] += g;
            }
            return;
        }
        ws.grad_hidden.clear();
        ws.grad_hidden.resize(h, T::zero());
        for b in 0..na {
            let g = dz(b);
            grad[b2 + b] += g;
            let w = &self.params[w2 + b * h..w2 + (b + 1) * h];
            for j in 0..h {
                grad[w2 + b * h + j] += g * ws.hidden[j];
                ws.grad_hidden[j] += g * w[j];
            }
        }
        for j in 0..h {
            let hj = ws.hidden[j];
            let pre = ws.grad_hidden[j] * (T::one() - hj * hj);
            grad[b1 + j] += pre;
            for (slot, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                *slot += pre * *xi;
            }
        }
    }
}

/// `1 − 2/(e^{2x} + 1)`: one `exp`, saturating cleanly at ±1.
#[inline]
fn tanh<T: Scalar>(x: T) -> T {
    let two = T::lit(2.0);
    T::one() - two / ((two * x).exp() + T::one())
}

/// Versioned on-disk form of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint<T> {
    pub version: u32,
    pub seed: u64,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub n_actions: usize,
    pub params: Vec<T>,
}

impl<T: Scalar> PolicyCheckpoint<T> {
    pub fn of(policy: &SoftmaxPolicy<T>, seed: u64) -> Self {
        PolicyCheckpoint {
            version: CHECKPOINT_VERSION,
            seed,
            input_dim: policy.input_dim,
            hidden_width: policy.hidden_width,
            n_actions: policy.n_actions,
            params: policy.params.clone(),
        }
    }

    pub fn into_policy(self) -> Result<SoftmaxPolicy<T>, PolicyError> {
        SoftmaxPolicy::from_params(self.input_dim, self.hidden_width, self.n_actions, self.params)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let ck: PolicyCheckpoint<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version { found: ck.version, expected: CHECKPOINT_VERSION });
        }
        Ok(ck)
    }
}
