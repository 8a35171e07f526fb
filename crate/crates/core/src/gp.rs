//! Gaussian-process function beliefs with lazily realized path samples.
//!
//! A path sample answers queries one at a time: each new point is drawn from
//! its Gaussian conditional given every earlier answer of the same path, and
//! answers are cached, so a path is a consistent function draw over whatever
//! points an episode happens to visit.

use std::cell::RefCell;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{fork, StreamRng};
use crate::scalar::Scalar;

/// Diagonal jitter tried in turn when a Gram factorization fails.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("input has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite input or target")]
    NonFinite,
    #[error("Gram matrix not positive definite even with jitter {0}")]
    NotPositiveDefinite(f64),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Squared-exponential kernel plus observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar"))]
pub struct GpHyper<T> {
    pub length_scale: T,
    pub signal_variance: T,
    pub noise_variance: T,
}

impl<T: Scalar> Default for GpHyper<T> {
    fn default() -> Self {
        GpHyper { length_scale: T::lit(0.5), signal_variance: T::one(), noise_variance: T::lit(1e-4) }
    }
}

impl<T: Scalar> GpHyper<T> {
    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.length_scale > T::zero() && self.signal_variance > T::zero() && self.noise_variance >= T::zero()) {
            return Err(GpError::Hyper(format!("{self:?}")));
        }
        Ok(())
    }

    /// `σ_f² exp(−|x − y|² / 2ℓ²)`
    pub fn kernel(&self, x: &[T], y: &[T]) -> T {
        let d2: T = x.iter().zip(y).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
        self.signal_variance * (-d2 / (T::lit(2.0) * self.length_scale * self.length_scale)).exp()
    }
}

/// In-place lower Cholesky of a row-major `n×n` matrix; `false` if not PD.
fn cholesky<T: Scalar>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = T::zero();
        }
    }
    true
}

/// Solves `L x = b` in place.
fn forward_solve<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place.
fn backward_solve<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// GP regression posterior. Repeated inputs are merged into one point whose
/// target is the mean and whose noise variance is `σ_n² / count`.
#[derive(Debug, Clone)]
pub struct GpBelief<T> {
    hyper: GpHyper<T>,
    dim: usize,
    inputs: Vec<Vec<T>>,
    sums: Vec<T>,
    counts: Vec<u64>,
    chol: Vec<T>,
    alpha: Vec<T>,
    jitter: f64,
    stale: bool,
}

impl<T: Scalar> GpBelief<T> {
    pub fn new(dim: usize, hyper: GpHyper<T>) -> Result<Self, GpError> {
        hyper.validate()?;
        Ok(GpBelief {
            hyper,
            dim,
            inputs: Vec::new(),
            sums: Vec::new(),
            counts: Vec::new(),
            chol: Vec::new(),
            alpha: Vec::new(),
            jitter: 0.0,
            stale: false,
        })
    }

    pub fn hyper(&self) -> &GpHyper<T> {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Distinct training inputs.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_observations(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Jitter used by the current factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check_input(&self, x: &[T]) -> Result<(), GpError> {
        if x.len() != self.dim {
            return Err(GpError::Dimension { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        Ok(())
    }

    /// Records an observation without refactorizing; call [`refresh`](Self::refresh)
    /// before predicting.
    pub fn observe(&mut self, x: &[T], y: T) -> Result<(), GpError> {
        self.check_input(x)?;
        if !y.is_finite() {
            return Err(GpError::NonFinite);
        }
        match self.inputs.iter().position(|p| p.as_slice() == x) {
            Some(i) => {
                self.sums[i] += y;
                self.counts[i] += 1;
            }
            None => {
                self.inputs.push(x.to_vec());
                self.sums.push(y);
                self.counts.push(1);
            }
        }
        self.stale = true;
        Ok(())
    }

    /// Appends an observation and refactorizes.
    pub fn gp_update(&mut self, x: &[T], y: T) -> Result<(), GpError> {
        self.observe(x, y)?;
        self.refresh()
    }

    /// Refactorizes the Gram matrix, escalating diagonal jitter on failure.
    pub fn refresh(&mut self) -> Result<(), GpError> {
        let n = self.inputs.len();
        let mut gram = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = self.hyper.kernel(&self.inputs[i], &self.inputs[j]);
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
            gram[i * n + i] += self.hyper.noise_variance / T::lit(self.counts[i] as f64);
        }
        for &jit in &JITTER_LADDER {
            let mut a = gram.clone();
            for i in 0..n {
                a[i * n + i] += T::lit(jit);
            }
            if cholesky(&mut a, n) {
                let mut alpha: Vec<T> = (0..n).map(|i| self.sums[i] / T::lit(self.counts[i] as f64)).collect();
                forward_solve(&a, n, &mut alpha);
                backward_solve(&a, n, &mut alpha);
                self.chol = a;
                self.alpha = alpha;
                self.jitter = jit;
                self.stale = false;
                return Ok(());
            }
        }
        Err(GpError::NotPositiveDefinite(JITTER_LADDER[JITTER_LADDER.len() - 1]))
    }

    fn ensure_fresh(&self) {
        assert!(!self.stale, "GpBelief queried before refresh()");
    }

    /// `(k(x, X), L⁻¹ k(x, X))`
    fn whitened(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let k: Vec<T> = self.inputs.iter().map(|p| self.hyper.kernel(p, x)).collect();
        let mut v = k.clone();
        forward_solve(&self.chol, self.inputs.len(), &mut v);
        (k, v)
    }

    /// Posterior mean and latent variance at `x`.
    pub fn predict(&self, x: &[T]) -> Result<(T, T), GpError> {
        self.check_input(x)?;
        self.ensure_fresh();
        let (k, v) = self.whitened(x);
        Ok(self.moments_from(x, &k, &v))
    }

    fn moments_from(&self, x: &[T], k: &[T], v: &[T]) -> (T, T) {
        let mean: T = k.iter().zip(&self.alpha).map(|(a, b)| *a * *b).sum();
        let vv: T = v.iter().map(|a| *a * *a).sum();
        let var = (self.hyper.kernel(x, x) - vv).max(T::zero());
        (mean, var)
    }

    /// Posterior covariance between two points.
    pub fn covariance(&self, x: &[T], y: &[T]) -> Result<T, GpError> {
        self.check_input(x)?;
        self.check_input(y)?;
        self.ensure_fresh();
        let (_, vx) = self.whitened(x);
        let (_, vy) = self.whitened(y);
        Ok(self.hyper.kernel(x, y) - vx.iter().zip(&vy).map(|(a, b)| *a * *b).sum::<T>())
    }

    /// A lazily realized function draw with its own random stream.
    pub fn gp_sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> GpPath<'_, T> {
        self.ensure_fresh();
        GpPath { gp: self, keys: Vec::new(), whitened: Vec::new(), sampler: SequentialSampler::default(), rng: fork(rng) }
    }

    pub fn checkpoint(&self) -> GpCheckpoint<T> {
        GpCheckpoint {
            version: CHECKPOINT_VERSION,
            hyper: self.hyper,
            dim: self.dim,
            inputs: self.inputs.clone(),
            sums: self.sums.clone(),
            counts: self.counts.clone(),
        }
    }

    pub fn from_checkpoint(c: GpCheckpoint<T>) -> Result<Self, GpError> {
        if c.version != CHECKPOINT_VERSION {
            return Err(GpError::Version(c.version));
        }
        let mut gp = GpBelief::new(c.dim, c.hyper)?;
        gp.inputs = c.inputs;
        gp.sums = c.sums;
        gp.counts = c.counts;
        gp.refresh()?;
        Ok(gp)
    }
}

/// Serialized sufficient statistics of a [`GpBelief`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct GpCheckpoint<T> {
    pub version: u32,
    pub hyper: GpHyper<T>,
    pub dim: usize,
    pub inputs: Vec<Vec<T>>,
    pub sums: Vec<T>,
    pub counts: Vec<u64>,
}

impl<T: Scalar> GpCheckpoint<T> {
    pub fn save(&self, path: &Path) -> Result<(), GpError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GpError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Incremental Cholesky of the joint covariance of answered queries.
///
/// Answers are `f = m + L z` with `z` standard normal; a new query extends `L`
/// by one row. Rows with zero pivot (a value already determined by earlier
/// answers) contribute nothing to later conditionals.
#[derive(Debug, Clone, Default)]
pub struct SequentialSampler<T> {
    /// Lower triangle of `L`, row `j` at offset `j(j+1)/2`.
    tri: Vec<T>,
    z: Vec<T>,
}

impl<T: Scalar> SequentialSampler<T> {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Draws the next answer given its marginal mean and variance and its
    /// covariance with each earlier answer.
    pub fn draw<R: Rng + ?Sized>(&mut self, mean: T, cross: &[T], var: T, rng: &mut R) -> T {
        debug_assert_eq!(cross.len(), self.len());
        let n = self.len();
        let start = self.tri.len();
        let mut explained = T::zero();
        for j in 0..n {
            let off = j * (j + 1) / 2;
            let d = self.tri[off + j];
            let l = if d == T::zero() {
                T::zero()
            } else {
                let s: T = self.tri[off..off + j].iter().zip(&self.tri[start..]).map(|(a, b)| *a * *b).sum();
                (cross[j] - s) / d
            };
            explained += l * l;
            self.tri.push(l);
        }
        let cond = var - explained;
        let floor = T::lit(1e-12) * var.max(T::lit(1e-300));
        let d = if cond > floor { cond.sqrt() } else { T::zero() };
        let eps = if d > T::zero() { T::sample_std_normal(rng) } else { T::zero() };
        let value = mean + self.tri[start..].iter().zip(&self.z).map(|(l, z)| *l * *z).sum::<T>() + d * eps;
        self.tri.push(d);
        self.z.push(eps);
        value
    }
}

/// Function draw over arbitrary inputs; see [`GpBelief::gp_sample_path`].
pub struct GpPath<'a, T> {
    gp: &'a GpBelief<T>,
    keys: Vec<Vec<T>>,
    whitened: Vec<(Vec<T>, T)>,
    sampler: SequentialSampler<T>,
    rng: StreamRng,
}

impl<T: Scalar> GpPath<'_, T> {
    /// Value of this draw at `x`; repeated queries return the cached answer.
    pub fn eval(&mut self, x: &[T]) -> Result<T, GpError> {
        self.gp.check_input(x)?;
        if let Some(i) = self.keys.iter().position(|k| k.as_slice() == x) {
            return Ok(self.whitened[i].1);
        }
        let (k, v) = self.gp.whitened(x);
        let (mean, var) = self.gp.moments_from(x, &k, &v);
        let prior_var = self.gp.hyper.kernel(x, x);
        let cross: Vec<T> = self
            .keys
            .iter()
            .zip(&self.whitened)
            .map(|(key, (vk, _))| self.gp.hyper.kernel(key, x) - vk.iter().zip(&v).map(|(a, b)| *a * *b).sum::<T>())
            .collect();
        // unclamped variance keeps the conditional consistent with `cross`
        let vv: T = v.iter().map(|a| *a * *a).sum();
        let value = self.sampler.draw(mean, &cross, (prior_var - vv).max(var), &mut self.rng);
        self.keys.push(x.to_vec());
        self.whitened.push((v, value));
        Ok(value)
    }

    pub fn n_queries(&self) -> usize {
        self.keys.len()
    }
}

/// Posterior over a fixed finite set of inputs, with memoized moments shared
/// by every path drawn from it.
pub struct DomainPosterior<'a, T> {
    gp: &'a GpBelief<T>,
    domain: &'a [Vec<T>],
    memo: RefCell<DomainMemo<T>>,
}

struct DomainMemo<T> {
    mean: Vec<Option<T>>,
    var: Vec<T>,
    whitened: Vec<Option<Vec<T>>>,
    /// Row-major `m×m`, NaN where not yet computed.
    cov: Vec<T>,
}

impl<'a, T: Scalar> DomainPosterior<'a, T> {
    pub fn new(gp: &'a GpBelief<T>, domain: &'a [Vec<T>]) -> Self {
        gp.ensure_fresh();
        let m = domain.len();
        DomainPosterior {
            gp,
            domain,
            memo: RefCell::new(DomainMemo {
                mean: vec![None; m],
                var: vec![T::zero(); m],
                whitened: vec![None; m],
                cov: vec![T::nan(); m * m],
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    fn touch(&self, memo: &mut DomainMemo<T>, i: usize) {
        if memo.mean[i].is_none() {
            let x = &self.domain[i];
            let (k, v) = self.gp.whitened(x);
            let (mean, _) = self.gp.moments_from(x, &k, &v);
            let vv: T = v.iter().map(|a| *a * *a).sum();
            memo.mean[i] = Some(mean);
            memo.var[i] = self.gp.hyper.kernel(x, x) - vv;
            memo.whitened[i] = Some(v);
        }
    }

    /// Posterior mean and (unclamped) variance at domain point `i`.
    pub fn moments(&self, i: usize) -> (T, T) {
        let mut memo = self.memo.borrow_mut();
        self.touch(&mut memo, i);
        (memo.mean[i].expect("touched"), memo.var[i])
    }

    pub fn covariance(&self, i: usize, j: usize) -> T {
        let m = self.domain.len();
        let mut memo = self.memo.borrow_mut();
        let c = memo.cov[i * m + j];
        if !c.is_nan() {
            return c;
        }
        self.touch(&mut memo, i);
        self.touch(&mut memo, j);
        let vi = memo.whitened[i].as_ref().expect("touched");
        let vj = memo.whitened[j].as_ref().expect("touched");
        let c = self.gp.hyper.kernel(&self.domain[i], &self.domain[j])
            - vi.iter().zip(vj).map(|(a, b)| *a * *b).sum::<T>();
        memo.cov[i * m + j] = c;
        memo.cov[j * m + i] = c;
        c
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> DomainPath<T> {
        DomainPath {
            answered: vec![None; self.domain.len()],
            order: Vec::new(),
            cross: Vec::new(),
            sampler: SequentialSampler::default(),
            rng: fork(rng),
        }
    }
}

/// Function draw over a [`DomainPosterior`]'s points.
#[derive(Debug, Clone)]
pub struct DomainPath<T> {
    answered: Vec<Option<T>>,
    order: Vec<usize>,
    cross: Vec<T>,
    sampler: SequentialSampler<T>,
    rng: StreamRng,
}

impl<T: Scalar> DomainPath<T> {
    pub fn eval(&mut self, post: &DomainPosterior<'_, T>, i: usize) -> T {
        if let Some(v) = self.answered[i] {
            return v;
        }
        let (mean, var) = post.moments(i);
        self.cross.clear();
        self.cross.extend(self.order.iter().map(|&j| post.covariance(j, i)));
        let value = self.sampler.draw(mean, &self.cross, var, &mut self.rng);
        self.answered[i] = Some(value);
        self.order.push(i);
        value
    }
}
