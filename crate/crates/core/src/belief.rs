//! Conjugate beliefs over tabular MDPs.
//!
//! * [`DirichletTransitionBelief`]: independent Dirichlet posteriors over the
//!   successor distribution of every `(s, a)`.
//! * [`NormalGammaBelief`]: NormalGamma posteriors over the mean reward of
//!   every `(s, a)`.
//! * [`ModelMixtureBelief`]: a Dirichlet over a finite set of candidate models.
//!
//! All updates are sufficient-statistic based, so the posterior does not depend
//! on the order of observations.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{sample_index, MdpError, TabularMdp};
use crate::scalar::Scalar;

/// Dirichlet prior concentration on every successor.
pub const DEFAULT_TRANSITION_PRIOR: f64 = 0.5;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("index out of range: {0}")]
    Index(String),
    #[error("non-finite observation {0}")]
    NonFinite(f64),
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
    #[error("belief shapes disagree: {0}")]
    Shape(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Dirichlet posterior per `(s, a)` row; concentration is `α₀ + n_{s,a}^{s'}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletTransitionBelief<T> {
    n_states: usize,
    n_actions: usize,
    prior_alpha: T,
    counts: Vec<u64>,
    /// States observed to end an episode; sampled MDPs treat them as absorbing.
    known_terminal: Vec<bool>,
}

impl<T: Scalar> DirichletTransitionBelief<T> {
    pub fn new(n_states: usize, n_actions: usize, prior_alpha: T) -> Result<Self, BeliefError> {
        if !(prior_alpha > T::zero()) || !prior_alpha.is_finite() {
            return Err(BeliefError::Hyperparameter(format!("α₀ must be positive, got {prior_alpha}")));
        }
        if n_states == 0 || n_actions == 0 {
            return Err(BeliefError::Shape("empty state or action space".into()));
        }
        Ok(DirichletTransitionBelief {
            n_states,
            n_actions,
            prior_alpha,
            counts: vec![0; n_states * n_actions * n_states],
            known_terminal: vec![false; n_states],
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prior_alpha(&self) -> T {
        self.prior_alpha
    }

    fn index(&self, s: usize, a: usize, next: usize) -> Result<usize, BeliefError> {
        if s >= self.n_states || a >= self.n_actions || next >= self.n_states {
            return Err(BeliefError::Index(format!("({s}, {a}, {next})")));
        }
        Ok((s * self.n_actions + a) * self.n_states + next)
    }

    /// Records one observed transition `(s, a) → s'`.
    pub fn update_transition(&mut self, s: usize, a: usize, next: usize) -> Result<(), BeliefError> {
        self.observe_many(s, a, next, 1)
    }

    /// Records `n` identical observed transitions.
    pub fn observe_many(&mut self, s: usize, a: usize, next: usize, n: u64) -> Result<(), BeliefError> {
        let i = self.index(s, a, next)?;
        self.counts[i] += n;
        Ok(())
    }

    pub fn mark_terminal(&mut self, s: usize) -> Result<(), BeliefError> {
        if s >= self.n_states {
            return Err(BeliefError::Index(format!("state {s}")));
        }
        self.known_terminal[s] = true;
        Ok(())
    }

    pub fn known_terminal(&self) -> &[bool] {
        &self.known_terminal
    }

    pub fn count(&self, s: usize, a: usize, next: usize) -> Result<u64, BeliefError> {
        Ok(self.counts[self.index(s, a, next)?])
    }

    /// Concentration `α₀ + n` for every successor of `(s, a)`.
    pub fn concentration(&self, s: usize, a: usize) -> Vec<T> {
        let base = (s * self.n_actions + a) * self.n_states;
        self.counts[base..base + self.n_states]
            .iter()
            .map(|&c| self.prior_alpha + T::from_u64(c).expect("count representable"))
            .collect()
    }

    /// Posterior mean of `T(· | s, a)`.
    pub fn mean_row(&self, s: usize, a: usize) -> Vec<T> {
        let mut row = self.concentration(s, a);
        let total: T = row.iter().copied().sum();
        row.iter_mut().for_each(|x| *x /= total);
        row
    }

    /// A draw of `T(· | s, a)` from its Dirichlet posterior.
    pub fn sample_row<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Vec<T> {
        let mut row: Vec<T> = self
            .concentration(s, a)
            .into_iter()
            .map(|alpha| T::sample_gamma(alpha, rng))
            .collect();
        let total: T = row.iter().copied().sum();
        if total > T::zero() && total.is_finite() {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            // every gamma draw underflowed; the mean is the only sensible fallback
            row = self.mean_row(s, a);
        }
        row
    }
}

/// Hyperparameters `(μ, κ, α, β)` of a NormalGamma distribution over the mean
/// and precision of a Normal likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGamma<T> {
    pub mu: T,
    pub kappa: T,
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> NormalGamma<T> {
    pub fn new(mu: T, kappa: T, alpha: T, beta: T) -> Result<Self, BeliefError> {
        let ok = mu.is_finite()
            && [kappa, alpha, beta].iter().all(|x| *x > T::zero() && x.is_finite());
        if !ok {
            return Err(BeliefError::Hyperparameter(format!(
                "NormalGamma({mu}, {kappa}, {alpha}, {beta})"
            )));
        }
        Ok(NormalGamma { mu, kappa, alpha, beta })
    }

    /// Weakly informative default `(0, 1, 1, 1)`.
    pub fn standard() -> Self {
        NormalGamma { mu: T::zero(), kappa: T::one(), alpha: T::one(), beta: T::one() }
    }

    /// Single-observation conjugate update.
    pub fn updated(&self, x: T) -> Self {
        let one = T::one();
        let half = T::lit(0.5);
        let kappa = self.kappa + one;
        let dev = x - self.mu;
        NormalGamma {
            mu: (self.kappa * self.mu + x) / kappa,
            kappa,
            alpha: self.alpha + half,
            beta: self.beta + half * self.kappa * dev * dev / kappa,
        }
    }

    /// Posterior predictive variance `β(κ+1)/(ακ)` of the Student-t; finite only
    /// for `α > 1`.
    pub fn predictive_variance(&self) -> Option<T> {
        if self.alpha > T::one() {
            let nu = T::lit(2.0) * self.alpha;
            let scale2 = self.beta * (self.kappa + T::one()) / (self.alpha * self.kappa);
            Some(scale2 * nu / (nu - T::lit(2.0)))
        } else {
            None
        }
    }

    /// Draws `(μ, λ)`: `λ ~ Gamma(α, rate β)`, `μ ~ N(μ_n, 1/(κ λ))`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (T, T) {
        let lambda = (T::sample_gamma(self.alpha, rng) / self.beta).max(T::min_positive_value());
        let sd = (T::one() / (self.kappa * lambda)).sqrt();
        (self.mu + sd * T::sample_std_normal(rng), lambda)
    }
}

/// NormalGamma posterior over the mean reward of every `(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaBelief<T> {
    n_states: usize,
    n_actions: usize,
    prior: NormalGamma<T>,
    params: Vec<NormalGamma<T>>,
}

impl<T: Scalar> NormalGammaBelief<T> {
    pub fn new(n_states: usize, n_actions: usize, prior: NormalGamma<T>) -> Self {
        NormalGammaBelief { n_states, n_actions, prior, params: vec![prior; n_states * n_actions] }
    }

    pub fn prior(&self) -> &NormalGamma<T> {
        &self.prior
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self, s: usize, a: usize) -> Result<&NormalGamma<T>, BeliefError> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(BeliefError::Index(format!("({s}, {a})")));
        }
        Ok(&self.params[s * self.n_actions + a])
    }

    pub fn update_reward(&mut self, s: usize, a: usize, r: T) -> Result<(), BeliefError> {
        if !r.is_finite() {
            return Err(BeliefError::NonFinite(r.as_f64()));
        }
        if s >= self.n_states || a >= self.n_actions {
            return Err(BeliefError::Index(format!("({s}, {a})")));
        }
        let slot = &mut self.params[s * self.n_actions + a];
        *slot = slot.updated(r);
        Ok(())
    }
}

fn check_shapes<T: Scalar>(
    transitions: &DirichletTransitionBelief<T>,
    rewards: &NormalGammaBelief<T>,
) -> Result<(), BeliefError> {
    if transitions.n_states != rewards.n_states || transitions.n_actions != rewards.n_actions {
        return Err(BeliefError::Shape(format!(
            "transitions {}x{} vs rewards {}x{}",
            transitions.n_states, transitions.n_actions, rewards.n_states, rewards.n_actions
        )));
    }
    Ok(())
}

/// Draws an MDP from the joint posterior: each transition row from its
/// Dirichlet and each reward as the mean parameter of a NormalGamma draw.
pub fn sample_mdp<T: Scalar, R: Rng + ?Sized>(
    transitions: &DirichletTransitionBelief<T>,
    rewards: &NormalGammaBelief<T>,
    discount: T,
    rng: &mut R,
) -> Result<TabularMdp<T>, BeliefError> {
    check_shapes(transitions, rewards)?;
    let (ns, na) = (transitions.n_states, transitions.n_actions);
    let mut tensor = Vec::with_capacity(ns * na * ns);
    let mut reward_table = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            if transitions.known_terminal[s] {
                tensor.extend((0..ns).map(|j| if j == s { T::one() } else { T::zero() }));
                reward_table.push(T::zero());
            } else {
                tensor.extend(transitions.sample_row(s, a, rng));
                reward_table.push(rewards.params[s * na + a].sample(rng).0);
            }
        }
    }
    Ok(TabularMdp::new(ns, na, tensor, reward_table, discount, transitions.known_terminal.clone())?)
}

/// MDP built from posterior means.
pub fn posterior_mean_mdp<T: Scalar>(
    transitions: &DirichletTransitionBelief<T>,
    rewards: &NormalGammaBelief<T>,
    discount: T,
) -> Result<TabularMdp<T>, BeliefError> {
    check_shapes(transitions, rewards)?;
    let (ns, na) = (transitions.n_states, transitions.n_actions);
    let mut tensor = Vec::with_capacity(ns * na * ns);
    for s in 0..ns {
        for a in 0..na {
            tensor.extend(transitions.mean_row(s, a));
        }
    }
    let reward_table = rewards.params.iter().map(|p| p.mu).collect();
    Ok(TabularMdp::with_absorbing_terminals(
        ns,
        na,
        tensor,
        reward_table,
        discount,
        transitions.known_terminal.clone(),
    )?)
}

/// Dirichlet belief over which of a finite set of models is the true one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMixtureBelief<M, T> {
    models: Vec<M>,
    concentration: Vec<T>,
}

impl<M, T: Scalar> ModelMixtureBelief<M, T> {
    pub fn new(models: Vec<M>, concentration: Vec<T>) -> Result<Self, BeliefError> {
        if models.is_empty() || models.len() != concentration.len() {
            return Err(BeliefError::Shape(format!(
                "{} models with {} concentration entries",
                models.len(),
                concentration.len()
            )));
        }
        if concentration.iter().any(|c| !(*c > T::zero()) || !c.is_finite()) {
            return Err(BeliefError::Hyperparameter("mixture concentration must be positive".into()));
        }
        Ok(ModelMixtureBelief { models, concentration })
    }

    /// Symmetric prior with unit concentration on every model.
    pub fn uniform(models: Vec<M>) -> Result<Self, BeliefError> {
        let n = models.len();
        Self::new(models, vec![T::one(); n])
    }

    pub fn models(&self) -> &[M] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn concentration(&self) -> &[T] {
        &self.concentration
    }

    /// Posterior mean model probabilities.
    pub fn weights(&self) -> Vec<T> {
        let total: T = self.concentration.iter().copied().sum();
        self.concentration.iter().map(|c| *c / total).collect()
    }

    pub fn update_mixture(&mut self, observed: usize) -> Result<(), BeliefError> {
        let slot = self
            .concentration
            .get_mut(observed)
            .ok_or_else(|| BeliefError::Index(format!("model {observed}")))?;
        *slot += T::one();
        Ok(())
    }

    /// Draws a model index from the posterior predictive (the normalized weights).
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.weights(), rng)
    }
}

/// Serializable snapshot of the tabular beliefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularBeliefCheckpoint<T> {
    pub version: u32,
    pub transitions: DirichletTransitionBelief<T>,
    pub rewards: NormalGammaBelief<T>,
    pub mixture_concentration: Option<Vec<T>>,
}

impl<T: Scalar> TabularBeliefCheckpoint<T> {
    pub fn new(
        transitions: DirichletTransitionBelief<T>,
        rewards: NormalGammaBelief<T>,
        mixture_concentration: Option<Vec<T>>,
    ) -> Self {
        TabularBeliefCheckpoint { version: CHECKPOINT_VERSION, transitions, rewards, mixture_concentration }
    }

    pub fn save(&self, path: &Path) -> Result<(), BeliefError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BeliefError> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(BeliefError::Version { found, expected: CHECKPOINT_VERSION });
        }
        Ok(serde_json::from_value(value)?)
    }
}
