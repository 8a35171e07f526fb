//! Epistemic risk-sensitive policy gradient.
//!
//! Each training episode has a planning phase, in which the policy takes
//! gradient-ascent steps on models sampled from a frozen belief snapshot, and
//! a deployment phase, in which one real episode is run and fed back into the
//! belief.
//!
//! For an exponential objective the gradient estimate is
//!
//! ```text
//! ĝ = Σ_i exp(β Ĝ⁽¹⁾_i − c) · PĜ⁽²⁾_i  /  Σ_i exp(β Ĝ⁽³⁾_i − c)
//! ```
//!
//! where `Ĝ⁽¹⁾_i` and `PĜ⁽²⁾_i` come from two independent sets of `M`
//! rollouts in the numerator model `μ_i`, `Ĝ⁽³⁾_i` from `M` rollouts in an
//! independently drawn denominator model, and `c` is one shared shift.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, ModelMixtureBelief};
use crate::envs::{rollout_return, run_episode, EnvError, Environment};
use crate::gp::GpError;
use crate::mdp::Trajectory;
use crate::option_belief::{sample_option_model, OptionGpBelief, OptionSnapshot, SampledOptionModel};
use crate::policy::{PolicyCheckpoint, SoftmaxPolicy, Workspace, DEFAULT_HIDDEN_WIDTH};
use crate::risk::{RiskError, RiskObjective};
use crate::rng::{fork, substream, StreamRng};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Gp(#[from] GpError),
    /// Parameters became non-finite; `checkpoint` is the JSON policy
    /// checkpoint of the last finite parameters.
    #[error("parameters diverged at episode {episode}, planning step {step}")]
    Diverged { episode: usize, step: usize, checkpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig<T> {
    pub objective: RiskObjective<T>,
    /// Model samples per gradient estimate (`N`).
    pub n_models: usize,
    /// Rollouts per return or gradient term (`M`).
    pub n_rollouts: usize,
    pub learning_rate: T,
    /// Gradient steps in each planning phase.
    pub planning_steps: usize,
    pub episodes: usize,
    pub hidden_width: usize,
    pub seed: u64,
    /// Subtract the mean sampled return in the risk-neutral estimator.
    pub baseline: bool,
    /// Rescale any gradient whose Euclidean norm exceeds this.
    pub max_grad_norm: Option<T>,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            objective: RiskObjective::Neutral,
            n_models: 64,
            n_rollouts: 4,
            learning_rate: T::lit(0.01),
            planning_steps: 10,
            episodes: 2000,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            seed: 0,
            baseline: false,
            max_grad_norm: None,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.objective.validate()?;
        if self.n_models == 0 || self.n_rollouts == 0 || self.planning_steps == 0 {
            return Err(TrainError::Config("counts must be positive".into()));
        }
        if !(self.learning_rate > T::zero()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.max_grad_norm.is_some_and(|c| !(c > T::zero())) {
            return Err(TrainError::Config("gradient clip must be positive".into()));
        }
        if self.baseline && !matches!(self.objective, RiskObjective::Neutral) {
            return Err(TrainError::Config("the return baseline applies only to the neutral estimator".into()));
        }
        Ok(())
    }
}

/// Source of simulated models for a planning phase.
pub trait ModelSampler<T: Scalar> {
    type Model<'a>: Environment<T>
    where
        Self: 'a;

    fn sample_model<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> Self::Model<'a>;
}

/// Weighted finite set of environments; sampling clones one.
#[derive(Debug, Clone)]
pub struct FiniteModels<E, T> {
    pub models: Vec<E>,
    pub weights: Vec<T>,
}

impl<E: Environment<T> + Clone, T: Scalar> ModelSampler<T> for FiniteModels<E, T> {
    type Model<'a>
        = E
    where
        Self: 'a;

    fn sample_model<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> E {
        self.models[crate::mdp::sample_index(&self.weights, rng)].clone()
    }
}

impl<'b, T: Scalar> ModelSampler<T> for OptionSnapshot<'b, T> {
    type Model<'a>
        = SampledOptionModel<'a, 'b, T>
    where
        Self: 'a;

    fn sample_model<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> SampledOptionModel<'a, 'b, T> {
        sample_option_model(self, rng)
    }
}

/// A posterior that can be frozen for planning and updated from real episodes.
pub trait PlanningBelief<T: Scalar, S> {
    type Snapshot<'a>: ModelSampler<T>
    where
        Self: 'a;

    fn snapshot(&self) -> Self::Snapshot<'_>;
    fn observe(&mut self, traj: &Trajectory<S, T>, revealed: Option<usize>) -> Result<(), TrainError>;
}

/// The true environment itself; planning on it is plain REINFORCE with
/// oracle access to the dynamics.
#[derive(Debug, Clone)]
pub struct KnownModel<E>(pub E);

impl<T: Scalar, E: Environment<T> + Clone> ModelSampler<T> for KnownModel<E> {
    type Model<'a>
        = E
    where
        Self: 'a;

    fn sample_model<'a, R: Rng + ?Sized>(&'a self, _rng: &mut R) -> E {
        self.0.clone()
    }
}

impl<T: Scalar, E: Environment<T> + Clone> PlanningBelief<T, E::State> for KnownModel<E> {
    type Snapshot<'a>
        = &'a KnownModel<E>
    where
        Self: 'a;

    fn snapshot(&self) -> &KnownModel<E> {
        self
    }

    fn observe(&mut self, _traj: &Trajectory<E::State, T>, _revealed: Option<usize>) -> Result<(), TrainError> {
        Ok(())
    }
}

impl<T: Scalar, S: ModelSampler<T>> ModelSampler<T> for &S {
    type Model<'a>
        = S::Model<'a>
    where
        Self: 'a;

    fn sample_model<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> S::Model<'a> {
        (**self).sample_model(rng)
    }
}

/// Dirichlet mixture over a finite set of candidate environments.
impl<T: Scalar, E: Environment<T> + Clone> PlanningBelief<T, E::State> for ModelMixtureBelief<E, T> {
    type Snapshot<'a>
        = FiniteModels<E, T>
    where
        Self: 'a;

    fn snapshot(&self) -> FiniteModels<E, T> {
        FiniteModels { models: self.models().to_vec(), weights: self.weights() }
    }

    fn observe(&mut self, _traj: &Trajectory<E::State, T>, revealed: Option<usize>) -> Result<(), TrainError> {
        if let Some(i) = revealed {
            self.update_mixture(i)?;
        }
        Ok(())
    }
}

impl<T: Scalar> PlanningBelief<T, crate::envs::OptionState<T>> for OptionGpBelief<T> {
    type Snapshot<'a>
        = OptionSnapshot<'a, T>
    where
        Self: 'a;

    fn snapshot(&self) -> OptionSnapshot<'_, T> {
        OptionGpBelief::snapshot(self)
    }

    fn observe(&mut self, traj: &Trajectory<crate::envs::OptionState<T>, T>, revealed: Option<usize>) -> Result<(), TrainError> {
        self.observe_trajectory(traj)?;
        if let Some(i) = revealed {
            self.observe_model(i)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate<T> {
    pub gradient: Vec<T>,
    /// Mean of the per-model numerator return estimates.
    pub mean_return: T,
    /// `(Σw)² / Σw²` over the numerator weights; `N` for uniform weights.
    pub effective_sample_size: T,
}

struct Scratch<T> {
    ws: Workspace<T>,
    features: Vec<T>,
    score: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(policy: &SoftmaxPolicy<T>) -> Self {
        Scratch {
            ws: Workspace::default(),
            features: vec![T::zero(); policy.input_dim()],
            score: vec![T::zero(); policy.params().len()],
        }
    }
}

/// Mean return over `m` rollouts.
fn mean_return<T: Scalar, E: Environment<T>, R: Rng + ?Sized>(
    env: &mut E,
    policy: &SoftmaxPolicy<T>,
    m: usize,
    s: &mut Scratch<T>,
    rng: &mut R,
) -> Result<T, EnvError> {
    let mut total = T::zero();
    for _ in 0..m {
        total += rollout_return(env, policy, &mut s.ws, &mut s.features, None, rng)?;
    }
    Ok(total / T::of_usize(m))
}

/// Adds `(1/m) Σ_j (G_j − b) ∇log p(τ_j)` to `out` and returns `Σ_j G_j / m`.
fn reinforce<T: Scalar, E: Environment<T>, R: Rng + ?Sized>(
    env: &mut E,
    policy: &SoftmaxPolicy<T>,
    m: usize,
    baseline: T,
    s: &mut Scratch<T>,
    out: &mut [T],
    rng: &mut R,
) -> Result<T, EnvError> {
    let inv = T::one() / T::of_usize(m);
    let mut total = T::zero();
    for _ in 0..m {
        s.score.iter_mut().for_each(|x| *x = T::zero());
        let g = rollout_return(env, policy, &mut s.ws, &mut s.features, Some(&mut s.score), rng)?;
        total += g;
        let w = (g - baseline) * inv;
        for (o, sc) in out.iter_mut().zip(&s.score) {
            *o += w * *sc;
        }
    }
    Ok(total * inv)
}

/// Policy-gradient estimate for `config.objective` on models from `sampler`.
///
/// Numerator and denominator terms use separate streams forked from `rng`.
pub fn estimate_gradient<T, S, R>(
    policy: &SoftmaxPolicy<T>,
    sampler: &S,
    config: &TrainConfig<T>,
    rng: &mut R,
) -> Result<GradientEstimate<T>, TrainError>
where
    T: Scalar,
    S: ModelSampler<T>,
    R: Rng + ?Sized,
{
    let (n, m) = (config.n_models, config.n_rollouts);
    let p = policy.params().len();
    let mut s = Scratch::new(policy);
    let mut num_rng = fork(rng);
    let mut den_rng = fork(rng);
    match config.objective {
        RiskObjective::Neutral => {
            let mut grads = vec![T::zero(); p];
            let mut rets = Vec::with_capacity(n);
            if config.baseline {
                // baseline from a separate rollout set so it is independent of the scores
                let mut b = T::zero();
                for _ in 0..n {
                    let mut env = sampler.sample_model(&mut den_rng);
                    b += mean_return(&mut env, policy, m, &mut s, &mut den_rng)?;
                }
                let b = b / T::of_usize(n);
                for _ in 0..n {
                    let mut env = sampler.sample_model(&mut num_rng);
                    rets.push(reinforce(&mut env, policy, m, b, &mut s, &mut grads, &mut num_rng)?);
                }
            } else {
                for _ in 0..n {
                    let mut env = sampler.sample_model(&mut num_rng);
                    rets.push(reinforce(&mut env, policy, m, T::zero(), &mut s, &mut grads, &mut num_rng)?);
                }
            }
            let inv = T::one() / T::of_usize(n);
            grads.iter_mut().for_each(|g| *g *= inv);
            Ok(GradientEstimate {
                gradient: grads,
                mean_return: rets.iter().copied().sum::<T>() * inv,
                effective_sample_size: T::of_usize(n),
            })
        }
        RiskObjective::Exponential { beta } => {
            let mut g1 = Vec::with_capacity(n);
            let mut g3 = Vec::with_capacity(n);
            let mut pg = vec![T::zero(); n * p];
            for i in 0..n {
                let mut env = sampler.sample_model(&mut num_rng);
                g1.push(mean_return(&mut env, policy, m, &mut s, &mut num_rng)?);
                reinforce(&mut env, policy, m, T::zero(), &mut s, &mut pg[i * p..(i + 1) * p], &mut num_rng)?;
                let mut env = sampler.sample_model(&mut den_rng);
                g3.push(mean_return(&mut env, policy, m, &mut s, &mut den_rng)?);
            }
            let shift = g1.iter().chain(&g3).map(|g| beta * *g).fold(T::neg_infinity(), T::max);
            let w1: Vec<T> = g1.iter().map(|g| (beta * *g - shift).exp()).collect();
            let den: T = g3.iter().map(|g| (beta * *g - shift).exp()).sum();
            let mut grads = vec![T::zero(); p];
            for (i, w) in w1.iter().enumerate() {
                for (o, x) in grads.iter_mut().zip(&pg[i * p..(i + 1) * p]) {
                    *o += *w * *x;
                }
            }
            grads.iter_mut().for_each(|g| *g /= den);
            let sw: T = w1.iter().copied().sum();
            let sw2: T = w1.iter().map(|w| *w * *w).sum();
            Ok(GradientEstimate {
                gradient: grads,
                mean_return: g1.iter().copied().sum::<T>() / T::of_usize(n),
                effective_sample_size: sw * sw / sw2,
            })
        }
        RiskObjective::Cvar { alpha } => {
            let keep = cvar_count(alpha, n);
            let mut est = Vec::with_capacity(n);
            let mut pg = vec![T::zero(); n * p];
            for i in 0..n {
                let mut env = sampler.sample_model(&mut num_rng);
                est.push(mean_return(&mut env, policy, m, &mut s, &mut den_rng)?);
                reinforce(&mut env, policy, m, T::zero(), &mut s, &mut pg[i * p..(i + 1) * p], &mut num_rng)?;
            }
            let mut order: Vec<usize> = (0..n).collect();
            // stable sort: equal estimates keep sampling order
            order.sort_by(|a, b| est[*a].partial_cmp(&est[*b]).expect("finite returns"));
            let mut grads = vec![T::zero(); p];
            for &i in &order[..keep] {
                for (o, x) in grads.iter_mut().zip(&pg[i * p..(i + 1) * p]) {
                    *o += *x;
                }
            }
            let inv = T::one() / T::of_usize(keep);
            grads.iter_mut().for_each(|g| *g *= inv);
            Ok(GradientEstimate {
                gradient: grads,
                mean_return: est.iter().copied().sum::<T>() / T::of_usize(n),
                effective_sample_size: T::of_usize(keep),
            })
        }
    }
}

/// `⌈αN⌉`, at least one.
pub fn cvar_count<T: Scalar>(alpha: T, n: usize) -> usize {
    let k = (alpha * T::of_usize(n) - T::lit(1e-9)).ceil().to_usize().unwrap_or(n);
    k.clamp(1, n)
}

/// One deployed episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord<T, S> {
    pub episode: usize,
    pub discounted_return: T,
    pub steps: usize,
    pub final_state: Option<S>,
    /// Mean effective sample size over the episode's planning steps.
    pub mean_ess: T,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T, S> {
    pub policy: SoftmaxPolicy<T>,
    pub log: Vec<EpisodeRecord<T, S>>,
}

/// Named random streams of one training run.
pub struct TrainStreams {
    pub init: StreamRng,
    pub planning: StreamRng,
    pub env: StreamRng,
}

impl TrainStreams {
    pub fn from_seed(seed: u64) -> Self {
        TrainStreams {
            init: substream(seed, "init"),
            planning: substream(seed, "belief-sampling"),
            env: substream(seed, "env"),
        }
    }
}

fn clip<T: Scalar>(g: &mut [T], max_norm: Option<T>) {
    if let Some(c) = max_norm {
        let norm = g.iter().map(|x| *x * *x).sum::<T>().sqrt();
        if norm > c {
            let s = c / norm;
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Runs the plan-then-deploy loop for `config.episodes` real episodes.
///
/// The objective in `config` selects the estimator: neutral (Bayesian PG, or
/// plain REINFORCE with [`KnownModel`]), exponential utility, or CVaR. Updates
/// ascend the estimated gradient. `on_episode` is called after each
/// deployment with the record and the environment.
pub fn train<T, E, B, F>(
    env: &mut E,
    belief: &mut B,
    config: &TrainConfig<T>,
    mut on_episode: F,
) -> Result<TrainOutcome<T, E::State>, TrainError>
where
    T: Scalar,
    E: Environment<T>,
    B: PlanningBelief<T, E::State>,
    F: FnMut(&EpisodeRecord<T, E::State>, &Trajectory<E::State, T>),
{
    config.validate()?;
    let mut streams = TrainStreams::from_seed(config.seed);
    let mut policy = SoftmaxPolicy::random(env.feature_dim(), config.hidden_width, env.n_actions(), &mut streams.init);
    let mut log = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let mut ess = T::zero();
        {
            let snap = belief.snapshot();
            for step in 0..config.planning_steps {
                let mut est = estimate_gradient(&policy, &snap, config, &mut streams.planning)?;
                clip(&mut est.gradient, config.max_grad_norm);
                let before = policy.clone();
                for (p, g) in policy.params_mut().iter_mut().zip(&est.gradient) {
                    *p += config.learning_rate * *g;
                }
                if !policy.is_finite() {
                    return Err(TrainError::Diverged {
                        episode,
                        step,
                        checkpoint: serde_json::to_string(&PolicyCheckpoint::of(&before, config.seed))
                            .unwrap_or_default(),
                    });
                }
                ess += est.effective_sample_size;
            }
        }
        let traj = run_episode(env, &policy, &mut streams.env)?;
        belief.observe(&traj, env.revealed_model())?;
        let record = EpisodeRecord {
            episode,
            discounted_return: traj.discounted_return(),
            steps: traj.len(),
            final_state: traj.final_state().cloned(),
            mean_ess: ess / T::of_usize(config.planning_steps),
        };
        on_episode(&record, &traj);
        log.push(record);
    }
    Ok(TrainOutcome { policy, log })
}

/// [`train`] with a CVaR objective at level `alpha`.
pub fn train_cvar<T, E, B>(
    env: &mut E,
    belief: &mut B,
    config: &TrainConfig<T>,
    alpha: T,
) -> Result<TrainOutcome<T, E::State>, TrainError>
where
    T: Scalar,
    E: Environment<T>,
    B: PlanningBelief<T, E::State>,
{
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(TrainError::Risk(RiskError::Alpha(alpha.as_f64())));
    }
    let cfg = TrainConfig { objective: RiskObjective::Cvar { alpha }, ..config.clone() };
    train(env, belief, &cfg, |_, _| {})
}

/// Exact quantities for a finite set of bandit models with deterministic arm
/// payoffs, used as enumeration oracles.
pub mod exact {
    use super::*;

    /// `J_μ(θ) = Σ_a π(a) r_μ(a)` and `∇J_μ = Σ_a π(a) r_μ(a) ∇log π(a)`.
    pub fn bandit_value_and_gradient<T: Scalar>(policy: &SoftmaxPolicy<T>, arm_means: &[T]) -> (T, Vec<T>) {
        let x = [T::one()];
        let probs = policy.action_probs(&x).expect("valid bandit policy");
        let mut grad = vec![T::zero(); policy.params().len()];
        let mut value = T::zero();
        for (a, (&pa, &r)) in probs.iter().zip(arm_means).enumerate() {
            value += pa * r;
            let g = policy.grad_log_prob(&x, a).expect("valid bandit policy");
            for (o, gi) in grad.iter_mut().zip(&g) {
                *o += pa * r * *gi;
            }
        }
        (value, grad)
    }

    /// `Σ ξ e^{βJ} ∇J / Σ ξ e^{βJ}` by enumeration over models.
    pub fn exponential_gradient<T: Scalar>(policy: &SoftmaxPolicy<T>, models: &[Vec<T>], weights: &[T], beta: T) -> Vec<T> {
        let parts: Vec<(T, Vec<T>)> = models.iter().map(|m| bandit_value_and_gradient(policy, m)).collect();
        let shift = parts.iter().map(|(j, _)| beta * *j).fold(T::neg_infinity(), T::max);
        let mut num = vec![T::zero(); policy.params().len()];
        let mut den = T::zero();
        for ((j, g), w) in parts.iter().zip(weights) {
            let e = *w * (beta * *j - shift).exp();
            den += e;
            for (o, gi) in num.iter_mut().zip(g) {
                *o += e * *gi;
            }
        }
        num.iter_mut().for_each(|x| *x /= den);
        num
    }

    /// Certainty-equivalent objective `(1/β) log Σ ξ e^{βJ}`; the mean at `β = 0`.
    pub fn exponential_objective<T: Scalar>(policy: &SoftmaxPolicy<T>, models: &[Vec<T>], weights: &[T], beta: T) -> T {
        let values: Vec<T> = models.iter().map(|m| bandit_value_and_gradient(policy, m).0).collect();
        let wr = crate::risk::WeightedReturns::new(values, weights.to_vec()).expect("valid weights");
        crate::risk::epistemic_utility(&wr, beta)
    }
}
