//! Epistemic risk-sensitive backward induction.
//!
//! The planner keeps one Q table per model. Each sweep backs up every `Q_μ`
//! from its own `V_μ`, scores each action by aggregating `Q_μ(s, a)` across
//! models with the risk objective, picks the best-scoring action as the shared
//! policy, and then sets every `V_μ(s)` to that action's `Q_μ`.
//!
//! The risk-greedy operator is not known to be a contraction, so sweeps are
//! capped and the outcome carries an explicit convergence flag.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{sample_mdp, BeliefError, DirichletTransitionBelief, NormalGammaBelief};
use crate::mdp::{dot, DeterministicPolicy, TabularMdp};
use crate::risk::{score_candidates, RiskError, RiskObjective, ScoringForm};
use crate::scalar::{argmax_lowest, Scalar};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no models to plan over")]
    NoModels,
    #[error("model {0} has a different state/action space than model 0")]
    Shape(usize),
    #[error("weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("state dump: {0}")]
    Dump(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig<T> {
    pub tol: T,
    pub max_sweeps: usize,
    pub scoring: ScoringForm,
}

impl<T: Scalar> Default for PlannerConfig<T> {
    fn default() -> Self {
        PlannerConfig { tol: T::lit(1e-6), max_sweeps: 10_000, scoring: ScoringForm::ExpectedUtility }
    }
}

/// Per-model Q/V tables, the aggregated scores and the shared policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerState<T> {
    pub n_models: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// `q_models[(m * n_states + s) * n_actions + a]`
    pub q_models: Vec<T>,
    /// `v_models[m * n_states + s]`
    pub v_models: Vec<T>,
    /// Aggregated score per `(s, a)`. For the expected-utility form with an
    /// exponential objective the stored row is `e^{-shift_s}·Σ_μ ξ(μ) U[Q_μ]`.
    pub q_belief: Vec<T>,
    pub score_shift: Vec<T>,
    pub policy: DeterministicPolicy,
}

impl<T: Scalar> PlannerState<T> {
    pub fn q(&self, m: usize, s: usize, a: usize) -> T {
        self.q_models[(m * self.n_states + s) * self.n_actions + a]
    }

    pub fn v(&self, m: usize, s: usize) -> T {
        self.v_models[m * self.n_states + s]
    }

    pub fn scores(&self, s: usize) -> &[T] {
        &self.q_belief[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Policy re-derived from the stored scores.
    pub fn greedy_from_scores(&self) -> DeterministicPolicy {
        DeterministicPolicy::new((0..self.n_states).map(|s| argmax_lowest(self.scores(s))).collect())
    }

    pub fn to_json(&self) -> Result<String, PlanError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome<T> {
    pub policy: DeterministicPolicy,
    pub state: PlannerState<T>,
    pub converged: bool,
    pub sweeps: usize,
}

fn check_weights<T: Scalar>(weights: &[T], n: usize) -> Result<(), PlanError> {
    if weights.len() != n {
        return Err(PlanError::Weights(format!("{} weights for {} models", weights.len(), n)));
    }
    let sum: T = weights.iter().copied().sum();
    if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite())
        || (sum - T::one()).abs() > T::lit(T::WEIGHT_TOL)
    {
        return Err(PlanError::Weights(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// Runs risk-sensitive backward induction over a finite set of models.
pub fn plan<T: Scalar>(
    models: &[TabularMdp<T>],
    weights: &[T],
    objective: &RiskObjective<T>,
    config: &PlannerConfig<T>,
) -> Result<PlanOutcome<T>, PlanError> {
    let first = models.first().ok_or(PlanError::NoModels)?;
    if let Some(i) = models.iter().position(|m| !m.same_shape(first)) {
        return Err(PlanError::Shape(i));
    }
    check_weights(weights, models.len())?;
    objective.validate()?;

    let (nm, ns, na) = (models.len(), first.n_states(), first.n_actions());
    let mut q_models = vec![T::zero(); nm * ns * na];
    let mut v_models = vec![T::zero(); nm * ns];
    let mut q_belief = vec![T::zero(); ns * na];
    let mut score_shift = vec![T::zero(); ns];
    let mut actions = vec![0usize; ns];
    let mut candidates = vec![T::zero(); na * nm];

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        for (m, mdp) in models.iter().enumerate() {
            let v = &v_models[m * ns..(m + 1) * ns];
            let q = &mut q_models[m * ns * na..(m + 1) * ns * na];
            let gamma = mdp.discount();
            for ((slot, row), r) in q.iter_mut().zip(mdp.transitions().chunks_exact(ns)).zip(mdp.rewards()) {
                *slot = *r + gamma * dot(row, v);
            }
        }
        let mut delta = T::zero();
        for s in 0..ns {
            for a in 0..na {
                for m in 0..nm {
                    candidates[a * nm + m] = q_models[(m * ns + s) * na + a];
                }
            }
            let row = &mut q_belief[s * na..(s + 1) * na];
            score_shift[s] = score_candidates(objective, config.scoring, &candidates, weights, row)?;
            let best = argmax_lowest(row);
            actions[s] = best;
            for m in 0..nm {
                let new_v = q_models[(m * ns + s) * na + best];
                let slot = &mut v_models[m * ns + s];
                delta = delta.max((new_v - *slot).abs());
                *slot = new_v;
            }
        }
        if delta <= config.tol {
            converged = true;
            break;
        }
    }

    let policy = DeterministicPolicy::new(actions);
    Ok(PlanOutcome {
        policy: policy.clone(),
        state: PlannerState {
            n_models: nm,
            n_states: ns,
            n_actions: na,
            q_models,
            v_models,
            q_belief,
            score_shift,
            policy,
        },
        converged,
        sweeps,
    })
}

/// Draws `n_samples` MDPs from the posterior and plans over them with uniform
/// weights.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_plan<T: Scalar, R: Rng + ?Sized>(
    transitions: &DirichletTransitionBelief<T>,
    rewards: &NormalGammaBelief<T>,
    discount: T,
    n_samples: usize,
    objective: &RiskObjective<T>,
    config: &PlannerConfig<T>,
    rng: &mut R,
) -> Result<PlanOutcome<T>, PlanError> {
    if n_samples == 0 {
        return Err(PlanError::NoModels);
    }
    let models = (0..n_samples)
        .map(|_| sample_mdp(transitions, rewards, discount, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let w = T::one() / T::of_usize(n_samples);
    plan(&models, &vec![w; n_samples], objective, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;

    /// State 0 offers a risky action 0 and a safe action 1; both end in the
    /// terminal state 1. The risky payoff is +1 in model 0 and −1 in model 1.
    fn bet(risky: f64) -> TabularMdp<f64> {
        TabularMdp::with_absorbing_terminals(
            2,
            2,
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            vec![risky, 0.0, 0.0, 0.0],
            0.9,
            vec![false, true],
        )
        .unwrap()
    }

    #[test]
    fn risk_ordering_on_the_bet() {
        let models = [bet(1.0), bet(-1.0)];
        let w = [0.5, 0.5];
        let cfg = PlannerConfig::default();
        let pick = |obj| plan(&models, &w, &obj, &cfg).unwrap().policy.action(0);
        assert_eq!(pick(RiskObjective::Exponential { beta: -1.0 }), 1);
        assert_eq!(pick(RiskObjective::Exponential { beta: 1.0 }), 0);
        assert_eq!(pick(RiskObjective::Neutral), 0);
        assert_eq!(pick(RiskObjective::Cvar { alpha: 0.5 }), 1);
    }

    #[test]
    fn single_model_neutral_matches_value_iteration() {
        let mdp = TabularMdp::new(
            2,
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0],
            vec![0.0, 0.1, 1.0, -0.2],
            0.9,
            vec![false; 2],
        )
        .unwrap();
        let (_, pi) = value_iteration(&mdp, 1e-10).unwrap();
        let out = plan(&[mdp], &[1.0], &RiskObjective::Neutral, &PlannerConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.policy, pi);
        assert_eq!(out.state.greedy_from_scores(), out.policy);
        for s in 0..2 {
            assert_eq!(out.state.v(0, s), out.state.q(0, s, out.policy.action(s)));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = PlannerConfig::default();
        let obj = RiskObjective::Neutral;
        assert!(matches!(plan::<f64>(&[], &[], &obj, &cfg), Err(PlanError::NoModels)));
        let other = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], 0.9, vec![false]).unwrap();
        assert!(matches!(plan(&[bet(1.0), other], &[0.5, 0.5], &obj, &cfg), Err(PlanError::Shape(1))));
        assert!(matches!(plan(&[bet(1.0)], &[0.7], &obj, &cfg), Err(PlanError::Weights(_))));
    }

    #[test]
    fn sweep_cap_reports_non_convergence() {
        let cfg = PlannerConfig { tol: 1e-12, max_sweeps: 3, scoring: ScoringForm::ExpectedUtility };
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.99, vec![false]).unwrap();
        let out = plan(&[mdp], &[1.0], &RiskObjective::Neutral, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.sweeps, 3);
    }

    #[test]
    fn state_dump_is_json() {
        let out = plan(&[bet(1.0)], &[1.0], &RiskObjective::Neutral, &PlannerConfig::default()).unwrap();
        let text = out.state.to_json().unwrap();
        let back: PlannerState<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, out.state);
    }
}
