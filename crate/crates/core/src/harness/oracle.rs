//! Conformance report: library results against independently computed values.

use std::fmt;

use crate::belief::{DirichletTransitionBelief, ModelMixtureBelief, NormalGamma};
use crate::envs::{gridworld_step, make_gridworld_variants, option_step, EpisodeState, GridworldSpec, OptionSpec, OptionState, Variant, WAIT};
use crate::ersbi::{plan, PlannerConfig};
use crate::gp::{GpBelief, GpHyper};
use crate::mdp::{evaluate_policy, value_iteration, DeterministicPolicy, TabularMdp};
use crate::policy::SoftmaxPolicy;
use crate::risk::{cvar, epistemic_utility, exp_utility, value_at_risk, RiskObjective, WeightedReturns};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub expected: f64,
    pub actual: f64,
    pub tol: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        (self.expected - self.actual).abs() <= self.tol
    }
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<46} expected {:>+.10} got {:>+.10} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.expected,
            self.actual,
            self.tol
        )
    }
}

fn check(name: &'static str, expected: f64, actual: f64, tol: f64) -> OracleCheck {
    OracleCheck { name, expected, actual, tol }
}

/// Optimal value of `start` within `horizon` steps, by direct recursion over
/// cells; independent of the tabular machinery.
fn finite_horizon_gridworld_value(spec: &GridworldSpec<f64>, variant: Variant, horizon: usize) -> f64 {
    let n = spec.n_cells();
    let mut v = vec![0.0; n];
    for _ in 0..horizon {
        let mut next_v = vec![0.0; n];
        for (s, slot) in next_v.iter_mut().enumerate() {
            if spec.is_terminal(variant, s) {
                continue;
            }
            *slot = (0..4)
                .map(|a| {
                    let s2 = spec.moved(s, a);
                    if spec.is_water(s2) {
                        spec.water_reward
                    } else if s2 == spec.goal_index(variant) {
                        spec.goal_reward
                    } else {
                        spec.step_reward + spec.discount * v[s2]
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v = next_v;
    }
    v[spec.start_index()]
}

/// Safe action 0 (value 0 in both models) against risky action 1 (+1 / −1).
fn bet_choice(beta: f64) -> f64 {
    let bet = |risky: f64| {
        TabularMdp::new(2, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0], vec![0.0, risky, 0.0, 0.0], 0.9, vec![false, true])
            .expect("valid bet")
    };
    let out = plan(&[bet(1.0), bet(-1.0)], &[0.5, 0.5], &RiskObjective::exponential(beta), &PlannerConfig::default())
        .expect("bet plan");
    out.policy.action(0) as f64
}

/// Runs every check; the caller decides how to report failures.
pub fn conformance_report() -> Vec<OracleCheck> {
    let mut out = Vec::new();

    let single = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.9, vec![false]).expect("mdp");
    out.push(check("value iteration, geometric series", 10.0, value_iteration(&single, 1e-10).expect("vi").0[0], 1e-8));

    let chain = TabularMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], 0.5, vec![false, false]).expect("mdp");
    let v = evaluate_policy(&chain, &DeterministicPolicy::constant(2, 0), 1e-12).expect("eval");
    out.push(check("policy evaluation, 2-state chain V(0)", 4.0 / 3.0, v[0], 1e-10));
    out.push(check("policy evaluation, 2-state chain V(1)", 2.0 / 3.0, v[1], 1e-10));

    let spec = GridworldSpec::<f64>::default();
    let (a, b) = make_gridworld_variants(&spec).expect("variants");
    for (name, mdp, variant) in [("gridworld A, V(start) vs T=100 DP", &a, Variant::A), ("gridworld B, V(start) vs T=100 DP", &b, Variant::B)] {
        let vi = value_iteration(mdp, 1e-10).expect("vi").0[spec.start_index()];
        out.push(check(name, finite_horizon_gridworld_value(&spec, variant, 100), vi, 1e-6));
    }

    let mut dir = DirichletTransitionBelief::<f64>::new(2, 1, 0.5).expect("dirichlet");
    dir.observe_many(0, 0, 0, 3).expect("index");
    out.push(check("Dirichlet mean after 3 observations", 0.875, dir.mean_row(0, 0)[0], 1e-12));

    let ng = NormalGamma::<f64>::standard().updated(2.0);
    out.push(check("NormalGamma update: mu", 1.0, ng.mu, 1e-12));
    out.push(check("NormalGamma update: kappa", 2.0, ng.kappa, 1e-12));
    out.push(check("NormalGamma update: alpha", 1.5, ng.alpha, 1e-12));
    out.push(check("NormalGamma update: beta", 2.0, ng.beta, 1e-12));

    let mut mix = ModelMixtureBelief::<u8, f64>::uniform(vec![0, 1, 2]).expect("mixture");
    for _ in 0..5 {
        mix.update_mixture(1).expect("index");
    }
    let w = mix.weights();
    out.push(check("mixture weight, observed model", 0.75, w[1], 1e-12));
    out.push(check("mixture weight, other model", 0.125, w[0], 1e-12));

    let wr = WeightedReturns::new(vec![0.0, 1.0], vec![0.5, 0.5]).expect("wr");
    out.push(check("epistemic utility {0,1}, beta=-1", -(0.5 * (1.0 + (-1.0f64).exp())).ln(), epistemic_utility(&wr, -1.0), 1e-12));
    out.push(check("exp utility x=1, beta=-1", -(-1.0f64).exp(), exp_utility(1.0, -1.0), 1e-15));
    let four = WeightedReturns::uniform(vec![1.0, 2.0, 3.0, 4.0]).expect("wr");
    out.push(check("VaR {1,2,3,4} at 0.5", 2.0, value_at_risk(&four, 0.5).expect("var"), 0.0));
    out.push(check("CVaR {1,2,3,4} at 0.5", 1.5, cvar(&four, 0.5).expect("cvar"), 1e-15));

    let mut near = SoftmaxPolicy::<f64>::zeros(1, 0, 2);
    let idx = near.output_bias_index(0);
    near.params_mut()[idx] = 10.0;
    out.push(check("softmax with a +10 logit", 1.0 / (1.0 + (-10.0f64).exp()), near.action_probs(&[0.0]).expect("probs")[0], 1e-15));

    let ospec = OptionSpec::<f64>::default();
    let mut ep = EpisodeState::new(OptionState::initial(&ospec));
    let r = option_step(&ospec, 1.0, &mut ep, WAIT, &mut substream(0, "oracle")).expect("step");
    out.push(check("option price after one up move", 0.95 * 2.0, ep.state.price, 1e-15));
    out.push(check("option holding reward", -0.1, r, 1e-15));

    let mut gp = GpBelief::new(1, GpHyper { length_scale: 0.5, signal_variance: 1.0, noise_variance: 1e-4 }).expect("gp");
    gp.observe(&[0.0], 1.0).expect("obs");
    gp.observe(&[1.0], 2.0).expect("obs");
    gp.refresh().expect("refresh");
    let (m, var) = gp.predict(&[0.5]).expect("predict");
    // symmetric 2×2 system: K = [[a, b], [b, a]], k* = (c, c)
    let (ka, kb, kc) = (1.0 + 1e-4, (-2.0f64).exp(), (-0.5f64).exp());
    out.push(check("GP two-point mean at midpoint", kc * 3.0 / (ka + kb), m, 1e-10));
    out.push(check("GP two-point variance at midpoint", 1.0 - 2.0 * kc * kc / (ka + kb), var, 1e-10));

    let mut walk = EpisodeState::new(spec.start_index());
    let mut ret = 0.0;
    let mut disc = 1.0;
    for act in [crate::envs::EAST; 5] {
        ret += disc * gridworld_step(&spec, Variant::B, &mut walk, act).expect("step");
        disc *= spec.discount;
    }
    out.push(check("gridworld B, straight walk return", -0.1 * (1.0 - 0.99f64.powi(4)) / 0.01, ret, 1e-12));

    out.push(check("bet, beta=-1 chooses safe", 0.0, bet_choice(-1.0), 0.0));
    out.push(check("bet, beta=+1 chooses risky", 1.0, bet_choice(1.0), 0.0));
    out.push(check("bet, neutral tie picks action 0", 0.0, bet_choice(0.0), 0.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        for c in conformance_report() {
            assert!(c.passed(), "{c}");
        }
    }
}
