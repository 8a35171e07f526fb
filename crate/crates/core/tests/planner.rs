use epirisk::ersbi::{plan, PlannerConfig};
use epirisk::mdp::{evaluate_policy, DeterministicPolicy, TabularMdp};
use epirisk::risk::{epistemic_utility, RiskObjective, WeightedReturns};
use epirisk::rng::substream;
use rand::Rng;

fn two_state<R: Rng>(rng: &mut R) -> TabularMdp<f64> {
    let mut t = Vec::new();
    for _ in 0..4 {
        let p: f64 = rng.random();
        t.extend([p, 1.0 - p]);
    }
    let r = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    TabularMdp::new(2, 2, t, r, 0.9, vec![false, false]).unwrap()
}

fn objective(models: &[TabularMdp<f64>], weights: &[f64], policy: &DeterministicPolicy, beta: f64) -> f64 {
    let starts = models.iter().map(|m| evaluate_policy(m, policy, 1e-12).unwrap()[0]).collect();
    epistemic_utility(&WeightedReturns::new(starts, weights.to_vec()).unwrap(), beta)
}

/// Scores all four stationary deterministic policies from state 0 and reports
/// how often the greedy sweep lands on the best one. Agreement is recorded,
/// not required: the sweep is a coordinate scheme.
#[test]
fn greedy_plan_against_policy_enumeration() {
    let mut rng = substream(11, "policy-enumeration");
    let weights = [0.5, 0.5];
    for beta in [-1.0, 0.0] {
        let (mut agree, mut worst_gap) = (0, 0.0f64);
        let trials = 200;
        for _ in 0..trials {
            let models = [two_state(&mut rng), two_state(&mut rng)];
            let out = plan(&models, &weights, &RiskObjective::exponential(beta), &PlannerConfig::default()).unwrap();
            let best = (0..4)
                .map(|k| objective(&models, &weights, &DeterministicPolicy::new(vec![k & 1, k >> 1]), beta))
                .fold(f64::NEG_INFINITY, f64::max);
            let got = objective(&models, &weights, &out.policy, beta);
            assert!(got <= best + 1e-9);
            if best - got <= 1e-9 {
                agree += 1;
            }
            worst_gap = worst_gap.max(best - got);
        }
        eprintln!("beta {beta}: greedy plan optimal on {agree}/{trials} model pairs, worst gap {worst_gap:.3e}");
    }
}
