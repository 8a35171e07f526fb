use std::time::Instant;

use rand::Rng;

use super::config::{AlgoId, ExperimentConfig};
use super::metrics::MetricRow;
use super::HarnessError;
use crate::belief::{sample_mdp, DirichletTransitionBelief, ModelMixtureBelief, NormalGamma, NormalGammaBelief};
use crate::envs::{
    gridworld_step, make_gridworld_variants, option_optimal_policy_value, EpisodeState, OptionEnv, OptionState, Variant,
};
use crate::erpg::{train, EpisodeRecord, KnownModel, TrainConfig};
use crate::ersbi::{plan, PlannerConfig};
use crate::mdp::{value_iteration, DeterministicPolicy, Trajectory};
use crate::option_belief::OptionGpBelief;
use crate::rng::substream;

fn elapsed_ms(timing: bool, since: Instant) -> u64 {
    if timing {
        since.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// ERSBI on the gridworld for one seed.
///
/// The belief combines the two structural variants, weighted by the
/// variant mixture, with `n_samples` draws from the count posteriors; each of
/// the `n_samples + 2` slots carries an equal share of the total mass. The plan
/// is recomputed every `replan_every` episodes and the policy is followed
/// deterministically in between.
pub fn run_gridworld_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRow>, HarnessError> {
    let spec = &cfg.gridworld;
    let settings = &cfg.ersbi;
    let objective = cfg.objective()?;
    let truth = Variant::from_index(substream(seed, "truth").random_range(0..2));
    let (mdp_a, mdp_b) = make_gridworld_variants(spec)?;
    let true_mdp = match truth {
        Variant::A => &mdp_a,
        Variant::B => &mdp_b,
    };
    let (v_star, _) = value_iteration(true_mdp, 1e-10)?;
    let reference = v_star[spec.start_index()];

    let ns = spec.n_cells();
    let mut transitions = DirichletTransitionBelief::new(ns, 4, settings.prior_alpha)?;
    let mut rewards = NormalGammaBelief::new(ns, 4, NormalGamma::standard());
    let mut mixture = ModelMixtureBelief::<Variant, f64>::uniform(vec![Variant::A, Variant::B])?;
    let mut sampling = substream(seed, "belief-sampling");
    let planner = PlannerConfig { tol: settings.tol, max_sweeps: settings.max_sweeps, scoring: settings.scoring };
    let slots = (settings.n_samples + 2) as f64;

    let mut policy = DeterministicPolicy::constant(ns, 0);
    let episodes = cfg.episodes();
    let mut rows = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let t0 = Instant::now();
        if episode % settings.replan_every == 0 {
            let xi = mixture.weights();
            let mut models = vec![mdp_a.clone(), mdp_b.clone()];
            let mut weights = vec![2.0 * xi[0] / slots, 2.0 * xi[1] / slots];
            for _ in 0..settings.n_samples {
                models.push(sample_mdp(&transitions, &rewards, spec.discount, &mut sampling)?);
                weights.push(1.0 / slots);
            }
            policy = plan(&models, &weights, &objective, &planner)?.policy;
        }

        let mut ep = EpisodeState::new(spec.start_index());
        let (mut ret, mut disc) = (0.0, 1.0);
        let mut revealed = false;
        while !ep.done {
            let (s, a) = (ep.state, policy.action(ep.state));
            let r = gridworld_step(spec, truth, &mut ep, a)?;
            ret += disc * r;
            disc *= spec.discount;
            transitions.update_transition(s, a, ep.state)?;
            rewards.update_reward(s, a, r)?;
            if spec.is_terminal(truth, ep.state) {
                transitions.mark_terminal(ep.state)?;
            }
            revealed |= spec.goals.contains(&spec.cell(ep.state));
        }
        if revealed {
            mixture.update_mixture(truth.index())?;
        }
        rows.push(MetricRow {
            seed,
            episode,
            ret,
            regret: reference - ret,
            fell: Some(u8::from(spec.is_water(ep.state))),
            wall_time_ms: elapsed_ms(cfg.timing, t0),
        });
    }
    Ok(rows)
}

/// One policy-gradient learner on the option task for one seed.
///
/// `pg` plans on the true environment; the Bayesian variants plan on samples
/// from the GP-and-mixture belief.
pub fn run_option_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRow>, HarnessError> {
    let spec = cfg.option.clone();
    let truth = substream(seed, "truth").random_range(0..spec.up_probs.len());
    let reference = option_optimal_policy_value(&spec, spec.up_probs[truth]).start_value();
    let pg = &cfg.pg;
    let train_cfg = TrainConfig {
        objective: cfg.objective()?,
        n_models: pg.n_models,
        n_rollouts: pg.n_rollouts,
        learning_rate: pg.learning_rate,
        planning_steps: pg.planning_steps,
        episodes: cfg.episodes(),
        hidden_width: pg.hidden_width,
        seed,
        baseline: pg.baseline,
        max_grad_norm: pg.max_grad_norm,
    };
    let mut env = OptionEnv::new(spec.clone(), truth)?;
    let mut rows = Vec::with_capacity(train_cfg.episodes);
    let mut last = Instant::now();
    let mut on_episode = |rec: &EpisodeRecord<f64, OptionState<f64>>, _: &Trajectory<OptionState<f64>, f64>| {
        rows.push(MetricRow {
            seed,
            episode: rec.episode,
            ret: rec.discounted_return,
            regret: reference - rec.discounted_return,
            fell: None,
            wall_time_ms: elapsed_ms(cfg.timing, last),
        });
        last = Instant::now();
    };
    match cfg.algo {
        AlgoId::Pg => {
            let mut belief = KnownModel(env.clone());
            train(&mut env, &mut belief, &train_cfg, &mut on_episode)?;
        }
        _ => {
            let mut belief = OptionGpBelief::new(spec, cfg.gp)?;
            train(&mut env, &mut belief, &train_cfg, &mut on_episode)?;
        }
    }
    Ok(rows)
}
