//! Belief over option-task dynamics: a Dirichlet mixture over the candidate
//! up probabilities plus three GP residual functions on the price lattice.
//!
//! The GPs take the lattice coordinates `(t/T, k/T)` as input and model
//! - the holding reward minus its nominal value,
//! - the up-move factor minus `f_u`,
//! - the down-move factor minus `f_d`.
//!
//! A sampled model draws one candidate probability and one path from each GP.

use rand::Rng;

use crate::belief::{BeliefError, ModelMixtureBelief};
use crate::envs::{exercises, EnvError, Environment, EpisodeState, OptionSpec, OptionState};
use crate::gp::{DomainPath, DomainPosterior, GpBelief, GpError, GpHyper};
use crate::mdp::Trajectory;
use crate::scalar::Scalar;

const REWARD: usize = 0;
const UP: usize = 1;
const DOWN: usize = 2;

#[derive(Debug, Clone)]
pub struct OptionGpBelief<T> {
    spec: OptionSpec<T>,
    mixture: ModelMixtureBelief<T, T>,
    gps: [GpBelief<T>; 3],
    domain: Vec<Vec<T>>,
}

impl<T: Scalar> OptionGpBelief<T> {
    /// Symmetric mixture prior and zero-data GPs.
    pub fn new(spec: OptionSpec<T>, hyper: GpHyper<T>) -> Result<Self, GpError> {
        let mixture = ModelMixtureBelief::uniform(spec.up_probs.clone())
            .map_err(|e| GpError::Hyper(e.to_string()))?;
        let gp = GpBelief::new(2, hyper)?;
        let domain = (0..=spec.horizon)
            .flat_map(|t| (0..=t).map(move |k| (t, k)))
            .map(|(t, k)| Self::input_of(&spec, t, k).to_vec())
            .collect();
        Ok(OptionGpBelief { gps: [gp.clone(), gp.clone(), gp], mixture, spec, domain })
    }

    fn input_of(spec: &OptionSpec<T>, t: usize, k: usize) -> [T; 2] {
        let n = T::of_usize(spec.horizon);
        [T::of_usize(t) / n, T::of_usize(k) / n]
    }

    pub fn spec(&self) -> &OptionSpec<T> {
        &self.spec
    }

    pub fn mixture(&self) -> &ModelMixtureBelief<T, T> {
        &self.mixture
    }

    pub fn reward_gp(&self) -> &GpBelief<T> {
        &self.gps[REWARD]
    }

    pub fn up_gp(&self) -> &GpBelief<T> {
        &self.gps[UP]
    }

    pub fn down_gp(&self) -> &GpBelief<T> {
        &self.gps[DOWN]
    }

    pub fn observe_model(&mut self, model: usize) -> Result<(), BeliefError> {
        self.mixture.update_mixture(model)
    }

    /// Records the residuals of every voluntary wait in `traj`, then
    /// refactorizes the GPs.
    pub fn observe_trajectory(&mut self, traj: &Trajectory<OptionState<T>, T>) -> Result<(), GpError> {
        for step in traj.steps() {
            let (s, s2) = (&step.state, &step.next_state);
            if s2.t != s.t + 1 {
                continue;
            }
            let x = Self::input_of(&self.spec, s.t, s.ups);
            self.gps[REWARD].observe(&x, step.reward - self.spec.holding_reward)?;
            let factor = s2.price / (self.spec.discount * s.price);
            if s2.ups > s.ups {
                self.gps[UP].observe(&x, factor - self.spec.up_factor)?;
            } else {
                self.gps[DOWN].observe(&x, factor - self.spec.down_factor)?;
            }
        }
        self.refresh()
    }

    pub fn refresh(&mut self) -> Result<(), GpError> {
        for gp in &mut self.gps {
            gp.refresh()?;
        }
        Ok(())
    }

    /// Frozen view used for a planning phase.
    pub fn snapshot(&self) -> OptionSnapshot<'_, T> {
        OptionSnapshot {
            belief: self,
            posts: [
                DomainPosterior::new(&self.gps[REWARD], &self.domain),
                DomainPosterior::new(&self.gps[UP], &self.domain),
                DomainPosterior::new(&self.gps[DOWN], &self.domain),
            ],
        }
    }
}

pub struct OptionSnapshot<'a, T> {
    belief: &'a OptionGpBelief<T>,
    posts: [DomainPosterior<'a, T>; 3],
}

impl<'a, T: Scalar> OptionSnapshot<'a, T> {
    pub fn spec(&self) -> &OptionSpec<T> {
        &self.belief.spec
    }
}

/// Draws a mixture component and three GP residual paths.
pub fn sample_option_model<'s, 'a, T: Scalar, R: Rng + ?Sized>(
    snap: &'s OptionSnapshot<'a, T>,
    rng: &mut R,
) -> SampledOptionModel<'s, 'a, T> {
    let model = snap.belief.mixture.sample_index(rng);
    let paths = [snap.posts[REWARD].sample_path(rng), snap.posts[UP].sample_path(rng), snap.posts[DOWN].sample_path(rng)];
    SampledOptionModel { snap, model, up_prob: snap.belief.spec.up_probs[model], paths }
}

/// One posterior draw of the option dynamics.
pub struct SampledOptionModel<'s, 'a, T> {
    snap: &'s OptionSnapshot<'a, T>,
    pub model: usize,
    pub up_prob: T,
    paths: [DomainPath<T>; 3],
}

impl<T: Scalar> SampledOptionModel<'_, '_, T> {
    fn residual(&mut self, which: usize, node: usize) -> T {
        self.paths[which].eval(&self.snap.posts[which], node)
    }
}

impl<T: Scalar> Environment<T> for SampledOptionModel<'_, '_, T> {
    type State = OptionState<T>;

    fn n_actions(&self) -> usize {
        2
    }

    fn discount(&self) -> T {
        self.snap.spec().discount
    }

    fn horizon(&self) -> usize {
        self.snap.spec().horizon + 1
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn encode(&self, state: &OptionState<T>, out: &mut [T]) {
        self.snap.spec().encode(state, out);
    }

    fn start(&self) -> EpisodeState<OptionState<T>> {
        EpisodeState::new(OptionState::initial(self.snap.spec()))
    }

    fn step<R: Rng + ?Sized>(&mut self, ep: &mut EpisodeState<OptionState<T>>, action: usize, rng: &mut R) -> Result<T, EnvError> {
        if ep.done {
            return Err(EnvError::Done);
        }
        if action > 1 {
            return Err(EnvError::Action(action));
        }
        let spec = self.snap.spec();
        ep.elapsed += 1;
        if exercises(spec, &ep.state, action) {
            ep.done = true;
            return Ok(spec.payoff(ep.state.price));
        }
        let (gamma, hold, fu, fd) = (spec.discount, spec.holding_reward, spec.up_factor, spec.down_factor);
        let node = OptionSpec::<T>::node(ep.state.t, ep.state.ups);
        let up = T::sample_unit(rng) < self.up_prob;
        let factor = if up { fu + self.residual(UP, node) } else { fd + self.residual(DOWN, node) };
        let reward = hold + self.residual(REWARD, node);
        let st = &mut ep.state;
        st.price = gamma * factor.max(T::zero()) * st.price;
        st.t += 1;
        st.ups += usize::from(up);
        Ok(reward)
    }

    fn revealed_model(&self) -> Option<usize> {
        Some(self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{run_episode, OptionEnv};
    use crate::policy::SoftmaxPolicy;
    use crate::rng::substream;

    fn belief() -> OptionGpBelief<f64> {
        OptionGpBelief::new(OptionSpec::default(), GpHyper::default()).unwrap()
    }

    /// Always waits until the forced exercise.
    fn patient() -> SoftmaxPolicy<f64> {
        let mut p = SoftmaxPolicy::zeros(2, 0, 2);
        let b = p.output_bias_index(0);
        p.params_mut()[b] = 50.0;
        p
    }

    #[test]
    fn concentrated_mixture_sets_up_frequency() {
        let mut b = belief();
        for _ in 0..100_000 {
            b.observe_model(2).unwrap();
        }
        let snap = b.snapshot();
        let mut rng = substream(0, "om");
        let (mut ups, mut moves) = (0usize, 0usize);
        while moves < 10_000 {
            let mut m = sample_option_model(&snap, &mut rng);
            let mut ep = m.start();
            while !ep.done {
                let before = ep.state.ups;
                m.step(&mut ep, 0, &mut rng).unwrap();
                if !ep.done {
                    moves += 1;
                    ups += ep.state.ups - before;
                }
            }
        }
        let f = ups as f64 / moves as f64;
        assert!((f - 0.85).abs() < 3.0 * (0.85 * 0.15 / moves as f64).sqrt() + 1e-3, "{f}");
    }

    #[test]
    fn symmetric_components() {
        let b = belief();
        let snap = b.snapshot();
        let mut rng = substream(1, "om");
        let mut counts = [0usize; 3];
        let n = 6000;
        for _ in 0..n {
            counts[sample_option_model(&snap, &mut rng).model] += 1;
        }
        let sd = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 3.0).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn observed_nodes_reproduce_true_dynamics() {
        let mut b = belief();
        let mut env = OptionEnv::new(OptionSpec::default(), 1).unwrap();
        let mut rng = substream(2, "om");
        for _ in 0..50 {
            let t = run_episode(&mut env, &patient(), &mut rng).unwrap();
            b.observe_trajectory(&t).unwrap();
            b.observe_model(1).unwrap();
        }
        assert!(b.reward_gp().len() > 10);
        let (m, v) = b.reward_gp().predict(&[0.0, 0.0]).unwrap();
        assert!(m.abs() < 1e-3 && v < 1e-4);
        let snap = b.snapshot();
        let mut m = sample_option_model(&snap, &mut rng);
        let mut ep = m.start();
        let r = m.step(&mut ep, 0, &mut rng).unwrap();
        assert!((r + 0.1).abs() < 0.02);
        let f = ep.state.price / 0.95;
        assert!((f - 2.0).abs() < 0.05 || (f - 0.5).abs() < 0.05, "{f}");
    }

    #[test]
    fn sampled_episodes_terminate_within_horizon() {
        let b = belief();
        let snap = b.snapshot();
        let mut rng = substream(3, "om");
        for _ in 0..50 {
            let mut m = sample_option_model(&snap, &mut rng);
            let t = run_episode(&mut m, &patient(), &mut rng).unwrap();
            assert!(t.len() <= 21);
            assert!(t.steps().last().unwrap().reward <= 5.0);
        }
    }
}
