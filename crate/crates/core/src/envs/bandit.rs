//! One-step two-armed bandit with deterministic arm payoffs.

use rand::Rng;

use super::{EnvError, Environment, EpisodeState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoArmedBandit<T> {
    pub means: [T; 2],
    /// Index of this bandit among candidate models, when it is one.
    pub model: Option<usize>,
}

impl<T: Scalar> TwoArmedBandit<T> {
    pub fn new(means: [T; 2]) -> Self {
        TwoArmedBandit { means, model: None }
    }

    pub fn with_model(means: [T; 2], model: usize) -> Self {
        TwoArmedBandit { means, model: Some(model) }
    }
}

impl<T: Scalar> Environment<T> for TwoArmedBandit<T> {
    type State = ();

    fn n_actions(&self) -> usize {
        2
    }

    fn discount(&self) -> T {
        T::zero()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn feature_dim(&self) -> usize {
        1
    }

    fn encode(&self, _state: &(), out: &mut [T]) {
        out[0] = T::one();
    }

    fn start(&self) -> EpisodeState<()> {
        EpisodeState::new(())
    }

    fn step<R: Rng + ?Sized>(&mut self, ep: &mut EpisodeState<()>, action: usize, _rng: &mut R) -> Result<T, EnvError> {
        if ep.done {
            return Err(EnvError::Done);
        }
        let r = *self.means.get(action).ok_or(EnvError::Action(action))?;
        ep.done = true;
        ep.elapsed = 1;
        Ok(r)
    }

    fn revealed_model(&self) -> Option<usize> {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::run_episode;
    use crate::policy::SoftmaxPolicy;
    use crate::rng::substream;

    #[test]
    fn single_step_payoffs() {
        let mut b = TwoArmedBandit::new([1.0, 0.0]);
        let mut rng = substream(0, "bandit");
        let mut ep = b.start();
        assert_eq!(b.step(&mut ep, 0, &mut rng).unwrap(), 1.0);
        assert!(ep.done);
        assert_eq!(b.step(&mut ep, 1, &mut rng), Err(EnvError::Done));
        let mut ep = b.start();
        assert_eq!(b.step(&mut ep, 2, &mut rng), Err(EnvError::Action(2)));
    }

    #[test]
    fn episode_return_is_arm_mean() {
        let mut b = TwoArmedBandit::new([0.25, 0.75]);
        let pi = SoftmaxPolicy::<f64>::zeros(1, 0, 2);
        let mut rng = substream(1, "bandit");
        for _ in 0..20 {
            let t = run_episode(&mut b, &pi, &mut rng).unwrap();
            assert_eq!(t.len(), 1);
            assert_eq!(t.discounted_return(), b.means[t.steps()[0].action]);
        }
    }
}
