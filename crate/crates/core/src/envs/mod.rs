//! Episodic environments behind a common interface.

use std::fmt::Debug;

use rand::Rng;
use thiserror::Error;

use crate::mdp::{Step, Trajectory};
use crate::policy::{SoftmaxPolicy, Workspace};
use crate::scalar::Scalar;

mod bandit;
mod gridworld;
mod option;

pub use bandit::TwoArmedBandit;
pub use gridworld::{
    count_falls, gridworld_step, make_gridworld_variants, Cell, Gridworld, GridworldSpec, Variant, EAST,
    NORTH, SOUTH, WEST,
};
pub use option::{
    exercises, option_optimal_policy_value, option_policy_value, option_step, OptionDp, OptionEnv, OptionSpec, OptionState, EXERCISE, WAIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step requested after the episode ended")]
    Done,
    #[error("action {0} is not available")]
    Action(usize),
    #[error("invalid environment spec: {0}")]
    Spec(String),
}

/// Environment-specific state plus episode bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState<S> {
    pub state: S,
    pub done: bool,
    pub elapsed: usize,
}

impl<S> EpisodeState<S> {
    pub fn new(state: S) -> Self {
        EpisodeState { state, done: false, elapsed: 0 }
    }
}

pub trait Environment<T: Scalar> {
    type State: Clone + Debug;

    fn n_actions(&self) -> usize;
    fn discount(&self) -> T;
    /// Maximum number of steps in an episode.
    fn horizon(&self) -> usize;
    fn feature_dim(&self) -> usize;
    /// Writes the policy input for `state` into `out` (length `feature_dim`).
    fn encode(&self, state: &Self::State, out: &mut [T]);
    fn start(&self) -> EpisodeState<Self::State>;
    /// Advances the episode and returns the reward. Fails once `ep.done` is set.
    fn step<R: Rng + ?Sized>(
        &mut self,
        ep: &mut EpisodeState<Self::State>,
        action: usize,
        rng: &mut R,
    ) -> Result<T, EnvError>;
    /// Which candidate model generated the episode, if the environment says so.
    fn revealed_model(&self) -> Option<usize> {
        None
    }
}

/// Runs one episode with a softmax policy, recording every step.
pub fn run_episode<T, E, R>(env: &mut E, policy: &SoftmaxPolicy<T>, rng: &mut R) -> Result<Trajectory<E::State, T>, EnvError>
where
    T: Scalar,
    E: Environment<T>,
    R: Rng + ?Sized,
{
    let mut ws = Workspace::default();
    let mut x = vec![T::zero(); env.feature_dim()];
    let mut ep = env.start();
    let mut traj = Trajectory::new(env.discount(), env.horizon());
    while !ep.done {
        env.encode(&ep.state, &mut x);
        let a = policy.act(&x, &mut ws, None, rng);
        let before = ep.state.clone();
        let r = env.step(&mut ep, a, rng)?;
        traj.push(Step { state: before, action: a, reward: r, next_state: ep.state.clone() });
    }
    Ok(traj)
}

/// Discounted return of one episode, optionally accumulating the summed score
/// `Σ_t ∇ log π(a_t | s_t)` into `score`.
pub fn rollout_return<T, E, R>(
    env: &mut E,
    policy: &SoftmaxPolicy<T>,
    ws: &mut Workspace<T>,
    features: &mut [T],
    mut score: Option<&mut [T]>,
    rng: &mut R,
) -> Result<T, EnvError>
where
    T: Scalar,
    E: Environment<T>,
    R: Rng + ?Sized,
{
    let gamma = env.discount();
    let mut ep = env.start();
    let mut weight = T::one();
    let mut g = T::zero();
    while !ep.done {
        env.encode(&ep.state, features);
        let a = policy.act(features, ws, score.as_deref_mut(), rng);
        g += weight * env.step(&mut ep, a, rng)?;
        weight *= gamma;
    }
    Ok(g)
}
