//! Optimal-stopping option task on a multiplicative price lattice.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, EpisodeState};
use crate::policy::{SoftmaxPolicy, Workspace};
use crate::scalar::Scalar;

pub const WAIT: usize = 0;
pub const EXERCISE: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptionSpec<T> {
    pub initial_price: T,
    pub holding_reward: T,
    pub horizon: usize,
    pub discount: T,
    pub up_factor: T,
    pub down_factor: T,
    /// Up-move probability of each candidate model.
    pub up_probs: Vec<T>,
    /// Exercise payoff cap.
    pub cap: T,
}

impl<T: Scalar> Default for OptionSpec<T> {
    fn default() -> Self {
        OptionSpec {
            initial_price: T::one(),
            holding_reward: T::lit(-0.1),
            horizon: 20,
            discount: T::lit(0.95),
            up_factor: T::lit(2.0),
            down_factor: T::lit(0.5),
            up_probs: vec![T::lit(0.45), T::lit(0.65), T::lit(0.85)],
            cap: T::lit(5.0),
        }
    }
}

impl<T: Scalar> OptionSpec<T> {
    pub fn validate(&self) -> Result<(), EnvError> {
        let (one, zero) = (T::one(), T::zero());
        if !(self.down_factor > zero && self.down_factor < one && self.up_factor > one) {
            return Err(EnvError::Spec("need 0 < down_factor < 1 < up_factor".into()));
        }
        if self.up_probs.is_empty() || self.up_probs.iter().any(|p| !(*p > zero && *p < one)) {
            return Err(EnvError::Spec("up probabilities must lie in (0, 1)".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::Spec("horizon must be at least 1".into()));
        }
        if !(self.discount > zero && self.discount < one) {
            return Err(EnvError::Spec(format!("discount {} outside (0, 1)", self.discount)));
        }
        if !(self.initial_price > zero && self.cap > zero && self.holding_reward.is_finite()) {
            return Err(EnvError::Spec("price and cap must be positive".into()));
        }
        Ok(())
    }

    pub fn payoff(&self, price: T) -> T {
        price.min(self.cap)
    }

    /// Number of lattice nodes `(t, k)` with `0 ≤ k ≤ t ≤ T`.
    pub fn n_nodes(&self) -> usize {
        (self.horizon + 1) * (self.horizon + 2) / 2
    }

    pub fn node(t: usize, ups: usize) -> usize {
        t * (t + 1) / 2 + ups
    }

    /// Nominal price at node `(t, k)`: `x₀ γ^t f_u^k f_d^{t−k}`.
    pub fn lattice_price(&self, t: usize, ups: usize) -> T {
        let g = self.discount.powi(t as i32);
        self.initial_price * g * self.up_factor.powi(ups as i32) * self.down_factor.powi((t - ups) as i32)
    }

    /// Policy input: price over cap and elapsed fraction of the horizon.
    pub fn encode(&self, state: &OptionState<T>, out: &mut [T]) {
        out[0] = state.price / self.cap;
        out[1] = T::of_usize(state.t) / T::of_usize(self.horizon);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionState<T> {
    pub price: T,
    /// Waits taken so far.
    pub t: usize,
    /// Up moves among those waits.
    pub ups: usize,
}

impl<T: Scalar> OptionState<T> {
    pub fn initial(spec: &OptionSpec<T>) -> Self {
        OptionState { price: spec.initial_price, t: 0, ups: 0 }
    }
}

/// Whether `action` exercises once the forced-exercise rule is applied.
pub fn exercises<T: Scalar>(spec: &OptionSpec<T>, state: &OptionState<T>, action: usize) -> bool {
    action == EXERCISE || state.t >= spec.horizon
}

/// One step with up probability `up_prob`. Waiting at `t = T` is forced to
/// exercise.
pub fn option_step<T: Scalar, R: Rng + ?Sized>(
    spec: &OptionSpec<T>,
    up_prob: T,
    ep: &mut EpisodeState<OptionState<T>>,
    action: usize,
    rng: &mut R,
) -> Result<T, EnvError> {
    if ep.done {
        return Err(EnvError::Done);
    }
    if action > EXERCISE {
        return Err(EnvError::Action(action));
    }
    ep.elapsed += 1;
    let st = &mut ep.state;
    if exercises(spec, st, action) {
        ep.done = true;
        return Ok(spec.payoff(st.price));
    }
    let up = T::sample_unit(rng) < up_prob;
    let f = if up { spec.up_factor } else { spec.down_factor };
    st.price = spec.discount * f * st.price;
    st.t += 1;
    st.ups += usize::from(up);
    Ok(spec.holding_reward)
}

/// The option task with a fixed true model.
#[derive(Debug, Clone)]
pub struct OptionEnv<T> {
    pub spec: OptionSpec<T>,
    pub model: usize,
}

impl<T: Scalar> OptionEnv<T> {
    pub fn new(spec: OptionSpec<T>, model: usize) -> Result<Self, EnvError> {
        spec.validate()?;
        if model >= spec.up_probs.len() {
            return Err(EnvError::Spec(format!("model {model} out of range")));
        }
        Ok(OptionEnv { spec, model })
    }

    pub fn up_prob(&self) -> T {
        self.spec.up_probs[self.model]
    }
}

impl<T: Scalar> Environment<T> for OptionEnv<T> {
    type State = OptionState<T>;

    fn n_actions(&self) -> usize {
        2
    }

    fn discount(&self) -> T {
        self.spec.discount
    }

    /// `T` waits followed by the forced exercise.
    fn horizon(&self) -> usize {
        self.spec.horizon + 1
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn encode(&self, state: &OptionState<T>, out: &mut [T]) {
        self.spec.encode(state, out);
    }

    fn start(&self) -> EpisodeState<OptionState<T>> {
        EpisodeState::new(OptionState::initial(&self.spec))
    }

    fn step<R: Rng + ?Sized>(&mut self, ep: &mut EpisodeState<OptionState<T>>, action: usize, rng: &mut R) -> Result<T, EnvError> {
        let p = self.up_prob();
        option_step(&self.spec, p, ep, action, rng)
    }

    fn revealed_model(&self) -> Option<usize> {
        Some(self.model)
    }
}

/// Backward-induction solution on the lattice for one up probability.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionDp<T> {
    /// Optimal value per node, indexed by [`OptionSpec::node`].
    pub values: Vec<T>,
    /// Whether exercising is optimal at the node (ties exercise).
    pub exercise: Vec<bool>,
}

impl<T: Scalar> OptionDp<T> {
    pub fn start_value(&self) -> T {
        self.values[0]
    }
}

/// Optimal stopping values by backward induction over the price lattice.
pub fn option_optimal_policy_value<T: Scalar>(spec: &OptionSpec<T>, up_prob: T) -> OptionDp<T> {
    let n = spec.horizon;
    let mut values = vec![T::zero(); spec.n_nodes()];
    let mut exercise = vec![true; spec.n_nodes()];
    for k in 0..=n {
        values[OptionSpec::<T>::node(n, k)] = spec.payoff(spec.lattice_price(n, k));
    }
    for t in (0..n).rev() {
        for k in 0..=t {
            let stop = spec.payoff(spec.lattice_price(t, k));
            let cont = spec.holding_reward
                + spec.discount
                    * (up_prob * values[OptionSpec::<T>::node(t + 1, k + 1)]
                        + (T::one() - up_prob) * values[OptionSpec::<T>::node(t + 1, k)]);
            let i = OptionSpec::<T>::node(t, k);
            exercise[i] = stop >= cont;
            values[i] = stop.max(cont);
        }
    }
    OptionDp { values, exercise }
}

/// Exact expected discounted return of a softmax policy on the nominal lattice.
pub fn option_policy_value<T: Scalar>(spec: &OptionSpec<T>, up_prob: T, policy: &SoftmaxPolicy<T>) -> T {
    let n = spec.horizon;
    let mut ws = Workspace::default();
    let mut x = [T::zero(); 2];
    // reach[k] is the probability of arriving at (t, k) still holding, times γ^t
    let mut reach = vec![T::one()];
    let mut total = T::zero();
    for t in 0..=n {
        let mut next = vec![T::zero(); t + 2];
        for (k, &w) in reach.iter().enumerate() {
            let state = OptionState { price: spec.lattice_price(t, k), t, ups: k };
            let p_ex = if t == n {
                T::one()
            } else {
                spec.encode(&state, &mut x);
                policy.probs_with(&x, &mut ws)[EXERCISE]
            };
            let p_wait = T::one() - p_ex;
            total += w * (p_ex * spec.payoff(state.price) + p_wait * spec.holding_reward);
            if t < n {
                let carry = w * p_wait * spec.discount;
                next[k + 1] += carry * up_prob;
                next[k] += carry * (T::one() - up_prob);
            }
        }
        reach = next;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn spec() -> OptionSpec<f64> {
        OptionSpec::default()
    }

    #[test]
    fn exercise_wait_and_price_update() {
        let s = spec();
        let mut rng = substream(1, "opt");
        let mut ep = EpisodeState::new(OptionState::initial(&s));
        assert_eq!(option_step(&s, 0.5, &mut ep.clone(), EXERCISE, &mut rng).unwrap(), 1.0);
        assert_eq!(option_step(&s, 1.0, &mut ep, WAIT, &mut rng).unwrap(), -0.1);
        assert!((ep.state.price - 1.9).abs() < 1e-12);
        assert_eq!((ep.state.t, ep.state.ups), (1, 1));
        option_step(&s, 1.0, &mut ep, EXERCISE, &mut rng).unwrap();
        assert_eq!(option_step(&s, 1.0, &mut ep, WAIT, &mut rng), Err(EnvError::Done));
    }

    #[test]
    fn forced_exercise_and_cap() {
        let s = spec();
        let mut rng = substream(2, "opt");
        let mut ep = EpisodeState::new(OptionState::initial(&s));
        let mut steps = 0;
        let mut last = 0.0;
        while !ep.done {
            last = option_step(&s, 1.0, &mut ep, WAIT, &mut rng).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 21);
        assert_eq!(last, 5.0);
    }

    #[test]
    fn lattice_property() {
        let s = spec();
        let mut rng = substream(3, "opt");
        for _ in 0..200 {
            let mut ep = EpisodeState::new(OptionState::initial(&s));
            while !ep.done {
                let st = ep.state;
                assert!((st.price - s.lattice_price(st.t, st.ups)).abs() <= 1e-12 * st.price.max(1.0));
                let a = if rng.random::<f64>() < 0.1 { EXERCISE } else { WAIT };
                let r = option_step(&s, 0.65, &mut ep, a, &mut rng).unwrap();
                assert!(r <= s.cap);
            }
        }
    }

    #[test]
    fn dp_matches_brute_force() {
        // enumerate every stopping rule on a 3-step lattice
        let mut s = spec();
        s.horizon = 3;
        let p = 0.65;
        let dp = option_optimal_policy_value(&s, p);
        fn best(s: &OptionSpec<f64>, p: f64, t: usize, k: usize) -> f64 {
            let stop = s.payoff(s.lattice_price(t, k));
            if t == s.horizon {
                return stop;
            }
            let cont = s.holding_reward + s.discount * (p * best(s, p, t + 1, k + 1) + (1.0 - p) * best(s, p, t + 1, k));
            stop.max(cont)
        }
        assert!((dp.start_value() - best(&s, p, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn policy_value_bounds_and_monte_carlo() {
        let s = spec();
        let pi = SoftmaxPolicy::<f64>::zeros(2, 4, 2);
        for &p in &s.up_probs {
            let v = option_policy_value(&s, p, &pi);
            assert!(v <= option_optimal_policy_value(&s, p).start_value() + 1e-12);
        }
        let mut env = OptionEnv::new(s.clone(), 1).unwrap();
        let mut rng = substream(4, "mc");
        let n = 40_000;
        let mut ws = Workspace::default();
        let mut x = [0.0; 2];
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let g = crate::envs::rollout_return(&mut env, &pi, &mut ws, &mut x, None, &mut rng).unwrap();
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - option_policy_value(&s, 0.65, &pi)).abs() < 4.0 * se);
    }

    #[test]
    fn validation() {
        let mut s = spec();
        s.down_factor = 1.5;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.up_probs.push(1.0);
        assert!(s.validate().is_err());
        assert!(OptionEnv::new(spec(), 3).is_err());
    }
}
