//! Finite MDPs, trajectories and the risk-neutral dynamic-programming
//! routines used both as baselines and as test oracles.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{argmax_lowest, Scalar};

/// Default sup-norm tolerance for value iteration and policy evaluation.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Iteration cap for value iteration and policy evaluation.
pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("transition row ({state}, {action}) sums to {sum} instead of 1")]
    NotStochastic { state: usize, action: usize, sum: f64 },
    #[error("negative or non-finite transition probability at ({state}, {action}, {next})")]
    BadProbability { state: usize, action: usize, next: usize },
    #[error("non-finite reward at ({state}, {action})")]
    BadReward { state: usize, action: usize },
    #[error("discount must lie in [0, 1), got {0}")]
    BadDiscount(f64),
    #[error("terminal state {0} must self-loop with zero reward")]
    TerminalNotAbsorbing(usize),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("policy has {got} entries, expected {expected}")]
    PolicyNotTotal { expected: usize, got: usize },
    #[error("action {action} out of range in state {state}")]
    ActionOutOfRange { state: usize, action: usize },
    #[error("state {0} out of range")]
    StateOutOfRange(usize),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
}

/// A finite MDP with dense transition tensor `(s, a, s')` and reward table `(s, a)`.
///
/// Fields are private so a constructed value is always valid: rows are
/// stochastic, the discount is below one and terminal states are absorbing with
/// zero reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp<T> {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<T>,
    rewards: Vec<T>,
    discount: T,
    terminal: Vec<bool>,
}

impl<T: Scalar> TabularMdp<T> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<T>,
        rewards: Vec<T>,
        discount: T,
        terminal: Vec<bool>,
    ) -> Result<Self, MdpError> {
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            discount,
            terminal,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Like [`TabularMdp::new`] but first overwrites the rows of terminal
    /// states with absorbing self-loops and zero reward.
    pub fn with_absorbing_terminals(
        n_states: usize,
        n_actions: usize,
        mut transitions: Vec<T>,
        mut rewards: Vec<T>,
        discount: T,
        terminal: Vec<bool>,
    ) -> Result<Self, MdpError> {
        if terminal.len() == n_states
            && transitions.len() == n_states * n_actions * n_states
            && rewards.len() == n_states * n_actions
        {
            for s in (0..n_states).filter(|&s| terminal[s]) {
                for a in 0..n_actions {
                    let base = (s * n_actions + a) * n_states;
                    for p in &mut transitions[base..base + n_states] {
                        *p = T::zero();
                    }
                    transitions[base + s] = T::one();
                    rewards[s * n_actions + a] = T::zero();
                }
            }
        }
        Self::new(n_states, n_actions, transitions, rewards, discount, terminal)
    }

    fn validate(&self) -> Result<(), MdpError> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(MdpError::Shape("need at least one state and one action".into()));
        }
        if self.transitions.len() != ns * na * ns {
            return Err(MdpError::Shape(format!(
                "transition tensor has {} entries, expected {}",
                self.transitions.len(),
                ns * na * ns
            )));
        }
        if self.rewards.len() != ns * na {
            return Err(MdpError::Shape(format!(
                "reward table has {} entries, expected {}",
                self.rewards.len(),
                ns * na
            )));
        }
        if self.terminal.len() != ns {
            return Err(MdpError::Shape("terminal mask length differs from n_states".into()));
        }
        let g = self.discount;
        if !(g >= T::zero() && g < T::one()) {
            return Err(MdpError::BadDiscount(g.as_f64()));
        }
        let tol = T::lit(T::STOCHASTIC_TOL);
        for s in 0..ns {
            for a in 0..na {
                let row = self.row(s, a);
                for (next, &p) in row.iter().enumerate() {
                    if !(p >= T::zero()) || !p.is_finite() {
                        return Err(MdpError::BadProbability { state: s, action: a, next });
                    }
                }
                let sum: T = row.iter().copied().sum();
                if (sum - T::one()).abs() > tol {
                    return Err(MdpError::NotStochastic { state: s, action: a, sum: sum.as_f64() });
                }
                if !self.reward(s, a).is_finite() {
                    return Err(MdpError::BadReward { state: s, action: a });
                }
                if self.terminal[s]
                    && ((row[s] - T::one()).abs() > tol || self.reward(s, a) != T::zero())
                {
                    return Err(MdpError::TerminalNotAbsorbing(s));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    /// Next-state distribution `T(· | s, a)`.
    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[T] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transitions[base..base + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> T {
        self.rewards[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[T] {
        &self.transitions
    }

    /// One-step lookahead `R(s,a) + γ Σ_{s'} T(s'|s,a) V(s')`.
    #[inline]
    pub fn backup(&self, values: &[T], s: usize, a: usize) -> T {
        self.reward(s, a) + self.discount * dot(self.row(s, a), values)
    }

    /// `true` when both MDPs share state and action spaces.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// Draws a successor of `(s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.row(s, a), rng)
    }
}

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [T::zero(); 8];
    let blocks = n / 8;
    for b in 0..blocks {
        let (xb, yb) = (&x[b * 8..b * 8 + 8], &y[b * 8..b * 8 + 8]);
        for k in 0..8 {
            acc[k] += xb[k] * yb[k];
        }
    }
    let mut tail = T::zero();
    for k in blocks * 8..n {
        tail += x[k] * y[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Inverse-CDF draw from an (approximately) normalized probability vector.
pub fn sample_index<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = T::sample_unit(rng);
    let mut acc = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left `acc` marginally below one: fall back to the last atom with mass
    probs.iter().rposition(|&p| p > T::zero()).unwrap_or(probs.len() - 1)
}

/// A state → action map, total over every state. Terminal states carry an
/// arbitrary action that is never executed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        DeterministicPolicy { actions }
    }

    pub fn constant(n_states: usize, action: usize) -> Self {
        DeterministicPolicy { actions: vec![action; n_states] }
    }

    #[inline]
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check_total<T: Scalar>(&self, mdp: &TabularMdp<T>) -> Result<(), MdpError> {
        if self.actions.len() != mdp.n_states() {
            return Err(MdpError::PolicyNotTotal {
                expected: mdp.n_states(),
                got: self.actions.len(),
            });
        }
        for (s, &a) in self.actions.iter().enumerate() {
            if a >= mdp.n_actions() {
                return Err(MdpError::ActionOutOfRange { state: s, action: a });
            }
        }
        Ok(())
    }

    /// Greedy policy with respect to `values`, ties to the lowest action.
    pub fn greedy<T: Scalar>(mdp: &TabularMdp<T>, values: &[T]) -> Self {
        let mut q = vec![T::zero(); mdp.n_actions()];
        let actions = (0..mdp.n_states())
            .map(|s| {
                for (a, slot) in q.iter_mut().enumerate() {
                    *slot = mdp.backup(values, s, a);
                }
                argmax_lowest(&q)
            })
            .collect();
        DeterministicPolicy { actions }
    }
}

/// Anything that picks an action in a tabular state.
pub trait TabularPolicy<T> {
    fn act<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize;
}

impl<T> TabularPolicy<T> for DeterministicPolicy {
    fn act<R: Rng + ?Sized>(&self, s: usize, _rng: &mut R) -> usize {
        self.actions[s]
    }
}

/// Per-state action distributions, stored row-major `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy<T> {
    n_actions: usize,
    probs: Vec<T>,
}

impl<T: Scalar> StochasticPolicy<T> {
    pub fn new(n_actions: usize, probs: Vec<T>) -> Self {
        assert!(n_actions > 0 && probs.len() % n_actions == 0, "ragged policy table");
        StochasticPolicy { n_actions, probs }
    }

    pub fn probs(&self, s: usize) -> &[T] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

impl<T: Scalar> TabularPolicy<T> for StochasticPolicy<T> {
    fn act<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.probs(s), rng)
    }
}

/// One transition `(s_t, a_t, r_{t+1}, s_{t+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step<S, T> {
    pub state: S,
    pub action: usize,
    pub reward: T,
    pub next_state: S,
}

/// An episode record with its discounted return `Σ_t γ^t r_{t+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S, T> {
    steps: Vec<Step<S, T>>,
    discounted_return: T,
    discount: T,
    horizon: usize,
    next_weight: T,
}

impl<S, T: Scalar> Trajectory<S, T> {
    pub fn new(discount: T, horizon: usize) -> Self {
        Trajectory {
            steps: Vec::new(),
            discounted_return: T::zero(),
            discount,
            horizon,
            next_weight: T::one(),
        }
    }

    /// Appends a step. Panics if the horizon cap would be exceeded.
    pub fn push(&mut self, step: Step<S, T>) {
        assert!(self.steps.len() < self.horizon, "trajectory exceeds horizon cap");
        self.discounted_return += self.next_weight * step.reward;
        self.next_weight *= self.discount;
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[Step<S, T>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn discounted_return(&self) -> T {
        self.discounted_return
    }

    pub fn final_state(&self) -> Option<&S> {
        self.steps.last().map(|s| &s.next_state)
    }

    /// Return recomputed from the step list.
    pub fn recomputed_return(&self) -> T {
        let mut w = T::one();
        let mut g = T::zero();
        for st in &self.steps {
            g += w * st.reward;
            w *= self.discount;
        }
        g
    }
}

fn check_tol<T: Scalar>(tol: T) -> Result<(), MdpError> {
    if tol > T::zero() && tol.is_finite() {
        Ok(())
    } else {
        Err(MdpError::BadTolerance(tol.as_f64()))
    }
}

/// Sup-norm step size under which the iterate is within `tol` of the fixed
/// point of a γ-contraction.
fn stop_threshold<T: Scalar>(tol: T, discount: T) -> T {
    if discount > T::zero() {
        tol * (T::one() - discount) / discount
    } else {
        T::infinity()
    }
}

/// Optimal values and the greedy policy.
///
/// Iterates until successive iterates differ by at most `tol (1-γ)/γ`, which
/// places the returned values within `tol` of `V*` and bounds the Bellman
/// residual by `tol (1-γ)`.
pub fn value_iteration<T: Scalar>(
    mdp: &TabularMdp<T>,
    tol: T,
) -> Result<(Vec<T>, DeterministicPolicy), MdpError> {
    check_tol(tol)?;
    let threshold = stop_threshold(tol, mdp.discount());
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![T::zero(); ns];
    let mut next = vec![T::zero(); ns];
    for _ in 0..MAX_ITERATIONS {
        let mut delta = T::zero();
        for (s, slot) in next.iter_mut().enumerate() {
            let best = (0..na)
                .map(|a| mdp.backup(&v, s, a))
                .fold(T::neg_infinity(), T::max);
            delta = delta.max((best - v[s]).abs());
            *slot = best;
        }
        std::mem::swap(&mut v, &mut next);
        if delta <= threshold {
            let policy = DeterministicPolicy::greedy(mdp, &v);
            return Ok((v, policy));
        }
    }
    Err(MdpError::NoConvergence(MAX_ITERATIONS))
}

/// Values `V^π` of a deterministic policy, with the same stopping rule as
/// [`value_iteration`].
pub fn evaluate_policy<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &DeterministicPolicy,
    tol: T,
) -> Result<Vec<T>, MdpError> {
    check_tol(tol)?;
    policy.check_total(mdp)?;
    let threshold = stop_threshold(tol, mdp.discount());
    let ns = mdp.n_states();
    let mut v = vec![T::zero(); ns];
    let mut next = vec![T::zero(); ns];
    for _ in 0..MAX_ITERATIONS {
        let mut delta = T::zero();
        for (s, slot) in next.iter_mut().enumerate() {
            let q = mdp.backup(&v, s, policy.action(s));
            delta = delta.max((q - v[s]).abs());
            *slot = q;
        }
        std::mem::swap(&mut v, &mut next);
        if delta <= threshold {
            return Ok(v);
        }
    }
    Err(MdpError::NoConvergence(MAX_ITERATIONS))
}

/// Sup norm of `max_a backup(V)(s) - V(s)`.
pub fn bellman_residual<T: Scalar>(mdp: &TabularMdp<T>, values: &[T]) -> T {
    (0..mdp.n_states())
        .map(|s| {
            let best = (0..mdp.n_actions())
                .map(|a| mdp.backup(values, s, a))
                .fold(T::neg_infinity(), T::max);
            (best - values[s]).abs()
        })
        .fold(T::zero(), T::max)
}

/// Simulates one episode from `start`, stopping at a terminal state or after
/// `horizon` steps.
pub fn rollout<T, P, R>(
    mdp: &TabularMdp<T>,
    policy: &P,
    start: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory<usize, T>, MdpError>
where
    T: Scalar,
    P: TabularPolicy<T>,
    R: Rng + ?Sized,
{
    if start >= mdp.n_states() {
        return Err(MdpError::StateOutOfRange(start));
    }
    let mut traj = Trajectory::new(mdp.discount(), horizon);
    let mut s = start;
    while !mdp.is_terminal(s) && traj.len() < horizon {
        let a = policy.act(s, rng);
        if a >= mdp.n_actions() {
            return Err(MdpError::ActionOutOfRange { state: s, action: a });
        }
        let next = mdp.sample_next(s, a, rng);
        traj.push(Step { state: s, action: a, reward: mdp.reward(s, a), next_state: next });
        s = next;
    }
    Ok(traj)
}
