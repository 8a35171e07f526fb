//! Risk functionals over per-model expected returns.
//!
//! The inputs are the values `E_μ^π[R]` of one policy under each model μ in
//! the support of the belief, together with the belief weights `ξ(μ)`. The
//! functionals score that distribution of expected returns: its mean
//! (risk-neutral), the exponential-utility certainty equivalent, or the
//! lower-tail VaR/CVaR.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{weighted_log_sum_exp, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("empty support")]
    Empty,
    #[error("values and weights differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("weights must be nonnegative and sum to one (sum {0})")]
    Weights(f64),
    #[error("non-finite value")]
    NonFinite,
    #[error("exponential utility needs β ≠ 0")]
    ZeroBeta,
    #[error("CVaR level must lie in (0, 1], got {0}")]
    Alpha(f64),
}

/// Which scoring functional a planner or learner optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RiskObjective<T> {
    Neutral,
    Exponential { beta: T },
    Cvar { alpha: T },
}

impl<T: Scalar> RiskObjective<T> {
    /// Exponential utility with parameter `beta`; `beta == 0` maps to
    /// [`RiskObjective::Neutral`].
    pub fn exponential(beta: T) -> Self {
        if beta == T::zero() {
            RiskObjective::Neutral
        } else {
            RiskObjective::Exponential { beta }
        }
    }

    pub fn cvar(alpha: T) -> Result<Self, RiskError> {
        check_alpha(alpha)?;
        Ok(RiskObjective::Cvar { alpha })
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        match *self {
            RiskObjective::Neutral => Ok(()),
            RiskObjective::Exponential { beta } if beta == T::zero() || !beta.is_finite() => {
                Err(RiskError::ZeroBeta)
            }
            RiskObjective::Exponential { .. } => Ok(()),
            RiskObjective::Cvar { alpha } => check_alpha(alpha),
        }
    }

    /// β of the exponential family, zero for the neutral objective.
    pub fn beta(&self) -> Option<T> {
        match *self {
            RiskObjective::Neutral => Some(T::zero()),
            RiskObjective::Exponential { beta } => Some(beta),
            RiskObjective::Cvar { .. } => None,
        }
    }

    /// The objective's certainty equivalent of a distribution of returns.
    pub fn evaluate(&self, wr: &WeightedReturns<T>) -> Result<T, RiskError> {
        self.validate()?;
        Ok(match *self {
            RiskObjective::Neutral => wr.mean(),
            RiskObjective::Exponential { beta } => epistemic_utility(wr, beta),
            RiskObjective::Cvar { alpha } => cvar(wr, alpha)?,
        })
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<(), RiskError> {
    if alpha > T::zero() && alpha <= T::one() {
        Ok(())
    } else {
        Err(RiskError::Alpha(alpha.as_f64()))
    }
}

/// Per-model expected returns with matching belief weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedReturns<T> {
    values: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> WeightedReturns<T> {
    pub fn new(values: Vec<T>, weights: Vec<T>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::Empty);
        }
        if values.len() != weights.len() {
            return Err(RiskError::Length(values.len(), weights.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::NonFinite);
        }
        let sum: T = weights.iter().copied().sum();
        if weights.iter().any(|w| !(*w >= T::zero())) || (sum - T::one()).abs() > T::lit(T::WEIGHT_TOL) {
            return Err(RiskError::Weights(sum.as_f64()));
        }
        Ok(WeightedReturns { values, weights })
    }

    pub fn uniform(values: Vec<T>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::Empty);
        }
        let w = T::one() / T::of_usize(values.len());
        let n = values.len();
        Self::new(values, vec![w; n])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> T {
        self.values.iter().zip(&self.weights).map(|(v, w)| *v * *w).sum()
    }

    pub fn variance(&self) -> T {
        let m = self.mean();
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| *w * (*v - m) * (*v - m))
            .sum()
    }

    /// Same weights, every value shifted by `c`.
    pub fn shifted(&self, c: T) -> Self {
        WeightedReturns {
            values: self.values.iter().map(|v| *v + c).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Atoms sorted by value, ascending. Stable, so equal values keep input order.
    fn sorted_atoms(&self) -> Vec<(T, T)> {
        let mut atoms: Vec<(T, T)> = self.values.iter().copied().zip(self.weights.iter().copied()).collect();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
        atoms
    }
}

/// `U(x) = β⁻¹ e^{βx}`.
pub fn exp_utility<T: Scalar>(x: T, beta: T) -> T {
    (beta * x).exp() / beta
}

/// Certainty equivalent `(1/β) log Σ_i w_i e^{β v_i}`, evaluated with a
/// log-sum-exp centred at the weighted mean. `β == 0` returns the mean.
pub fn epistemic_utility<T: Scalar>(wr: &WeightedReturns<T>, beta: T) -> T {
    let mean = wr.mean();
    if beta == T::zero() {
        return mean;
    }
    // centred at the mean, the log argument is ≥ 1 and the correction small
    let scaled: Vec<T> = wr.values.iter().map(|v| beta * (*v - mean)).collect();
    let spread = scaled.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let log_moment = if spread <= T::one() {
        let s: T = scaled.iter().zip(&wr.weights).map(|(x, w)| *w * x.exp_m1()).sum();
        s.ln_1p()
    } else {
        weighted_log_sum_exp(&scaled, &wr.weights)
    };
    mean + log_moment / beta
}

/// `|U^E_β − (mean + β/2 · variance)|`, the second-order expansion remainder.
pub fn taylor_gap<T: Scalar>(wr: &WeightedReturns<T>, beta: T) -> T {
    let approx = wr.mean() + beta * T::lit(0.5) * wr.variance();
    (epistemic_utility(wr, beta) - approx).abs()
}

/// Lower-tail α-quantile: the smallest support value whose cumulative weight
/// reaches `α`.
pub fn value_at_risk<T: Scalar>(wr: &WeightedReturns<T>, alpha: T) -> Result<T, RiskError> {
    check_alpha(alpha)?;
    let atoms = wr.sorted_atoms();
    let target = alpha - T::lit(T::WEIGHT_TOL);
    let mut cum = T::zero();
    for &(v, w) in &atoms {
        cum += w;
        if cum >= target {
            return Ok(v);
        }
    }
    Ok(atoms.last().ok_or(RiskError::Empty)?.0)
}

/// How the lower-tail expectation is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TailNormalization {
    /// `E[v | v ≤ ν(α)]`; tail mass divided out.
    #[default]
    Conditional,
    /// The tail integral `Σ_{tail} w v` without dividing by its mass α.
    TailIntegral,
}

/// Mean of the lowest α-mass of the distribution; the atom straddling the
/// quantile contributes only the fraction needed to cover exactly α.
pub fn cvar<T: Scalar>(wr: &WeightedReturns<T>, alpha: T) -> Result<T, RiskError> {
    cvar_with(wr, alpha, TailNormalization::Conditional)
}

pub fn cvar_with<T: Scalar>(
    wr: &WeightedReturns<T>,
    alpha: T,
    norm: TailNormalization,
) -> Result<T, RiskError> {
    check_alpha(alpha)?;
    let atoms = wr.sorted_atoms();
    let low = atoms.first().ok_or(RiskError::Empty)?.0;
    let mut remaining = alpha;
    // accumulated relative to the lowest atom so constant supports are exact
    let mut acc = T::zero();
    for (v, w) in atoms {
        if remaining <= T::zero() {
            break;
        }
        let take = w.min(remaining);
        acc += take * (v - low);
        remaining -= take;
    }
    // weights sum to one only up to rounding, so at α = 1 a sliver may be left
    let covered = alpha - remaining.max(T::zero());
    Ok(match norm {
        TailNormalization::Conditional => low + acc / covered,
        TailNormalization::TailIntegral => low * covered + acc,
    })
}

/// Upper-tail analogue of [`cvar`]: mean of the highest α-mass.
pub fn upper_cvar<T: Scalar>(wr: &WeightedReturns<T>, alpha: T) -> Result<T, RiskError> {
    let negated = WeightedReturns {
        values: wr.values.iter().map(|v| -*v).collect(),
        weights: wr.weights.clone(),
    };
    Ok(-cvar(&negated, alpha)?)
}

/// How a planner aggregates per-model values of one action into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringForm {
    /// `Σ_μ ξ(μ) U[Q_μ]` as in the backward-induction sweep.
    #[default]
    ExpectedUtility,
    /// The certainty equivalent `(1/β) log Σ_μ ξ(μ) e^{β Q_μ}`.
    CertaintyEquivalent,
}

/// Scores the across-model values of each candidate action.
///
/// `values[a * n_models + m]` holds model m's value of candidate a. For the
/// expected-utility form a shared shift `c`, the log score of the best
/// candidate, is factored out: the returned scores are `e^{-c}·Σ ξ U[Q]`, an
/// order-preserving rescaling that puts the best score at `1/β`. Exponents of
/// clearly dominated candidates are capped to stay finite. The shift is
/// returned alongside.
pub fn score_candidates<T: Scalar>(
    objective: &RiskObjective<T>,
    form: ScoringForm,
    values: &[T],
    weights: &[T],
    out: &mut [T],
) -> Result<T, RiskError> {
    let n_models = weights.len();
    debug_assert_eq!(values.len(), out.len() * n_models);
    match *objective {
        RiskObjective::Neutral => {
            for (slot, row) in out.iter_mut().zip(values.chunks_exact(n_models)) {
                *slot = row.iter().zip(weights).map(|(v, w)| *v * *w).sum();
            }
            Ok(T::zero())
        }
        RiskObjective::Exponential { beta } => match form {
            ScoringForm::ExpectedUtility => {
                let live = |row: &[T]| {
                    row.iter().zip(weights).filter(|(_, w)| **w > T::zero()).fold(T::neg_infinity(), |m, (v, _)| m.max(beta * *v))
                };
                let pick = if beta > T::zero() { T::max } else { T::min };
                let top = values.chunks_exact(n_models).map(live).fold(T::neg_infinity(), T::max);
                for (slot, row) in out.iter_mut().zip(values.chunks_exact(n_models)) {
                    *slot = row.iter().zip(weights).map(|(v, w)| *w * (beta * *v - top).exp()).sum();
                }
                let best = out.iter().copied().reduce(pick).unwrap_or(T::one());
                if best > T::min_positive_value() / T::epsilon() {
                    for slot in out.iter_mut() {
                        *slot = *slot / best / beta;
                    }
                    return Ok(top + best.ln());
                }
                // the best sum underflowed: rescale each row on its own
                for (slot, row) in out.iter_mut().zip(values.chunks_exact(n_models)) {
                    let m = live(row);
                    let s: T = row.iter().zip(weights).map(|(v, w)| *w * (beta * *v - m).exp()).sum();
                    *slot = m + s.ln();
                }
                let shift = out.iter().copied().reduce(pick).unwrap_or(T::zero());
                let cap = T::max_value().ln() - T::one();
                for slot in out.iter_mut() {
                    *slot = (*slot - shift).min(cap).exp() / beta;
                }
                Ok(shift)
            }
            ScoringForm::CertaintyEquivalent => {
                let mut scaled = vec![T::zero(); n_models];
                for (slot, row) in out.iter_mut().zip(values.chunks_exact(n_models)) {
                    for (x, v) in scaled.iter_mut().zip(row) {
                        *x = beta * *v;
                    }
                    *slot = weighted_log_sum_exp(&scaled, weights) / beta;
                }
                Ok(T::zero())
            }
        },
        RiskObjective::Cvar { alpha } => {
            for (slot, row) in out.iter_mut().zip(values.chunks_exact(n_models)) {
                let wr = WeightedReturns { values: row.to_vec(), weights: weights.to_vec() };
                *slot = cvar(&wr, alpha)?;
            }
            Ok(T::zero())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::argmax_lowest;

    fn half_half() -> WeightedReturns<f64> {
        WeightedReturns::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn exp_utility_values() {
        assert_eq!(exp_utility(0.0, 2.0), 0.5);
        assert!((exp_utility(1.0_f64, -1.0) + 0.367_879_441_171_442_33).abs() < 1e-15);
    }

    #[test]
    fn epistemic_utility_examples() {
        assert_eq!(epistemic_utility(&half_half(), 0.0), 0.5);
        assert!((epistemic_utility(&half_half(), 1e-9) - 0.5).abs() < 1e-8);
        // (1/β) log(0.5 (1 + e^{-1})) at β = -1
        assert!((epistemic_utility(&half_half(), -1.0) - 0.379_885_493_041_722_3).abs() < 1e-12);
        let single = WeightedReturns::<f64>::new(vec![3.25], vec![1.0]).unwrap();
        for beta in [-0.1, -0.01, -0.001, 0.7] {
            assert!((epistemic_utility(&single, beta) - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_gap_edge_cases() {
        assert_eq!(taylor_gap(&half_half(), 0.0), 0.0);
        let flat = WeightedReturns::uniform(vec![2.0, 2.0, 2.0]).unwrap();
        assert!(taylor_gap(&flat, 0.3) < 1e-14);
    }

    #[test]
    fn quantiles_on_four_atoms() {
        let wr = WeightedReturns::uniform(vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(value_at_risk(&wr, 0.5).unwrap(), 2.0);
        assert_eq!(value_at_risk(&wr, 1.0).unwrap(), 4.0);
        assert_eq!(cvar(&wr, 0.5).unwrap(), 1.5);
        assert_eq!(cvar(&wr, 1.0).unwrap(), 2.5);
        assert_eq!(cvar_with(&wr, 0.5, TailNormalization::TailIntegral).unwrap(), 0.75);
        assert_eq!(upper_cvar(&wr, 0.5).unwrap(), 3.5);
    }

    #[test]
    fn constant_and_single_supports() {
        let c = WeightedReturns::uniform(vec![-1.5; 5]).unwrap();
        for a in [0.05, 0.3, 1.0] {
            assert_eq!(cvar(&c, a).unwrap(), -1.5);
            assert_eq!(value_at_risk(&c, a).unwrap(), -1.5);
        }
    }

    #[test]
    fn fractional_atom_at_quantile() {
        // lowest atom carries 0.3, α = 0.5 needs 0.2 from the next one
        let wr = WeightedReturns::<f64>::new(vec![0.0, 10.0], vec![0.3, 0.7]).unwrap();
        assert!((cvar(&wr, 0.5).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(WeightedReturns::<f64>::new(vec![], vec![]), Err(RiskError::Empty));
        assert!(matches!(WeightedReturns::new(vec![1.0], vec![0.5]), Err(RiskError::Weights(_))));
        assert!(matches!(WeightedReturns::new(vec![1.0, 2.0], vec![1.0]), Err(RiskError::Length(2, 1))));
        assert!(matches!(cvar(&half_half(), 0.0), Err(RiskError::Alpha(_))));
        assert!(matches!(value_at_risk(&half_half(), 1.5), Err(RiskError::Alpha(_))));
        assert!(RiskObjective::<f64>::cvar(0.0).is_err());
        assert_eq!(RiskObjective::exponential(0.0_f64), RiskObjective::Neutral);
        assert_eq!(RiskObjective::Exponential { beta: 0.0_f64 }.validate(), Err(RiskError::ZeroBeta));
    }

    #[test]
    fn scoring_shift_preserves_order() {
        let values = [100.0, 90.0, 95.0, 94.0];
        let weights = [0.5, 0.5];
        let mut out = [0.0_f64; 2];
        let obj = RiskObjective::Exponential { beta: 5.0 };
        score_candidates(&obj, ScoringForm::ExpectedUtility, &values, &weights, &mut out).unwrap();
        assert!(out.iter().all(|x| x.is_finite()));
        assert!(out[0] > out[1]);
        let mut ce = [0.0; 2];
        score_candidates(&obj, ScoringForm::CertaintyEquivalent, &values, &weights, &mut ce).unwrap();
        assert!(ce[0] > ce[1]);
    }

    #[test]
    fn cautious_scores_separate_far_from_the_worst_value() {
        // candidates 1 and 2 sit 20 and 25 above the worst value in the block
        let values = [0.0, 0.0, 20.0, 20.0, 25.0, 25.0];
        let weights = [0.5, 0.5];
        let mut out = [0.0_f64; 3];
        let obj = RiskObjective::Exponential { beta: -1.0 };
        score_candidates(&obj, ScoringForm::ExpectedUtility, &values, &weights, &mut out).unwrap();
        assert!(out.iter().all(|x| x.is_finite()));
        assert_eq!(out[2], -1.0);
        assert_eq!(argmax_lowest(&out), 2);
    }

    #[test]
    fn cautious_scores_survive_underflow() {
        let values = [0.0, 0.0, 800.0, 800.0, 900.0, 900.0];
        let weights = [0.5, 0.5];
        let mut out = [0.0_f64; 3];
        let shift =
            score_candidates(&RiskObjective::Exponential { beta: -1.0 }, ScoringForm::ExpectedUtility, &values, &weights, &mut out)
                .unwrap();
        assert!(out.iter().all(|x| x.is_finite()));
        assert_eq!(shift, -900.0);
        assert_eq!(out[2], -1.0);
        assert_eq!(argmax_lowest(&out), 2);
    }
}
