//! Epistemic risk-sensitive Bayesian reinforcement learning.
//!
//! Beliefs over MDPs (conjugate tabular posteriors, finite model mixtures and
//! Gaussian-process function beliefs), risk functionals over per-model
//! expected returns, a risk-sensitive backward-induction planner and a
//! risk-sensitive Bayesian policy-gradient learner, plus the environments and
//! experiment harness used to evaluate them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod belief;
pub mod envs;
pub mod erpg;
pub mod ersbi;
pub mod gp;
pub mod harness;
pub mod mdp;
pub mod option_belief;
pub mod policy;
pub mod risk;
pub mod rng;
pub mod scalar;

pub use scalar::Scalar;

pub type TabularMdpF64 = mdp::TabularMdp<f64>;
pub type TabularMdpF32 = mdp::TabularMdp<f32>;
pub type SoftmaxPolicyF64 = policy::SoftmaxPolicy<f64>;
pub type SoftmaxPolicyF32 = policy::SoftmaxPolicy<f32>;
pub type RiskObjectiveF64 = risk::RiskObjective<f64>;
pub type WeightedReturnsF64 = risk::WeightedReturns<f64>;
pub type GpBeliefF64 = gp::GpBelief<f64>;
pub type TrainConfigF64 = erpg::TrainConfig<f64>;
