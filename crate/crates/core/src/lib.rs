//! PPO agents for match-2 puzzle levels: game engine, observation encoder,
//! actor-critic network, masked action distributions, trainer and
//! evaluation harness.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`). Training
//! and evaluation run in `f32`; the aliases below name the common cases.

pub mod encoder;
pub mod eval;
pub mod engine;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod scalar;
pub mod seed;

pub type PolicyParams32 = nn::PolicyParams<f32>;
pub type PolicyParams64 = nn::PolicyParams<f64>;
pub type ParamSet32 = nn::ParamSet<f32>;
pub type ParamSet64 = nn::ParamSet<f64>;
pub type Input32 = nn::Input<f32>;
pub type Input64 = nn::Input<f64>;
pub type Checkpoint32 = nn::Checkpoint<f32>;
pub type Checkpoint64 = nn::Checkpoint<f64>;
pub type ActionDistribution32 = policy::ActionDistribution<f32>;
pub type ActionDistribution64 = policy::ActionDistribution<f64>;
