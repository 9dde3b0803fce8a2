//! Staged-guidance reinforcement learning on gridworld navigation.
//!
//! The crate provides an exact tabular-MDP oracle (`mdp`), reward-sequence
//! guidance with support/optimality nesting validation and step-switched
//! composition (`guidance`), a gridworld navigation family compiled to
//! exact models (`gridnav`), tabular learners driven by the switched reward
//! (`trainer`), and stage-transition sweeps that locate the best-converging
//! schedule (`sweep`).
//!
//! Core math is generic over the scalar type (`f32`/`f64`) via the
//! [`scalar::Scalar`] trait; the aliases below fix `f64`, which is what the
//! command-line harness uses throughout.

pub mod gridnav;
pub mod guidance;
pub mod mdp;
pub mod samples;
pub mod scalar;
pub mod sweep;
pub mod trainer;

pub use scalar::{real, Scalar};

/// `f64` tabular MDP.
pub type Mdp = mdp::TabularMdp<f64>;
/// `f64` state-value vector.
pub type Values = mdp::ValueFunction<f64>;
/// `f64` guidance stack.
pub type Stack = guidance::GuidanceStack<f64>;
/// `f64` navigation environment.
pub type NavEnv = gridnav::GridNavEnv<f64>;
/// `f64` compiled navigation model.
pub type CompiledNav = gridnav::CompiledEnv<f64>;
/// `f64` environment family.
pub type Family = trainer::EnvFamily<f64>;
/// `f64` training trace.
pub type Trace = trainer::TrainingTrace<f64>;
/// `f64` evaluation anchor.
pub type Eval = trainer::EvalInstance<f64>;
/// `f64` sweep setup.
pub type Sweep = sweep::SweepSpec<f64>;
