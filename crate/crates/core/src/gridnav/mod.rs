//! Gridworld navigation tasks: parameterized layouts with four objects and
//! one goal, staged proximity shaping, and exact compilation to tabular
//! models.

mod compile;
mod env;
mod layout;

pub use compile::{
    compile_stack, to_tabular, to_tabular_shared, CompileOptions, CompiledEnv, StackBuildOptions,
};
pub use env::{
    stage_reward, Action, BonusMode, EnvOptions, GridNavEnv, NavState, Outcome, RewardBreakdown,
    RewardParams, Stage, StepOutcome,
};
pub use layout::{
    make_level, make_level_with, proximity_radius, Cell, LayoutSpec, Level, Metric, SampleParams,
};

use thiserror::Error;

use crate::guidance::GuidanceError;
use crate::mdp::MdpError;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid size {0} must be odd and at least 5")]
    BadGridSize(u16),
    #[error("make_level requires an odd grid size of at least 7, got {0}")]
    GridTooSmall(u16),
    #[error("invalid level tag {0}")]
    BadLevel(u8),
    #[error("invalid stage tag {0}")]
    BadStage(u8),
    #[error("layout sampling failed after {attempts} attempts (level {level}, grid {grid_size})")]
    SamplingFailed { level: u8, grid_size: u16, attempts: u32 },
    #[error("invalid layout: {0}")]
    BadLayout(String),
    #[error("layout parse error: {0}")]
    Parse(String),
    #[error("state space would exceed the cap: {size} > {cap}")]
    StateSpaceTooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}
