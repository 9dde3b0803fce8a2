//! Episode dynamics and staged reward semantics.
//!
//! All stages share one physical model: 4-neighbour movement (bumping a
//! wall or the border stays in place), a per-step cost, terminal arrival at
//! any object, and a timeout when the step budget runs out. Stages differ
//! only in which shaping terms they pay:
//!
//! * stage 1 — arrival rewards only (+goal / −non-goal);
//! * stage 2 — plus a one-time bonus for first landing inside the goal's
//!   proximity region;
//! * stage 3 — plus a one-time penalty for first landing inside each
//!   non-goal proximity region.
//!
//! A cell within the radius of both the goal and a non-goal counts as goal
//! proximity only; that priority keeps the staged terms from cancelling
//! each other exactly. Region-visit flags flip on landings at every stage
//! (state bookkeeping is reward-independent), so all stage models share one
//! transition law.

use serde::{Deserialize, Serialize};

use super::layout::{Cell, LayoutSpec, Level, Metric};
use super::{proximity_radius, GridError};
use crate::scalar::{real, Scalar};

/// Guidance stage (1 = sparse, 3 = richest shaping).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = GridError;

    fn try_from(v: u8) -> Result<Self, GridError> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            other => Err(GridError::BadStage(other)),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.tag()
    }
}

/// The four movement actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i % 4]
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// Whether proximity shaping pays once per episode or on every step spent
/// inside a region. The repeatable variant deliberately rewards loitering
/// and exists as a negative control for the optimality-nesting validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BonusMode {
    #[default]
    FirstEntry,
    EveryStep,
}

/// Reward constants in task units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams<T: Scalar> {
    pub goal_arrival: T,
    pub nongoal_arrival: T,
    pub timeout: T,
    pub step_cost: T,
    pub proximity_bonus: T,
    pub proximity_penalty: T,
}

impl<T: Scalar> Default for RewardParams<T> {
    fn default() -> Self {
        Self {
            goal_arrival: real(10.0),
            nongoal_arrival: real(-1.0),
            timeout: real(-0.1),
            step_cost: real(-0.01),
            proximity_bonus: real(5.0),
            proximity_penalty: real(-5.0),
        }
    }
}

/// Environment construction knobs shared across layouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvOptions<T: Scalar> {
    pub metric: Metric,
    pub bonus_mode: BonusMode,
    pub rewards: RewardParams<T>,
    pub gamma: f64,
    pub time_limit_12: u32,
    pub time_limit_3: u32,
    pub proximity_radius: Option<u32>,
}

impl<T: Scalar> Default for EnvOptions<T> {
    fn default() -> Self {
        Self {
            metric: Metric::Chebyshev,
            bonus_mode: BonusMode::FirstEntry,
            rewards: RewardParams::default(),
            gamma: crate::mdp::DEFAULT_GAMMA,
            time_limit_12: 25,
            time_limit_3: 37,
            proximity_radius: None,
        }
    }
}

/// Markov episode state: agent cell, remaining steps, and region-visit
/// flags. The flags keep one-time proximity rewards Markov; bit 0 is the
/// goal region, bits 1..=3 the non-goal regions in object order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NavState {
    pub cell: Cell,
    pub steps_left: u32,
    flags: u8,
}

impl NavState {
    pub fn new(cell: Cell, steps_left: u32, flags: u8) -> Self {
        Self { cell, steps_left, flags }
    }

    pub fn flags(&self) -> u8 {
        self.flags
    }

    pub fn goal_region_visited(&self) -> bool {
        self.flags & 1 != 0
    }

    pub fn nongoal_region_visited(&self, j: usize) -> bool {
        self.flags & (2 << j) != 0
    }

    pub fn with_flags(self, flags: u8) -> Self {
        Self { flags, ..self }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    NonGoal,
    Timeout,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Goal => "goal",
            Outcome::NonGoal => "non_goal",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Additive pieces of a single transition's reward.
#[derive(Debug, Clone, Copy)]
pub struct RewardBreakdown<T: Scalar> {
    pub step_cost: T,
    pub timeout: T,
    pub arrival: T,
    pub goal_bonus: T,
    pub nongoal_penalty: T,
}

impl<T: Scalar> RewardBreakdown<T> {
    pub fn total(&self) -> T {
        self.step_cost + self.timeout + self.arrival + self.goal_bonus + self.nongoal_penalty
    }

    /// Stage-specific guidance terms with the common step and timeout costs
    /// folded out; this is what the support validator inspects by default.
    pub fn shaped_component(&self) -> T {
        self.arrival + self.goal_bonus + self.nongoal_penalty
    }
}

/// Full result of one simulated step.
#[derive(Debug, Clone, Copy)]
pub struct StepDetail<T: Scalar> {
    pub next_cell: Cell,
    pub next_flags: u8,
    pub breakdown: RewardBreakdown<T>,
    pub done: Option<Outcome>,
}

/// Outcome of one step as seen by a learner.
#[derive(Debug, Clone, Copy)]
pub enum StepOutcome<T: Scalar> {
    Continue { state: NavState, reward: T },
    Done { outcome: Outcome, reward: T },
}

impl<T: Scalar> StepOutcome<T> {
    pub fn reward(&self) -> T {
        match self {
            StepOutcome::Continue { reward, .. } | StepOutcome::Done { reward, .. } => *reward,
        }
    }
}

/// A navigation task instance: a layout plus stage and physics parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNavEnv<T: Scalar> {
    pub layout: LayoutSpec,
    pub stage: Stage,
    pub time_limit: u32,
    pub proximity_radius: u32,
    pub metric: Metric,
    pub bonus_mode: BonusMode,
    pub rewards: RewardParams<T>,
    pub gamma: f64,
}

impl<T: Scalar> GridNavEnv<T> {
    pub fn new(layout: LayoutSpec, stage: Stage, options: &EnvOptions<T>) -> Self {
        let time_limit = match layout.level {
            Level::One | Level::Two => options.time_limit_12,
            Level::Three => options.time_limit_3,
        };
        let proximity = options.proximity_radius.unwrap_or_else(|| proximity_radius(layout.grid_size));
        Self {
            layout,
            stage,
            time_limit,
            proximity_radius: proximity,
            metric: options.metric,
            bonus_mode: options.bonus_mode,
            rewards: options.rewards,
            gamma: options.gamma,
        }
    }

    /// Same instance with a different stage.
    pub fn at_stage(&self, stage: Stage) -> Self {
        Self { stage, ..self.clone() }
    }

    pub fn initial_state(&self) -> NavState {
        NavState::new(self.layout.start(), self.time_limit, 0)
    }

    pub fn in_goal_region(&self, cell: Cell) -> bool {
        self.metric.within(cell, self.layout.goal(), self.proximity_radius)
    }

    /// Non-goal proximity region `j`, minus any overlap with the goal
    /// region (goal proximity takes priority).
    pub fn in_nongoal_region(&self, j: usize, cell: Cell) -> bool {
        self.metric.within(cell, self.layout.nongoals()[j], self.proximity_radius)
            && !self.in_goal_region(cell)
    }

    /// Flag bits that the given stage's rewards can read.
    pub fn flag_mask(&self, stage: Stage) -> u8 {
        match self.bonus_mode {
            BonusMode::EveryStep => 0,
            BonusMode::FirstEntry => match stage {
                Stage::One => 0,
                Stage::Two => 0b0001,
                Stage::Three => 0b1111,
            },
        }
    }

    fn move_target(&self, cell: Cell, action: Action) -> Cell {
        let (dr, dc) = action.delta();
        let r = cell.row as i32 + dr;
        let c = cell.col as i32 + dc;
        if r < 0 || c < 0 || r >= self.layout.grid_size as i32 || c >= self.layout.grid_size as i32 {
            return cell;
        }
        let target = Cell::new(r as u16, c as u16);
        if self.layout.is_wall(target) {
            cell
        } else {
            target
        }
    }

    /// One transition with the full reward decomposition, at an explicit
    /// stage (the switched-reward trainer changes stages mid-episode).
    pub fn step_detailed(&self, stage: Stage, state: &NavState, action: Action) -> StepDetail<T> {
        debug_assert!(state.steps_left > 0, "stepping a finished episode");
        let target = self.move_target(state.cell, action);
        let zero = T::zero();
        let mut b = RewardBreakdown {
            step_cost: self.rewards.step_cost,
            timeout: zero,
            arrival: zero,
            goal_bonus: zero,
            nongoal_penalty: zero,
        };

        let mut region_bits = 0u8;
        if self.in_goal_region(target) {
            region_bits |= 1;
        }
        for j in 0..3 {
            if self.in_nongoal_region(j, target) {
                region_bits |= 2 << j;
            }
        }
        let paying_bits = match self.bonus_mode {
            BonusMode::FirstEntry => region_bits & !state.flags,
            BonusMode::EveryStep => region_bits,
        };
        if stage >= Stage::Two && paying_bits & 1 != 0 {
            b.goal_bonus = self.rewards.proximity_bonus;
        }
        if stage == Stage::Three {
            let hits = (paying_bits >> 1).count_ones();
            if hits > 0 {
                b.nongoal_penalty = self.rewards.proximity_penalty * real(hits as f64);
            }
        }
        let next_flags = match self.bonus_mode {
            BonusMode::FirstEntry => state.flags | region_bits,
            BonusMode::EveryStep => 0,
        };

        let done = if let Some(i) = self.layout.object_at(target) {
            if i == self.layout.goal_index {
                b.arrival = self.rewards.goal_arrival;
                Some(Outcome::Goal)
            } else {
                b.arrival = self.rewards.nongoal_arrival;
                Some(Outcome::NonGoal)
            }
        } else if state.steps_left == 1 {
            b.timeout = self.rewards.timeout;
            Some(Outcome::Timeout)
        } else {
            None
        };

        StepDetail { next_cell: target, next_flags, breakdown: b, done }
    }

    /// One transition at an explicit stage.
    pub fn step_at_stage(&self, stage: Stage, state: &NavState, action: Action) -> StepOutcome<T> {
        let d = self.step_detailed(stage, state, action);
        let reward = d.breakdown.total();
        match d.done {
            Some(outcome) => StepOutcome::Done { outcome, reward },
            None => StepOutcome::Continue {
                state: NavState::new(d.next_cell, state.steps_left - 1, d.next_flags),
                reward,
            },
        }
    }

    /// One transition at the environment's own stage.
    pub fn step(&self, state: &NavState, action: Action) -> StepOutcome<T> {
        self.step_at_stage(self.stage, state, action)
    }
}

/// Reward the environment pays for `(state, action)` at its own stage; the
/// successor is determined by the deterministic dynamics.
pub fn stage_reward<T: Scalar>(env: &GridNavEnv<T>, state: &NavState, action: Action) -> T {
    env.step(state, action).reward()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridnav::layout::LayoutSpec;

    fn env(stage: Stage) -> GridNavEnv<f64> {
        let layout = LayoutSpec::canonical(7).unwrap();
        GridNavEnv::new(layout, stage, &EnvOptions::default())
    }

    #[test]
    fn plain_move_costs_one_cent() {
        let e = env(Stage::One);
        // Start already sits inside every proximity region on the canonical
        // 7x7 map, but stage 1 pays no shaping.
        let s = e.initial_state();
        let out = e.step(&s, Action::Up);
        assert_eq!(out.reward(), -0.01);
        assert_eq!(stage_reward(&e, &s, Action::Up), -0.01);
    }

    #[test]
    fn first_goal_region_landing_pays_the_bonus_once() {
        let e = env(Stage::Two);
        let s = e.initial_state();
        // Goal is at (1,1); moving up lands in its region for the first time.
        let out = e.step(&s, Action::Up);
        assert_eq!(out.reward(), 5.0 - 0.01);
        let next = match out {
            StepOutcome::Continue { state, .. } => state,
            _ => panic!("expected continuation"),
        };
        assert!(next.goal_region_visited());
        // Staying inside the region pays nothing further.
        let again = e.step(&next, Action::Down);
        assert_eq!(again.reward(), -0.01);
    }

    #[test]
    fn flagged_nongoal_region_pays_only_step_cost() {
        let e = env(Stage::Three);
        let s = e.initial_state();
        let first = e.step(&s, Action::Down); // lands near both south objects
        let flagged = match first {
            StepOutcome::Continue { state, .. } => state,
            _ => panic!("expected continuation"),
        };
        let again = e.step(&flagged, Action::Up); // back to start, regions already flagged
        let back = match again {
            StepOutcome::Continue { state, .. } => state,
            _ => panic!("expected continuation"),
        };
        let third = e.step(&back, Action::Down);
        assert_eq!(third.reward(), -0.01);
    }

    #[test]
    fn goal_priority_shields_overlapping_regions() {
        let e = env(Stage::Three);
        // (2,3) is within radius 2 of both (1,1) and (1,5); the goal is
        // object 0 at (1,1), so the cell counts as goal proximity only.
        let cell = Cell::new(2, 3);
        assert!(e.in_goal_region(cell));
        assert!(!e.in_nongoal_region(0, cell));
        let s = e.initial_state();
        let out = e.step(&s, Action::Up);
        assert_eq!(out.reward(), 5.0 - 0.01);
    }

    #[test]
    fn timeout_step_pays_both_penalties() {
        let e = env(Stage::One);
        let s = NavState::new(Cell::new(3, 3), 1, 0b1111);
        match e.step(&s, Action::Up) {
            StepOutcome::Done { outcome, reward } => {
                assert_eq!(outcome, Outcome::Timeout);
                assert!((reward - (-0.1 - 0.01)).abs() < 1e-12);
            }
            _ => panic!("expected timeout"),
        }
    }

    #[test]
    fn goal_arrival_terminates_with_the_big_reward() {
        let e = env(Stage::One);
        let s = NavState::new(Cell::new(2, 1), 10, 0);
        match e.step(&s, Action::Up) {
            StepOutcome::Done { outcome, reward } => {
                assert_eq!(outcome, Outcome::Goal);
                assert!((reward - (10.0 - 0.01)).abs() < 1e-12);
            }
            _ => panic!("expected goal arrival"),
        }
    }

    #[test]
    fn nongoal_arrival_terminates_with_minus_one() {
        let e = env(Stage::One);
        let s = NavState::new(Cell::new(2, 5), 10, 0);
        match e.step(&s, Action::Up) {
            StepOutcome::Done { outcome, reward } => {
                assert_eq!(outcome, Outcome::NonGoal);
                assert!((reward - (-1.0 - 0.01)).abs() < 1e-12);
            }
            _ => panic!("expected non-goal arrival"),
        }
    }

    #[test]
    fn bumping_the_border_stays_in_place() {
        let e = env(Stage::One);
        let s = NavState::new(Cell::new(0, 3), 10, 0b1111);
        match e.step(&s, Action::Up) {
            StepOutcome::Continue { state, .. } => assert_eq!(state.cell, Cell::new(0, 3)),
            _ => panic!("expected continuation"),
        }
    }

    #[test]
    fn every_step_mode_pays_repeatedly() {
        let layout = LayoutSpec::canonical(7).unwrap();
        let options = EnvOptions { bonus_mode: BonusMode::EveryStep, ..EnvOptions::default() };
        let e = GridNavEnv::<f64>::new(layout, Stage::Two, &options);
        let s = e.initial_state();
        let out = e.step(&s, Action::Up);
        assert_eq!(out.reward(), 5.0 - 0.01);
        let next = match out {
            StepOutcome::Continue { state, .. } => state,
            _ => panic!("expected continuation"),
        };
        // Still inside the goal region: pays again.
        let again = e.step(&next, Action::Down);
        assert_eq!(again.reward(), 5.0 - 0.01);
    }
}
