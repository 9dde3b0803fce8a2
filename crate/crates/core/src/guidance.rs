//! Staged reward guidance: reward sequences over shared dynamics, support
//! and optimality nesting checks, and the step-switched reward composition.
//!
//! A guidance stack holds N reward tables over one base model. A schedule
//! assigns each stage a half-open window of global training steps; the
//! switched reward answers queries `(global_step, state, action)` with the
//! reward of the active stage, holding the last stage forever once the
//! final transition has passed.

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{optimal_policy_set, MdpError, PolicySet, TabularMdp};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("guidance stack needs at least one reward table")]
    EmptyStack,
    #[error("reward table {index} has length {got}, expected {expected}")]
    TableShape { index: usize, expected: usize, got: usize },
    #[error("reward table {index} is nonzero at terminal state {state}")]
    TerminalReward { index: usize, state: usize },
    #[error("reward table {index} has a non-finite entry at state {state} action {action}")]
    NonFinite { index: usize, state: usize, action: usize },
    #[error("stage transitions must be strictly increasing and start above zero")]
    BadSchedule,
    #[error("schedule has {schedule} stages but the stack has {stack}")]
    StageCountMismatch { schedule: usize, stack: usize },
    #[error("potential must be zero at terminal state {0}")]
    TerminalPotential(usize),
    #[error("potential vector has length {got}, expected {expected}")]
    PotentialShape { expected: usize, got: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Ordered reward tables sharing one base model's states, actions,
/// dynamics, and discount.
#[derive(Debug, Clone)]
pub struct GuidanceStack<T: Scalar> {
    base: TabularMdp<T>,
    rewards: Vec<Vec<T>>,
}

impl<T: Scalar> GuidanceStack<T> {
    pub fn new(base: TabularMdp<T>, rewards: Vec<Vec<T>>) -> Result<Self, GuidanceError> {
        if rewards.is_empty() {
            return Err(GuidanceError::EmptyStack);
        }
        let expected = base.n_states() * base.n_actions();
        for (index, table) in rewards.iter().enumerate() {
            if table.len() != expected {
                return Err(GuidanceError::TableShape { index, expected, got: table.len() });
            }
            for s in 0..base.n_states() {
                for a in 0..base.n_actions() {
                    let r = table[s * base.n_actions() + a];
                    if !r.is_finite() {
                        return Err(GuidanceError::NonFinite { index, state: s, action: a });
                    }
                    if base.is_terminal(s) && r != T::zero() {
                        return Err(GuidanceError::TerminalReward { index, state: s });
                    }
                }
            }
        }
        Ok(Self { base, rewards })
    }

    pub fn n_stages(&self) -> usize {
        self.rewards.len()
    }

    pub fn base(&self) -> &TabularMdp<T> {
        &self.base
    }

    /// Reward table of the 0-based stage index.
    pub fn reward_table(&self, stage: usize) -> &[T] {
        &self.rewards[stage]
    }

    /// The base model rewired with the stage's reward table.
    pub fn stage_mdp(&self, stage: usize) -> Result<TabularMdp<T>, GuidanceError> {
        Ok(self.base.with_rewards(self.rewards[stage].clone())?)
    }
}

/// Strictly increasing global-step transition times `(t_1, ..., t_N)`;
/// `t_0 = 0` is implicit. Stage `i` (0-based) is active on `[t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageSchedule(Vec<u64>);

impl StageSchedule {
    pub fn new(transitions: Vec<u64>) -> Result<Self, GuidanceError> {
        if transitions.is_empty() || transitions[0] == 0 {
            return Err(GuidanceError::BadSchedule);
        }
        if transitions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GuidanceError::BadSchedule);
        }
        Ok(Self(transitions))
    }

    pub fn n_stages(&self) -> usize {
        self.0.len()
    }

    pub fn transitions(&self) -> &[u64] {
        &self.0
    }

    /// Final transition time `t_N`.
    pub fn final_transition(&self) -> u64 {
        *self.0.last().expect("schedule is non-empty")
    }

    /// 0-based index of the stage active at `global_step`. Steps at or
    /// beyond `t_N` stay in the last stage.
    pub fn stage_index_at(&self, global_step: u64) -> usize {
        match self.0.iter().position(|&t| global_step < t) {
            Some(i) => i,
            None => self.0.len() - 1,
        }
    }

    /// Compact `t1-t2-...-tN` label used in reports and CSV keys.
    pub fn label(&self) -> String {
        self.0.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("-")
    }
}

/// Stage reward source switched by global training step.
#[derive(Debug, Clone)]
pub struct SwitchedReward<'a, T: Scalar> {
    stack: &'a GuidanceStack<T>,
    schedule: &'a StageSchedule,
}

impl<'a, T: Scalar> SwitchedReward<'a, T> {
    pub fn stage_index_at(&self, global_step: u64) -> usize {
        self.schedule.stage_index_at(global_step)
    }

    /// Reward of the stage active at `global_step`.
    pub fn query(&self, global_step: u64, state: usize, action: usize) -> T {
        let stage = self.stage_index_at(global_step);
        self.stack.reward_table(stage)[state * self.stack.base.n_actions() + action]
    }
}

/// Pairs a stack with a schedule after checking that their stage counts
/// agree.
pub fn compose_switched_reward<'a, T: Scalar>(
    stack: &'a GuidanceStack<T>,
    schedule: &'a StageSchedule,
) -> Result<SwitchedReward<'a, T>, GuidanceError> {
    if stack.n_stages() != schedule.n_stages() {
        return Err(GuidanceError::StageCountMismatch {
            schedule: schedule.n_stages(),
            stack: stack.n_stages(),
        });
    }
    Ok(SwitchedReward { stack, schedule })
}

/// States with at least one action of exactly nonzero reward.
///
/// Rewards in the stacks are constructed constants, so the comparison
/// against zero is exact.
pub fn support<T: Scalar>(rewards: &[T], mdp: &TabularMdp<T>) -> BTreeSet<usize> {
    debug_assert_eq!(rewards.len(), mdp.n_states() * mdp.n_actions());
    let mut out = BTreeSet::new();
    for s in 0..mdp.n_states() {
        let row = &rewards[s * mdp.n_actions()..(s + 1) * mdp.n_actions()];
        if row.iter().any(|&r| r != T::zero()) {
            out.insert(s);
        }
    }
    out
}

/// A state present in the support of stage `stage` (1-based) but missing
/// from the support of the next stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportViolation {
    pub stage: usize,
    pub state: usize,
}

#[derive(Debug, Clone)]
pub struct SupportNesting {
    pub ok: bool,
    pub violations: Vec<SupportViolation>,
}

/// Verifies `supp(R_1) ⊆ supp(R_2) ⊆ ... ⊆ supp(R_N)`. A single-stage
/// stack is vacuously nested.
pub fn check_support_nesting<T: Scalar>(stack: &GuidanceStack<T>) -> SupportNesting {
    let mut violations = Vec::new();
    let supports: Vec<BTreeSet<usize>> =
        (0..stack.n_stages()).map(|i| support(stack.reward_table(i), stack.base())).collect();
    for i in 0..supports.len().saturating_sub(1) {
        for &state in supports[i].difference(&supports[i + 1]) {
            violations.push(SupportViolation { stage: i + 1, state });
        }
    }
    SupportNesting { ok: violations.is_empty(), violations }
}

/// Which way consecutive optimal-policy sets must be ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestingDirection {
    /// Later stages refine earlier ones: every action optimal at stage
    /// `i + 1` must already be optimal at stage `i`. This is the default.
    Shrinking,
    /// Earlier-stage optimal actions must stay optimal at the next stage.
    Growing,
}

/// An action that is optimal at stage `stage` (1-based) but violates the
/// required inclusion against the neighbouring stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimalityViolation {
    pub stage: usize,
    pub state: usize,
    pub action: usize,
}

#[derive(Debug, Clone)]
pub struct OptimalityNesting {
    pub ok: bool,
    pub direction: NestingDirection,
    pub violations: Vec<OptimalityViolation>,
}

/// Checks per-state inclusion of tied-optimal action sets between
/// consecutive stage models.
///
/// Under [`NestingDirection::Shrinking`] a violation `(i+1, s, a)` records
/// an action optimal at stage `i + 1` that is not optimal at stage `i`;
/// under [`NestingDirection::Growing`] a violation `(i, s, a)` records an
/// action optimal at stage `i` that is lost at stage `i + 1`.
pub fn check_optimality_nesting<T: Scalar>(
    stack: &GuidanceStack<T>,
    tie_tol: T,
    direction: NestingDirection,
) -> Result<OptimalityNesting, GuidanceError> {
    let mut sets: Vec<PolicySet> = Vec::with_capacity(stack.n_stages());
    for i in 0..stack.n_stages() {
        let mdp = stack.stage_mdp(i)?;
        sets.push(optimal_policy_set(&mdp, tie_tol)?);
    }
    let mut violations = Vec::new();
    for i in 0..sets.len().saturating_sub(1) {
        let (outer, inner, tag) = match direction {
            NestingDirection::Shrinking => (&sets[i], &sets[i + 1], i + 2),
            NestingDirection::Growing => (&sets[i + 1], &sets[i], i + 1),
        };
        for state in 0..stack.base().n_states() {
            for &action in inner.actions(state) {
                if !outer.contains(state, action) {
                    violations.push(OptimalityViolation { stage: tag, state, action });
                }
            }
        }
    }
    Ok(OptimalityNesting { ok: violations.is_empty(), direction, violations })
}

/// Combined validation outcome for one stack.
#[derive(Debug, Clone)]
pub struct NestingReport {
    pub support: Option<SupportNesting>,
    pub optimality: Option<OptimalityNesting>,
}

impl NestingReport {
    pub fn ok(&self) -> bool {
        self.support.as_ref().map_or(true, |s| s.ok)
            && self.optimality.as_ref().map_or(true, |o| o.ok)
    }

    /// One human-readable line per check.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        match &self.support {
            Some(s) => out.push_str(&format!(
                "support nesting: {} ({} violations)\n",
                if s.ok { "ok" } else { "violated" },
                s.violations.len()
            )),
            None => out.push_str("support nesting: skipped\n"),
        }
        match &self.optimality {
            Some(o) => out.push_str(&format!(
                "optimality nesting ({:?}): {} ({} violations)\n",
                o.direction,
                if o.ok { "ok" } else { "violated" },
                o.violations.len()
            )),
            None => out.push_str("optimality nesting: skipped\n"),
        }
        out
    }

    /// CSV listing with one row per violation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# schema: multistage.nesting.v1")?;
        writeln!(w, "check,stage,state,action")?;
        if let Some(s) = &self.support {
            for v in &s.violations {
                writeln!(w, "support,{},{},", v.stage, v.state)?;
            }
        }
        if let Some(o) = &self.optimality {
            for v in &o.violations {
                writeln!(w, "optimality,{},{},{}", v.stage, v.state, v.action)?;
            }
        }
        Ok(())
    }
}

/// Adds a potential-based shaping term `gamma * E[phi(s')] - phi(s)` to a
/// reward table. The potential must vanish at terminal states, which keeps
/// the terminal-zero reward invariant and the optimal-policy set intact.
pub fn potential_shaping<T: Scalar>(
    rewards: &[T],
    potential: &[T],
    mdp: &TabularMdp<T>,
) -> Result<Vec<T>, GuidanceError> {
    if potential.len() != mdp.n_states() {
        return Err(GuidanceError::PotentialShape { expected: mdp.n_states(), got: potential.len() });
    }
    if rewards.len() != mdp.n_states() * mdp.n_actions() {
        return Err(GuidanceError::TableShape {
            index: 0,
            expected: mdp.n_states() * mdp.n_actions(),
            got: rewards.len(),
        });
    }
    for s in 0..mdp.n_states() {
        if mdp.is_terminal(s) && potential[s] != T::zero() {
            return Err(GuidanceError::TerminalPotential(s));
        }
    }
    let mut out = Vec::with_capacity(rewards.len());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let mut expected_next = T::zero();
            for &(next, p) in mdp.transition(s, a) {
                expected_next += p * potential[next];
            }
            out.push(rewards[s * mdp.n_actions() + a] + mdp.gamma() * expected_next - potential[s]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{greedy_policy, value_iteration};
    use crate::samples;
    use crate::scalar::real;

    fn chain_stack(rewards: Vec<Vec<f64>>) -> GuidanceStack<f64> {
        GuidanceStack::new(samples::chain3::<f64>(), rewards).unwrap()
    }

    #[test]
    fn support_of_zero_table_is_empty() {
        let mdp = samples::chain3::<f64>();
        let zero = vec![0.0; 6];
        assert!(support(&zero, &mdp).is_empty());
    }

    #[test]
    fn support_of_single_entry_is_that_state() {
        let mdp = samples::chain3::<f64>();
        let mut table = vec![0.0; 6];
        table[2] = -3.0; // state 1, action 0
        let supp = support(&table, &mdp);
        assert_eq!(supp.into_iter().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn single_stage_stack_is_vacuously_nested() {
        let stack = chain_stack(vec![samples::chain3::<f64>().rewards().to_vec()]);
        let report = check_support_nesting(&stack);
        assert!(report.ok);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn vanishing_second_stage_reports_every_support_state() {
        let mdp = samples::chain3::<f64>();
        let first = mdp.rewards().to_vec();
        let expected: Vec<usize> = support(&first, &mdp).into_iter().collect();
        let stack = chain_stack(vec![first, vec![0.0; 6]]);
        let report = check_support_nesting(&stack);
        assert!(!report.ok);
        let states: Vec<usize> = report.violations.iter().map(|v| v.state).collect();
        assert_eq!(states, expected);
        assert!(report.violations.iter().all(|v| v.stage == 1));
    }

    #[test]
    fn positive_scaling_preserves_optimality_nesting() {
        let base = samples::chain3::<f64>();
        let r = base.rewards().to_vec();
        let doubled: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        let stack = chain_stack(vec![r, doubled]);
        let report = check_optimality_nesting(&stack, 1e-6, NestingDirection::Shrinking).unwrap();
        assert!(report.ok, "violations: {:?}", report.violations);
        let rev = check_optimality_nesting(&stack, 1e-6, NestingDirection::Growing).unwrap();
        assert!(rev.ok);
    }

    #[test]
    fn potential_shaped_stage_preserves_optimality_nesting() {
        let base = samples::chain3::<f64>();
        let r = base.rewards().to_vec();
        let v_star = value_iteration(&base, 1e-12).unwrap();
        let shaped = potential_shaping(&r, v_star.values(), &base).unwrap();
        let stack = chain_stack(vec![r, shaped]);
        let report = check_optimality_nesting(&stack, 1e-6, NestingDirection::Shrinking).unwrap();
        assert!(report.ok, "violations: {:?}", report.violations);
        let rev = check_optimality_nesting(&stack, 1e-6, NestingDirection::Growing).unwrap();
        assert!(rev.ok);
    }

    #[test]
    fn shaped_greedy_one_step_matches_optimal_policy() {
        let base = samples::chain3::<f64>();
        let v_star = value_iteration(&base, 1e-12).unwrap();
        let shaped = potential_shaping(base.rewards(), v_star.values(), &base).unwrap();
        let shaped_mdp = base.with_rewards(shaped).unwrap();
        // With phi = V*, greedy on the immediate shaped reward is optimal.
        let zero = crate::mdp::ValueFunction::new(vec![0.0; 3]);
        let greedy_now = greedy_policy(&shaped_mdp, &zero);
        let optimal = greedy_policy(&base, &v_star);
        assert_eq!(greedy_now, optimal);
    }

    #[test]
    fn constant_potential_shifts_rewards_uniformly() {
        let mdp = samples::zero_reward::<f64>(4, 2, 0.9);
        let c = 2.5;
        let phi = vec![c; 4];
        let shaped = potential_shaping(mdp.rewards(), &phi, &mdp).unwrap();
        for &r in &shaped {
            assert!((r - c * (0.9 - 1.0)).abs() <= 1e-12);
        }
        let stack = GuidanceStack::new(mdp.clone(), vec![mdp.rewards().to_vec(), shaped]).unwrap();
        let report = check_optimality_nesting(&stack, 1e-6, NestingDirection::Shrinking).unwrap();
        assert!(report.ok);
    }

    #[test]
    fn zero_potential_is_identity() {
        let mdp = samples::chain3::<f64>();
        let shaped = potential_shaping(mdp.rewards(), &[0.0; 3], &mdp).unwrap();
        assert_eq!(shaped, mdp.rewards().to_vec());
    }

    #[test]
    fn nonzero_terminal_potential_is_rejected() {
        let mdp = samples::chain3::<f64>();
        let err = potential_shaping(mdp.rewards(), &[0.0, 0.0, 1.0], &mdp).unwrap_err();
        assert!(matches!(err, GuidanceError::TerminalPotential(2)));
    }

    #[test]
    fn schedule_windows_are_half_open() {
        let schedule = StageSchedule::new(vec![10, 20, 30]).unwrap();
        assert_eq!(schedule.stage_index_at(0), 0);
        assert_eq!(schedule.stage_index_at(9), 0);
        assert_eq!(schedule.stage_index_at(10), 1);
        assert_eq!(schedule.stage_index_at(29), 2);
        assert_eq!(schedule.stage_index_at(30), 2);
        assert_eq!(schedule.stage_index_at(1_000_000_000), 2);
    }

    #[test]
    fn switched_reward_selects_stage_tables() {
        let base = samples::chain3::<f64>();
        let r1 = base.rewards().to_vec();
        let r2: Vec<f64> = r1.iter().map(|x| 2.0 * x).collect();
        let r3: Vec<f64> = r1.iter().map(|x| 3.0 * x).collect();
        let stack = chain_stack(vec![r1.clone(), r2.clone(), r3.clone()]);
        let schedule = StageSchedule::new(vec![10, 20, 30]).unwrap();
        let switched = compose_switched_reward(&stack, &schedule).unwrap();
        assert_eq!(switched.query(0, 1, samples::CHAIN_ADVANCE), r1[2]);
        assert_eq!(switched.query(10, 1, samples::CHAIN_ADVANCE), r2[2]);
        assert_eq!(switched.query(1_000_000_000, 1, samples::CHAIN_ADVANCE), r3[2]);
    }

    #[test]
    fn switched_reward_rejects_stage_count_mismatch() {
        let base = samples::chain3::<f64>();
        let stack = chain_stack(vec![base.rewards().to_vec()]);
        let schedule = StageSchedule::new(vec![10, 20]).unwrap();
        assert!(matches!(
            compose_switched_reward(&stack, &schedule),
            Err(GuidanceError::StageCountMismatch { .. })
        ));
    }

    #[test]
    fn bad_schedules_are_rejected() {
        assert!(StageSchedule::new(vec![]).is_err());
        assert!(StageSchedule::new(vec![0, 5]).is_err());
        assert!(StageSchedule::new(vec![5, 5]).is_err());
        assert!(StageSchedule::new(vec![7, 3]).is_err());
    }

    #[test]
    fn stack_rejects_nonzero_terminal_rewards() {
        let base = samples::chain3::<f64>();
        let mut bad = base.rewards().to_vec();
        bad[2 * 2] = 1.0; // terminal state 2, action 0
        assert!(matches!(
            GuidanceStack::new(base, vec![bad]),
            Err(GuidanceError::TerminalReward { .. })
        ));
    }

    #[test]
    fn f32_stack_behaves_like_f64() {
        let base = samples::chain3::<f32>();
        let r = base.rewards().to_vec();
        let doubled: Vec<f32> = r.iter().map(|x| 2.0 * x).collect();
        let stack = GuidanceStack::new(base, vec![r, doubled]).unwrap();
        let report = check_optimality_nesting(&stack, real(1e-4), NestingDirection::Shrinking).unwrap();
        assert!(report.ok);
    }
}
