//! Exact compilation of navigation tasks into tabular models.
//!
//! States are enumerated breadth-first from the initial state, so indices
//! are layered by remaining steps in descending order; index 0 is a single
//! absorbing zero-reward terminal. The solvers sweep indices in descending
//! order, which makes one pass exact on these layered models.

use std::collections::{BTreeSet, HashMap, VecDeque};

use super::env::{Action, EnvOptions, GridNavEnv, NavState, Stage};
use super::layout::LayoutSpec;
use super::GridError;
use crate::guidance::GuidanceStack;
use crate::mdp::TabularMdp;
use crate::scalar::{real, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    /// Hard ceiling on the enumerated state count.
    pub state_cap: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { state_cap: 2_000_000 }
    }
}

/// A compiled environment: the exact model plus the state indexing.
#[derive(Debug, Clone)]
pub struct CompiledEnv<T: Scalar> {
    pub env: GridNavEnv<T>,
    pub mdp: TabularMdp<T>,
    flag_mask: u8,
    nav_states: Vec<NavState>,
    index: HashMap<NavState, usize>,
}

/// Index of the absorbing terminal state.
pub const TERMINAL_STATE: usize = 0;
/// Index of the initial state.
pub const START_STATE: usize = 1;

impl<T: Scalar> CompiledEnv<T> {
    pub fn n_states(&self) -> usize {
        self.nav_states.len() + 1
    }

    pub fn flag_mask(&self) -> u8 {
        self.flag_mask
    }

    /// Model index of a simulator state; flags outside the compiled stage's
    /// mask are ignored.
    pub fn state_index(&self, state: &NavState) -> Option<usize> {
        let canonical = state.with_flags(state.flags() & self.flag_mask);
        self.index.get(&canonical).copied()
    }

    /// Simulator state behind a model index; `None` for the terminal.
    pub fn nav_state(&self, index: usize) -> Option<&NavState> {
        if index == TERMINAL_STATE {
            None
        } else {
            self.nav_states.get(index - 1)
        }
    }

    pub fn nav_states(&self) -> &[NavState] {
        &self.nav_states
    }
}

struct Enumeration {
    nav_states: Vec<NavState>,
    index: HashMap<NavState, usize>,
    // (state index, action index) -> (next index, done)
    edges: Vec<(usize, usize)>,
}

fn enumerate_states<T: Scalar>(
    env: &GridNavEnv<T>,
    traversal_stage: Stage,
    mask: u8,
    cap: usize,
) -> Result<Enumeration, GridError> {
    let start = env.initial_state().with_flags(0);
    let mut index: HashMap<NavState, usize> = HashMap::new();
    let mut nav_states = vec![start];
    index.insert(start, START_STATE);
    let mut queue = VecDeque::from([start]);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    while let Some(state) = queue.pop_front() {
        let s_idx = index[&state];
        for action in Action::ALL {
            let detail = env.step_detailed(traversal_stage, &state, action);
            let next_idx = if detail.done.is_some() {
                TERMINAL_STATE
            } else {
                let next = NavState::new(detail.next_cell, state.steps_left - 1, detail.next_flags & mask);
                match index.get(&next) {
                    Some(&i) => i,
                    None => {
                        let i = nav_states.len() + 1;
                        if i + 1 > cap {
                            return Err(GridError::StateSpaceTooLarge { size: i + 1, cap });
                        }
                        nav_states.push(next);
                        index.insert(next, i);
                        queue.push_back(next);
                        i
                    }
                }
            };
            debug_assert_eq!(edges.len(), (s_idx - 1) * 4 + action.index());
            edges.push((s_idx, next_idx));
        }
    }
    Ok(Enumeration { nav_states, index, edges })
}

/// Compiles the environment at its own stage.
///
/// Flags that the stage's rewards cannot read are masked away, so a stage-1
/// model collapses to reachable `(cell, steps_left)` pairs while stage 3
/// keeps all four region flags.
pub fn to_tabular<T: Scalar>(
    env: &GridNavEnv<T>,
    options: &CompileOptions,
) -> Result<CompiledEnv<T>, GridError> {
    compile_with_mask(env, env.flag_mask(env.stage), options)
}

/// Compiles the environment at its own stage's rewards but over the shared
/// full-flag state space that all stages have in common. Evaluation anchors
/// use this form so that learned policies, which observe the flags,
/// restrict onto it exactly.
pub fn to_tabular_shared<T: Scalar>(
    env: &GridNavEnv<T>,
    options: &CompileOptions,
) -> Result<CompiledEnv<T>, GridError> {
    compile_with_mask(env, env.flag_mask(super::env::Stage::Three), options)
}

fn compile_with_mask<T: Scalar>(
    env: &GridNavEnv<T>,
    mask: u8,
    options: &CompileOptions,
) -> Result<CompiledEnv<T>, GridError> {
    let enumeration = enumerate_states(env, env.stage, mask, options.state_cap)?;
    let n_states = enumeration.nav_states.len() + 1;
    let n_actions = Action::ALL.len();
    let mut transitions = vec![Vec::new(); n_states * n_actions];
    let mut rewards = vec![T::zero(); n_states * n_actions];
    for a in 0..n_actions {
        transitions[TERMINAL_STATE * n_actions + a] = vec![(TERMINAL_STATE, T::one())];
    }
    for (row, &(s_idx, next_idx)) in enumeration.edges.iter().enumerate() {
        let action = Action::from_index(row % n_actions);
        let state = enumeration.nav_states[s_idx - 1];
        let detail = env.step_detailed(env.stage, &state, action);
        transitions[s_idx * n_actions + action.index()] = vec![(next_idx, T::one())];
        rewards[s_idx * n_actions + action.index()] = detail.breakdown.total();
    }
    let terminal: BTreeSet<usize> = [TERMINAL_STATE].into();
    let mdp = TabularMdp::new(n_states, n_actions, transitions, rewards, real(env.gamma), &terminal)?;
    Ok(CompiledEnv {
        env: env.clone(),
        mdp,
        flag_mask: mask,
        nav_states: enumeration.nav_states,
        index: enumeration.index,
    })
}

/// How stack reward tables are populated.
#[derive(Debug, Clone, Copy, Default)]
pub struct StackBuildOptions {
    /// When true (the default harness setting) the tables hold only the
    /// stage-specific shaping components; the common step and timeout costs
    /// are folded out so the support check is not trivialized.
    pub components_only: bool,
}

/// Compiles one layout into a guidance stack: a shared full-flag model plus
/// one reward table per requested stage.
///
/// All stages share the transition law (region flags flip on landings
/// regardless of stage), so the stack is a set of reward tables over one
/// base model, which is exactly what the nesting validators need.
pub fn compile_stack<T: Scalar>(
    layout: &LayoutSpec,
    env_options: &EnvOptions<T>,
    stages: &[Stage],
    build: &StackBuildOptions,
    options: &CompileOptions,
) -> Result<(GuidanceStack<T>, CompiledEnv<T>), GridError> {
    assert!(!stages.is_empty(), "stack needs at least one stage");
    let richest = *stages.iter().max().expect("non-empty stages");
    let env = GridNavEnv::new(layout.clone(), richest, env_options);
    let mask = env.flag_mask(Stage::Three);
    let enumeration = enumerate_states(&env, Stage::Three, mask, options.state_cap)?;
    let n_states = enumeration.nav_states.len() + 1;
    let n_actions = Action::ALL.len();

    let mut transitions = vec![Vec::new(); n_states * n_actions];
    for a in 0..n_actions {
        transitions[TERMINAL_STATE * n_actions + a] = vec![(TERMINAL_STATE, T::one())];
    }
    let mut tables: Vec<Vec<T>> = vec![vec![T::zero(); n_states * n_actions]; stages.len()];
    for (row, &(s_idx, next_idx)) in enumeration.edges.iter().enumerate() {
        let action = Action::from_index(row % n_actions);
        let state = enumeration.nav_states[s_idx - 1];
        transitions[s_idx * n_actions + action.index()] = vec![(next_idx, T::one())];
        for (k, &stage) in stages.iter().enumerate() {
            let detail = env.step_detailed(stage, &state, action);
            tables[k][s_idx * n_actions + action.index()] = if build.components_only {
                detail.breakdown.shaped_component()
            } else {
                detail.breakdown.total()
            };
        }
    }
    let terminal: BTreeSet<usize> = [TERMINAL_STATE].into();
    let base = TabularMdp::new(
        n_states,
        n_actions,
        transitions,
        tables[0].clone(),
        real(env.gamma),
        &terminal,
    )?;
    let stack = GuidanceStack::new(base, tables)?;
    let compiled = CompiledEnv {
        env,
        mdp: stack.base().clone(),
        flag_mask: mask,
        nav_states: enumeration.nav_states,
        index: enumeration.index,
    };
    Ok((stack, compiled))
}
