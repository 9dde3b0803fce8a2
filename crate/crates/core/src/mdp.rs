//! Exact finite-MDP representation and dynamic-programming solvers.
//!
//! The model is a plain tabular MDP: a sparse transition distribution and a
//! scalar reward for every (state, action) pair, a discount strictly below
//! one, and a set of absorbing zero-reward terminal states. Everything here
//! is deterministic: fixed iteration order, no unordered aggregation, so
//! identical inputs produce bit-identical outputs.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::scalar::{real, Scalar};

/// Default sup-norm Bellman-residual tolerance for the solvers.
pub const DEFAULT_VI_TOL: f64 = 1e-9;
/// Default tolerance when collecting tied-optimal actions.
pub const DEFAULT_TIE_TOL: f64 = 1e-6;
/// Default discount factor for episodic navigation tasks.
pub const DEFAULT_GAMMA: f64 = 0.99;

/// Probability vectors must sum to one within this slack.
const PROB_SUM_TOL: f64 = 1e-9;
/// Hard cap on solver sweeps; generous enough for discounts up to
/// ~0.99999 at the default tolerance while still failing fast when a
/// tolerance is finer than the scalar type can certify.
const MAX_SWEEPS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("state count and action count must both be at least 1")]
    EmptyModel,
    #[error("transition probabilities for state {state} action {action} sum to {sum}, expected 1")]
    ProbabilitySum { state: usize, action: usize, sum: f64 },
    #[error("negative or non-finite probability at state {state} action {action}")]
    BadProbability { state: usize, action: usize },
    #[error("transition target {target} out of range at state {state} action {action}")]
    BadTarget { state: usize, action: usize, target: usize },
    #[error("discount factor {0} outside [0, 1)")]
    InvalidGamma(f64),
    #[error("terminal state {0} must self-loop with zero reward under every action")]
    TerminalNotAbsorbing(usize),
    #[error("non-finite reward at state {state} action {action}")]
    NonFiniteReward { state: usize, action: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("tolerance {0} must be finite and positive")]
    InvalidTolerance(f64),
    #[error("policy action {action} out of range at state {state}")]
    BadPolicyAction { state: usize, action: usize },
    #[error("solver failed to certify the requested residual within {MAX_SWEEPS} sweeps")]
    IterationLimit,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Finite MDP with explicit transition and reward tables.
///
/// Tables are indexed row-major by `state * n_actions + action`. Transition
/// rows are sparse `(next_state, probability)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<T: Scalar> {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Vec<(usize, T)>>,
    rewards: Vec<T>,
    gamma: T,
    terminal: Vec<bool>,
}

impl<T: Scalar> TabularMdp<T> {
    /// Validates and constructs a tabular MDP.
    ///
    /// Every probability row must be non-negative and sum to one within
    /// `1e-9`; the discount must lie in `[0, 1)`; terminal states must
    /// self-loop with zero reward under every action.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<(usize, T)>>,
        rewards: Vec<T>,
        gamma: T,
        terminal_states: &BTreeSet<usize>,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::EmptyModel);
        }
        let rows = n_states * n_actions;
        if transitions.len() != rows {
            return Err(MdpError::DimensionMismatch {
                what: "transition table",
                expected: rows,
                got: transitions.len(),
            });
        }
        if rewards.len() != rows {
            return Err(MdpError::DimensionMismatch {
                what: "reward table",
                expected: rows,
                got: rewards.len(),
            });
        }
        let g = gamma.to_f64().unwrap_or(f64::NAN);
        if !(0.0..1.0).contains(&g) {
            return Err(MdpError::InvalidGamma(g));
        }
        let mut terminal = vec![false; n_states];
        for &s in terminal_states {
            if s >= n_states {
                return Err(MdpError::BadTarget { state: s, action: 0, target: s });
            }
            terminal[s] = true;
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transitions[s * n_actions + a];
                let mut sum = 0.0;
                for &(target, p) in row {
                    if target >= n_states {
                        return Err(MdpError::BadTarget { state: s, action: a, target });
                    }
                    let pf = p.to_f64().unwrap_or(f64::NAN);
                    if !pf.is_finite() || pf < 0.0 {
                        return Err(MdpError::BadProbability { state: s, action: a });
                    }
                    sum += pf;
                }
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(MdpError::ProbabilitySum { state: s, action: a, sum });
                }
                let r = rewards[s * n_actions + a];
                if !r.is_finite() {
                    return Err(MdpError::NonFiniteReward { state: s, action: a });
                }
                if terminal[s] {
                    let self_loop = row.len() == 1 && row[0].0 == s && (row[0].1 - T::one()).abs() <= real(PROB_SUM_TOL);
                    if !self_loop || r != T::zero() {
                        return Err(MdpError::TerminalNotAbsorbing(s));
                    }
                }
            }
        }
        Ok(Self { n_states, n_actions, transitions, rewards, gamma, terminal })
    }

    /// Same dynamics with a replacement reward table.
    pub fn with_rewards(&self, rewards: Vec<T>) -> Result<Self, MdpError> {
        let terminal: BTreeSet<usize> = self.terminal_states().collect();
        Self::new(self.n_states, self.n_actions, self.transitions.clone(), rewards, self.gamma, &terminal)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn reward(&self, state: usize, action: usize) -> T {
        self.rewards[state * self.n_actions + action]
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn transition(&self, state: usize, action: usize) -> &[(usize, T)] {
        &self.transitions[state * self.n_actions + action]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal.iter().enumerate().filter(|(_, t)| **t).map(|(s, _)| s)
    }

    /// One-step lookahead value of `(state, action)` under `values`.
    pub fn q_value(&self, state: usize, action: usize, values: &[T]) -> T {
        let mut acc = T::zero();
        for &(next, p) in self.transition(state, action) {
            acc += p * values[next];
        }
        self.reward(state, action) + self.gamma * acc
    }

    fn best_value(&self, state: usize, values: &[T]) -> T {
        let mut best = self.q_value(state, 0, values);
        for a in 1..self.n_actions {
            let q = self.q_value(state, a, values);
            if q > best {
                best = q;
            }
        }
        best
    }

    /// Sup-norm residual of the Bellman optimality operator at `values`.
    pub fn bellman_residual(&self, values: &[T]) -> T {
        let mut worst = T::zero();
        for s in 0..self.n_states {
            let d = (self.best_value(s, values) - values[s]).abs();
            if d > worst {
                worst = d;
            }
        }
        worst
    }

    fn policy_residual(&self, policy: &DeterministicPolicy, values: &[T]) -> T {
        let mut worst = T::zero();
        for s in 0..self.n_states {
            let d = (self.q_value(s, policy.action(s), values) - values[s]).abs();
            if d > worst {
                worst = d;
            }
        }
        worst
    }

    /// Writes the model in the plain-text table format.
    ///
    /// Layout: a `tabular-mdp v1` header, one line with
    /// `n_states n_actions gamma`, one line `terminal s...` listing terminal
    /// states, then one line per (state, action) holding the state, action,
    /// the dense next-state probabilities, and the reward.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "tabular-mdp v1")?;
        writeln!(w, "{} {} {}", self.n_states, self.n_actions, self.gamma)?;
        write!(w, "terminal")?;
        for s in self.terminal_states() {
            write!(w, " {s}")?;
        }
        writeln!(w)?;
        let mut dense = vec![T::zero(); self.n_states];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for v in dense.iter_mut() {
                    *v = T::zero();
                }
                for &(next, p) in self.transition(s, a) {
                    dense[next] = dense[next] + p;
                }
                write!(w, "{s} {a}")?;
                for v in &dense {
                    write!(w, " {v}")?;
                }
                writeln!(w, " {}", self.reward(s, a))?;
            }
        }
        Ok(())
    }

    /// Parses the text format produced by [`TabularMdp::write_text`].
    pub fn from_text<R: BufRead>(r: R) -> Result<Self, MdpError> {
        let mut lines = r.lines();
        let mut next_line = || -> Result<String, MdpError> {
            lines
                .next()
                .ok_or_else(|| MdpError::Parse("unexpected end of input".into()))?
                .map_err(|e| MdpError::Parse(e.to_string()))
        };
        let header = next_line()?;
        if header.trim() != "tabular-mdp v1" {
            return Err(MdpError::Parse(format!("unknown header {header:?}")));
        }
        let dims = next_line()?;
        let mut it = dims.split_whitespace();
        let n_states: usize = parse_field(it.next(), "n_states")?;
        let n_actions: usize = parse_field(it.next(), "n_actions")?;
        let gamma: f64 = parse_field(it.next(), "gamma")?;
        let term_line = next_line()?;
        let mut terms = term_line.split_whitespace();
        if terms.next() != Some("terminal") {
            return Err(MdpError::Parse("expected terminal line".into()));
        }
        let mut terminal = BTreeSet::new();
        for tok in terms {
            terminal.insert(tok.parse::<usize>().map_err(|e| MdpError::Parse(e.to_string()))?);
        }
        let rows = n_states.checked_mul(n_actions).ok_or_else(|| MdpError::Parse("table too large".into()))?;
        let mut transitions = vec![Vec::new(); rows];
        let mut rewards = vec![T::zero(); rows];
        for _ in 0..rows {
            let line = next_line()?;
            let mut toks = line.split_whitespace();
            let s: usize = parse_field(toks.next(), "state")?;
            let a: usize = parse_field(toks.next(), "action")?;
            if s >= n_states || a >= n_actions {
                return Err(MdpError::Parse(format!("row index ({s}, {a}) out of range")));
            }
            let rest: Vec<&str> = toks.collect();
            if rest.len() != n_states + 1 {
                return Err(MdpError::Parse(format!("row ({s}, {a}) has {} fields, expected {}", rest.len(), n_states + 1)));
            }
            let mut sparse = Vec::new();
            for (next, tok) in rest[..n_states].iter().enumerate() {
                let p: f64 = tok.parse().map_err(|e: std::num::ParseFloatError| MdpError::Parse(e.to_string()))?;
                if p != 0.0 {
                    sparse.push((next, real::<T>(p)));
                }
            }
            let r: f64 = rest[n_states].parse().map_err(|e: std::num::ParseFloatError| MdpError::Parse(e.to_string()))?;
            transitions[s * n_actions + a] = sparse;
            rewards[s * n_actions + a] = real(r);
        }
        Self::new(n_states, n_actions, transitions, rewards, real(gamma), &terminal)
    }
}

fn parse_field<F: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<F, MdpError>
where
    F::Err: std::fmt::Display,
{
    tok.ok_or_else(|| MdpError::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|e: F::Err| MdpError::Parse(format!("bad {what}: {e}")))
}

/// State-indexed value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction<T: Scalar>(Vec<T>);

impl<T: Scalar> ValueFunction<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, state: usize) -> T {
        self.0[state]
    }

    /// Largest absolute per-state difference against `other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut worst = T::zero();
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            let d = (*a - *b).abs();
            if d > worst {
                worst = d;
            }
        }
        worst
    }
}

/// One action per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy(Vec<usize>);

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, mdp_states: usize, mdp_actions: usize) -> Result<(), MdpError> {
        if self.0.len() != mdp_states {
            return Err(MdpError::DimensionMismatch {
                what: "policy",
                expected: mdp_states,
                got: self.0.len(),
            });
        }
        for (s, &a) in self.0.iter().enumerate() {
            if a >= mdp_actions {
                return Err(MdpError::BadPolicyAction { state: s, action: a });
            }
        }
        Ok(())
    }
}

/// Per-state sets of allowed actions; the represented policy set is the
/// Cartesian product of the per-state sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySet {
    sets: Vec<Vec<usize>>,
}

impl PolicySet {
    pub fn new(sets: Vec<Vec<usize>>) -> Self {
        Self { sets }
    }

    pub fn n_states(&self) -> usize {
        self.sets.len()
    }

    /// Sorted optimal actions at `state`; always non-empty.
    pub fn actions(&self, state: usize) -> &[usize] {
        &self.sets[state]
    }

    pub fn contains(&self, state: usize, action: usize) -> bool {
        self.sets[state].binary_search(&action).is_ok()
    }

    /// True when every per-state set of `self` is contained in `other`.
    pub fn is_subset_of(&self, other: &PolicySet) -> bool {
        self.sets.len() == other.sets.len()
            && self
                .sets
                .iter()
                .enumerate()
                .all(|(s, set)| set.iter().all(|&a| other.contains(s, a)))
    }
}

fn check_tol<T: Scalar>(tol: T) -> Result<(), MdpError> {
    let t = tol.to_f64().unwrap_or(f64::NAN);
    if !t.is_finite() || t <= 0.0 {
        return Err(MdpError::InvalidTolerance(t));
    }
    Ok(())
}

/// Solves for the optimal value function by Gauss–Seidel value iteration.
///
/// States are swept in fixed descending index order (compiled episodic
/// models list deep states last, so a sweep propagates values in one pass).
/// The returned values carry a certified sup-norm Bellman residual of at
/// most `tol`.
pub fn value_iteration<T: Scalar>(mdp: &TabularMdp<T>, tol: T) -> Result<ValueFunction<T>, MdpError> {
    check_tol(tol)?;
    let n = mdp.n_states();
    let mut values = vec![T::zero(); n];
    for _ in 0..MAX_SWEEPS {
        let mut delta = T::zero();
        for s in (0..n).rev() {
            let best = mdp.best_value(s, &values);
            let d = (best - values[s]).abs();
            if d > delta {
                delta = d;
            }
            values[s] = best;
        }
        if delta <= tol && mdp.bellman_residual(&values) <= tol {
            return Ok(ValueFunction(values));
        }
    }
    Err(MdpError::IterationLimit)
}

/// Evaluates a fixed deterministic policy to the requested residual.
pub fn policy_evaluation<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &DeterministicPolicy,
    tol: T,
) -> Result<ValueFunction<T>, MdpError> {
    check_tol(tol)?;
    policy.check(mdp.n_states(), mdp.n_actions())?;
    let n = mdp.n_states();
    let mut values = vec![T::zero(); n];
    for _ in 0..MAX_SWEEPS {
        let mut delta = T::zero();
        for s in (0..n).rev() {
            let v = mdp.q_value(s, policy.action(s), &values);
            let d = (v - values[s]).abs();
            if d > delta {
                delta = d;
            }
            values[s] = v;
        }
        if delta <= tol && mdp.policy_residual(policy, &values) <= tol {
            return Ok(ValueFunction(values));
        }
    }
    Err(MdpError::IterationLimit)
}

/// Greedy policy with respect to `values`; ties resolve to the lowest action.
pub fn greedy_policy<T: Scalar>(mdp: &TabularMdp<T>, values: &ValueFunction<T>) -> DeterministicPolicy {
    let mut actions = Vec::with_capacity(mdp.n_states());
    for s in 0..mdp.n_states() {
        let mut best_a = 0;
        let mut best_q = mdp.q_value(s, 0, values.values());
        for a in 1..mdp.n_actions() {
            let q = mdp.q_value(s, a, values.values());
            if q > best_q {
                best_q = q;
                best_a = a;
            }
        }
        actions.push(best_a);
    }
    DeterministicPolicy(actions)
}

/// Per-state sets of actions whose optimal Q-value is within `tie_tol` of
/// the best action, derived from a fresh [`value_iteration`] solve at
/// [`DEFAULT_VI_TOL`] (floored to what the scalar type can certify, so the
/// `f32` instantiation terminates on stochastic models too).
pub fn optimal_policy_set<T: Scalar>(mdp: &TabularMdp<T>, tie_tol: T) -> Result<PolicySet, MdpError> {
    check_tol(tie_tol)?;
    let tol = real::<T>(DEFAULT_VI_TOL).max(T::epsilon() * real(100.0));
    let v_star = value_iteration(mdp, tol)?;
    Ok(policy_set_from_values(mdp, &v_star, tie_tol))
}

/// Tied-optimal action sets for precomputed optimal values.
pub fn policy_set_from_values<T: Scalar>(
    mdp: &TabularMdp<T>,
    v_star: &ValueFunction<T>,
    tie_tol: T,
) -> PolicySet {
    let mut sets = Vec::with_capacity(mdp.n_states());
    for s in 0..mdp.n_states() {
        let qs: Vec<T> = (0..mdp.n_actions()).map(|a| mdp.q_value(s, a, v_star.values())).collect();
        let mut best = qs[0];
        for &q in &qs[1..] {
            if q > best {
                best = q;
            }
        }
        let set: Vec<usize> = qs
            .iter()
            .enumerate()
            .filter(|(_, &q)| q >= best - tie_tol)
            .map(|(a, _)| a)
            .collect();
        sets.push(set);
    }
    PolicySet { sets }
}

/// True when the policy's value is within `eps` of `v_star` at every state.
///
/// The policy value is computed by [`policy_evaluation`] at residual
/// tolerance `eps / 10`. `eps` must be finite and positive.
pub fn is_eps_converged<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &DeterministicPolicy,
    v_star: &ValueFunction<T>,
    eps: T,
) -> Result<bool, MdpError> {
    let e = eps.to_f64().unwrap_or(f64::NAN);
    if !e.is_finite() || e <= 0.0 {
        return Err(MdpError::InvalidTolerance(e));
    }
    if v_star.len() != mdp.n_states() {
        return Err(MdpError::DimensionMismatch {
            what: "optimal values",
            expected: mdp.n_states(),
            got: v_star.len(),
        });
    }
    let v_pi = policy_evaluation(mdp, policy, eps * real(0.1))?;
    for s in 0..mdp.n_states() {
        if (v_pi.get(s) - v_star.get(s)).abs() >= eps {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    type M = TabularMdp<f64>;

    #[test]
    fn chain_matches_hand_computed_values() {
        let mdp = samples::chain3::<f64>();
        let v = value_iteration(&mdp, 1e-9).unwrap();
        assert!((v.get(0) - 0.81).abs() <= 1e-9);
        assert!((v.get(1) - 0.9).abs() <= 1e-9);
        assert_eq!(v.get(2), 0.0);
    }

    #[test]
    fn zero_rewards_solve_to_zero() {
        let mdp = samples::zero_reward::<f64>(6, 3, 0.95);
        let v = value_iteration(&mdp, 1e-9).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn self_loop_solves_geometric_series() {
        let mdp = samples::self_loop::<f64>(0.5);
        let v = value_iteration(&mdp, 1e-12).unwrap();
        assert!((v.get(0) - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn policy_evaluation_matches_value_iteration_for_optimal_policy() {
        let mdp = samples::chain3::<f64>();
        let tol = 1e-10;
        let v_star = value_iteration(&mdp, tol).unwrap();
        let pi = greedy_policy(&mdp, &v_star);
        let v_pi = policy_evaluation(&mdp, &pi, tol).unwrap();
        assert!(v_pi.max_abs_diff(&v_star) <= 2.0 * tol);
    }

    #[test]
    fn policy_that_never_reaches_reward_evaluates_to_zero() {
        let mdp = samples::chain3::<f64>();
        let stay = DeterministicPolicy::new(vec![samples::CHAIN_STAY; 3]);
        let v = policy_evaluation(&mdp, &stay, 1e-10).unwrap();
        assert!(v.values().iter().all(|&x| x.abs() <= 1e-9));
    }

    #[test]
    fn self_loop_policy_value_is_geometric_series() {
        let mdp = samples::self_loop::<f64>(0.5);
        let pi = DeterministicPolicy::new(vec![0]);
        let v = policy_evaluation(&mdp, &pi, 1e-12).unwrap();
        assert!((v.get(0) - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn chain_has_singleton_optimal_sets() {
        let mdp = samples::chain3::<f64>();
        let set = optimal_policy_set(&mdp, 1e-6).unwrap();
        for s in 0..2 {
            assert_eq!(set.actions(s), &[samples::CHAIN_ADVANCE]);
        }
        // Terminal state: both actions self-loop with zero reward.
        assert_eq!(set.actions(2), &[0, 1]);
    }

    #[test]
    fn duplicate_actions_are_both_optimal() {
        let mdp = samples::two_equal_actions::<f64>();
        let set = optimal_policy_set(&mdp, 1e-6).unwrap();
        for s in 0..mdp.n_states() {
            assert_eq!(set.actions(s), &[0, 1]);
        }
    }

    #[test]
    fn zero_reward_makes_every_action_optimal() {
        let mdp = samples::zero_reward::<f64>(4, 3, 0.9);
        let set = optimal_policy_set(&mdp, 1e-6).unwrap();
        for s in 0..4 {
            assert_eq!(set.actions(s), &[0, 1, 2]);
        }
    }

    #[test]
    fn optimal_policy_is_eps_converged() {
        let mdp = samples::chain3::<f64>();
        let v_star = value_iteration(&mdp, 1e-9).unwrap();
        let pi = greedy_policy(&mdp, &v_star);
        assert!(is_eps_converged(&mdp, &pi, &v_star, 1e-3).unwrap());
    }

    #[test]
    fn straying_policy_is_not_converged_at_half_eps() {
        let mdp = samples::chain3::<f64>();
        let v_star = value_iteration(&mdp, 1e-9).unwrap();
        // Steps away from the rewarding transition at s0.
        let pi = DeterministicPolicy::new(vec![samples::CHAIN_STAY, samples::CHAIN_ADVANCE, 0]);
        assert!(!is_eps_converged(&mdp, &pi, &v_star, 0.5).unwrap());
        let v_pi = policy_evaluation(&mdp, &pi, 1e-10).unwrap();
        assert!((v_pi.get(0) - v_star.get(0)).abs() >= 0.5);
    }

    #[test]
    fn infinite_eps_is_rejected() {
        let mdp = samples::chain3::<f64>();
        let v_star = value_iteration(&mdp, 1e-9).unwrap();
        let pi = greedy_policy(&mdp, &v_star);
        assert!(matches!(
            is_eps_converged(&mdp, &pi, &v_star, f64::INFINITY),
            Err(MdpError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mdp = samples::chain3::<f64>();
        let short = ValueFunction::new(vec![0.0, 0.0]);
        let pi = DeterministicPolicy::new(vec![0, 0, 0]);
        assert!(matches!(
            is_eps_converged(&mdp, &pi, &short, 0.1),
            Err(MdpError::DimensionMismatch { .. })
        ));
        let short_pi = DeterministicPolicy::new(vec![0]);
        assert!(matches!(
            policy_evaluation(&mdp, &short_pi, 0.1),
            Err(MdpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn construction_rejects_bad_probability_rows() {
        let err = M::new(
            1,
            1,
            vec![vec![(0, 0.5)]],
            vec![0.0],
            0.9,
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert!(matches!(err, MdpError::ProbabilitySum { .. }));
    }

    #[test]
    fn construction_rejects_gamma_of_one() {
        let err = M::new(1, 1, vec![vec![(0, 1.0)]], vec![0.0], 1.0, &BTreeSet::new()).unwrap_err();
        assert!(matches!(err, MdpError::InvalidGamma(_)));
    }

    #[test]
    fn construction_rejects_non_absorbing_terminal() {
        let terminal: BTreeSet<usize> = [0].into();
        let err = M::new(1, 1, vec![vec![(0, 1.0)]], vec![0.5], 0.9, &terminal).unwrap_err();
        assert!(matches!(err, MdpError::TerminalNotAbsorbing(0)));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mdp = samples::chain3::<f64>();
        let mut buf = Vec::new();
        mdp.write_text(&mut buf).unwrap();
        let parsed = M::from_text(buf.as_slice()).unwrap();
        assert_eq!(parsed, mdp);
        let mut buf2 = Vec::new();
        parsed.write_text(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn f32_policy_set_terminates_on_stochastic_models() {
        fn build<T: crate::scalar::Scalar>() -> TabularMdp<T> {
            let r = crate::scalar::real::<T>;
            TabularMdp::new(
                2,
                2,
                vec![
                    vec![(0, r(0.5)), (1, r(0.5))],
                    vec![(1, r(1.0))],
                    vec![(0, r(0.25)), (1, r(0.75))],
                    vec![(0, r(1.0))],
                ],
                vec![r(0.3), r(-0.2), r(1.0), r(0.0)],
                r(0.9),
                &BTreeSet::new(),
            )
            .unwrap()
        }
        let set32 = optimal_policy_set(&build::<f32>(), 1e-3).unwrap();
        let set64 = optimal_policy_set(&build::<f64>(), 1e-3).unwrap();
        for s in 0..2 {
            assert_eq!(set32.actions(s), set64.actions(s));
        }
    }

    #[test]
    fn solvers_are_bit_deterministic() {
        let mdp = samples::chain3::<f64>();
        let a = value_iteration(&mdp, 1e-9).unwrap();
        let b = value_iteration(&mdp, 1e-9).unwrap();
        assert_eq!(a, b);
    }
}
