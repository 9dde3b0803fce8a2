//! Small reference decision processes shared by tests, docs, and golden files.

use std::collections::BTreeSet;

use crate::mdp::TabularMdp;
use crate::scalar::{real, Scalar};

/// Action index that advances along the chain.
pub const CHAIN_ADVANCE: usize = 0;
/// Action index that stays in place.
pub const CHAIN_STAY: usize = 1;

/// Three-state chain `s0 -> s1 -> s2` with `s2` terminal and discount 0.9.
///
/// The final transition pays the entering reward discounted at the arrival
/// step (`0.9 * 1.0`), so the optimal values are exactly
/// `(0.81, 0.9, 0.0)`. The second action stays in place with zero reward.
pub fn chain3<T: Scalar>() -> TabularMdp<T> {
    let gamma = 0.9;
    let n_states = 3;
    let n_actions = 2;
    let mut transitions = vec![Vec::new(); n_states * n_actions];
    let mut rewards = vec![T::zero(); n_states * n_actions];
    let one = T::one();
    // advance
    transitions[CHAIN_ADVANCE] = vec![(1, one)];
    transitions[n_actions + CHAIN_ADVANCE] = vec![(2, one)];
    transitions[2 * n_actions + CHAIN_ADVANCE] = vec![(2, one)];
    // stay
    transitions[CHAIN_STAY] = vec![(0, one)];
    transitions[n_actions + CHAIN_STAY] = vec![(1, one)];
    transitions[2 * n_actions + CHAIN_STAY] = vec![(2, one)];
    rewards[n_actions + CHAIN_ADVANCE] = real(gamma);
    let terminal: BTreeSet<usize> = [2].into();
    TabularMdp::new(n_states, n_actions, transitions, rewards, real(gamma), &terminal)
        .expect("chain fixture is valid")
}

/// One non-terminal state whose single action self-loops with reward 1.
pub fn self_loop<T: Scalar>(gamma: f64) -> TabularMdp<T> {
    TabularMdp::new(1, 1, vec![vec![(0, T::one())]], vec![T::one()], real(gamma), &BTreeSet::new())
        .expect("self-loop fixture is valid")
}

/// Ring-shaped MDP with all-zero rewards.
pub fn zero_reward<T: Scalar>(n_states: usize, n_actions: usize, gamma: f64) -> TabularMdp<T> {
    let mut transitions = vec![Vec::new(); n_states * n_actions];
    let rewards = vec![T::zero(); n_states * n_actions];
    for s in 0..n_states {
        for a in 0..n_actions {
            transitions[s * n_actions + a] = vec![((s + a + 1) % n_states, T::one())];
        }
    }
    TabularMdp::new(n_states, n_actions, transitions, rewards, real(gamma), &BTreeSet::new())
        .expect("zero-reward fixture is valid")
}

/// Two-state MDP in which both actions have identical effect everywhere.
pub fn two_equal_actions<T: Scalar>() -> TabularMdp<T> {
    let n_states = 2;
    let n_actions = 2;
    let mut transitions = vec![Vec::new(); n_states * n_actions];
    let mut rewards = vec![T::zero(); n_states * n_actions];
    for a in 0..n_actions {
        transitions[a] = vec![(1, T::one())];
        rewards[a] = real(0.25);
        transitions[n_actions + a] = vec![(0, T::one())];
    }
    TabularMdp::new(n_states, n_actions, transitions, rewards, real(0.9), &BTreeSet::new())
        .expect("two-action fixture is valid")
}
