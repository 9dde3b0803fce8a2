//! Episode-level properties of the navigation simulator.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multistage_core::gridnav::{
    make_level, Action, EnvOptions, GridNavEnv, Level, Stage, StepOutcome,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every episode ends in exactly one terminal event within the time
    /// limit, and region flags only ever accumulate.
    #[test]
    fn episodes_have_one_terminal_event_within_the_limit(
        seed in 0u64..100_000,
        level_tag in 1u8..=3,
        stage_tag in 1u8..=3,
    ) {
        let level = Level::try_from(level_tag).unwrap();
        let stage = Stage::try_from(stage_tag).unwrap();
        let layout = make_level(level, 7, seed).unwrap();
        let env = GridNavEnv::<f64>::new(layout, stage, &EnvOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE11E);
        for _ in 0..20 {
            let mut state = env.initial_state();
            let mut steps = 0u32;
            loop {
                let action = Action::from_index(rng.gen_range(0..4));
                match env.step(&state, action) {
                    StepOutcome::Continue { state: next, .. } => {
                        prop_assert!(next.flags() & state.flags() == state.flags(), "flags cleared");
                        prop_assert_eq!(next.steps_left, state.steps_left - 1);
                        state = next;
                    }
                    StepOutcome::Done { .. } => {
                        steps += 1;
                        break;
                    }
                }
                steps += 1;
                prop_assert!(steps <= env.time_limit, "episode exceeded the limit");
            }
            prop_assert!(steps <= env.time_limit);
        }
    }

    /// Stage rewards decompose additively: stage 2 adds only the goal
    /// bonus, stage 3 only the non-goal penalties on top of it.
    #[test]
    fn stage_rewards_decompose(seed in 0u64..100_000) {
        let layout = make_level(Level::Two, 7, seed).unwrap();
        let env = GridNavEnv::<f64>::new(layout, Stage::Three, &EnvOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDEC0);
        let mut state = env.initial_state();
        for _ in 0..200 {
            let action = Action::from_index(rng.gen_range(0..4));
            let d1 = env.step_detailed(Stage::One, &state, action);
            let d2 = env.step_detailed(Stage::Two, &state, action);
            let d3 = env.step_detailed(Stage::Three, &state, action);
            prop_assert_eq!(d2.breakdown.total() - d1.breakdown.total(), d2.breakdown.goal_bonus);
            prop_assert_eq!(
                d3.breakdown.total() - d2.breakdown.total(),
                d3.breakdown.nongoal_penalty
            );
            // Transitions agree across stages.
            prop_assert_eq!(d1.next_cell, d3.next_cell);
            prop_assert_eq!(d1.next_flags, d3.next_flags);
            match env.step(&state, action) {
                StepOutcome::Continue { state: next, .. } => state = next,
                StepOutcome::Done { .. } => state = env.initial_state(),
            }
        }
    }
}
