//! Experiment configuration: one strict TOML schema with every default
//! materialized into the resolved file that each run directory receives,
//! so any run can be reproduced from its own artifacts.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use multistage_core::gridnav::{
    proximity_radius, BonusMode, CompileOptions, EnvOptions, Level, Metric, RewardParams,
    SampleParams, Stage,
};
use multistage_core::guidance::{NestingDirection, StageSchedule};
use multistage_core::scalar::real;
use multistage_core::sweep::{Anchor, EvalSpec, NcPolicy};
use multistage_core::trainer::{
    Algorithm, EnvFamily, ExplorationSchedule, LayoutMode, TrainerConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvBlock,
    pub guidance: GuidanceBlock,
    pub schedule: ScheduleBlock,
    pub trainer: TrainerBlock,
    pub measurement: MeasurementBlock,
    pub sweep: SweepBlock,
    pub validate: ValidateBlock,
    pub solve: SolveBlock,
    pub output: OutputBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvBlock::default(),
            guidance: GuidanceBlock::default(),
            schedule: ScheduleBlock::default(),
            trainer: TrainerBlock::default(),
            measurement: MeasurementBlock::default(),
            sweep: SweepBlock::default(),
            validate: ValidateBlock::default(),
            solve: SolveBlock::default(),
            output: OutputBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvBlock {
    pub level: u8,
    pub grid_size: u16,
    /// Seed of the per-episode layout stream (levels 2 and 3).
    pub layout_seed: u64,
    /// Train every episode on the single layout drawn from `layout_seed`.
    pub fixed_layout: bool,
    pub gamma: f64,
    pub metric: Metric,
    pub bonus_mode: BonusMode,
    pub eval_layouts: usize,
    pub eval_seed: u64,
    pub episodes_per_env: usize,
    pub state_cap: usize,
    pub time_limit_12: u32,
    pub time_limit_3: u32,
    /// Region radius in cells; resolved from the grid size when absent.
    pub proximity_radius: Option<u32>,
    /// Minimum start-to-object distance for sampled layouts; resolved to
    /// `proximity_radius + 1` when absent.
    pub exclusion_radius: Option<u32>,
    pub rewards: RewardsBlock,
}

impl Default for EnvBlock {
    fn default() -> Self {
        Self {
            level: 2,
            grid_size: 7,
            layout_seed: 1,
            fixed_layout: false,
            gamma: 0.99,
            metric: Metric::Chebyshev,
            bonus_mode: BonusMode::FirstEntry,
            eval_layouts: 20,
            eval_seed: 9001,
            episodes_per_env: 1,
            state_cap: 2_000_000,
            time_limit_12: 25,
            time_limit_3: 37,
            proximity_radius: None,
            exclusion_radius: None,
            rewards: RewardsBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardsBlock {
    pub goal_arrival: f64,
    pub nongoal_arrival: f64,
    pub timeout: f64,
    pub step: f64,
    pub proximity_bonus: f64,
    pub proximity_penalty: f64,
}

impl Default for RewardsBlock {
    fn default() -> Self {
        Self {
            goal_arrival: 10.0,
            nongoal_arrival: -1.0,
            timeout: -0.1,
            step: -0.01,
            proximity_bonus: 5.0,
            proximity_penalty: -5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceBlock {
    /// Stage semantics per schedule window.
    pub stages: Vec<u8>,
    /// Validators inspect the stage-specific shaping components; set false
    /// to include the common step and timeout terms.
    pub components_only: bool,
}

impl Default for GuidanceBlock {
    fn default() -> Self {
        Self { stages: vec![1, 2, 3], components_only: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleBlock {
    /// Explicit transition vectors; when empty the grid pattern below is
    /// expanded instead.
    pub transitions: Vec<Vec<u64>>,
    /// Grid pattern: one schedule `t1 + offsets` per `t1` value.
    pub t1_values: Vec<u64>,
    pub offsets: Vec<u64>,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        Self {
            transitions: Vec::new(),
            t1_values: vec![10_000, 20_000, 30_000],
            offsets: vec![0, 20_000, 40_000],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerBlock {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub actor_rate: f64,
    pub critic_rate: f64,
    pub exploration_start: f64,
    pub exploration_end: f64,
    /// 0 resolves to one third of `total_steps`.
    pub exploration_decay_steps: u64,
    pub temperature: f64,
    pub total_steps: u64,
    /// 0 resolves to `total_steps / 200`.
    pub snapshot_every: u64,
    pub seed: u64,
    pub record_steps: bool,
}

impl Default for TrainerBlock {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::ActorCritic,
            learning_rate: 0.1,
            actor_rate: 0.05,
            critic_rate: 0.01,
            exploration_start: 1.0,
            exploration_end: 0.05,
            exploration_decay_steps: 0,
            temperature: 1.0,
            total_steps: 80_000,
            snapshot_every: 0,
            seed: 1,
            record_steps: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementBlock {
    pub eps: f64,
    pub anchor: Anchor,
    pub tie_tol: f64,
    pub vi_tol: f64,
    pub not_converged: NcPolicy,
}

impl Default for MeasurementBlock {
    fn default() -> Self {
        Self {
            eps: 0.1,
            anchor: Anchor::Initial,
            tie_tol: 1e-6,
            vi_tol: 1e-9,
            not_converged: NcPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub seeds: Vec<u64>,
    pub uni_stage_baseline: bool,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3], uni_stage_baseline: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateBlock {
    /// Any of "support", "optimality". Exit status reflects the enabled
    /// checks only.
    pub checks: Vec<String>,
    pub levels: Vec<u8>,
    /// Sampled layouts per level (level 1 always checks its single fixed
    /// layout once).
    pub layouts: usize,
    pub layout_seed: u64,
    pub direction: NestingDirection,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            checks: vec!["support".into(), "optimality".into()],
            levels: vec![1, 2, 3],
            layouts: 100,
            layout_seed: 2024,
            direction: NestingDirection::Shrinking,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveBlock {
    pub stage: u8,
    /// When set, solve this text-format model instead of compiling the
    /// configured environment.
    pub mdp_file: String,
    pub layout_seed: u64,
    pub tol: f64,
    /// Also write the compiled model in the text table format (dense rows;
    /// sized for small models).
    pub emit_mdp_text: bool,
}

impl Default for SolveBlock {
    fn default() -> Self {
        Self { stage: 1, mdp_file: String::new(), layout_seed: 1, tol: 1e-9, emit_mdp_text: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: String,
    /// Success-curve formats: any of "csv", "dat".
    pub curve_formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: "runs/out".into(), curve_formats: vec!["csv".into(), "dat".into()] }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).context("parsing config")?;
        Ok(cfg)
    }

    /// Fills every derived default in place and checks cross-field
    /// consistency; the result serializes to the resolved-config echo.
    pub fn resolve(mut self) -> Result<Self> {
        if self.env.grid_size < 5 || self.env.grid_size % 2 == 0 {
            bail!("env.grid_size must be odd and at least 5");
        }
        Level::try_from(self.env.level).map_err(|e| anyhow::anyhow!("env.level: {e}"))?;
        if !(0.0..1.0).contains(&self.env.gamma) {
            bail!("env.gamma must lie in [0, 1)");
        }
        let radius = self.env.proximity_radius.unwrap_or_else(|| proximity_radius(self.env.grid_size));
        self.env.proximity_radius = Some(radius);
        self.env.exclusion_radius = Some(self.env.exclusion_radius.unwrap_or(radius + 1));
        if self.env.eval_layouts == 0 || self.env.episodes_per_env == 0 {
            bail!("env.eval_layouts and env.episodes_per_env must be positive");
        }

        if self.guidance.stages.is_empty() {
            bail!("guidance.stages must not be empty");
        }
        for &s in &self.guidance.stages {
            Stage::try_from(s).map_err(|e| anyhow::anyhow!("guidance.stages: {e}"))?;
        }

        if self.schedule.transitions.is_empty() {
            if self.schedule.t1_values.is_empty() {
                bail!("schedule needs explicit transitions or a t1 grid");
            }
            if self.schedule.offsets.len() != self.guidance.stages.len() {
                bail!(
                    "schedule.offsets has {} entries but guidance.stages has {}",
                    self.schedule.offsets.len(),
                    self.guidance.stages.len()
                );
            }
            self.schedule.transitions = self
                .schedule
                .t1_values
                .iter()
                .map(|t1| self.schedule.offsets.iter().map(|o| t1 + o).collect())
                .collect();
        }
        for t in &self.schedule.transitions {
            if t.len() != self.guidance.stages.len() {
                bail!(
                    "schedule {:?} has {} stages but guidance.stages has {}",
                    t,
                    t.len(),
                    self.guidance.stages.len()
                );
            }
            StageSchedule::new(t.clone()).map_err(|e| anyhow::anyhow!("schedule {t:?}: {e}"))?;
        }

        if self.trainer.exploration_decay_steps == 0 {
            self.trainer.exploration_decay_steps = (self.trainer.total_steps / 3).max(1);
        }
        if self.trainer.snapshot_every == 0 {
            self.trainer.snapshot_every = (self.trainer.total_steps / 200).max(1);
        }

        if !(self.measurement.eps.is_finite() && self.measurement.eps > 0.0) {
            bail!("measurement.eps must be finite and positive");
        }
        if self.sweep.seeds.is_empty() {
            bail!("sweep.seeds must not be empty");
        }
        for c in &self.validate.checks {
            if c != "support" && c != "optimality" {
                bail!("validate.checks entries must be \"support\" or \"optimality\", got {c:?}");
            }
        }
        for &l in &self.validate.levels {
            Level::try_from(l).map_err(|e| anyhow::anyhow!("validate.levels: {e}"))?;
        }
        for f in &self.output.curve_formats {
            if f != "csv" && f != "dat" {
                bail!("output.curve_formats entries must be \"csv\" or \"dat\", got {f:?}");
            }
        }
        check_trainer_block(&self.trainer)?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    pub fn level(&self) -> Level {
        Level::try_from(self.env.level).expect("validated at resolve time")
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.guidance
            .stages
            .iter()
            .map(|&s| Stage::try_from(s).expect("validated at resolve time"))
            .collect()
    }

    pub fn schedules(&self) -> Vec<StageSchedule> {
        self.schedule
            .transitions
            .iter()
            .map(|t| StageSchedule::new(t.clone()).expect("validated at resolve time"))
            .collect()
    }

    pub fn env_options(&self) -> EnvOptions<f64> {
        EnvOptions {
            metric: self.env.metric,
            bonus_mode: self.env.bonus_mode,
            rewards: RewardParams {
                goal_arrival: real(self.env.rewards.goal_arrival),
                nongoal_arrival: real(self.env.rewards.nongoal_arrival),
                timeout: real(self.env.rewards.timeout),
                step_cost: real(self.env.rewards.step),
                proximity_bonus: real(self.env.rewards.proximity_bonus),
                proximity_penalty: real(self.env.rewards.proximity_penalty),
            },
            gamma: self.env.gamma,
            time_limit_12: self.env.time_limit_12,
            time_limit_3: self.env.time_limit_3,
            proximity_radius: self.env.proximity_radius,
        }
    }

    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            metric: self.env.metric,
            exclusion_radius: self.env.exclusion_radius,
            max_attempts: 200,
        }
    }

    pub fn compile_options(&self) -> CompileOptions {
        CompileOptions { state_cap: self.env.state_cap }
    }

    pub fn family(&self) -> Result<EnvFamily<f64>> {
        let mode = if self.env.fixed_layout {
            let layout = multistage_core::gridnav::make_level_with(
                self.level(),
                self.env.grid_size,
                self.env.layout_seed,
                &self.sample_params(),
            )?;
            LayoutMode::Fixed(layout)
        } else {
            LayoutMode::Sampled { layout_seed: self.env.layout_seed }
        };
        Ok(EnvFamily {
            level: self.level(),
            grid_size: self.env.grid_size,
            mode,
            options: self.env_options(),
            sample: self.sample_params(),
            compile: self.compile_options(),
        })
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            algorithm: self.trainer.algorithm,
            learning_rate: self.trainer.learning_rate,
            actor_rate: self.trainer.actor_rate,
            critic_rate: self.trainer.critic_rate,
            exploration: ExplorationSchedule {
                start: self.trainer.exploration_start,
                end: self.trainer.exploration_end,
                decay_steps: self.trainer.exploration_decay_steps,
            },
            temperature: self.trainer.temperature,
            total_steps: self.trainer.total_steps,
            snapshot_every: self.trainer.snapshot_every,
            seed: self.trainer.seed,
            record_steps: self.trainer.record_steps,
        }
    }

    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            n_layouts: self.env.eval_layouts,
            seed: self.env.eval_seed,
            episodes_per_env: self.env.episodes_per_env,
        }
    }
}

fn check_trainer_block(t: &TrainerBlock) -> Result<()> {
    if t.total_steps == 0 {
        bail!("trainer.total_steps must be positive");
    }
    if t.learning_rate <= 0.0 || t.actor_rate <= 0.0 || t.critic_rate <= 0.0 {
        bail!("trainer learning rates must be positive");
    }
    if t.temperature <= 0.0 {
        bail!("trainer.temperature must be positive");
    }
    Ok(())
}
