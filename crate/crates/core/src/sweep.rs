//! Stage-transition sweeps: train over a schedule grid and seed list,
//! measure convergence steps and success rates, locate the best-converging
//! schedule, and compare multi-stage training against the uni-stage
//! baseline that receives the richest guidance from step 0.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridnav::{GridError, GridNavEnv, Outcome, Stage};
use crate::guidance::StageSchedule;
use crate::scalar::Scalar;
use crate::trainer::{
    convergence_step, success_rate, train, Convergence, EnvFamily, EvalInstance, StagePlan,
    TrainError, TrainerConfig,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    BadSpec(String),
    #[error("every schedule failed to converge")]
    AllDiverged,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Which model anchors the convergence measurement: the initial sparse
/// stage or the final (richest) stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    #[default]
    Initial,
    Final,
}

/// Aggregation rule for non-converged seeds: `Strict` poisons the schedule
/// mean with +inf; `Lenient` averages converged seeds only. The choice is
/// carried into every emitted summary, never silently mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NcPolicy {
    #[default]
    Strict,
    Lenient,
}

impl NcPolicy {
    pub fn label(self) -> &'static str {
        match self {
            NcPolicy::Strict => "strict",
            NcPolicy::Lenient => "lenient",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSpec {
    /// Frozen evaluation layouts (collapses to 1 for fixed layouts).
    pub n_layouts: usize,
    pub seed: u64,
    pub episodes_per_env: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { n_layouts: 20, seed: 9001, episodes_per_env: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec<T: Scalar> {
    pub schedules: Vec<StageSchedule>,
    /// Stage semantics per schedule window, normally `[1, 2, 3]`.
    pub stages: Vec<Stage>,
    pub seeds: Vec<u64>,
    pub eps: f64,
    pub vi_tol: f64,
    pub trainer: TrainerConfig,
    pub family: EnvFamily<T>,
    pub eval: EvalSpec,
    pub anchor: Anchor,
    pub uni_baseline: bool,
    pub nc_policy: NcPolicy,
}

/// Cell identity inside a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellKind {
    Multi(StageSchedule),
    Uni,
}

impl CellKind {
    pub fn label(&self) -> String {
        match self {
            CellKind::Multi(s) => s.label(),
            CellKind::Uni => "uni".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeCounts {
    pub goal: u64,
    pub non_goal: u64,
    pub timeout: u64,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub convergence: Convergence,
    pub final_success: f64,
    /// Success rate of every snapshot's greedy policy, by global step.
    pub curve: Vec<(u64, f64)>,
    pub outcomes: OutcomeCounts,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub kind: CellKind,
    pub seed: u64,
    pub result: Result<CellResult, String>,
}

#[derive(Debug, Clone)]
pub struct ScheduleSummary {
    pub kind: CellKind,
    pub mean_l: f64,
    pub std_l: f64,
    pub mean_success: f64,
    pub std_success: f64,
    pub converged: usize,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub summaries: Vec<ScheduleSummary>,
    pub nc_policy: NcPolicy,
    pub eps: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(kind: CellKind, cells: &[&SweepCell], nc_policy: NcPolicy) -> ScheduleSummary {
    let ok: Vec<&CellResult> = cells.iter().filter_map(|c| c.result.as_ref().ok()).collect();
    let successes: Vec<f64> = ok.iter().map(|r| r.final_success).collect();
    let (mean_success, std_success) = mean_std(&successes);
    let converged = ok
        .iter()
        .filter(|r| matches!(r.convergence, Convergence::AtStep(_)))
        .count();
    let ls: Vec<f64> = match nc_policy {
        NcPolicy::Strict => ok.iter().map(|r| r.convergence.as_f64()).collect(),
        NcPolicy::Lenient => ok
            .iter()
            .filter_map(|r| match r.convergence {
                Convergence::AtStep(s) => Some(s as f64),
                Convergence::NotConverged => None,
            })
            .collect(),
    };
    let (mean_l, std_l) = if ls.is_empty() { (f64::INFINITY, f64::NAN) } else { mean_std(&ls) };
    ScheduleSummary {
        kind,
        mean_l,
        std_l,
        mean_success,
        std_success,
        converged,
        n: ok.len(),
    }
}

/// Runs every (schedule, seed) cell plus the optional uni-stage baseline.
///
/// Cells are independent and executed in parallel; results merge in the
/// deterministic (schedule, seed) order given by the `SweepSpec`, and each
/// cell is a pure function of its key, so the whole result is
/// reproducible. Cell failures are recorded in place and never abort the
/// sweep.
pub fn run_sweep<T: Scalar>(spec: &SweepSpec<T>) -> Result<SweepResult, SweepError> {
    if spec.seeds.is_empty() {
        return Err(SweepError::BadSpec("no seeds".into()));
    }
    if spec.schedules.is_empty() && !spec.uni_baseline {
        return Err(SweepError::BadSpec("no schedules and no baseline".into()));
    }
    if spec.stages.is_empty() {
        return Err(SweepError::BadSpec("no stages".into()));
    }
    for schedule in &spec.schedules {
        if schedule.n_stages() != spec.stages.len() {
            return Err(SweepError::BadSpec(format!(
                "schedule {} has {} stages, stage list has {}",
                schedule.label(),
                schedule.n_stages(),
                spec.stages.len()
            )));
        }
        spec.trainer.validate(schedule.final_transition())?;
    }
    spec.trainer.validate(0)?;
    if !(spec.eps.is_finite() && spec.eps > 0.0) {
        return Err(SweepError::BadSpec(format!("eps {} must be finite and positive", spec.eps)));
    }

    // Frozen evaluation set, shared by every cell.
    let anchor_stage = match spec.anchor {
        Anchor::Initial => Stage::One,
        Anchor::Final => *spec.stages.last().expect("non-empty stages"),
    };
    let layouts = spec.family.eval_layouts(spec.eval.n_layouts, spec.eval.seed)?;
    let mut evals = Vec::with_capacity(layouts.len());
    let mut eval_envs: Vec<GridNavEnv<T>> = Vec::with_capacity(layouts.len());
    for layout in layouts {
        let env = spec.family.env_for(layout, anchor_stage);
        evals.push(EvalInstance::build(&env, &spec.family.compile, spec.vi_tol)?);
        eval_envs.push(env);
    }

    let mut keys: Vec<(CellKind, u64)> = Vec::new();
    for schedule in &spec.schedules {
        for &seed in &spec.seeds {
            keys.push((CellKind::Multi(schedule.clone()), seed));
        }
    }
    if spec.uni_baseline {
        for &seed in &spec.seeds {
            keys.push((CellKind::Uni, seed));
        }
    }

    let cells: Vec<SweepCell> = keys
        .into_par_iter()
        .map(|(kind, seed)| {
            let result = run_cell(spec, &evals, &eval_envs, &kind, seed).map_err(|e| e.to_string());
            SweepCell { kind, seed, result }
        })
        .collect();

    let mut summaries = Vec::new();
    for schedule in &spec.schedules {
        let kind = CellKind::Multi(schedule.clone());
        let group: Vec<&SweepCell> = cells.iter().filter(|c| c.kind == kind).collect();
        summaries.push(summarize(kind, &group, spec.nc_policy));
    }
    if spec.uni_baseline {
        let group: Vec<&SweepCell> = cells.iter().filter(|c| c.kind == CellKind::Uni).collect();
        summaries.push(summarize(CellKind::Uni, &group, spec.nc_policy));
    }

    Ok(SweepResult { cells, summaries, nc_policy: spec.nc_policy, eps: spec.eps })
}

fn run_cell<T: Scalar>(
    spec: &SweepSpec<T>,
    evals: &[EvalInstance<T>],
    eval_envs: &[GridNavEnv<T>],
    kind: &CellKind,
    seed: u64,
) -> Result<CellResult, SweepError> {
    let plan = match kind {
        CellKind::Multi(schedule) => StagePlan::new(spec.stages.clone(), schedule.clone())?,
        CellKind::Uni => {
            StagePlan::uni(*spec.stages.last().expect("non-empty stages"), spec.trainer.total_steps)?
        }
    };
    let family = spec.family.with_layout_seed(seed);
    let cfg = TrainerConfig { seed, record_steps: false, ..spec.trainer.clone() };
    let trace = train(&family, &plan, &cfg)?;
    let convergence = convergence_step(&trace, evals, spec.eps)?;
    let curve: Vec<(u64, f64)> = trace
        .snapshots
        .iter()
        .map(|s| (s.step, success_rate(&s.policy, eval_envs, spec.eval.episodes_per_env)))
        .collect();
    let final_success = curve.last().map(|&(_, s)| s).unwrap_or(0.0);
    let mut outcomes = OutcomeCounts::default();
    for e in &trace.episodes {
        match e.outcome {
            Outcome::Goal => outcomes.goal += 1,
            Outcome::NonGoal => outcomes.non_goal += 1,
            Outcome::Timeout => outcomes.timeout += 1,
        }
    }
    Ok(CellResult { convergence, final_success, curve, outcomes })
}

/// The schedule minimizing mean convergence step across seeds.
///
/// Non-converged seeds count as +inf under the strict policy; ties break
/// toward the lexicographically smallest transition vector. Errors with
/// [`SweepError::AllDiverged`] when no schedule has a finite mean.
pub fn critical_period(result: &SweepResult) -> Result<StageSchedule, SweepError> {
    let mut best: Option<(f64, &StageSchedule)> = None;
    for summary in &result.summaries {
        let schedule = match &summary.kind {
            CellKind::Multi(s) => s,
            CellKind::Uni => continue,
        };
        if !summary.mean_l.is_finite() {
            continue;
        }
        best = match best {
            None => Some((summary.mean_l, schedule)),
            Some((l, s)) => {
                if summary.mean_l < l || (summary.mean_l == l && schedule < s) {
                    Some((summary.mean_l, schedule))
                } else {
                    Some((l, s))
                }
            }
        };
    }
    match best {
        Some((_, schedule)) => Ok(schedule.clone()),
        None => Err(SweepError::AllDiverged),
    }
}

/// The stage-2 window `[t1, t2)` of a schedule, when it has one.
pub fn stage2_window(schedule: &StageSchedule) -> Option<(u64, u64)> {
    let t = schedule.transitions();
    if t.len() >= 2 {
        Some((t[0], t[1]))
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonSide {
    pub kind: CellKind,
    pub mean_success: f64,
    pub std_success: f64,
    pub per_seed: Vec<(u64, f64)>,
}

/// Uni- versus multi-stage comparison by final success rate.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub best_multi: Option<ComparisonSide>,
    pub uni: Option<ComparisonSide>,
    /// `best multi mean - uni mean` when both sides exist.
    pub margin: Option<f64>,
}

impl ComparisonReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        match &self.best_multi {
            Some(side) => {
                out.push_str(&format!(
                    "best multi-stage: schedule {} mean success {:.4} (std {:.4})\n",
                    side.kind.label(),
                    side.mean_success,
                    side.std_success
                ));
                for (seed, s) in &side.per_seed {
                    out.push_str(&format!("  seed {seed}: {s:.4}\n"));
                }
            }
            None => out.push_str("best multi-stage: (none)\n"),
        }
        match &self.uni {
            Some(side) => {
                out.push_str(&format!(
                    "uni-stage baseline: mean success {:.4} (std {:.4})\n",
                    side.mean_success, side.std_success
                ));
                for (seed, s) in &side.per_seed {
                    out.push_str(&format!("  seed {seed}: {s:.4}\n"));
                }
            }
            None => out.push_str("uni-stage baseline: (none)\n"),
        }
        if let Some(m) = self.margin {
            out.push_str(&format!("margin (best multi - uni): {m:+.4}\n"));
        }
        out
    }
}

fn side_for(result: &SweepResult, kind: &CellKind) -> ComparisonSide {
    let per_seed: Vec<(u64, f64)> = result
        .cells
        .iter()
        .filter(|c| &c.kind == kind)
        .filter_map(|c| c.result.as_ref().ok().map(|r| (c.seed, r.final_success)))
        .collect();
    let summary = result
        .summaries
        .iter()
        .find(|s| &s.kind == kind)
        .expect("summary exists for every kind");
    ComparisonSide {
        kind: kind.clone(),
        mean_success: summary.mean_success,
        std_success: summary.std_success,
        per_seed,
    }
}

/// Best multi-stage schedule (by mean success, ties toward the smaller
/// schedule) against the uni-stage baseline. Either side may be absent,
/// leaving a degenerate report.
pub fn compare_uni_multi(result: &SweepResult) -> ComparisonReport {
    let mut best: Option<(&ScheduleSummary, &StageSchedule)> = None;
    for summary in &result.summaries {
        let schedule = match &summary.kind {
            CellKind::Multi(s) => s,
            CellKind::Uni => continue,
        };
        if summary.mean_success.is_nan() {
            continue;
        }
        best = match best {
            None => Some((summary, schedule)),
            Some((cur, cur_s)) => {
                if summary.mean_success > cur.mean_success
                    || (summary.mean_success == cur.mean_success && schedule < cur_s)
                {
                    Some((summary, schedule))
                } else {
                    Some((cur, cur_s))
                }
            }
        };
    }
    let best_multi = best.map(|(s, _)| side_for(result, &s.kind));
    let uni = result
        .summaries
        .iter()
        .find(|s| s.kind == CellKind::Uni)
        .map(|s| side_for(result, &s.kind));
    let margin = match (&best_multi, &uni) {
        (Some(m), Some(u)) => Some(m.mean_success - u.mean_success),
        _ => None,
    };
    ComparisonReport { best_multi, uni, margin }
}

fn schedule_columns(result: &SweepResult) -> usize {
    result
        .cells
        .iter()
        .map(|c| match &c.kind {
            CellKind::Multi(s) => s.n_stages(),
            CellKind::Uni => 0,
        })
        .max()
        .unwrap_or(0)
}

fn format_l(c: &Convergence) -> String {
    c.to_string()
}

fn format_mean(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:.3}")
    }
}

fn schedule_fields(kind: &CellKind, n_cols: usize) -> String {
    let mut t_fields = vec![String::new(); n_cols];
    if let CellKind::Multi(s) = kind {
        for (i, t) in s.transitions().iter().enumerate() {
            t_fields[i] = t.to_string();
        }
    }
    t_fields.iter().fold(String::new(), |acc, f| acc + f + ",")
}

fn schedule_header(n_cols: usize) -> String {
    (1..=n_cols).fold(String::new(), |acc, i| acc + &format!("t{i},"))
}

/// One CSV row per (schedule, seed) cell.
pub fn write_cells_csv<W: Write>(result: &SweepResult, mut w: W) -> io::Result<()> {
    let n_cols = schedule_columns(result);
    writeln!(w, "# schema: multistage.cells.v1")?;
    writeln!(
        w,
        "kind,{}seed,converged_step,final_success,goal,non_goal,timeout,error",
        schedule_header(n_cols)
    )?;
    for cell in &result.cells {
        let kind = match &cell.kind {
            CellKind::Multi(_) => "multi",
            CellKind::Uni => "uni",
        };
        let ts = schedule_fields(&cell.kind, n_cols);
        match &cell.result {
            Ok(r) => writeln!(
                w,
                "{kind},{ts}{},{},{:.6},{},{},{},",
                cell.seed,
                format_l(&r.convergence),
                r.final_success,
                r.outcomes.goal,
                r.outcomes.non_goal,
                r.outcomes.timeout
            )?,
            Err(e) => writeln!(w, "{kind},{ts}{},,,,,,{}", cell.seed, e.replace(',', ";"))?,
        }
    }
    Ok(())
}

/// One CSV row per schedule with mean/std aggregates.
pub fn write_summary_csv<W: Write>(result: &SweepResult, mut w: W) -> io::Result<()> {
    let n_cols = schedule_columns(result);
    writeln!(w, "# schema: multistage.summary.v1")?;
    writeln!(
        w,
        "kind,{}nc_policy,mean_l,std_l,mean_success,std_success,converged,n",
        schedule_header(n_cols)
    )?;
    for s in &result.summaries {
        let kind = match &s.kind {
            CellKind::Multi(_) => "multi",
            CellKind::Uni => "uni",
        };
        writeln!(
            w,
            "{kind},{}{},{},{},{:.6},{:.6},{},{}",
            schedule_fields(&s.kind, n_cols),
            result.nc_policy.label(),
            format_mean(s.mean_l),
            format_mean(s.std_l),
            s.mean_success,
            s.std_success,
            s.converged,
            s.n
        )?;
    }
    Ok(())
}

/// Success-rate curves, CSV layout.
pub fn write_curves_csv<W: Write>(result: &SweepResult, mut w: W) -> io::Result<()> {
    writeln!(w, "# schema: multistage.curves.v1")?;
    writeln!(w, "kind,schedule,seed,step,success")?;
    for cell in &result.cells {
        if let Ok(r) = &cell.result {
            let kind = match &cell.kind {
                CellKind::Multi(_) => "multi",
                CellKind::Uni => "uni",
            };
            for (step, success) in &r.curve {
                writeln!(w, "{kind},{},{},{step},{success:.6}", cell.kind.label(), cell.seed)?;
            }
        }
    }
    Ok(())
}

/// Success-rate curves in gnuplot block layout (`index` selects a cell).
pub fn write_curves_dat<W: Write>(result: &SweepResult, mut w: W) -> io::Result<()> {
    writeln!(w, "# multistage success-rate curves; one block per (schedule, seed)")?;
    for cell in &result.cells {
        if let Ok(r) = &cell.result {
            writeln!(w, "# schedule={} seed={}", cell.kind.label(), cell.seed)?;
            for (step, success) in &r.curve {
                writeln!(w, "{step} {success:.6}")?;
            }
            writeln!(w)?;
            writeln!(w)?;
        }
    }
    Ok(())
}
