//! The four harness commands. Each writes its artifacts plus the resolved
//! config into the run directory and reports a process outcome that main
//! maps onto exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use multistage_core::gridnav::{
    compile_stack, make_level_with, to_tabular, GridNavEnv, Level, Stage, StackBuildOptions,
};
use multistage_core::guidance::{
    check_optimality_nesting, check_support_nesting, OptimalityViolation, SupportViolation,
};
use multistage_core::mdp::{optimal_policy_set, value_iteration, TabularMdp};
use multistage_core::scalar::real;
use multistage_core::sweep::{
    compare_uni_multi, critical_period, run_sweep, stage2_window, write_cells_csv,
    write_curves_csv, write_curves_dat, write_summary_csv, SweepError, SweepSpec,
};
use multistage_core::trainer::{mix_seed, train, write_policy_text, write_trace_csv, StagePlan};

use crate::config::ExperimentConfig;

/// What a finished command wants the process to report.
pub enum RunStatus {
    Ok,
    ValidationFailed,
    AllDiverged,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_file(dir, "resolved.toml", cfg.to_toml().as_bytes())?;
    Ok(())
}

/// Checks the configured nestings on freshly sampled layouts per level.
/// Exit is clean only when every enabled check holds on every layout.
pub fn cmd_validate(cfg: &ExperimentConfig, out: &Path) -> Result<RunStatus> {
    ensure_dir(out)?;
    write_resolved(cfg, out)?;
    let check_support = cfg.validate.checks.iter().any(|c| c == "support");
    let check_optimality = cfg.validate.checks.iter().any(|c| c == "optimality");
    let stages = cfg.stages();
    let tie_tol = cfg.measurement.tie_tol;

    let mut support_rows: Vec<(u8, u64, SupportViolation)> = Vec::new();
    let mut optimality_rows: Vec<(u8, u64, OptimalityViolation)> = Vec::new();
    let mut summary = String::new();
    for &level_tag in &cfg.validate.levels {
        let level = Level::try_from(level_tag)?;
        let n_layouts = if level == Level::One { 1 } else { cfg.validate.layouts };
        let mut layouts_checked = 0usize;
        for i in 0..n_layouts as u64 {
            let seed = mix_seed(cfg.validate.layout_seed, i);
            let layout = make_level_with(level, cfg.env.grid_size, seed, &cfg.sample_params())?;
            if check_support {
                let (stack, _) = compile_stack(
                    &layout,
                    &cfg.env_options(),
                    &stages,
                    &StackBuildOptions { components_only: cfg.guidance.components_only },
                    &cfg.compile_options(),
                )?;
                for v in check_support_nesting(&stack).violations {
                    support_rows.push((level_tag, seed, v));
                }
            }
            if check_optimality {
                // Optimality nesting inspects the actual stage models, so
                // the full reward tables are always used here.
                let (stack, _) = compile_stack(
                    &layout,
                    &cfg.env_options(),
                    &stages,
                    &StackBuildOptions { components_only: false },
                    &cfg.compile_options(),
                )?;
                let report = check_optimality_nesting(&stack, tie_tol, cfg.validate.direction)?;
                for v in report.violations {
                    optimality_rows.push((level_tag, seed, v));
                }
            }
            layouts_checked += 1;
        }
        summary.push_str(&format!("level {level_tag}: {layouts_checked} layouts checked\n"));
    }

    let mut csv = Vec::new();
    writeln!(csv, "# schema: multistage.validate.v1")?;
    writeln!(csv, "check,level,layout_seed,stage,state,action")?;
    for (level, seed, v) in &support_rows {
        writeln!(csv, "support,{level},{seed},{},{},", v.stage, v.state)?;
    }
    for (level, seed, v) in &optimality_rows {
        writeln!(csv, "optimality,{level},{seed},{},{},{}", v.stage, v.state, v.action)?;
    }
    write_file(out, "violations.csv", &csv)?;

    let ok = support_rows.is_empty() && optimality_rows.is_empty();
    if check_support {
        summary.push_str(&format!("support nesting: {} violations\n", support_rows.len()));
    }
    if check_optimality {
        summary.push_str(&format!("optimality nesting: {} violations\n", optimality_rows.len()));
    }
    summary.push_str(if ok { "result: ok\n" } else { "result: violated\n" });
    write_file(out, "validate_summary.txt", summary.as_bytes())?;
    print!("{summary}");
    Ok(if ok { RunStatus::Ok } else { RunStatus::ValidationFailed })
}

/// Solves one model exactly: optimal values, tied-optimal action sets, and
/// (for compiled environments) the layout rendering.
pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<RunStatus> {
    ensure_dir(out)?;
    write_resolved(cfg, out)?;
    let tol = cfg.solve.tol;
    let tie_tol = cfg.measurement.tie_tol;

    let mdp: TabularMdp<f64>;
    if cfg.solve.mdp_file.is_empty() {
        let stage = Stage::try_from(cfg.solve.stage)?;
        let layout = make_level_with(
            cfg.level(),
            cfg.env.grid_size,
            cfg.solve.layout_seed,
            &cfg.sample_params(),
        )?;
        write_file(out, "layout.txt", layout.render().as_bytes())?;
        let env = GridNavEnv::new(layout, stage, &cfg.env_options());
        let compiled = to_tabular(&env, &cfg.compile_options())?;
        let mut states = Vec::new();
        writeln!(states, "# schema: multistage.states.v1")?;
        writeln!(states, "state,cell_row,cell_col,steps_left,flags")?;
        writeln!(states, "0,,,,")?;
        for idx in 1..compiled.n_states() {
            let nav = compiled.nav_state(idx).expect("non-terminal");
            writeln!(states, "{idx},{},{},{},{}", nav.cell.row, nav.cell.col, nav.steps_left, nav.flags())?;
        }
        write_file(out, "states.csv", &states)?;
        mdp = compiled.mdp.clone();
    } else {
        let text = fs::read_to_string(&cfg.solve.mdp_file)
            .with_context(|| format!("reading {}", cfg.solve.mdp_file))?;
        mdp = TabularMdp::from_text(text.as_bytes())?;
    }

    if cfg.solve.emit_mdp_text {
        let mut buf = Vec::new();
        mdp.write_text(&mut buf)?;
        write_file(out, "mdp.txt", &buf)?;
    }

    let v_star = value_iteration(&mdp, real(tol))?;
    let set = optimal_policy_set(&mdp, real(tie_tol))?;
    let mut values = Vec::new();
    writeln!(values, "# schema: multistage.values.v1")?;
    writeln!(values, "state,value")?;
    for s in 0..mdp.n_states() {
        writeln!(values, "{s},{:.12}", v_star.get(s))?;
    }
    write_file(out, "v_star.csv", &values)?;

    let mut sets = Vec::new();
    writeln!(sets, "# schema: multistage.policy_set.v1")?;
    writeln!(sets, "state,actions")?;
    for s in 0..mdp.n_states() {
        let actions: Vec<String> = set.actions(s).iter().map(|a| a.to_string()).collect();
        writeln!(sets, "{s},{}", actions.join(";"))?;
    }
    write_file(out, "policy_set.csv", &sets)?;
    println!("solved {} states to tolerance {tol}", mdp.n_states());
    Ok(RunStatus::Ok)
}

/// Trains one run under the first configured schedule.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<RunStatus> {
    ensure_dir(out)?;
    write_resolved(cfg, out)?;
    let schedules = cfg.schedules();
    let Some(schedule) = schedules.first() else {
        bail!("train needs at least one schedule");
    };
    let plan = StagePlan::new(cfg.stages(), schedule.clone())?;
    let family = cfg.family()?;
    let trace = train(&family, &plan, &cfg.trainer_config())?;

    let mut csv = Vec::new();
    write_trace_csv(&trace, &mut csv)?;
    write_file(out, "trace.csv", &csv)?;
    let mut policy = Vec::new();
    write_policy_text(&trace.snapshots.last().expect("final snapshot").policy, &mut policy)?;
    write_file(out, "policy.txt", &policy)?;

    let goals = trace
        .episodes
        .iter()
        .filter(|e| matches!(e.outcome, multistage_core::gridnav::Outcome::Goal))
        .count();
    println!(
        "trained {} steps over {} episodes ({} reached the goal), schedule {}",
        cfg.trainer.total_steps,
        trace.episodes.len(),
        goals,
        schedule.label()
    );
    Ok(RunStatus::Ok)
}

/// Runs the schedule-by-seed sweep and emits the full report set.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<RunStatus> {
    ensure_dir(out)?;
    write_resolved(cfg, out)?;
    let spec = SweepSpec {
        schedules: cfg.schedules(),
        stages: cfg.stages(),
        seeds: cfg.sweep.seeds.clone(),
        eps: cfg.measurement.eps,
        vi_tol: cfg.measurement.vi_tol,
        trainer: cfg.trainer_config(),
        family: cfg.family()?,
        eval: cfg.eval_spec(),
        anchor: cfg.measurement.anchor,
        uni_baseline: cfg.sweep.uni_stage_baseline,
        nc_policy: cfg.measurement.not_converged,
    };
    let result = run_sweep(&spec)?;

    let mut cells = Vec::new();
    write_cells_csv(&result, &mut cells)?;
    write_file(out, "cells.csv", &cells)?;
    let mut summary = Vec::new();
    write_summary_csv(&result, &mut summary)?;
    write_file(out, "summary.csv", &summary)?;
    if cfg.output.curve_formats.iter().any(|f| f == "csv") {
        let mut curves = Vec::new();
        write_curves_csv(&result, &mut curves)?;
        write_file(out, "curves.csv", &curves)?;
    }
    if cfg.output.curve_formats.iter().any(|f| f == "dat") {
        let mut curves = Vec::new();
        write_curves_dat(&result, &mut curves)?;
        write_file(out, "curves.dat", &curves)?;
    }

    if cfg.sweep.uni_stage_baseline {
        let report = compare_uni_multi(&result);
        write_file(out, "comparison.txt", report.render_text().as_bytes())?;
        print!("{}", report.render_text());
    }

    let mut status = RunStatus::Ok;
    if spec.schedules.is_empty() {
        write_file(out, "critical_period.txt", b"no multi-stage schedules configured\n")?;
    } else {
        match critical_period(&result) {
            Ok(best) => {
                let mut text = format!(
                    "critical period t* = ({}) at eps = {} ({} policy)\n",
                    best.label(),
                    result.eps,
                    result.nc_policy.label()
                );
                if let Some((lo, hi)) = stage2_window(&best) {
                    text.push_str(&format!("stage-2 window: [{lo}, {hi})\n"));
                }
                write_file(out, "critical_period.txt", text.as_bytes())?;
                print!("{text}");
            }
            Err(SweepError::AllDiverged) => {
                write_file(
                    out,
                    "critical_period.txt",
                    b"every schedule failed to converge at the configured eps\n",
                )?;
                println!("every schedule failed to converge");
                status = RunStatus::AllDiverged;
            }
            Err(e) => return Err(e.into()),
        }
    }
    println!("sweep artifacts written to {}", out.display());
    Ok(status)
}
