//! Experiment orchestration: cell execution, sweep pooling, artifact
//! emission.

use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use hetsense::dynamics;
use hetsense::optim::{
    run_hetero_sgd, run_pooled_gd, run_quadratic_sgd, OptimizerConfig, Parameterization,
    Trajectory,
};
use hetsense::rip;
use hetsense::sensing::{
    generate_gaussian_batch, EnvironmentCoefficients, EnvironmentDistribution, GroundTruthModel,
    MeasurementKind,
};
use hetsense::Error as CoreError;

use crate::config::{ExperimentConfig, ExperimentKind, RunMode};
use crate::csvio::{
    aggregate, aggregate_to_string, summary_to_string, trajectory_to_string, SummaryRow,
};
use crate::manifest::Manifest;
use crate::plot;

/// Exit status contract: 0 success, 1 configuration error, 2 divergence in
/// single-run mode.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// Model builder. Pooled comparisons force `V*` exactly orthogonal to `U*`;
/// everything else draws the two bases independently.
fn build_model(cfg: &ExperimentConfig, seed: u64, force_orthogonal: bool) -> Result<GroundTruthModel> {
    let m = &cfg.model;
    let model = if force_orthogonal {
        GroundTruthModel::random_orthogonal(m.d, m.r1, m.r2, seed)
    } else {
        GroundTruthModel::random(m.d, m.r1, m.r2, seed)
    };
    model.map_err(|e| anyhow!(e))
}

/// Mean-identity environment pair `{(1-M) I, (1+M) I}` for the pooled
/// baseline.
fn mean_identity_envs(r2: usize, het: f64) -> Vec<EnvironmentCoefficients> {
    let eye = nalgebra::DMatrix::identity(r2, r2);
    vec![
        EnvironmentCoefficients::new(&eye * (1.0 - het), 1).expect("symmetric by construction"),
        EnvironmentCoefficients::new(&eye * (1.0 + het), 2).expect("symmetric by construction"),
    ]
}

enum CellResult {
    Finished(Trajectory),
    Diverged(Trajectory),
}

fn run_arm(
    mode: RunMode,
    model: &GroundTruthModel,
    dist: &EnvironmentDistribution,
    pooled_envs: &[EnvironmentCoefficients],
    opt: &OptimizerConfig,
    master_seed: u64,
) -> Result<CellResult> {
    let out = match mode {
        RunMode::Hetero => run_hetero_sgd(model, dist, opt, master_seed),
        RunMode::Quadratic => run_quadratic_sgd(model, dist, opt, master_seed),
        RunMode::Pooled => run_pooled_gd(model, pooled_envs, opt, master_seed),
        RunMode::Exact => {
            let mut cfg = opt.clone();
            cfg.parameterization = Parameterization::Exact;
            run_hetero_sgd(model, dist, &cfg, master_seed)
        }
    };
    match out {
        Ok(t) => Ok(CellResult::Finished(t)),
        Err(CoreError::Divergence { partial: Some(t), .. }) => Ok(CellResult::Diverged(*t)),
        Err(e) => Err(anyhow!(e)),
    }
}

fn summary_row(grid_value: String, seed: u64, cell: &CellResult) -> SummaryRow {
    let (traj, diverged) = match cell {
        CellResult::Finished(t) => (t, false),
        CellResult::Diverged(t) => (t, true),
    };
    let last = traj.records.last();
    SummaryRow {
        grid_value,
        seed,
        final_recovery_error: last.map_or(f64::NAN, |r| r.recovery_error),
        final_q_fro: last.map_or(f64::NAN, |r| r.q_fro),
        final_sigma1_r: last.map_or(f64::NAN, |r| r.sigma1_r),
        diverged,
    }
}

/// Run the configured experiment, writing artifacts under
/// `cfg.output_dir`. Returns the process exit status.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<i32> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let started = Instant::now();
    let mut manifest = Manifest::new(cfg);

    let exit = match kind {
        ExperimentKind::SingleRun => run_single(cfg, &mut manifest)?,
        ExperimentKind::SweepHeterogeneity
        | ExperimentKind::SweepStepsize
        | ExperimentKind::ComparePooled
        | ExperimentKind::CompareParameterization => run_multi(cfg, kind, &mut manifest)?,
        ExperimentKind::VerifyRip => run_verify_rip(cfg, &mut manifest)?,
        ExperimentKind::VerifyController => run_verify_controller(cfg, &mut manifest)?,
    };

    manifest.set_wall_clock(started.elapsed().as_secs_f64());
    manifest.write(&cfg.output_dir.join("manifest.txt"))?;
    Ok(exit)
}

fn run_single(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<i32> {
    let mode = cfg.run_mode()?;
    let seed = cfg.seeds[0];
    let model = build_model(cfg, seed, mode == RunMode::Pooled)?;
    let dist = cfg.environment_distribution()?;
    let envs = mean_identity_envs(cfg.model.r2, cfg.dist.het);
    let mut opt = cfg.optimizer_config()?;
    if mode == RunMode::Quadratic {
        opt.measurement = MeasurementKind::RankOne;
    }
    manifest.note("resolved.steps", opt.resolved_steps().to_string());
    manifest.note("resolved.mode", mode.name().to_string());

    let cell = run_arm(mode, &model, &dist, &envs, &opt, seed)?;
    let path = cfg.output_dir.join("trajectory.csv");
    match cell {
        CellResult::Finished(traj) => {
            std::fs::write(&path, trajectory_to_string(&traj))?;
            manifest.note("status", "ok".to_string());
            let last = traj.records.last().expect("nonempty");
            println!(
                "run finished: {} steps, final recovery error {:.6}, final |Q|_F {:.6}",
                traj.records.len() - 1,
                last.recovery_error,
                last.q_fro
            );
            Ok(EXIT_OK)
        }
        CellResult::Diverged(partial) => {
            std::fs::write(&path, trajectory_to_string(&partial))?;
            manifest.note("status", "diverged".to_string());
            eprintln!("run diverged at step {}; partial trajectory written", partial.records.len());
            Ok(EXIT_DIVERGED)
        }
    }
}

fn run_multi(cfg: &ExperimentConfig, kind: ExperimentKind, manifest: &mut Manifest) -> Result<i32> {
    let opt_base = cfg.optimizer_config()?;
    let traj_dir = cfg.output_dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir)?;

    // Cell list: (grid label, per-cell mode, grid numeric value if any).
    let cells: Vec<(String, RunMode, Option<f64>)> = match kind {
        ExperimentKind::SweepHeterogeneity => cfg
            .grid
            .iter()
            .map(|&g| (g.to_string(), RunMode::Hetero, Some(g)))
            .collect(),
        ExperimentKind::SweepStepsize => cfg
            .grid
            .iter()
            .map(|&g| (g.to_string(), RunMode::Hetero, Some(g)))
            .collect(),
        ExperimentKind::ComparePooled => vec![
            ("hetero".to_string(), RunMode::Hetero, None),
            ("pooled".to_string(), RunMode::Pooled, None),
        ],
        ExperimentKind::CompareParameterization => vec![
            ("overparam".to_string(), RunMode::Hetero, None),
            ("exact".to_string(), RunMode::Exact, None),
        ],
        _ => unreachable!("run_multi handles sweep/compare kinds"),
    };

    struct Cell {
        label: String,
        seed: u64,
        row: SummaryRow,
        csv: String,
        steps: usize,
    }

    let jobs: Vec<(String, RunMode, Option<f64>, u64)> = cells
        .iter()
        .flat_map(|(label, mode, g)| {
            cfg.seeds.iter().map(move |&s| (label.clone(), *mode, *g, s))
        })
        .collect();

    let results: Vec<Result<Cell>> = jobs
        .par_iter()
        .map(|(label, mode, grid_val, seed)| {
            let force_orth = kind == ExperimentKind::ComparePooled;
            let model = build_model(cfg, *seed, force_orth)?;
            let mut opt = opt_base.clone();
            let mut dist = cfg.environment_distribution()?;
            match kind {
                ExperimentKind::SweepHeterogeneity => {
                    dist = EnvironmentDistribution::uniform_diagonal(
                        cfg.model.r2,
                        grid_val.expect("numeric grid"),
                    )
                    .map_err(|e| anyhow!(e))?;
                }
                ExperimentKind::SweepStepsize => {
                    opt.eta = grid_val.expect("numeric grid");
                }
                _ => {}
            }
            let envs = mean_identity_envs(cfg.model.r2, cfg.dist.het);
            let steps = opt.resolved_steps();
            let cell = run_arm(*mode, &model, &dist, &envs, &opt, *seed)?;
            let row = summary_row(label.clone(), *seed, &cell);
            let traj = match &cell {
                CellResult::Finished(t) | CellResult::Diverged(t) => t,
            };
            Ok(Cell {
                label: label.clone(),
                seed: *seed,
                row,
                csv: trajectory_to_string(traj),
                steps,
            })
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    for (ix, res) in results.into_iter().enumerate() {
        let cell = res?;
        let file = traj_dir.join(format!("cell_{}_{}.csv", cell.label, cell.seed));
        std::fs::write(&file, &cell.csv)?;
        manifest.note(
            &format!("cell.{ix}"),
            format!(
                "label={} seed={} steps={} status={}",
                cell.label,
                cell.seed,
                cell.steps,
                if cell.row.diverged { "diverged" } else { "ok" }
            ),
        );
        rows.push(cell.row);
    }

    // Deterministic ordering: jobs were generated grid-major, seed-minor.
    std::fs::write(cfg.output_dir.join("summary.csv"), summary_to_string(&rows))?;
    let agg = aggregate(&rows);
    std::fs::write(cfg.output_dir.join("aggregate.csv"), aggregate_to_string(&agg))?;
    if cfg.plot {
        let x_label = match kind {
            ExperimentKind::SweepHeterogeneity => "heterogeneity M",
            ExperimentKind::SweepStepsize => "step size",
            _ => "arm",
        };
        plot::emit_sweep_plots(&agg, x_label, &cfg.output_dir)?;
    }
    for a in &agg {
        println!(
            "{:>12}: recovery {:.4} +- {:.4}, |Q|_F {:.4} +- {:.4}{}",
            a.grid_value,
            a.mean_recovery_error,
            a.stderr_recovery_error,
            a.mean_q_fro,
            a.stderr_q_fro,
            if a.diverged_cells > 0 { format!(" ({} diverged)", a.diverged_cells) } else { String::new() }
        );
    }
    Ok(EXIT_OK)
}

fn run_verify_rip(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<i32> {
    let seed = cfg.seeds[0];
    let model = build_model(cfg, seed, false)?;
    let dist = cfg.environment_distribution()?;
    let env = dist.sample(hetsense::seed::subseed(seed, hetsense::seed::Domain::Env, &[0]));
    let batch = generate_gaussian_batch(&model, &env, cfg.optimizer.m, seed)
        .map_err(|e| anyhow!(e))?;

    let r = cfg.verify.rank;
    let est = rip::estimate_rip_delta(&batch, 2 * r, cfg.verify.trials.min(64), seed)
        .map_err(|e| anyhow!(e))?;
    let delta = est.delta_hat + cfg.verify.delta_margin;
    let report = rip::check_rip_lemma_bounds(&batch, r, delta, cfg.verify.trials, seed)
        .map_err(|e| anyhow!(e))?;

    let mut table = String::new();
    table.push_str(&format!(
        "delta_hat(rank {}) = {:.6}   margin = {}   bound delta = {:.6}\n",
        2 * r,
        est.delta_hat,
        cfg.verify.delta_margin,
        delta
    ));
    table.push_str(&format!("{:<22} {:>8} {:>12} {:>8}\n", "bound", "trials", "max ratio", "status"));
    for l in &report.lemmas {
        table.push_str(&format!(
            "{:<22} {:>8} {:>12.6} {:>8}\n",
            l.id,
            report.trials,
            l.max_ratio,
            if l.violations == 0 { "pass" } else { "FAIL" }
        ));
    }
    print!("{table}");
    std::fs::write(cfg.output_dir.join("verify_rip.txt"), &table)?;
    manifest.note("verify.delta_hat", format!("{:e}", est.delta_hat));
    manifest.note("verify.all_pass", report.all_pass().to_string());
    Ok(EXIT_OK)
}

fn run_verify_controller(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<i32> {
    let seed = cfg.seeds[0];
    let dist = cfg.environment_distribution()?;
    let eta = cfg.optimizer.eta;
    let steps = cfg.verify.steps;

    let sm = dynamics::check_supermartingale(&dist, eta, 2_000_000, seed).map_err(|e| anyhow!(e))?;
    let cr = dynamics::cr_sequence(cfg.optimizer.alpha, eta, steps);
    let line = dynamics::calibration_line(
        cfg.optimizer.alpha,
        dist.sup_abs_diag(),
        cfg.verify.delta,
        cfg.model.r1,
        cfg.model.r2,
        &cr,
    );
    let stats = dynamics::simulate_controller(
        &dist,
        eta,
        &line,
        cfg.verify.p,
        steps,
        seed,
        cfg.verify.replicates,
    )
    .map_err(|e| anyhow!(e))?;

    let mut table = String::new();
    table.push_str(&format!(
        "supermartingale:  E[(1+eta Sigma+2eta)^(2/3)] = {:.8} +- {:.2e}  ({})\n",
        sm.estimate,
        sm.stderr,
        if sm.pass { "pass" } else { "FAIL" }
    ));
    table.push_str(&format!(
        "controller:       {} replicates x {} steps, absorbed {} ({:.4} of 1; bound steps*p = {:.2}){}\n",
        stats.replicates,
        stats.steps,
        stats.absorbed_replicates,
        stats.absorbed_fraction,
        stats.bound,
        match &stats.eta_window_warning {
            Some(w) => format!("\nwarning: {w}"),
            None => String::new(),
        }
    ));
    print!("{table}");
    std::fs::write(cfg.output_dir.join("verify_controller.txt"), &table)?;
    manifest.note("controller.absorbed_fraction", stats.absorbed_fraction.to_string());
    manifest.note("supermartingale.pass", sm.pass.to_string());
    Ok(EXIT_OK)
}

/// Convenience wrapper for tests: run and read back one artifact.
pub fn run_and_read(cfg: &ExperimentConfig, artifact: &str) -> Result<(i32, String)> {
    let code = run_experiment(cfg)?;
    let text = std::fs::read_to_string(cfg.output_dir.join(artifact))
        .with_context(|| format!("reading {artifact}"))?;
    Ok((code, text))
}

/// Validate config-level dimension constraints that only matter for multi
/// experiments (kept separate so `main` can map them to exit code 1).
pub fn preflight(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    if kind == ExperimentKind::SweepStepsize && cfg.grid.iter().any(|&g| g <= 0.0) {
        bail!("step-size grid must be positive");
    }
    if kind == ExperimentKind::SweepHeterogeneity && cfg.grid.iter().any(|&g| g < 0.0) {
        bail!("heterogeneity grid must be nonnegative");
    }
    Ok(())
}

/// Check that the interface contract named in the docs holds for trajectories
/// produced here (used by integration tests).
pub fn records_len(traj: &Trajectory) -> usize {
    traj.records.len()
}
