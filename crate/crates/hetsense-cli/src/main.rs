//! Command-line entry point.
//!
//! Exit status: 0 success, 1 configuration/usage error, 2 divergence in
//! single-run mode.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hetsense_cli::config::{ExperimentConfig, ExperimentKind};
use hetsense_cli::experiments::{preflight, run_experiment, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "hetsense",
    version,
    about = "Multi-environment low-rank matrix sensing experiments",
    long_about = "Runs online SGD over heterogeneous measurement batches, the pooled \
                  full-batch baseline, and the rank-one quadratic-network variant; sweeps \
                  heterogeneity or step size; and verifies restricted-isometry bounds and \
                  the controller process. Results land as CSVs plus a manifest under --out."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory (hetero | pooled | quadratic | exact), written as trajectory.csv.
    Run(CommonArgs),
    /// A multi-cell experiment: sweep-heterogeneity, sweep-stepsize,
    /// compare-pooled, or compare-parameterization (set `experiment` in the
    /// config file or via --experiment).
    Sweep(SweepArgs),
    /// Restricted-isometry bound table on a fresh Gaussian batch.
    Verify(CommonArgs),
    /// Supermartingale check and controller absorption statistics.
    Controller(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file: flat `key = value` lines with dotted keys, or a `.json` mirror.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Ambient dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Invariant rank.
    #[arg(long)]
    r1: Option<usize>,
    /// Spurious rank.
    #[arg(long)]
    r2: Option<usize>,
    /// Measurements per batch.
    #[arg(long)]
    m: Option<usize>,
    /// Step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Initialization scale.
    #[arg(long)]
    alpha: Option<f64>,
    /// Step count (0 = ceil(10 ln(1/alpha)/eta)).
    #[arg(long)]
    steps: Option<usize>,
    /// Heterogeneity half-width M of the uniform diagonal law.
    #[arg(long)]
    het: Option<f64>,
    /// Master seed (single-run and verify use the first seed).
    #[arg(long)]
    seed: Option<u64>,
    /// hetero | pooled | quadratic | exact.
    #[arg(long)]
    mode: Option<String>,
    /// gaussian | rank-one.
    #[arg(long)]
    measurement: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit SVG plots next to the summary CSV.
    #[arg(long, default_value_t = false)]
    plot: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Which multi-cell experiment to run (overrides the config file).
    #[arg(long)]
    experiment: Option<String>,
    /// Comma-separated grid values (M values or step sizes).
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
}

fn apply_common(cfg: &mut ExperimentConfig, a: &CommonArgs) -> anyhow::Result<()> {
    if let Some(d) = a.d {
        cfg.set("model.d", &d.to_string())?;
    }
    if let Some(r1) = a.r1 {
        cfg.set("model.r1", &r1.to_string())?;
    }
    if let Some(r2) = a.r2 {
        cfg.set("model.r2", &r2.to_string())?;
    }
    if let Some(m) = a.m {
        cfg.set("optimizer.m", &m.to_string())?;
    }
    if let Some(eta) = a.eta {
        cfg.set("optimizer.eta", &eta.to_string())?;
    }
    if let Some(alpha) = a.alpha {
        cfg.set("optimizer.alpha", &alpha.to_string())?;
    }
    if let Some(steps) = a.steps {
        cfg.set("optimizer.steps", &steps.to_string())?;
    }
    if let Some(het) = a.het {
        cfg.set("dist.het", &het.to_string())?;
    }
    if let Some(seed) = a.seed {
        cfg.set("seeds", &seed.to_string())?;
    }
    if let Some(mode) = &a.mode {
        cfg.set("mode", mode)?;
    }
    if let Some(meas) = &a.measurement {
        cfg.set("optimizer.measurement", meas)?;
    }
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    if a.plot {
        cfg.plot = true;
    }
    Ok(())
}

fn load_config(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    apply_common(&mut cfg, common)?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let cfg = match &cli.command {
        Command::Run(a) => {
            let mut cfg = load_config(a)?;
            cfg.experiment = ExperimentKind::SingleRun.name().to_string();
            // The quadratic mode implies rank-one measurements with the
            // default truncation/shrinkage when none were configured.
            if cfg.mode == "quadratic" {
                cfg.optimizer.measurement = "rank-one".to_string();
                if cfg.optimizer.truncation == "off" {
                    cfg.optimizer.truncation = "log-inv-delta".to_string();
                }
                if cfg.optimizer.shrinkage == "off" {
                    cfg.optimizer.shrinkage = "oracle".to_string();
                }
            }
            cfg
        }
        Command::Sweep(a) => {
            let mut cfg = load_config(&a.common)?;
            if let Some(exp) = &a.experiment {
                cfg.set("experiment", exp)?;
            }
            if let Some(grid) = &a.grid {
                cfg.set("grid", grid)?;
            }
            if let Some(seeds) = &a.seeds {
                cfg.set("seeds", seeds)?;
            }
            if !cfg.kind()?.is_sweep()
                && !matches!(
                    cfg.kind()?,
                    ExperimentKind::ComparePooled | ExperimentKind::CompareParameterization
                )
            {
                anyhow::bail!(
                    "`sweep` needs experiment = sweep-heterogeneity | sweep-stepsize | \
                     compare-pooled | compare-parameterization (got {})",
                    cfg.experiment
                );
            }
            cfg
        }
        Command::Verify(a) => {
            let mut cfg = load_config(a)?;
            cfg.experiment = ExperimentKind::VerifyRip.name().to_string();
            cfg
        }
        Command::Controller(a) => {
            let mut cfg = load_config(a)?;
            cfg.experiment = ExperimentKind::VerifyController.name().to_string();
            cfg
        }
    };
    preflight(&cfg)?;
    run_experiment(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are success; anything else is a usage
            // error and maps to the configuration exit status.
            if e.use_stderr() {
                let _ = e.print();
                return ExitCode::from(EXIT_CONFIG as u8);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
