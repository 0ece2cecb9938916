use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dwmlab_cli::commands::{
    cmd_benchmark, cmd_evaluate, cmd_identify, cmd_simulate, cmd_sweep, cmd_train,
    resolve_output_dir,
};
use dwmlab_cli::config::{load_config, RunConfig};
use dwmlab_cli::{CliError, CliResult};

/// Dynamic-watermarking laboratory: simulate watermarked control loops,
/// train the adaptive covariance policy, and reproduce the benchmark
/// studies. Exit codes: 0 success, 2 configuration error, 3 runtime failure.
#[derive(Parser)]
#[command(name = "dwmlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run-configuration JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's replication count.
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory (also via DWMLAB_OUTPUT_DIR).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads for replication fan-out (0 = auto).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-segment ARX(1,1) parameters and control mixtures from data.
    Identify {
        /// CSV with the measurement series in column 0 (column 1 may hold u).
        #[arg(long)]
        y: PathBuf,
        /// Optional CSV with the control series in column 0.
        #[arg(long)]
        u: Option<PathBuf>,
        /// Comma-separated segment boundaries, e.g. 0,10000,20000,41000.
        #[arg(long, value_delimiter = ',')]
        segments: Vec<usize>,
        /// Output fragment path.
        #[arg(long, default_value = "out/identified_model.json")]
        out: PathBuf,
    },
    /// Run seeded replications and write trace CSVs plus a summary.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the adaptive watermark policy.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from a saved checkpoint (replay buffer restarts empty).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint on the configured scenario.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare watermark policies: none / constants / trained.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep fixed variances and tabulate the detection/performance frontier.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_with_overrides(common: &CommonArgs) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::Config(format!("cannot read {:?}: {e}", common.config)))?;
    let mut cfg = load_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = common.replications {
        cfg.replications = reps;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run() -> CliResult<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Identify { y, u, segments, out } => {
            let report = cmd_identify(&y, u.as_deref(), &segments, &out)?;
            println!("identified {} segments -> {}", report.segments.len(), out.display());
        }
        Command::Simulate { common } => {
            let cfg = load_with_overrides(&common)?;
            let out = resolve_output_dir(common.output_dir.as_deref(), Some(&cfg));
            let summary = cmd_simulate(&cfg, &out)?;
            println!(
                "simulate: {} replications, arl1={:?} (censored {}), energy_mean={:.6e} -> {}",
                summary.replications.len(),
                summary.arl1.mean,
                summary.arl1.censored,
                summary.energy_mean,
                out.display()
            );
        }
        Command::Train { common, resume } => {
            let cfg = load_with_overrides(&common)?;
            let out = resolve_output_dir(common.output_dir.as_deref(), Some(&cfg));
            let report = cmd_train(&cfg, &out, resume.as_deref())?;
            println!(
                "train: {} episodes, first-20 mean return {:.4}, last-20 mean return {:.4} -> {}",
                report.episodes,
                report.first20_mean_return,
                report.last20_mean_return,
                report.final_checkpoint
            );
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load_with_overrides(&common)?;
            let out = resolve_output_dir(common.output_dir.as_deref(), Some(&cfg));
            let summary = cmd_evaluate(&cfg, &out, checkpoint.as_deref())?;
            println!(
                "evaluate: arl1={:?} (censored {}), energy_mean={:.6e} -> {}",
                summary.arl1.mean,
                summary.arl1.censored,
                summary.energy_mean,
                out.display()
            );
        }
        Command::Benchmark { common, checkpoint } => {
            let cfg = load_with_overrides(&common)?;
            let out = resolve_output_dir(common.output_dir.as_deref(), Some(&cfg));
            let report = cmd_benchmark(&cfg, &out, checkpoint.as_deref())?;
            for arm in &report.arms {
                println!(
                    "benchmark[{}]: energy={:.4e} degradation={:.4e} arl1={:?} censored={}",
                    arm.arm, arm.energy_mean, arm.degradation_mean, arm.arl1.mean, arm.arl1.censored
                );
            }
        }
        Command::Sweep { common } => {
            let cfg = load_with_overrides(&common)?;
            let out = resolve_output_dir(common.output_dir.as_deref(), Some(&cfg));
            let report = cmd_sweep(&cfg, &out)?;
            println!("sweep: {} variances -> {}", report.rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dwmlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
