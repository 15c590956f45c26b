use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};
use stark_echo_harness::{run, ExperimentConfig, HarnessError};

/// Runs one stark-echo experiment described by a JSON config.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ensemble seed; overrides `ensemble.rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Only report warnings and errors.
    #[arg(long)]
    quiet: bool,
}

fn execute(args: &Args) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.ensemble.rng_seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(HarnessError::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let started = std::time::Instant::now();
    let out = pool.install(|| run(&cfg))?;
    for f in &out.files {
        info!("wrote {}", f.display());
    }
    info!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
