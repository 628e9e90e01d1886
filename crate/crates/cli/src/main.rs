use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfq_core::config::{parse_config_for, ExperimentKind, Preset, RunConfig};
use sfq_core::run::dispatch;

/// Pulse-level simulator for SFQ-driven transmon control.
#[derive(Debug, Parser)]
#[command(name = "sfqsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// P(t) under a resonant pulse train.
    Rabi(RunArgs),
    /// Rabi versus trigger detuning and duration.
    Chevron(RunArgs),
    /// X/2, delay, X/2 with a detuned trigger.
    Ramsey(RunArgs),
    /// X/2, R(t, phase), X/2.
    Rabi2d(RunArgs),
    /// Dilute-train staircase sampled between pulses.
    Staircase(RunArgs),
    /// Standard and interleaved randomized benchmarking.
    Rb(RunArgs),
    /// Relaxation after poisoning pulses of varying length.
    QpPoison(RunArgs),
    /// Relaxation versus delay after a fixed poisoning pulse.
    QpRecovery(RunArgs),
    /// Fits the quasiparticle relaxation law to a decay curve.
    FitDecay(RunArgs),
    /// Frequency shift versus QP decay rate during recovery.
    Dispersion(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Bundled parameter set layered under the configuration.
    #[arg(long, value_name = "NAME")]
    preset: Option<Preset>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Rabi(a) => (ExperimentKind::Rabi, a),
            Command::Chevron(a) => (ExperimentKind::Chevron, a),
            Command::Ramsey(a) => (ExperimentKind::Ramsey, a),
            Command::Rabi2d(a) => (ExperimentKind::Rabi2d, a),
            Command::Staircase(a) => (ExperimentKind::Staircase, a),
            Command::Rb(a) => (ExperimentKind::Rb, a),
            Command::QpPoison(a) => (ExperimentKind::QpPoison, a),
            Command::QpRecovery(a) => (ExperimentKind::QpRecovery, a),
            Command::FitDecay(a) => (ExperimentKind::FitDecay, a),
            Command::Dispersion(a) => (ExperimentKind::Dispersion, a),
        }
    }
}

fn load(kind: ExperimentKind, args: RunArgs) -> Result<RunConfig, String> {
    let document = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config_for(&document, args.preset, kind).map_err(|e| match &args.config {
        Some(path) => format!("{}: {e}", path.display()),
        None => e.to_string(),
    })?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed).map_err(|e| e.to_string())?;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let (Some(config), Some(fit)) = (&args.config, cfg.fit.as_mut()) {
        if let Some(input) = fit.input.as_mut() {
            *input = relative_to(config, input);
        }
    }
    Ok(cfg)
}

/// Resolves `path` against the directory holding the configuration file.
fn relative_to(config: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    config.parent().map_or_else(|| path.to_path_buf(), |dir| dir.join(path))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (kind, args) = Cli::parse().command.split();
    let cfg = match load(kind, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    log::info!("running {} into {}", cfg.experiment, cfg.output_dir.display());
    match dispatch(&cfg) {
        Ok(out) => {
            print!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {} failed: {e}", cfg.experiment);
            eprintln!("partial outputs in {} carry the `.partial` suffix", cfg.output_dir.display());
            ExitCode::FAILURE
        }
    }
}
