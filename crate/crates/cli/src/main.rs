//! Command-line front end: simulate, demodulate, track, scan and benchmark.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;
use crate::run::CliError;

#[derive(Parser)]
#[command(name = "sweepdemod", version, about = "Spectrum demodulation for swept spin-resonance magnetometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to absent keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the configured estimator kind.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Phase,
    Lstsq,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a photon-count trace (trace.csv, trace.bin).
    Simulate(Common),
    /// Estimate the resonance in consecutive segments of a recorded trace.
    Demod {
        #[command(flatten)]
        common: Common,
        /// Trace file, CSV or the binary framing (.bin).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Follow a time-dependent field with or without window tracking.
    Track(Common),
    /// Raster-scan a synthetic field map.
    Scan(Common),
    /// Monte-Carlo frequency noise against window size and integration time.
    BenchSensitivity(Common),
    /// Carrier and field-gradient estimates from an oscillating probe.
    Gradient(Common),
    /// Closed-form sensitivities, rate limits and slew rate.
    Theory(Common),
}

fn load(common: &Common) -> Result<Config, CliError> {
    let mut cfg: Config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    match common.estimator {
        Some(EstimatorArg::Phase) => cfg.estimator.kind = sweepdemod::estimators::EstimatorKind::Phase,
        Some(EstimatorArg::Lstsq) => cfg.estimator.kind = sweepdemod::estimators::EstimatorKind::Lstsq,
        None => {}
    }
    cfg.bench.seed = cfg.seed;
    cfg.bench.estimator = cfg.estimator;
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (common, input) = match &command {
        Command::Demod { common, input } => (common.clone(), Some(input.clone())),
        Command::Simulate(c)
        | Command::Track(c)
        | Command::Scan(c)
        | Command::BenchSensitivity(c)
        | Command::Gradient(c)
        | Command::Theory(c) => (c.clone(), None),
    };
    let cfg = load(&common)?;
    let out = common.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    run::write_resolved(&cfg, out)?;
    match command {
        Command::Simulate(_) => run::simulate(&cfg, out),
        Command::Demod { .. } => run::demod(&cfg, out, input.as_deref().unwrap()),
        Command::Track(_) => run::track(&cfg, out),
        Command::Scan(_) => run::scan(&cfg, out),
        Command::BenchSensitivity(_) => run::bench(&cfg, out),
        Command::Gradient(_) => run::gradient(&cfg, out),
        Command::Theory(_) => run::theory(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
