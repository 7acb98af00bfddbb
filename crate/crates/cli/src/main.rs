use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hybrid_spc::cli::{cmd_datagen, cmd_fit, cmd_run, exit_code, RunArgs};
use hybrid_spc::harness::RunMode;

/// Uncertainty-aware subspace predictive control of a wind + solar +
/// battery plant.
#[derive(Parser)]
#[command(name = "hybrid-spc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Open,
    Closed,
    Ablation,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Open => RunMode::Open,
            Mode::Closed => RunMode::Closed,
            Mode::Ablation => RunMode::Ablation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Record training windows from the feedback-optimization controller.
    Datagen {
        /// JSON experiment file; defaults apply when omitted.
        #[arg(long, env = "HYBRID_SPC_CONFIG")]
        config: Option<PathBuf>,
        /// Data set CSV to write; a `.json` sidecar is written next to it.
        #[arg(long, env = "HYBRID_SPC_OUT")]
        out: PathBuf,
        #[arg(long, env = "HYBRID_SPC_SEED")]
        seed: Option<u64>,
    },
    /// Fit the multi-step predictor to a recorded data set.
    Fit {
        #[arg(long, env = "HYBRID_SPC_DATASET")]
        dataset: PathBuf,
        /// Predictor CSV to write; a `.json` sidecar is written next to it.
        #[arg(long, env = "HYBRID_SPC_OUT")]
        out: PathBuf,
        #[arg(long, env = "HYBRID_SPC_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Run an open-loop, closed-loop or ablation experiment.
    Run {
        #[arg(long, env = "HYBRID_SPC_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "closed", env = "HYBRID_SPC_MODE")]
        mode: Mode,
        /// Output directory.
        #[arg(long, env = "HYBRID_SPC_OUT")]
        out: PathBuf,
        #[arg(long, env = "HYBRID_SPC_SEED")]
        seed: Option<u64>,
        /// Hour of day at which control starts.
        #[arg(long, env = "HYBRID_SPC_START_HOUR")]
        start_hour: Option<f64>,
        /// Closed-loop supervisory steps (20 s each).
        #[arg(long, env = "HYBRID_SPC_STEPS")]
        steps: Option<usize>,
        /// Pre-fitted predictor CSV; trained from the config when omitted.
        #[arg(long, env = "HYBRID_SPC_PREDICTOR")]
        predictor: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let outcome = match cli.command {
        Command::Datagen { config, out, seed } => cmd_datagen(config.as_deref(), &out, seed, &mut stdout),
        Command::Fit { dataset, out, config } => cmd_fit(&dataset, &out, config.as_deref(), &mut stdout),
        Command::Run {
            config,
            mode,
            out,
            seed,
            start_hour,
            steps,
            predictor,
        } => cmd_run(
            &RunArgs {
                config,
                mode: mode.into(),
                out,
                seed,
                start_hour,
                steps,
                predictor,
            },
            &mut stdout,
        ),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
