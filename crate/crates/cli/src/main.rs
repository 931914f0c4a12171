mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use slogan_core::metrics::{Matching, NmiNorm};
use slogan_core::stein::verify::Fault;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "slogan", version, about = "Train and evaluate GANs with a learnable Gaussian-mixture latent prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config; writes history, checkpoints, eval.json and scatter.svg.
    Train {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the dataset named in a run config.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Where to write the report; defaults to eval.json beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_gen: Option<usize>,
        /// Print the class-to-component map.
        #[arg(long)]
        assignment: bool,
        #[arg(long, value_enum)]
        matching: Option<MatchingArg>,
        #[arg(long, value_enum)]
        nmi: Option<NmiArg>,
    },
    /// Sample from one component, every component, or the full mixture.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Component index, `all`, or `mix`.
        #[arg(long, default_value = "all")]
        component: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Emit `G(μ_c)` for every component instead of samples.
        #[arg(long)]
        means: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
        /// Also draw a scatter plot (two-dimensional data only).
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Steer components toward attributes given by probe points.
    Manipulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// `COMPONENT=PATH` with one probe CSV (raw data coordinates) per targeted component.
        #[arg(long = "probe", required = true)]
        probes: Vec<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        mixup_rounds: Option<usize>,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the gradient estimators against closed forms.
    VerifyGradients {
        /// Optional JSON overriding the default protocol.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reduced sample sizes for a fast smoke run.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "none", hide = true)]
        fault: FaultArg,
    },
    /// Print the JSON Schema of run configs.
    Schema,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchingArg {
    Greedy,
    Optimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum NmiArg {
    Geometric,
    Arithmetic,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    FlipMu,
    FlipSigma,
    FlipRho,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SLOGAN_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::User(format!("SLOGAN_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::User("SLOGAN_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::User(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Train { config, out } => commands::train(&config, out),
        Command::Eval { checkpoint, config, out, n_gen, assignment, matching, nmi } => {
            let opts = commands::EvalArgs {
                out,
                n_gen,
                print_assignment: assignment,
                matching: matching.map(|m| match m {
                    MatchingArg::Greedy => Matching::Greedy,
                    MatchingArg::Optimal => Matching::Optimal,
                }),
                nmi: nmi.map(|n| match n {
                    NmiArg::Geometric => NmiNorm::Geometric,
                    NmiArg::Arithmetic => NmiNorm::Arithmetic,
                }),
            };
            commands::eval(&checkpoint, &config, &opts)
        }
        Command::Generate { checkpoint, component, n, means, seed, out, svg } => {
            commands::generate(&checkpoint, &component, n, means, seed, &out, svg.as_deref())
        }
        Command::Manipulate { checkpoint, config, probes, steps, mixup_rounds, out } => {
            commands::manipulate(&checkpoint, &config, &probes, steps, mixup_rounds, out)
        }
        Command::VerifyGradients { config, quick, json, fault } => {
            let fault = match fault {
                FaultArg::None => Fault::None,
                FaultArg::FlipMu => Fault::FlipMuSign,
                FaultArg::FlipSigma => Fault::FlipSigmaSign,
                FaultArg::FlipRho => Fault::FlipRhoSign,
            };
            commands::verify(config.as_deref(), quick, json.as_deref(), fault)
        }
        Command::Schema => {
            print!("{}", config::schema_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the "user error" code with bad configs
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
