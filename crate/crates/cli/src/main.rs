use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msam_core::harness::{parse_config, run_experiment, ExperimentConfig, ExperimentKind, ReportFormat};
use msam_core::stability::{verify_document, StabilityDocument};
use msam_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "msam", version, about = "SGD, SAM and micro-batch SAM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one optimizer for each seed.
    Train(RunArgs),
    /// Sweep the mSAM shard count m.
    SweepM(RunArgs),
    /// Sweep the step percentage at which training switches methods.
    SweepSwitch(RunArgs),
    /// Moments and stability verdicts on a synthetic Hessian ensemble.
    Stability(RunArgs),
    /// Terminal sharpness of SGD, SAM and mSAM trained side by side.
    Sharpness(RunArgs),
    /// Recompute the verdicts in a stability.json file from its matrices.
    VerifyStability {
        /// Path to a stability.json written by the stability command.
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; every key except `kind` has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds to run, overriding the config (comma separated or repeated).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    seed: Vec<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Require every shard to have exactly B/m examples.
    #[arg(long)]
    strict_shards: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Json(_) | Error::Divisibility { .. } | Error::EnumerationBudget { .. } => {
            EXIT_CONFIG
        }
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_FAILURE,
    }
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match &args.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::new(kind),
    };
    config.kind = kind;
    if !args.seed.is_empty() {
        config.seeds = args.seed.clone();
    }
    if let Some(out) = &args.out {
        config.output = out.clone();
    }
    if args.strict_shards {
        config.strict_shards = true;
    }
    config.validate()?;
    Ok(config)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<(), Error> {
    let config = load(kind, args)?;
    let format = match args.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    let output = run_experiment(&config, &config.seeds, &config.output, format)?;
    for line in &output.summary {
        println!("{line}");
    }
    for file in &output.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn verify(path: &Path) -> Result<bool, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: StabilityDocument = serde_json::from_str(&text)?;
    let problems = verify_document(&doc)?;
    for p in &problems {
        println!("mismatch: {p}");
    }
    if problems.is_empty() {
        println!("{} verdicts consistent with the emitted matrices", doc.reports.len());
    }
    Ok(problems.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run(ExperimentKind::Train, a),
        Command::SweepM(a) => run(ExperimentKind::SweepM, a),
        Command::SweepSwitch(a) => run(ExperimentKind::SweepSwitch, a),
        Command::Stability(a) => run(ExperimentKind::Stability, a),
        Command::Sharpness(a) => run(ExperimentKind::Sharpness, a),
        Command::VerifyStability { path } => match verify(path) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_FAILURE),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
