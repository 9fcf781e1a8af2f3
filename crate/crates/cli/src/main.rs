//! `snq`: spatial-decay quantities and their uncertainty from the command
//! line.
//!
//! Exit status: 0 on success, 1 when inputs parse but fail validation,
//! 2 when an input cannot be read or parsed. Errors go to standard error
//! as `snq: error[<kind>]: <message>`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use snq_core::io::{DataFormat, IoError};

#[derive(Parser, Debug)]
#[command(
    name = "snq",
    version,
    about = "Spatial decay of speech in open-plan offices: D2S, LpAS4m, rc and their uncertainty"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Run configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Comfort threshold, dB(A).
    #[arg(long, global = true, value_name = "DBA")]
    pub threshold: Option<f64>,
    /// Coverage factor of the reported intervals.
    #[arg(long = "coverage-k", global = true, value_name = "K")]
    pub coverage_k: Option<f64>,
    /// Monte-Carlo seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte-Carlo runs per convergence batch.
    #[arg(long, global = true, value_name = "N")]
    pub runs: Option<usize>,
    /// Measurement file format; detected from the content when omitted.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
    /// Read Monte-Carlo levels at the displaced device positions.
    #[arg(long = "couple-positioning", global = true, value_enum, value_name = "on|off")]
    pub couple_positioning: Option<Switch>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => DataFormat::Csv,
            FormatArg::Json => DataFormat::Json,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Switch {
    On,
    Off,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Analytic,
    Mc,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the decay line of every path.
    Compute {
        input: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form uncertainty budgets.
    Uncertainty {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo uncertainty by emulating complete measurements.
    Mc {
        input: PathBuf,
        /// Grid field (JSON) for a single-path input; the nominal levels are
        /// used as a locally uniform field otherwise.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare and pool the paths of one acoustic area.
    Area {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "analytic")]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic office path and its grid field.
    Synth(commands::SynthArgs),
    /// Full analysis with plot data: report.json, decay.csv, intervals.csv,
    /// histograms.csv.
    Report {
        input: PathBuf,
        /// Add Monte-Carlo results for every path.
        #[arg(long)]
        mc: bool,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Validation(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Parse(_) | CliError::Io(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Parse(p) => CliError::Parse(p.to_string()),
            IoError::Validation(v) => CliError::Validation(v.to_string()),
            IoError::Invalid(e) => CliError::Validation(e.to_string()),
            e @ IoError::File { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<snq_core::Error> for CliError {
    fn from(e: snq_core::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SNQ_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compute { input, out } => commands::compute(&cli.global, &input, out.as_deref()),
        Command::Uncertainty { input, out } => commands::uncertainty(&cli.global, &input, out.as_deref()),
        Command::Mc { input, field, out } => commands::mc(&cli.global, &input, field.as_deref(), out.as_deref()),
        Command::Area { input, method, out } => commands::area(&cli.global, &input, method, out.as_deref()),
        Command::Synth(args) => commands::synth(&cli.global, &args),
        Command::Report { input, mc, out_dir } => commands::report(&cli.global, &input, mc, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("snq: error[{}]: {}", e.kind(), e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
