//! Command-line driver: corpus generation, training, evaluation, extraction
//! and plot-data emission.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_diagnose, cmd_eval, cmd_extract, cmd_gen_corpus, cmd_train, ConstantsDump, TrainArgs, TrainSummary, CHECKPOINT_FILE,
    CONSTANTS_FILE, DIAGNOSTICS_FILE, HISTORY_FILE, LATENTS_FILE, MANIFEST_FILE, TEST_METRICS_FILE,
};
pub use manifest::{sha256_file, RunManifest};

/// Environment variable naming the base directory for default outputs.
pub const OUTPUT_DIR_ENV: &str = "ADENS_OUTPUT_DIR";

/// Failure of a command together with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<adens::Error> for CliError {
    fn from(e: adens::Error) -> Self {
        use adens::Error as E;
        let code = match &e {
            E::Divergence { .. } => 3,
            E::Io(_) => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "adens", version, about = "Teacher-ensembling domain adaptation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic source/target corpora from a spec file.
    GenCorpus {
        /// Corpus specification (JSON).
        spec: PathBuf,
        /// Output directory (default: $ADENS_OUTPUT_DIR/corpus).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled JSONL file.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Where to write the metrics JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Decision threshold for the multi-label head.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Keep the documents a binary checkpoint labels positive.
    Extract {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Output directory for the subcorpus and report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit plot-ready CSVs from a training run directory.
    Diagnose {
        run: PathBuf,
        /// Output directory (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenCorpus { spec, out } => cmd_gen_corpus(&spec, out.as_deref()).map(|_| ()),
        Command::Train(args) => cmd_train(&args).map(|_| ()),
        Command::Eval {
            checkpoint,
            data,
            out,
            threshold,
        } => cmd_eval(&checkpoint, &data, out.as_deref(), threshold).map(|_| ()),
        Command::Extract { checkpoint, data, out } => cmd_extract(&checkpoint, &data, out.as_deref()).map(|_| ()),
        Command::Diagnose { run, out } => cmd_diagnose(&run, out.as_deref()),
    }
}

/// Parses `args` and runs the command, mapping failures to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

/// `explicit`, else `$ADENS_OUTPUT_DIR/<name>`, else `./<name>`.
pub fn output_dir(explicit: Option<&std::path::Path>, name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(name),
    }
}
