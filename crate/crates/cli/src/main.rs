//! `dicgan`: data preparation, training, sampling, strain analysis and
//! evaluation of physics-guided GANs for DIC displacement fields.
//!
//! Exit codes: 0 success, 2 bad usage, 3 config or schema error, 4 data
//! error, 5 numerical failure.

mod artifacts;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Overrides;

/// Error carrying its own exit code.
#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub msg: String,
}

impl Fail {
    pub fn usage(msg: impl Into<String>) -> Self {
        Fail { code: 2, msg: msg.into() }
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Fail { code: 3, msg: msg.into() }
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Fail { code: 4, msg: msg.into() }
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Fail { code: 5, msg: msg.into() }
    }
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Fail {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Fail>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<dicgan::Error>() {
            return match e {
                dicgan::Error::Config(_) => 3,
                dicgan::Error::Numerical(_) => 5,
                dicgan::Error::Graph(_) => 1,
                _ => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

#[derive(Parser)]
#[command(name = "dicgan", version, about = "Physics-guided GANs for DIC displacement fields")]
struct Cli {
    /// Only report warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid scattered DIC exports (CSV) into a dataset.
    Ingest(IngestArgs),
    /// Generate a synthetic mode-I crack-tip corpus.
    Synth(SynthArgs),
    /// Train one GAN and write a run directory.
    Train(RunFlags),
    /// Draw fields from a trained generator.
    Sample(SampleArgs),
    /// Strain components and von Mises equivalent strain of a dataset.
    Strain(StrainArgs),
    /// Compare real and generated fields.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Collect a run directory's artifacts into metrics_report.json.
    Report(ReportArgs),
    /// Train classical and physics-guided models and tabulate their metrics.
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Multi-scale sliced Wasserstein distance.
    Swd(EvalArgs),
    /// Geometry score.
    Gs(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
pub struct RunFlags {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; all module seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training dataset (FTC1).
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    physics_guided: Option<OnOff>,
    /// Use ∂u_x/∂y alone as the shear term.
    #[arg(long)]
    paper_literal_strain: bool,
    /// Record wall-clock time in the artifacts (makes them non-reproducible).
    #[arg(long)]
    record_timing: bool,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            epochs: self.epochs,
            physics_guided: self.physics_guided.map(|v| matches!(v, OnOff::On)),
            literal_strain: self.paper_literal_strain,
            out: self.out.clone(),
            real: self.real.clone(),
        }
    }
}

#[derive(Args)]
pub struct CompareArgs {
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Scattered exports with header x_mm,y_mm,ux_mm,uy_mm.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Grid side in pixels.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Side of the gridded square in mm.
    #[arg(long, default_value_t = 70.0)]
    extent_mm: f64,
    /// Grid description (JSON) overriding --size and --extent-mm.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value = "")]
    specimen: String,
    #[arg(long)]
    sigma_max_mpa: Option<f64>,
    #[arg(long)]
    load_ratio: Option<f64>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Corpus description (JSON); without it --count and --size apply.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct StrainArgs {
    /// Dataset to analyse (FTC1).
    #[arg(long)]
    real: PathBuf,
    /// Output FTC1 file with exx, eyy, exy and evm.
    #[arg(long)]
    out: PathBuf,
    /// Also write one CSV per field here.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    /// Run configuration whose `gan.vm` settings apply.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    paper_literal_strain: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Real dataset; defaults to the config's training data.
    #[arg(long)]
    real: Option<PathBuf>,
    /// Generated dataset.
    #[arg(long, conflicts_with = "checkpoint")]
    fake: Option<PathBuf>,
    /// Generator checkpoint to sample fresh fields from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for the results; without it JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory.
    #[arg(long, alias = "out")]
    run: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Warn
        } else {
            log::LevelFilter::Info
        })
        .parse_default_env()
        .init();
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Strain(a) => commands::strain(a),
        Command::Eval(EvalCommand::Swd(a)) => commands::eval_swd(a),
        Command::Eval(EvalCommand::Gs(a)) => commands::eval_gs(a),
        Command::Report(a) => commands::report(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
