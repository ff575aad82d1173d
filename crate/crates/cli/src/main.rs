//! `qbye`: command-line harness for query-by-example keyword spotting.
//!
//! Exit codes: 0 success, 1 detect found no events, 2 config or usage error,
//! 3 data error, 4 non-finite training loss, 5 model/profile fingerprint
//! mismatch.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use exit::{Failure, OrExit};

#[derive(Parser)]
#[command(name = "qbye", version, about = "Query-by-example keyword spotting")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set detector.threshold=0.25`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and write the best checkpoint plus a training log.
    Train(TrainArgs),
    /// Build an enrollment profile from exactly three clips.
    Enroll(EnrollArgs),
    /// Stream a WAV through the detector and print events as TSV.
    Detect(DetectArgs),
    /// ROC and FRR at the FA/hour target for one checkpoint.
    Eval(EvalArgs),
    /// FRR table for several checkpoints on the same evaluation set.
    Ablate(AblateArgs),
    /// Trainable parameter count of the configured encoder.
    Paramcount(ParamcountArgs),
    /// Generate the seeded synthetic corpus.
    Synth(SynthArgs),
    /// Dump the feature matrix of a WAV.
    Features(FeaturesArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for best.ckpt, train.log and config.toml.
    #[arg(long)]
    out: PathBuf,
    /// Train an ablation variant of the configured model (softmax, no-mhe,
    /// tanh, mha, one-head, full).
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args)]
pub struct EnrollArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    keyword: String,
    #[arg(long)]
    out: PathBuf,
    /// The three enrollment WAVs.
    #[arg(num_args = 3, required = true)]
    wavs: Vec<PathBuf>,
}

#[derive(Args)]
pub struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    /// Cosine-distance threshold; overrides `detector.threshold`.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for roc.tsv (and roc.svg).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    /// `name=checkpoint`; names matching a variant slug get reference values.
    #[arg(long = "variant", value_name = "NAME=CKPT")]
    variants: Vec<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for ablation.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ParamcountArgs {
    /// `small` or `large`; defaults to the configured encoder.
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    per_class: usize,
    #[arg(long, default_value_t = 5)]
    speakers: usize,
    /// Test-split negative streams.
    #[arg(long, default_value_t = 30)]
    negatives: usize,
    #[arg(long, default_value_t = 2)]
    val_negatives: usize,
    #[arg(long, default_value_t = 60.0)]
    stream_seconds: f64,
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    wav: PathBuf,
    /// Binary feature dump destination; prints frames as TSV when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides).or_exit(exit::CONFIG)?;
    eprintln!("config-hash: {}", cfg.hash());
    eprint!("{}", cfg.to_toml());
    match cli.command {
        Command::Train(a) => commands::train(&cfg, &a),
        Command::Enroll(a) => commands::enroll(&cfg, &a),
        Command::Detect(a) => commands::detect(&cfg, &a),
        Command::Eval(a) => commands::eval(&cfg, &a),
        Command::Ablate(a) => commands::ablate(&cfg, &a),
        Command::Paramcount(a) => commands::paramcount(&cfg, &a),
        Command::Synth(a) => commands::synth(&cfg, &a),
        Command::Features(a) => commands::features(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
