//! `capslu`: feature extraction, training, evaluation and learning curves
//! for capsule-network intent recognition.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capslu_core::datasets::SynthSpec;
use capslu_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "capslu",
    version,
    about = "Capsule networks for spoken intent recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for independent jobs. Defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output; repeat for trace level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    config: PathBuf,
    /// Write results here instead of the configured `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and cache features for every utterance of the corpus.
    Features(RunArgs),
    /// Train one model and write a checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint on the utterances of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Per-utterance predictions; defaults to the checkpoint's directory.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Learning curve, or one curve per sweep value.
    Curve(RunArgs),
    /// Train on the full and the reduced Fluent training sets and report
    /// test accuracy for both.
    ReplicateFluent(RunArgs),
    /// Parse and check a configuration without running anything.
    ValidateConfig {
        #[command(flatten)]
        run: RunArgs,
        /// Do not require the corpus location to exist.
        #[arg(long)]
        skip_corpus_check: bool,
    },
    /// Write a synthetic corpus as feature files and a manifest.
    Synth {
        /// Named preset.
        #[arg(long, default_value = "mimic-grabo", conflicts_with = "spec")]
        preset: String,
        /// Spec file (TOML) instead of a preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) => 3,
        Error::Data(_) | Error::Format(_) => 4,
        Error::Usage(_) | Error::Contract(_) | Error::Shape(_) | Error::Io { .. } => 2,
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("plain data serializes")
    );
}

fn synth_spec(preset: &str, spec: Option<&Path>) -> Result<SynthSpec> {
    match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::Usage(format!("{}: {}", path.display(), e.message())))
        }
        None => SynthSpec::preset(preset)
            .ok_or_else(|| Error::Usage(format!("unknown synthetic preset {preset:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Features(a) => print_json(&commands::cmd_features(&a.load()?)?),
        Command::Train(a) => println!("{}", commands::cmd_train(&a.load()?)?.display()),
        Command::Eval {
            checkpoint,
            manifest,
            predictions,
        } => print_json(&commands::cmd_eval(
            &checkpoint,
            &manifest,
            predictions.as_deref(),
        )?),
        Command::Curve(a) => println!("{}", commands::cmd_curve(&a.load()?)?.display()),
        Command::ReplicateFluent(a) => {
            print!("{}", commands::cmd_replicate_fluent(&a.load()?)?.table())
        }
        Command::ValidateConfig {
            run,
            skip_corpus_check,
        } => {
            let cfg = run.load()?;
            if !skip_corpus_check {
                commands::check_corpus_location(&cfg)?;
            }
            print_json(&cfg);
        }
        Command::Synth {
            preset,
            spec,
            seed,
            out,
        } => {
            let spec = synth_spec(&preset, spec.as_deref())?;
            println!("{}", commands::cmd_synth(&spec, seed, &out)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
