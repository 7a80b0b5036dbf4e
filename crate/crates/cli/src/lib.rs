//! Subcommands, configuration and reports behind the `facerep` binary.

pub mod commands;
pub mod config;
pub mod evaluate;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use facerep_core::heads::{LayerSelection, TrainMode};
use facerep_core::pretraining::Toggles;
use facerep_core::{Error, Result};

use crate::commands::Context;
use crate::config::{Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "facerep", version, about = "Face representation pre-training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Args)]
pub struct Flags {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fixed seeds, single-worker loading and timing-free reports.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Pre-training objectives, e.g. `ITC+MIM1+ALIGN`.
    #[arg(long, global = true)]
    pub toggles: Option<String>,
    /// Downstream input resolution (224 or 448 for the base model).
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Few-shot training fraction.
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
    /// Backbone layers feeding the heads, e.g. `4,6,8,12`.
    #[arg(long, global = true)]
    pub layers: Option<String>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a raw manifest by face score and sample it.
    Curate,
    /// Pre-train the dual encoder.
    Pretrain,
    /// Train a head on the frozen backbone.
    Probe,
    /// Train a head together with the backbone.
    Finetune,
    /// Score prediction records.
    Eval,
    /// Subsample a training split.
    Fewshot,
    /// Saliency maps for text queries.
    Gradcam,
    /// Comparison table over run reports.
    Report,
    /// Write a synthetic corpus for trying the pipeline out.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Raw image-text manifest for curation and pre-training.
    Raw,
    /// Downstream task records (labels, landmarks, attributes).
    Tasks,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "raw")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Share of high-score face images in a raw corpus.
    #[arg(long, default_value_t = 0.8)]
    pub face_fraction: f64,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_RUNTIME,
    }
}

impl Flags {
    pub fn overrides(&self) -> Result<Overrides> {
        Ok(Overrides {
            seed: self.seed,
            deterministic: self.deterministic,
            toggles: self.toggles.as_deref().map(str::parse::<Toggles>).transpose()?,
            resolution: self.resolution,
            fraction: self.fraction,
            layers: self
                .layers
                .as_deref()
                .map(|s| s.parse::<LayerSelection>().map_err(|e| Error::config(e.to_string())))
                .transpose()?,
        })
    }
}

/// Loads the config, applies overrides and validates it.
pub fn load_context(path: &Path, flags: &Flags) -> Result<Context> {
    if !path.exists() {
        return Err(Error::config(format!("config file {} not found", path.display())));
    }
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&flags.overrides()?)?;
    cfg.validate()?;
    Ok(Context { cfg, base: path.parent().map(Path::to_path_buf).unwrap_or_default() })
}

fn synth(args: &SynthArgs, seed: u64) -> Result<()> {
    match args.kind {
        SynthKind::Raw => {
            let recs = facerep_core::synthetic::write_raw_corpus(&args.out, args.count, args.size, args.face_fraction, seed)?;
            println!("wrote {} records to {}", recs.len(), args.out.join("raw.jsonl").display());
        }
        SynthKind::Tasks => {
            let recs = facerep_core::synthetic::write_task_corpus(&args.out, args.count, args.size, seed)?;
            println!("wrote {} records to {}", recs.len(), args.out.join("tasks.jsonl").display());
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Command::Synth(args) = &cli.command {
        return synth(args, cli.flags.seed.unwrap_or(0));
    }
    let path = cli.flags.config.as_deref().ok_or_else(|| Error::config("--config is required"))?;
    let ctx = load_context(path, &cli.flags)?;
    if ctx.cfg.deterministic {
        // single-threaded kernels keep floating-point reductions in a fixed order
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    match &cli.command {
        Command::Curate => commands::curate(&ctx).map(drop),
        Command::Pretrain => commands::pretrain(&ctx).map(drop),
        Command::Probe => commands::head(&ctx, TrainMode::Probe).map(drop),
        Command::Finetune => commands::head(&ctx, TrainMode::Finetune).map(drop),
        Command::Eval => commands::eval(&ctx).map(drop),
        Command::Fewshot => commands::fewshot(&ctx).map(drop),
        Command::Gradcam => commands::gradcam_cmd(&ctx).map(drop),
        Command::Report => {
            print!("{}", commands::report(&ctx)?);
            Ok(())
        }
        Command::Synth(_) => unreachable!(),
    }
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::config("x")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Numerical("nan".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::MissingArtifact("a".into())), EXIT_RUNTIME);
        assert_eq!(exit_code(&Error::input("x")), EXIT_RUNTIME);
    }

    #[test]
    fn flags_parse_into_overrides() {
        let cli = Cli::try_parse_from(["facerep", "pretrain", "--toggles", "ITC+ALIGN", "--layers", "1,1,2,2", "--seed", "4"]).unwrap();
        let o = cli.flags.overrides().unwrap();
        assert_eq!(o.toggles.unwrap().to_string(), "ITC+ALIGN");
        assert_eq!(o.layers.unwrap().layers(), &[1, 1, 2, 2]);
        assert_eq!(o.seed, Some(4));
        let bad = Cli::try_parse_from(["facerep", "pretrain", "--toggles", "MIM1"]).unwrap();
        assert!(matches!(bad.flags.overrides(), Err(Error::Config(_))));
    }

    #[test]
    fn usage_errors_exit_with_config_status() {
        assert_eq!(run(["facerep", "nonsense"]), EXIT_CONFIG);
        assert_eq!(run(["facerep", "eval"]), EXIT_CONFIG);
        assert_eq!(run(["facerep", "eval", "--config", "/nonexistent/run.toml"]), EXIT_CONFIG);
    }
}
