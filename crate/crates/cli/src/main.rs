use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distill_core::backend::ToyModel;
use distill_core::ingest::{ingest, Format, IngestConfig};
use distill_core::pipeline::{self, RunConfig};
use distill_core::synthetic::{World, WorldConfig};
use distill_core::{Error, Result};

/// Chain-of-thought distillation pipeline.
#[derive(Parser)]
#[command(name = "distill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set student.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        pipeline::apply_overrides(&RunConfig::load(&self.config)?, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a benchmark file into QAInstance JSON lines.
    Ingest {
        /// strategyqa, creak, csqa, qasc or generic.
        #[arg(long)]
        format: String,
        /// Official training file (re-split into train and dev).
        #[arg(long)]
        train: PathBuf,
        /// Official development file (becomes the test split).
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        dev_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate the synthetic task. With --config, uses the world of a
    /// synthetic teacher and writes to the configured dataset path.
    Synth {
        #[arg(short, long, conflicts_with = "seed")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, required_unless_present = "config")]
        out: Option<PathBuf>,
    },
    /// Generate teacher rationales.
    Rationalize(ConfigArgs),
    /// Build factual and counterfactual training instances.
    Forge(ConfigArgs),
    /// Train one student per seed.
    Train(ConfigArgs),
    /// Compute accuracy, LAS, sensitivity and refinement gain per seed.
    Evaluate(ConfigArgs),
    /// Sensitivity across perturbation fractions.
    PerturbAnalysis(ConfigArgs),
    /// Rationalize, forge, train and evaluate.
    Run(ConfigArgs),
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(config: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (world, path) = match config {
        Some(c) => {
            let cfg = RunConfig::load(&c)?;
            match cfg.teacher.provider.toy {
                Some(ToyModel::Synthetic { world }) => (world, out.unwrap_or(cfg.dataset.path)),
                _ => return Err(Error::Config("config teacher is not a synthetic toy model".into())),
            }
        }
        None => (
            WorldConfig {
                seed: seed.unwrap_or(0),
                ..WorldConfig::default()
            },
            out.expect("required by clap"),
        ),
    };
    let data = World::generate(&world)?.dataset();
    pipeline::write_instances(&path, &data)?;
    eprintln!("wrote {} instances to {}", data.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            format,
            train,
            dev,
            dev_fraction,
            seed,
            out,
        } => {
            let cfg = IngestConfig {
                format: Format::parse(&format)?,
                train_path: train,
                dev_path: dev,
                dev_fraction,
                seed,
            };
            let data = ingest(&cfg)?;
            pipeline::write_instances(&out, &data)?;
            eprintln!("wrote {} instances to {}", data.len(), out.display());
            Ok(())
        }
        Command::Synth { config, seed, out } => synth(config, seed, out),
        Command::Rationalize(a) => print_json(&pipeline::cmd_rationalize(&a.load()?)?),
        Command::Forge(a) => {
            let forged = pipeline::cmd_forge(&a.load()?)?;
            eprintln!("forged {} training instances", forged.len());
            Ok(())
        }
        Command::Train(a) => {
            let m = pipeline::cmd_train(&a.load()?)?;
            print_json(&m)?;
            if m.mean_final_loss.is_none() {
                return Err(Error::Config("every seed failed to train".into()));
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let cfg = a.load()?;
            let s = pipeline::cmd_evaluate(&cfg)?;
            print!("{}", distill_core::eval::render_table(&s.reports));
            for (seed, e) in &s.failed_seeds {
                eprintln!("seed {seed}: {e}");
            }
            Ok(())
        }
        Command::PerturbAnalysis(a) => print_json(&pipeline::cmd_perturb_analysis(&a.load()?)?),
        Command::Run(a) => {
            let s = pipeline::run_all(&a.load()?)?;
            print!("{}", distill_core::eval::render_table(&s.reports));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
