use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddstn::experiment::{cmd_compare, cmd_eval, cmd_generate, cmd_train, table_csv, ExperimentConfig};
use ddstn::Result;

#[derive(Parser)]
#[command(name = "ddstn", version, about = "Doubly supervised transfer network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed; overrides `seeds` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Generate(Common),
    /// Train the first configured algorithm on the full dataset.
    Train(Common),
    /// Score a labelled CSV with a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Cross-validate every configured algorithm over every seed.
    Compare(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            cmd_generate(&load(&common)?)?;
        }
        Command::Train(common) => {
            let cfg = load(&common)?;
            let model = cmd_train(&cfg)?;
            println!(
                "trained {} for {} epochs, final loss {:.6}; wrote {}",
                model.algorithm,
                model.history.len(),
                model.history.last().copied().unwrap_or(f64::NAN),
                cfg.out.join("model.json").display()
            );
        }
        Command::Eval { common, model, data } => {
            let cfg = load(&common)?;
            let report = cmd_eval(&cfg, &model, &data)?;
            let m = &report.folds[0].metrics;
            println!(
                "acc {:.4}  sen {:.4}  spe {:.4}  yi {:.4}  auc {:.4}",
                m.acc, m.sen, m.spe, m.yi, report.pooled_roc.auc
            );
        }
        Command::Compare(common) => {
            let cfg = load(&common)?;
            let outcome = cmd_compare(&cfg)?;
            print!("{}", table_csv(&outcome.rows));
            println!("wrote {}", cfg.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
