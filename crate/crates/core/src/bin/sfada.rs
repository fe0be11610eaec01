use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sfada_core::domains::{load_csv, CsvSchema};
use sfada_core::harness::{evaluate, prepare, probe_round, run_prepared, ExperimentConfig};
use sfada_core::model::{load_checkpoint, save_checkpoint};
use sfada_core::sampling::Strategy;
use sfada_core::Error;

/// Source-free active domain adaptation on desk-scale synthetic shifts.
#[derive(Debug, Parser)]
#[command(name = "sfada", version)]
struct Cli {
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the query strategy.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Evaluate on the whole target instead of a held-out split.
    #[arg(long, global = true)]
    eval_on_pool: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the source model and save it as source.ckpt.
    Pretrain { config: PathBuf },
    /// Run every query-and-adapt round and write the CSV artifacts.
    Run { config: PathBuf },
    /// Print the first round's queries without labeling anything.
    Sample {
        config: PathBuf,
        #[arg(long, required = true)]
        round_probe: bool,
    },
    /// Evaluate a checkpoint on a CSV of features followed by a label column.
    Eval {
        checkpoint: PathBuf,
        csv: PathBuf,
        /// The CSV has no header row.
        #[arg(long)]
        no_header: bool,
    },
}

fn load_config(cli: &Cli, path: &Path) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(strategy) = cli.strategy {
        config.strategy = strategy;
    }
    if cli.eval_on_pool {
        config.eval_on_pool = true;
    }
    config.validate()?;
    Ok(config)
}

fn fmt_acc(a: f64) -> String {
    format!("{:.4}", a)
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Pretrain { config } => {
            let config = load_config(cli, config)?;
            let prepared = prepare(&config)?;
            std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::Io {
                path: cli.out_dir.clone(),
                source: e,
            })?;
            let path = cli.out_dir.join("source.ckpt");
            save_checkpoint(&prepared.source_model, &path)?;
            if let Some(acc) = prepared.source_val_acc {
                println!("source validation accuracy {}", fmt_acc(acc));
            }
            println!("wrote {}", path.display());
        }
        Command::Run { config } => {
            let config = load_config(cli, config)?;
            let prepared = prepare(&config)?;
            let outcome = run_prepared(&config, &prepared, Some(&cli.out_dir))?;
            for m in &outcome.metrics {
                println!(
                    "round {:>3}  labeled {:>5}  mean_acc {}",
                    m.round,
                    m.labeled_count,
                    fmt_acc(m.mean_acc)
                );
            }
            println!("wrote {}", cli.out_dir.display());
        }
        Command::Sample { config, .. } => {
            let config = load_config(cli, config)?;
            let prepared = prepare(&config)?;
            println!("rank,id,u_cm,u_ct,u,y_a");
            for (rank, s) in probe_round(&config, &prepared)?.iter().enumerate() {
                println!("{rank},{},{},{},{},{}", s.id, s.u_cm, s.u_ct, s.u, s.y_a);
            }
        }
        Command::Eval {
            checkpoint,
            csv,
            no_header,
        } => {
            let model = load_checkpoint(checkpoint)?;
            let schema = CsvSchema {
                has_header: !no_header,
                classes: model.dims().classes,
            };
            let set = load_csv(csv, &schema)?;
            let eval = evaluate(&model, &set)?;
            println!("mean_acc {}", fmt_acc(eval.mean_acc));
            for (c, acc) in eval.per_class.iter().enumerate() {
                match acc {
                    Some(a) => println!("class {c} {}", fmt_acc(*a)),
                    None => println!("class {c} -"),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
