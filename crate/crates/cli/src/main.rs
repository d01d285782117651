use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use endorse_cli::pipeline;
use endorse_cli::{PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "endorse", version, about = "Endorsement-guided multi-document summarization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Clusters in JSON Lines
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0: one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Endorsement profiles, masks and corpus statistics
    Endorse,
    /// Pseudo-documents from endorsement artifacts
    Select,
    /// Train the abstractor on pseudo-documents and references
    Train,
    /// Write one summary per cluster
    Summarize {
        /// Recompute every stage instead of reading select artifacts
        #[arg(long)]
        end_to_end: bool,
        /// Ignore any checkpoint and use the extractive fallback
        #[arg(long)]
        extractive: bool,
    },
    /// ROUGE against the references
    Eval {
        /// Summaries to score instead of the summarize artifact
        #[arg(long)]
        summaries: Option<PathBuf>,
        /// Truncate candidates to this many tokens
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long)]
        min_r1: Option<f64>,
        #[arg(long)]
        min_r2: Option<f64>,
        #[arg(long)]
        min_rsu4: Option<f64>,
    },
    /// Print endorsement statistics
    Stats,
    /// Print the effective configuration
    Config,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    let c = cli.common;
    if let Some(v) = c.input {
        cfg.input = v;
    }
    if let Some(v) = c.output_dir {
        cfg.output_dir = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
        cfg.train.seed = v;
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = c.checkpoint {
        cfg.checkpoint = Some(v);
    }
    match cli.command {
        Command::Endorse => {
            let stats = pipeline::cmd_endorse(&cfg)?;
            print!("{}", pipeline::stats_table(&stats));
        }
        Command::Select => {
            let selected = pipeline::cmd_select(&cfg)?;
            println!("selected pseudo-documents for {} clusters", selected.len());
        }
        Command::Train => {
            let s = pipeline::cmd_train(&cfg)?;
            let last = s.report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained on {} examples, vocabulary {}, {} parameters, final loss {last:.4}",
                s.examples, s.vocab_size, s.parameters
            );
        }
        Command::Summarize { end_to_end, extractive } => {
            cfg.extractive |= extractive;
            let s = pipeline::cmd_summarize(&cfg, end_to_end)?;
            for cs in &s.summaries {
                println!("{}\t{}", cs.cluster_id, cs.summary);
            }
        }
        Command::Eval {
            summaries,
            max_tokens,
            min_r1,
            min_r2,
            min_rsu4,
        } => {
            if let Some(m) = max_tokens {
                cfg.summary_max_tokens = m;
            }
            cfg.thresholds.r1 = min_r1.or(cfg.thresholds.r1);
            cfg.thresholds.r2 = min_r2.or(cfg.thresholds.r2);
            cfg.thresholds.rsu4 = min_rsu4.or(cfg.thresholds.rsu4);
            let report = pipeline::cmd_eval(&cfg, summaries.as_deref());
            match report {
                Ok(r) => print!("{}", r.table()),
                Err(PipelineError::Regression(bad)) => {
                    let path = pipeline::stage_dir(&cfg, pipeline::Stage::Eval).join("table.txt");
                    if let Ok(t) = std::fs::read_to_string(path) {
                        print!("{t}");
                    }
                    return Err(PipelineError::Regression(bad));
                }
                Err(e) => return Err(e),
            }
        }
        Command::Stats => print!("{}", pipeline::cmd_stats(&cfg)?),
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PipelineError::Regression(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
