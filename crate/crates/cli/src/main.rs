use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ghawk::config::PipelineConfig;
use ghawk::pipeline;
use ghawk::Error;

/// Bloom-filter and TransE node features for knowledge-graph GNN training.
#[derive(Debug, Parser)]
#[command(name = "ghawk", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the root seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the Bloom build.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the Bloom bank, train TransE and warm up the fusion network.
    Preprocess,
    /// Train encoder and decoder on top of the preprocessing artifacts.
    Train,
    /// Evaluate a trained model on the validation and test splits.
    Eval {
        /// Model file or checkpoint directory; defaults to the run's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Report artifact sizes and per-layer parameter counts.
    Footprint,
    /// Print the set bits of one entity's Bloom row.
    BloomInspect {
        /// Entity label, or numeric id.
        entity: String,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Validation(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Validation("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(std::path::Path::new("."));
    let mut cfg = PipelineConfig::parse(&text, base)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Preprocess => {
            let s = pipeline::preprocess(&cfg, cli.threads)?;
            println!(
                "n_estimate={} (out_p95={} + in_p95={})",
                s.degree.n_estimate, s.degree.out_p95, s.degree.in_p95
            );
            println!("bloom m={} k={}", s.bloom_m, s.bloom_k);
            if let Some((epoch, mrr)) = s.transe_valid_mrr.last() {
                println!("transe valid_mrr={mrr:.6} at epoch {epoch}");
            }
            println!("fusion warmed={}", s.warmed);
            println!("artifacts in {}", cfg.output.display());
        }
        Command::Train => {
            let h = pipeline::train_model(&cfg)?;
            print!("{}", pipeline::history_text(&h));
        }
        Command::Eval { checkpoint } => {
            let r = pipeline::evaluate(&cfg, checkpoint.as_deref())?;
            print!("{}", r.to_text());
        }
        Command::Footprint => {
            let f = pipeline::footprint(&cfg)?;
            print!("{}", f.to_text());
        }
        Command::BloomInspect { entity } => {
            let row = pipeline::bloom_inspect(&cfg, entity)?;
            println!("entity {} (id {}) m={} popcount={}", row.label, row.entity, row.m, row.bits.len());
            let bits: Vec<String> = row.bits.iter().map(u32::to_string).collect();
            println!("{}", bits.join(" "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
