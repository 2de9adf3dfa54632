//! `bias-audit`: simulate, abstract, explain and evaluate bias audits.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bias_audit::AuditError;
use config::AuditConfig;

#[derive(Parser)]
#[command(name = "bias-audit", version, about = "Rule-based bias auditing for LLM-as-a-judge outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population with injected biases.
    Simulate,
    /// Score topics and explanations against live model endpoints.
    Abstract,
    /// Fit rule sets per method and target.
    Explain,
    /// Score rule sets against ground truth and certify correlations.
    Evaluate,
    /// explain + evaluate in one run (simulating first if configured).
    Audit,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Method names, comma separated or repeated.
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<String>,
    /// Output feature names, comma separated or repeated.
    #[arg(long, global = true, value_delimiter = ',')]
    target: Vec<String>,
    /// Cut-offs for MRR@k, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent provider calls during `abstract`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Abstraction matrix CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Ground-truth JSON written by `simulate`.
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    /// Rule sets JSON written by `explain`.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Topic CSV for `abstract`.
    #[arg(long, global = true)]
    topics: Option<PathBuf>,
    /// Evaluate even when artifact digests disagree.
    #[arg(long, global = true)]
    force: bool,
}

fn effective_config(c: &Common, command: &Command) -> Result<AuditConfig, AuditError> {
    let mut cfg = match &c.config {
        Some(p) => AuditConfig::load(p)?,
        None => AuditConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        if matches!(command, Command::Simulate) || cfg.simulator.is_some() {
            let sim = cfg.simulator.get_or_insert_with(Default::default);
            sim.population.seed = seed;
            sim.noise_seed = seed.wrapping_add(1);
        }
    }
    if !c.method.is_empty() {
        cfg.methods = c.method.clone();
    }
    if !c.target.is_empty() {
        cfg.targets = c.target.clone();
    }
    if !c.k.is_empty() {
        cfg.k = c.k.clone();
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    for (flag, slot) in [
        (&c.out, &mut cfg.output_dir),
        (&c.data, &mut cfg.data),
        (&c.truth, &mut cfg.ground_truth),
        (&c.rules, &mut cfg.rules),
        (&c.topics, &mut cfg.topics),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    Ok(cfg)
}

fn exit_code(e: &AuditError) -> u8 {
    match e {
        AuditError::Config(_) => 2,
        AuditError::Provider(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = effective_config(&cli.common, &cli.command).and_then(|cfg| match cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Abstract => commands::cmd_abstract(&cfg),
        Command::Explain => commands::cmd_explain(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg, cli.common.force),
        Command::Audit => commands::cmd_audit(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
