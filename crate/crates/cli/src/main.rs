//! `gridsim`: run, compare and validate simulation recipes.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, simulation error),
//! 2 invalid recipe or usage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gridsim_core::experiment::{
    run_selfheal, run_single, summarize, validate_config, write_csv, ExperimentConfig,
    SelfHealConfig,
};
use gridsim_core::GridError;

#[derive(Parser)]
#[command(name = "gridsim", version, about = "Deterministic grid scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a recipe and write results.csv / summary.json (and traces with
    /// --trace) into the output directory.
    Run {
        recipe: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write one trace JSONL file per (policy, seed) cell.
        #[arg(long)]
        trace: bool,
    },
    /// Run a recipe and print the per-policy comparison table.
    Compare { recipe: PathBuf },
    /// Check a recipe for problems without running it; reports every
    /// violation at once.
    Validate { recipe: PathBuf },
}

/// A recipe is either a full experiment or the canned self-heal scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Recipe {
    Experiment(Box<ExperimentConfig>),
    Selfheal(SelfHealConfig),
}

fn load_recipe(path: &Path) -> Result<Recipe, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("bad recipe {}: {e}", path.display())))
}

enum CliError {
    /// Exit 1.
    Runtime(String),
    /// Exit 2.
    Invalid(String),
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Validation(_) | GridError::InvalidSpec(_) => CliError::Invalid(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { recipe, out, trace } => cmd_run(&recipe, &out, trace),
        Command::Compare { recipe } => cmd_compare(&recipe),
        Command::Validate { recipe } => cmd_validate(&recipe),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Invalid(msg)) => {
            eprintln!("invalid recipe: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(recipe_path: &Path, out_dir: &Path, with_trace: bool) -> Result<(), CliError> {
    let recipe = load_recipe(recipe_path)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    match recipe {
        Recipe::Experiment(cfg) => {
            validate_config(&cfg)?;
            let mut records = Vec::new();
            for &policy in &cfg.policies {
                for &seed in &cfg.seeds {
                    let out = run_single(&cfg, policy, seed)?;
                    if with_trace {
                        let name = format!("trace_{}_{}.jsonl", policy.as_str(), seed);
                        let file = fs::File::create(out_dir.join(&name))
                            .map_err(|e| CliError::Runtime(e.to_string()))?;
                        out.trace
                            .write_jsonl(std::io::BufWriter::new(file))
                            .map_err(|e| CliError::Runtime(e.to_string()))?;
                    }
                    records.extend(out.records);
                }
            }
            let csv_path = out_dir.join("results.csv");
            let file = fs::File::create(&csv_path)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_csv(&records, std::io::BufWriter::new(file))?;
            let summaries = summarize(&records);
            let summary_path = out_dir.join("summary.json");
            fs::write(
                &summary_path,
                serde_json::to_vec_pretty(&summaries)
                    .map_err(|e| CliError::Runtime(e.to_string()))?,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "{}: {} jobs across {} policies x {} seeds -> {}, {}",
                cfg.name,
                records.len(),
                cfg.policies.len(),
                cfg.seeds.len(),
                csv_path.display(),
                summary_path.display()
            );
            Ok(())
        }
        Recipe::Selfheal(cfg) => {
            let (report, out) = run_selfheal(&cfg)?;
            if with_trace {
                let file = fs::File::create(out_dir.join("trace_selfheal.jsonl"))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                out.trace
                    .write_jsonl(std::io::BufWriter::new(file))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            println!(
                "self-heal: super-peer {} failed, {} elected (expected {}), \
                 registry regenerated from {} shares (intact: {}), late node {} registered: {}",
                report.old_super_peer,
                report.new_super_peer,
                report.expected_super_peer,
                report
                    .regeneration
                    .as_ref()
                    .map(|r| r.shares_used)
                    .unwrap_or(0),
                report
                    .regeneration
                    .as_ref()
                    .map(|r| r.matches_pre_failure)
                    .unwrap_or(false),
                report.late_node,
                report.join_registered,
            );
            let healthy = report.new_super_peer == report.expected_super_peer
                && report
                    .regeneration
                    .as_ref()
                    .is_some_and(|r| r.matches_pre_failure)
                && report.join_registered;
            if healthy {
                Ok(())
            } else {
                Err(CliError::Runtime("self-heal scenario did not converge".into()))
            }
        }
    }
}

fn cmd_compare(recipe_path: &Path) -> Result<(), CliError> {
    let recipe = load_recipe(recipe_path)?;
    let cfg = match recipe {
        Recipe::Experiment(cfg) => cfg,
        Recipe::Selfheal(_) => {
            return Err(CliError::Invalid(
                "compare needs an experiment recipe with multiple policies".into(),
            ))
        }
    };
    validate_config(&cfg)?;
    if cfg.policies.len() < 2 {
        return Err(CliError::Invalid(
            "compare needs at least two policies".into(),
        ));
    }
    let mut records = Vec::new();
    for &policy in &cfg.policies {
        for &seed in &cfg.seeds {
            records.extend(run_single(&cfg, policy, seed)?.records);
        }
    }
    println!(
        "{:<8} {:>6} {:>6} {:>12} {:>12} {:>12} {:>10}",
        "policy", "jobs", "done", "mean_mk", "median_mk", "p95_mk", "msgs"
    );
    for s in summarize(&records) {
        println!(
            "{:<8} {:>6} {:>6} {:>12.3} {:>12.3} {:>12.3} {:>10}",
            s.policy,
            s.jobs,
            s.completed,
            s.mean_makespan,
            s.median_makespan,
            s.p95_makespan,
            s.messages_intra + s.messages_region + s.messages_inter_region,
        );
    }
    let winners = gridsim_core::experiment::winners_by_seed(&records, &cfg.policies, &cfg.seeds);
    for (seed, policy) in &winners {
        println!("seed {seed}: lowest mean makespan = {policy}");
    }
    Ok(())
}

fn cmd_validate(recipe_path: &Path) -> Result<(), CliError> {
    let recipe = load_recipe(recipe_path)?;
    match recipe {
        Recipe::Experiment(cfg) => {
            validate_config(&cfg)?;
            println!("{}: ok", cfg.name);
        }
        Recipe::Selfheal(cfg) => {
            if cfg.node_count < 2 {
                return Err(CliError::Invalid(
                    "selfheal needs at least two nodes".into(),
                ));
            }
            if cfg.join_time <= cfg.fail_time {
                return Err(CliError::Invalid(
                    "selfheal join_time must be after fail_time".into(),
                ));
            }
            println!("{}: ok", cfg.name);
        }
    }
    Ok(())
}
