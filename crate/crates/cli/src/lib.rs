//! Command-line front end for the signal-control benchmark.

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::ConfigBuilder;

#[derive(Debug, Parser)]
#[command(name = "signalbench", version, about = "Compare traffic signal controllers on a simulated four-arm intersection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run controllers over scenarios and seeds; write step logs and a summary.
    Eval(EvalArgs),
    /// Train a DQN or A2C controller.
    Train(TrainArgs),
    /// Train A2C at several worker counts and compare.
    Scaling(ScalingArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set n_vehicles=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds, comma separated or repeated.
    #[arg(long = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub controller: Option<String>,
    /// 1, 2, 3 or all.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Trained network, required for dqn and a2c.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub controller: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// A2C worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    /// Worker counts to compare.
    #[arg(long, value_delimiter = ',')]
    pub workers: Vec<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

/// Usage errors exit with 1, runtime errors with 2.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

fn builder(common: &Common, mode: &str, flags: Vec<(&str, Option<Value>)>) -> Result<ConfigBuilder, Failure> {
    let mut b = ConfigBuilder::new(common.config.as_deref()).map_err(Failure::Usage)?;
    b.set("mode", json!(mode));
    if let Some(out) = &common.out {
        b.set("out", json!(out));
    }
    if !common.seeds.is_empty() {
        b.set("seeds", json!(common.seeds));
    }
    for (key, value) in flags {
        if let Some(v) = value {
            b.set(key, v);
        }
    }
    for pair in &common.overrides {
        b.set_pair(pair).map_err(Failure::Usage)?;
    }
    Ok(b)
}

/// A bare number on the command line means that scenario.
fn scenario_value(s: &Option<String>) -> Option<Value> {
    s.as_ref().map(|s| s.parse::<u64>().map(Value::from).unwrap_or_else(|_| json!(s)))
}

pub fn execute(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    match cli.command {
        Command::Eval(a) => {
            let b = builder(
                &a.common,
                "eval",
                vec![
                    ("controller", a.controller.map(Value::from)),
                    ("scenario", scenario_value(&a.scenario)),
                    ("model", a.model.map(|m| json!(m))),
                ],
            )?;
            run::run_eval(&b.build().map_err(Failure::Usage)?)
        }
        Command::Train(a) => {
            let b = builder(
                &a.common,
                "train",
                vec![
                    ("controller", a.controller.map(Value::from)),
                    ("episodes", a.episodes.map(Value::from)),
                    ("n_workers", a.workers.map(Value::from)),
                ],
            )?;
            run::run_train(&b.build().map_err(Failure::Usage)?)
        }
        Command::Scaling(a) => {
            let workers = (!a.workers.is_empty()).then(|| json!(a.workers));
            let b = builder(
                &a.common,
                "train",
                vec![
                    ("workers", workers),
                    ("episodes", a.episodes.map(Value::from)),
                    ("scenario", scenario_value(&a.scenario)),
                ],
            )?;
            run::run_scaling(&b.build().map_err(Failure::Usage)?)
        }
    }
}

/// Parses `args` and runs the command, printing written paths or the error.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.exit_code()
        }
    }
}
