//! The three subcommands. Each returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use signalbench_core::controllers::a2c::{a2c_train, A2cTrainResult};
use signalbench_core::controllers::dqn::{dqn_train, EpisodeRecord};
use signalbench_core::controllers::{A2cAgent, A2cConfig, Controller, DqnAgent, Monopoly, RoundRobin};
use signalbench_core::metrics::{save_step_csv, save_summary_csv, summarize, total_wait, EpisodeLog};
use signalbench_core::nn::Mlp;
use signalbench_core::runner::{run_episode, EpisodeMeta};
use signalbench_core::sim::CELL_STATE_LEN;
use signalbench_core::traffic::generate_routes;
use signalbench_core::Scenario;

use crate::config::{ControllerKind, RunConfig};
use crate::Failure;

pub fn step_csv_name(controller: &str, scenario: Scenario, seed: u64) -> String {
    format!("{controller}_scen{}_seed{seed}.csv", scenario.number())
}

pub fn model_name(controller: ControllerKind) -> String {
    format!("{}_model.bin", controller.name())
}

fn create_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn load_model(path: &Path, outputs: usize) -> Result<Mlp> {
    let net = Mlp::load(path).with_context(|| format!("loading model {}", path.display()))?;
    if net.input_dim() != CELL_STATE_LEN || net.output_dim() != outputs {
        bail!(
            "{}: model maps {} inputs to {} outputs, expected {CELL_STATE_LEN} to {outputs}",
            path.display(),
            net.input_dim(),
            net.output_dim()
        );
    }
    Ok(net)
}

fn build_controller(cfg: &RunConfig, kind: ControllerKind, seed: u64) -> Result<Box<dyn Controller>> {
    let model = || cfg.model.as_deref().ok_or_else(|| anyhow!("evaluating {} needs --model", kind.name()));
    Ok(match kind {
        ControllerKind::Rr => Box::new(RoundRobin::new(cfg.rr_config())),
        ControllerKind::Monopoly => Box::new(Monopoly::new(cfg.monopoly_config())),
        ControllerKind::Dqn => Box::new(DqnAgent::greedy(load_model(model()?, 4)?, cfg.dqn_config(), seed)),
        ControllerKind::A2c => Box::new(A2cAgent::greedy(load_model(model()?, 5)?, cfg.a2c_config(), seed)),
    })
}

/// Runs one episode per (scenario, seed) and returns the logs in that order.
pub fn eval_logs(cfg: &RunConfig, kind: ControllerKind) -> Result<Vec<EpisodeLog>> {
    let sim_cfg = cfg.sim_config();
    sim_cfg.validate()?;
    let mut logs = Vec::new();
    for &scenario in &cfg.scenario {
        for &seed in &cfg.seeds {
            let routes = generate_routes(&cfg.gen_config(seed), scenario)?;
            let mut controller = build_controller(cfg, kind, seed)?;
            let meta = EpisodeMeta::new(kind.name(), scenario, seed);
            logs.push(run_episode(&sim_cfg, &routes, controller.as_mut(), meta)?);
        }
    }
    Ok(logs)
}

pub fn run_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let kind = cfg.controller().map_err(Failure::Usage)?;
    cfg.out_dir().map_err(Failure::Usage)?;
    if kind.is_learned() && cfg.model.is_none() {
        return Err(Failure::Usage(anyhow!("evaluating {} needs --model", kind.name())));
    }
    (|| {
        let out = create_out(cfg)?;
        let logs = eval_logs(cfg, kind)?;
        let mut written = Vec::new();
        for log in &logs {
            let path = out.join(step_csv_name(kind.name(), log.meta.scenario, log.meta.seed));
            save_step_csv(log, &path)?;
            written.push(path);
        }
        let path = out.join("summary.csv");
        save_summary_csv(&summarize(&logs)?, &path)?;
        written.push(path);
        Ok(written)
    })()
    .map_err(Failure::Runtime)
}

#[derive(Serialize)]
struct CurveRow {
    episode: usize,
    scenario: u8,
    cum_reward: f64,
    total_wait: f64,
    wall_ms: f64,
}

impl From<&EpisodeRecord> for CurveRow {
    fn from(r: &EpisodeRecord) -> Self {
        CurveRow {
            episode: r.episode,
            scenario: r.scenario.number(),
            cum_reward: r.cum_reward,
            total_wait: r.total_wait as f64,
            wall_ms: r.wall_ms,
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean over workers of each episode's record.
fn mean_curve(curves: &[Vec<EpisodeRecord>]) -> Vec<CurveRow> {
    let n = curves.len() as f64;
    (0..curves[0].len())
        .map(|e| {
            let rows = curves.iter().map(|c| &c[e]);
            CurveRow {
                episode: e,
                scenario: curves[0][e].scenario.number(),
                cum_reward: rows.clone().map(|r| r.cum_reward).sum::<f64>() / n,
                total_wait: rows.clone().map(|r| r.total_wait as f64).sum::<f64>() / n,
                wall_ms: rows.map(|r| r.wall_ms).fold(0.0, f64::max),
            }
        })
        .collect()
}

fn write_a2c_reports(out: &Path, prefix: &str, result: &A2cTrainResult) -> Result<Vec<PathBuf>> {
    #[derive(Serialize)]
    struct WorkerCurveRow {
        worker: usize,
        episode: usize,
        scenario: u8,
        cum_reward: f64,
        total_wait: u64,
        wall_ms: f64,
    }
    #[derive(Serialize)]
    struct ThroughputRow {
        worker: usize,
        env_steps: u64,
        busy_ms: f64,
        steps_per_sec: f64,
    }
    let curve = out.join(format!("{prefix}_curve.csv"));
    write_rows(&curve, mean_curve(&result.curves))?;
    let workers = out.join(format!("{prefix}_worker_curves.csv"));
    write_rows(
        &workers,
        result.curves.iter().enumerate().flat_map(|(w, c)| {
            c.iter().map(move |r| WorkerCurveRow {
                worker: w,
                episode: r.episode,
                scenario: r.scenario.number(),
                cum_reward: r.cum_reward,
                total_wait: r.total_wait,
                wall_ms: r.wall_ms,
            })
        }),
    )?;
    let throughput = out.join(format!("{prefix}_throughput.csv"));
    write_rows(
        &throughput,
        result.workers.iter().map(|w| ThroughputRow {
            worker: w.worker,
            env_steps: w.env_steps,
            busy_ms: w.busy_ms,
            steps_per_sec: w.steps_per_sec,
        }),
    )?;
    Ok(vec![curve, workers, throughput])
}

pub fn run_train(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let kind = cfg.controller().map_err(Failure::Usage)?;
    if !kind.is_learned() {
        return Err(Failure::Usage(anyhow!("{} has nothing to train; use dqn or a2c", kind.name())));
    }
    cfg.out_dir().map_err(Failure::Usage)?;
    let seed = cfg.seeds[0];
    (|| {
        let out = create_out(cfg)?;
        let sim_cfg = cfg.sim_config();
        let gen_cfg = cfg.gen_config(seed);
        let model = out.join(model_name(kind));
        let mut written = vec![model.clone()];
        match kind {
            ControllerKind::Dqn => {
                let result = dqn_train(&cfg.dqn_config(), &sim_cfg, &gen_cfg, seed)?;
                result.qnet.save(&model)?;
                let curve = out.join("dqn_curve.csv");
                write_rows(&curve, result.curve.iter().map(CurveRow::from))?;
                written.push(curve);
            }
            _ => {
                let result = a2c_train(&cfg.a2c_config(), &sim_cfg, &gen_cfg, seed)?;
                result.net.save(&model)?;
                written.extend(write_a2c_reports(&out, "a2c", &result)?);
            }
        }
        Ok(written)
    })()
    .map_err(Failure::Runtime)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n_workers: usize,
    pub scenario: u8,
    pub total_wait: f64,
    pub train_wall_ms: f64,
    pub steps_per_sec: f64,
}

/// Trains one A2C model per worker count from the same base seed (the first
/// seed) and evaluates each greedily on every scenario and seed.
pub fn run_scaling(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    if let Some(kind) = cfg.controller.filter(|&k| k != ControllerKind::A2c) {
        return Err(Failure::Usage(anyhow!("scaling compares a2c worker counts, not {}", kind.name())));
    }
    cfg.out_dir().map_err(Failure::Usage)?;
    (|| {
        let out = create_out(cfg)?;
        let seed = cfg.seeds[0];
        let sim_cfg = cfg.sim_config();
        let mut rows = Vec::new();
        let mut written = Vec::new();
        for &n in &cfg.workers {
            let a2c_cfg = A2cConfig { n_workers: n, ..cfg.a2c_config() };
            let result = a2c_train(&a2c_cfg, &sim_cfg, &cfg.gen_config(seed), seed)?;
            let model = out.join(format!("a2c_w{n}_model.bin"));
            result.net.save(&model)?;
            written.push(model);
            for &scenario in &cfg.scenario {
                let mut waits = Vec::new();
                for &eval_seed in &cfg.seeds {
                    let routes = generate_routes(&cfg.gen_config(eval_seed), scenario)?;
                    let mut agent = A2cAgent::greedy(result.net.clone(), a2c_cfg.clone(), eval_seed);
                    let log = run_episode(&sim_cfg, &routes, &mut agent, EpisodeMeta::new("a2c", scenario, eval_seed))?;
                    waits.push(total_wait(&log)? as f64);
                }
                rows.push(ScalingRow {
                    n_workers: n,
                    scenario: scenario.number(),
                    total_wait: waits.iter().sum::<f64>() / waits.len() as f64,
                    train_wall_ms: result.wall_ms,
                    steps_per_sec: result.steps_per_sec,
                });
            }
        }
        let path = out.join("scaling.csv");
        write_rows(&path, &rows)?;
        written.push(path);
        Ok(written)
    })()
    .map_err(Failure::Runtime)
}
