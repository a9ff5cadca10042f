//! Run configuration: a flat JSON object, optionally loaded from a file, with
//! command-line flags and `--set key=value` pairs layered on top.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::{self, Deserializer};
use serde::Deserialize;
use serde_json::{Map, Value};

use signalbench_core::controllers::{A2cConfig, DqnConfig, MonopolyConfig, RrConfig};
use signalbench_core::{GenConfig, Scenario, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Rr,
    Monopoly,
    Dqn,
    A2c,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Rr => "rr",
            ControllerKind::Monopoly => "monopoly",
            ControllerKind::Dqn => "dqn",
            ControllerKind::A2c => "a2c",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, ControllerKind::Dqn | ControllerKind::A2c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Every key the config file may contain. Unset overrides keep the
/// library defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub controller: Option<ControllerKind>,
    pub mode: Option<Mode>,
    #[serde(deserialize_with = "scenarios")]
    pub scenario: Vec<Scenario>,
    pub seeds: Vec<u64>,
    pub episodes: Option<usize>,
    pub n_workers: Option<usize>,
    /// Worker counts compared by the scaling report.
    pub workers: Vec<usize>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,

    pub n_vehicles: Option<usize>,
    pub weibull_shape: Option<f64>,
    pub episode_length: Option<u32>,
    pub road_length: Option<f64>,
    pub free_speed: Option<f64>,
    pub vehicle_space: Option<f64>,
    pub saturation_headway: Option<f64>,
    pub yellow_duration: Option<u32>,
    pub rr_green: Option<u32>,
    pub monopoly_actions: Option<Vec<u32>>,
    pub gamma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub green_duration: Option<u32>,
    pub hidden_layers: Option<Vec<usize>>,
    pub reward_scale: Option<f64>,
    pub replay_samples_per_episode: Option<usize>,
    pub replay_capacity: Option<usize>,
    pub batch_size: Option<usize>,
    pub min_replay_before_training: Option<usize>,
    pub entropy_coefficient: Option<f64>,
    pub value_loss_coefficient: Option<f64>,
    pub update_every: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            controller: None,
            mode: None,
            scenario: Scenario::ALL.to_vec(),
            seeds: vec![0],
            episodes: None,
            n_workers: None,
            workers: vec![1, 2, 4],
            out: None,
            model: None,
            n_vehicles: None,
            weibull_shape: None,
            episode_length: None,
            road_length: None,
            free_speed: None,
            vehicle_space: None,
            saturation_headway: None,
            yellow_duration: None,
            rr_green: None,
            monopoly_actions: None,
            gamma: None,
            learning_rate: None,
            green_duration: None,
            hidden_layers: None,
            reward_scale: None,
            replay_samples_per_episode: None,
            replay_capacity: None,
            batch_size: None,
            min_replay_before_training: None,
            entropy_coefficient: None,
            value_loss_coefficient: None,
            update_every: None,
        }
    }
}

/// Accepts `1`, `"2"`, `"all"` or a list of those.
fn scenarios<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Scenario>, D::Error> {
    fn one<E: de::Error>(v: &Value) -> std::result::Result<Vec<Scenario>, E> {
        let bad = || E::custom(format!("scenario must be 1, 2, 3 or \"all\", got {v}"));
        match v {
            Value::String(s) if s == "all" => Ok(Scenario::ALL.to_vec()),
            Value::String(s) => s.parse::<u8>().ok().and_then(Scenario::from_number).map(|s| vec![s]).ok_or_else(bad),
            Value::Number(n) => n
                .as_u64()
                .and_then(|n| u8::try_from(n).ok())
                .and_then(Scenario::from_number)
                .map(|s| vec![s])
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
    match Value::deserialize(d)? {
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in &items {
                out.extend(one::<D::Error>(item)?);
            }
            Ok(out)
        }
        v => one(&v),
    }
}

/// Layers sources into one JSON object: the file first, then `pairs` in order.
pub struct ConfigBuilder {
    map: Map<String, Value>,
}

impl ConfigBuilder {
    pub fn new(file: Option<&Path>) -> Result<Self> {
        let map = match file {
            None => Map::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
                    Value::Object(map) => map,
                    _ => bail!("{}: config must be a JSON object", path.display()),
                }
            }
        };
        Ok(ConfigBuilder { map })
    }

    pub fn set(&mut self, key: &str, value: Value) -> &mut Self {
        self.map.insert(key.to_string(), value);
        self
    }

    /// `key=value`; the value is read as JSON when it parses, else as a string.
    pub fn set_pair(&mut self, pair: &str) -> Result<&mut Self> {
        let (key, raw) = pair.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got '{pair}'"))?;
        if key.is_empty() {
            bail!("--set expects key=value, got '{pair}'");
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(self.set(key, value))
    }

    pub fn build(self) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_value(Value::Object(self.map)).context("invalid configuration")?;
        cfg.check()?;
        Ok(cfg)
    }
}

impl RunConfig {
    fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.scenario.is_empty() {
            bail!("scenario must not be empty");
        }
        if self.n_workers.is_some() && self.controller != Some(ControllerKind::A2c) {
            bail!("n_workers only applies to the a2c controller");
        }
        if self.n_workers == Some(0) || self.workers.contains(&0) {
            bail!("worker counts must be positive");
        }
        Ok(())
    }

    pub fn controller(&self) -> Result<ControllerKind> {
        self.controller.ok_or_else(|| anyhow!("no controller given"))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("no output directory given"))
    }

    pub fn sim_config(&self) -> SimConfig {
        let d = SimConfig::default();
        SimConfig {
            road_length: self.road_length.unwrap_or(d.road_length),
            free_speed: self.free_speed.unwrap_or(d.free_speed),
            vehicle_space: self.vehicle_space.unwrap_or(d.vehicle_space),
            saturation_headway: self.saturation_headway.unwrap_or(d.saturation_headway),
            yellow_duration: self.yellow_duration.unwrap_or(d.yellow_duration),
            episode_length: self.episode_length.unwrap_or(d.episode_length),
            ..d
        }
    }

    pub fn gen_config(&self, seed: u64) -> GenConfig {
        let d = GenConfig::default();
        GenConfig {
            n_vehicles: self.n_vehicles.unwrap_or(d.n_vehicles),
            weibull_shape: self.weibull_shape.unwrap_or(d.weibull_shape),
            episode_length: self.episode_length.unwrap_or(d.episode_length),
            seed,
        }
    }

    pub fn rr_config(&self) -> RrConfig {
        let d = RrConfig::default();
        RrConfig {
            green_quantum: self.rr_green.unwrap_or(d.green_quantum),
            yellow_quantum: self.yellow_duration.unwrap_or(d.yellow_quantum),
            ..d
        }
    }

    pub fn monopoly_config(&self) -> MonopolyConfig {
        let d = MonopolyConfig::default();
        MonopolyConfig {
            action_set: self.monopoly_actions.clone().unwrap_or(d.action_set),
            yellow_duration: self.yellow_duration.unwrap_or(d.yellow_duration),
            ..d
        }
    }

    pub fn dqn_config(&self) -> DqnConfig {
        let d = DqnConfig::default();
        DqnConfig {
            gamma: self.gamma.unwrap_or(d.gamma),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            green_duration: self.green_duration.unwrap_or(d.green_duration),
            yellow_duration: self.yellow_duration.unwrap_or(d.yellow_duration),
            episodes: self.episodes.unwrap_or(d.episodes),
            replay_samples_per_episode: self.replay_samples_per_episode.unwrap_or(d.replay_samples_per_episode),
            replay_capacity: self.replay_capacity.unwrap_or(d.replay_capacity),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            min_replay_before_training: self.min_replay_before_training.unwrap_or(d.min_replay_before_training),
            hidden_layers: self.hidden_layers.clone().unwrap_or(d.hidden_layers),
            reward_scale: self.reward_scale.unwrap_or(d.reward_scale),
        }
    }

    pub fn a2c_config(&self) -> A2cConfig {
        let d = A2cConfig::default();
        A2cConfig {
            gamma: self.gamma.unwrap_or(d.gamma),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            n_workers: self.n_workers.unwrap_or(d.n_workers),
            hidden_layers: self.hidden_layers.clone().unwrap_or(d.hidden_layers),
            entropy_coefficient: self.entropy_coefficient.unwrap_or(d.entropy_coefficient),
            value_loss_coefficient: self.value_loss_coefficient.unwrap_or(d.value_loss_coefficient),
            update_every: self.update_every.unwrap_or(d.update_every),
            green_duration: self.green_duration.unwrap_or(d.green_duration),
            yellow_duration: self.yellow_duration.unwrap_or(d.yellow_duration),
            episodes: self.episodes.unwrap_or(d.episodes),
            reward_scale: self.reward_scale.unwrap_or(d.reward_scale),
        }
    }
}
