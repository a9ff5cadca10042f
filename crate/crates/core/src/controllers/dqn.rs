//! Deep Q-network controller.
//!
//! The agent observes the 36-cell occupancy vector whenever a green expires
//! and picks which arm to serve next. Q-values come from a dense network;
//! training regresses `Q(s, a)` onto `r + gamma * max_a' Q(s', a')` using
//! uniformly sampled replay batches.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Mlp, NnError, Optimizer, ReplayBuffer};
use crate::runner::{run_episode, EpisodeMeta};
use crate::seed;
use crate::sim::{Arm, CellStateVector, PhaseDirective, SimConfig, SimError, Simulation, CELL_STATE_LEN};
use crate::traffic::{generate_routes, GenConfig, Scenario, TrafficError};

use super::{Controller, PhaseSequencer};

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub green_duration: u32,
    pub yellow_duration: u32,
    pub episodes: usize,
    pub replay_samples_per_episode: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub min_replay_before_training: usize,
    pub hidden_layers: Vec<usize>,
    /// Multiplier applied to rewards before they enter the replay buffer.
    pub reward_scale: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.75,
            learning_rate: 0.001,
            green_duration: 10,
            yellow_duration: 3,
            episodes: 100,
            replay_samples_per_episode: 800,
            replay_capacity: 50_000,
            batch_size: 100,
            min_replay_before_training: 600,
            hidden_layers: vec![64; 5],
            reward_scale: 0.01,
        }
    }
}

impl DqnConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![CELL_STATE_LEN];
        sizes.extend(&self.hidden_layers);
        sizes.push(4);
        sizes
    }

    /// Linear decay from pure exploration at episode 0.
    pub fn epsilon(&self, episode: usize) -> f64 {
        1.0 - episode as f64 / self.episodes as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.green_duration == 0 || !self.green_duration.is_multiple_of(5) {
            return Err(format!("green_duration must be a positive multiple of 5, got {}", self.green_duration));
        }
        if self.yellow_duration == 0 || self.batch_size == 0 || self.replay_capacity == 0 || self.episodes == 0 {
            return Err("yellow_duration, batch_size, replay_capacity and episodes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: CellStateVector,
    /// Arm index, 0..4 in N, E, S, W order.
    pub a: usize,
    pub r: f64,
    pub s_next: CellStateVector,
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy: uniform over the four arms with probability `epsilon`,
/// otherwise the greedy action (ties to the lowest index).
pub fn dqn_select_action<R: Rng + ?Sized>(qnet: &Mlp, s: &CellStateVector, epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..4);
    }
    let q = qnet.forward(&s.to_input()).expect("q-network takes the 36-cell state");
    argmax(&q)
}

/// Decrease in the waiting accumulated by vehicles on the network between
/// two decision points.
pub fn dqn_reward(wait_prev: u64, wait_cur: u64) -> f64 {
    wait_prev as f64 - wait_cur as f64
}

/// Bellman target `r + gamma * max(q_next)`.
pub fn q_target(r: f64, gamma: f64, q_next: &[f64]) -> f64 {
    let max = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    r + gamma * max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplayOutcome {
    /// Mean squared error of the batch before the step.
    Trained { loss: f64 },
    /// Not enough experience yet; nothing changed.
    BelowThreshold { have: usize, need: usize },
}

/// Builds the regression batch: inputs, and targets equal to the current
/// prediction except at the taken action.
pub fn replay_batch(qnet: &Mlp, batch: &[&Transition], gamma: f64) -> Result<(Array2<f64>, Array2<f64>), NnError> {
    let n = batch.len();
    let mut s = Array2::zeros((n, CELL_STATE_LEN));
    let mut s_next = Array2::zeros((n, CELL_STATE_LEN));
    for (i, t) in batch.iter().enumerate() {
        for (j, (&a, &b)) in t.s.0.iter().zip(&t.s_next.0).enumerate() {
            s[[i, j]] = if a { 1.0 } else { 0.0 };
            s_next[[i, j]] = if b { 1.0 } else { 0.0 };
        }
    }
    let (q, _) = qnet.forward_batch(s.view())?;
    let (q_next, _) = qnet.forward_batch(s_next.view())?;
    let mut targets = q;
    for (i, t) in batch.iter().enumerate() {
        let row = q_next.row(i);
        targets[[i, t.a]] = q_target(t.r, gamma, row.as_slice().expect("row-major"));
    }
    Ok((s, targets))
}

/// One gradient step on the mean squared error against frozen targets.
pub fn fit_batch(qnet: &mut Mlp, opt: &mut Optimizer, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64, NnError> {
    let (y, cache) = qnet.forward_batch(inputs.view())?;
    let err = &y - targets;
    let n = err.len() as f64;
    let loss = err.mapv(|e| e * e).sum() / n;
    let d_out = err * (2.0 / n);
    let grads = qnet.backward(&cache, d_out.view())?;
    qnet.apply_update(&grads, opt)?;
    Ok(loss)
}

/// Samples a batch from `buffer` and takes one step toward the Bellman
/// targets. The buffer is only read.
pub fn dqn_replay_update<R: Rng + ?Sized>(
    qnet: &mut Mlp,
    opt: &mut Optimizer,
    buffer: &ReplayBuffer<Transition>,
    cfg: &DqnConfig,
    rng: &mut R,
) -> Result<ReplayOutcome, NnError> {
    let need = cfg.min_replay_before_training.max(1);
    if buffer.len() < need {
        return Ok(ReplayOutcome::BelowThreshold {
            have: buffer.len(),
            need,
        });
    }
    let batch = buffer.sample(cfg.batch_size, rng)?;
    let (inputs, targets) = replay_batch(qnet, &batch, cfg.gamma)?;
    let loss = fit_batch(qnet, opt, &inputs, &targets)?;
    Ok(ReplayOutcome::Trained { loss })
}

/// Pending decision awaiting its reward.
#[derive(Debug, Clone)]
struct Decision {
    s: CellStateVector,
    a: usize,
    wait: u64,
}

/// DQN signal controller. In training mode it explores and stores
/// transitions; in evaluation mode it acts greedily.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub qnet: Mlp,
    cfg: DqnConfig,
    sequencer: PhaseSequencer,
    epsilon: f64,
    rng: ChaCha8Rng,
    training: Option<Training>,
    last: Option<Decision>,
    episode_reward: f64,
}

#[derive(Debug, Clone)]
struct Training {
    buffer: ReplayBuffer<Transition>,
    optimizer: Optimizer,
}

impl DqnAgent {
    pub fn new(cfg: DqnConfig, seed: u64) -> Result<Self, NnError> {
        let qnet = Mlp::new(&cfg.layer_sizes(), seed::derive(seed, &[0x51]))?;
        let mut agent = DqnAgent::greedy(qnet, cfg, seed);
        agent.training = Some(Training {
            buffer: ReplayBuffer::new(agent.cfg.replay_capacity),
            optimizer: Optimizer::adam(agent.cfg.learning_rate),
        });
        Ok(agent)
    }

    /// Evaluation agent around trained weights.
    pub fn greedy(qnet: Mlp, cfg: DqnConfig, seed: u64) -> Self {
        DqnAgent {
            qnet,
            sequencer: PhaseSequencer::new(cfg.green_duration, cfg.yellow_duration),
            cfg,
            epsilon: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0x52])),
            training: None,
            last: None,
            episode_reward: 0.0,
        }
    }

    pub fn config(&self) -> &DqnConfig {
        &self.cfg
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    pub fn replay_len(&self) -> usize {
        self.training.as_ref().map_or(0, |t| t.buffer.len())
    }

    /// Clears per-episode state. Weights and replay memory persist.
    pub fn begin_episode(&mut self) {
        self.sequencer = PhaseSequencer::new(self.cfg.green_duration, self.cfg.yellow_duration);
        self.last = None;
        self.episode_reward = 0.0;
    }

    /// Sum of the negative unscaled rewards since `begin_episode`. The plain
    /// sum telescopes to minus the waiting left on the network at the end.
    pub fn episode_reward(&self) -> f64 {
        self.episode_reward
    }

    pub fn replay_update(&mut self) -> Result<ReplayOutcome, NnError> {
        let Some(t) = self.training.as_mut() else {
            return Ok(ReplayOutcome::BelowThreshold { have: 0, need: 1 });
        };
        dqn_replay_update(&mut self.qnet, &mut t.optimizer, &t.buffer, &self.cfg, &mut self.rng)
    }

    /// Closes the pending decision with the reward observed up to `sim`.
    fn record(&mut self, s_next: CellStateVector, wait: u64) {
        if let Some(prev) = self.last.take() {
            let r = dqn_reward(prev.wait, wait);
            self.episode_reward += r.min(0.0);
            if let Some(t) = self.training.as_mut() {
                t.buffer.push(Transition {
                    s: prev.s,
                    a: prev.a,
                    r: r * self.cfg.reward_scale,
                    s_next,
                });
            }
        }
    }

    pub fn dqn_next(&mut self, sim: &Simulation) -> PhaseDirective {
        if let Some(d) = self.sequencer.take_pending() {
            return d;
        }
        let s = sim.encode_cell_state();
        let wait = sim.waiting_on_network();
        self.record(s, wait);
        let a = dqn_select_action(&self.qnet, &s, self.epsilon, &mut self.rng);
        self.last = Some(Decision { s, a, wait });
        self.sequencer.serve(Arm::ALL[a])
    }
}

impl Controller for DqnAgent {
    fn name(&self) -> &'static str {
        "dqn"
    }

    fn next_directive(&mut self, sim: &Simulation) -> PhaseDirective {
        self.dqn_next(sim)
    }

    fn end_episode(&mut self, sim: &Simulation) {
        // The horizon truncates the episode; the last transition bootstraps
        // from the final state like any other.
        self.record(sim.encode_cell_state(), sim.waiting_on_network());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub scenario: Scenario,
    pub cum_reward: f64,
    pub total_wait: u64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct DqnTrainResult {
    pub qnet: Mlp,
    pub curve: Vec<EpisodeRecord>,
    pub wall_ms: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("invalid training config: {0}")]
    Config(String),
}

/// Scenario for training episode `e`: 1, 2, 3, 1, ...
pub fn schedule_scenario(episode: usize) -> Scenario {
    Scenario::ALL[episode % 3]
}

/// Traffic seed for training episode `episode` (worker `worker`).
pub fn training_route_seed(seed: u64, episode: usize, worker: usize) -> u64 {
    seed::derive(seed, &[0x7261, episode as u64, worker as u64])
}

/// Full training run: episodes alternate scenarios, epsilon decays linearly,
/// and each episode is followed by `replay_samples_per_episode` replay steps.
pub fn dqn_train(
    cfg: &DqnConfig,
    sim_cfg: &SimConfig,
    gen_cfg: &GenConfig,
    seed: u64,
) -> Result<DqnTrainResult, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let mut agent = DqnAgent::new(cfg.clone(), seed)?;
    let started = Instant::now();
    let mut curve = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let t0 = Instant::now();
        let scenario = schedule_scenario(episode);
        let routes = generate_routes(
            &GenConfig {
                seed: training_route_seed(seed, episode, 0),
                episode_length: sim_cfg.episode_length,
                ..gen_cfg.clone()
            },
            scenario,
        )?;
        agent.set_epsilon(cfg.epsilon(episode));
        agent.begin_episode();
        let meta = EpisodeMeta::new("dqn", scenario, seed);
        let log = run_episode(sim_cfg, &routes, &mut agent, meta)?;
        for _ in 0..cfg.replay_samples_per_episode {
            agent.replay_update()?;
        }
        curve.push(EpisodeRecord {
            episode,
            scenario,
            cum_reward: agent.episode_reward(),
            total_wait: log.final_cumulative_wait(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(DqnTrainResult {
        qnet: agent.qnet,
        curve,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
