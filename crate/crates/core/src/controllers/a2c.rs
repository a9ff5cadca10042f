//! Synchronous advantage actor-critic.
//!
//! One network carries both heads: outputs 0..4 are policy logits over the
//! arms, output 4 is the state value. Workers train on their own simulation
//! copies and their weights are averaged after every episode.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{average_weights, Mlp, NnError, Optimizer};
use crate::runner::{run_episode, EpisodeMeta};
use crate::seed;
use crate::sim::{Arm, CellStateVector, PhaseDirective, SimConfig, Simulation, CELL_STATE_LEN};
use crate::traffic::{generate_routes, GenConfig};

use super::dqn::{argmax, dqn_reward, schedule_scenario, training_route_seed, EpisodeRecord, TrainError, Transition};
use super::{Controller, PhaseSequencer};

const N_ACTIONS: usize = 4;
const VALUE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct A2cConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub n_workers: usize,
    pub hidden_layers: Vec<usize>,
    pub entropy_coefficient: f64,
    pub value_loss_coefficient: f64,
    /// Decisions between gradient steps.
    pub update_every: usize,
    pub green_duration: u32,
    pub yellow_duration: u32,
    pub episodes: usize,
    /// Multiplier applied to rewards before they reach the loss.
    pub reward_scale: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            gamma: 0.75,
            learning_rate: 0.001,
            n_workers: 1,
            hidden_layers: vec![64, 64],
            entropy_coefficient: 0.01,
            value_loss_coefficient: 0.5,
            update_every: 8,
            green_duration: 10,
            yellow_duration: 3,
            episodes: 100,
            reward_scale: 0.01,
        }
    }
}

impl A2cConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![CELL_STATE_LEN];
        sizes.extend(&self.hidden_layers);
        sizes.push(N_ACTIONS + 1);
        sizes
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.n_workers == 0 || self.update_every == 0 || self.episodes == 0 {
            return Err("n_workers, update_every and episodes must be positive".into());
        }
        if !(self.entropy_coefficient >= 0.0 && self.value_loss_coefficient >= 0.0) {
            return Err("loss coefficients must be non-negative".into());
        }
        if self.green_duration == 0 || !self.green_duration.is_multiple_of(5) || self.yellow_duration == 0 {
            return Err("green_duration must be a positive multiple of 5 and yellow_duration positive".into());
        }
        Ok(())
    }
}

/// One-step temporal-difference error.
pub fn a2c_advantage(r: f64, gamma: f64, v_next: f64, v_cur: f64) -> f64 {
    r + gamma * v_next - v_cur
}

/// Softmax over the policy logits of one output row.
pub fn policy(output: &[f64]) -> [f64; N_ACTIONS] {
    let logits = &output[..N_ACTIONS];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; N_ACTIONS];
    for (p, &z) in p.iter_mut().zip(logits) {
        *p = (z - max).exp();
    }
    let sum: f64 = p.iter().sum();
    p.map(|v| v / sum)
}

fn states_matrix<'a>(states: impl ExactSizeIterator<Item = &'a CellStateVector>) -> Array2<f64> {
    let mut m = Array2::zeros((states.len(), CELL_STATE_LEN));
    for (mut row, s) in m.axis_iter_mut(Axis(0)).zip(states) {
        for (x, &b) in row.iter_mut().zip(&s.0) {
            *x = if b { 1.0 } else { 0.0 };
        }
    }
    m
}

/// One gradient step on the summed actor-critic loss of `trajectory`.
/// Returns the loss before the step.
pub fn a2c_update(net: &mut Mlp, opt: &mut Optimizer, trajectory: &[Transition], cfg: &A2cConfig) -> Result<f64, NnError> {
    if trajectory.is_empty() {
        return Ok(0.0);
    }
    let s = states_matrix(trajectory.iter().map(|t| &t.s));
    let s_next = states_matrix(trajectory.iter().map(|t| &t.s_next));
    let (out, cache) = net.forward_batch(s.view())?;
    let (out_next, _) = net.forward_batch(s_next.view())?;

    let mut d_out = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (i, t) in trajectory.iter().enumerate() {
        let row = out.row(i).to_vec();
        let pi = policy(&row);
        let adv = a2c_advantage(t.r, cfg.gamma, out_next[[i, VALUE]], row[VALUE]);
        let entropy: f64 = -pi.iter().map(|&p| p * p.max(f64::MIN_POSITIVE).ln()).sum::<f64>();
        loss += -pi[t.a].ln() * adv + cfg.value_loss_coefficient * adv * adv - cfg.entropy_coefficient * entropy;
        for j in 0..N_ACTIONS {
            let log_p = pi[j].max(f64::MIN_POSITIVE).ln();
            let onehot = if j == t.a { 1.0 } else { 0.0 };
            d_out[[i, j]] = adv * (pi[j] - onehot) + cfg.entropy_coefficient * pi[j] * (log_p + entropy);
        }
        d_out[[i, VALUE]] = -2.0 * cfg.value_loss_coefficient * adv;
    }
    let grads = net.backward(&cache, d_out.view())?;
    net.apply_update(&grads, opt)?;
    Ok(loss)
}

/// Parameter-wise mean of the worker networks.
pub fn a2c_sync(nets: &[Mlp]) -> Result<Mlp, NnError> {
    average_weights(nets)
}

#[derive(Debug, Clone)]
struct Decision {
    s: CellStateVector,
    a: usize,
    wait: u64,
}

#[derive(Debug)]
struct Learner {
    optimizer: Optimizer,
    trajectory: Vec<Transition>,
    error: Option<NnError>,
}

/// Actor-critic signal controller. Training agents sample from the policy
/// and update every `update_every` decisions; evaluation agents act greedily.
#[derive(Debug)]
pub struct A2cAgent {
    pub net: Mlp,
    cfg: A2cConfig,
    sequencer: PhaseSequencer,
    rng: ChaCha8Rng,
    learner: Option<Learner>,
    last: Option<Decision>,
    episode_reward: f64,
}

impl A2cAgent {
    pub fn new(net: Mlp, cfg: A2cConfig, seed: u64) -> Self {
        let mut agent = A2cAgent::greedy(net, cfg, seed);
        agent.learner = Some(Learner {
            optimizer: Optimizer::adam(agent.cfg.learning_rate),
            trajectory: Vec::with_capacity(agent.cfg.update_every),
            error: None,
        });
        agent
    }

    pub fn greedy(net: Mlp, cfg: A2cConfig, seed: u64) -> Self {
        A2cAgent {
            net,
            sequencer: PhaseSequencer::new(cfg.green_duration, cfg.yellow_duration),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0xa2c])),
            learner: None,
            last: None,
            episode_reward: 0.0,
        }
    }

    pub fn begin_episode(&mut self) {
        self.sequencer = PhaseSequencer::new(self.cfg.green_duration, self.cfg.yellow_duration);
        self.last = None;
        self.episode_reward = 0.0;
    }

    pub fn episode_reward(&self) -> f64 {
        self.episode_reward
    }

    /// First update failure since the last call, if any.
    pub fn take_error(&mut self) -> Option<NnError> {
        self.learner.as_mut().and_then(|l| l.error.take())
    }

    fn flush(&mut self) {
        let Some(l) = self.learner.as_mut() else { return };
        if l.trajectory.is_empty() {
            return;
        }
        if let Err(e) = a2c_update(&mut self.net, &mut l.optimizer, &l.trajectory, &self.cfg) {
            l.error.get_or_insert(e);
        }
        l.trajectory.clear();
    }

    fn record(&mut self, s_next: CellStateVector, wait: u64) {
        let Some(prev) = self.last.take() else { return };
        let r = dqn_reward(prev.wait, wait);
        self.episode_reward += r.min(0.0);
        let Some(l) = self.learner.as_mut() else { return };
        l.trajectory.push(Transition {
            s: prev.s,
            a: prev.a,
            r: r * self.cfg.reward_scale,
            s_next,
        });
        if l.trajectory.len() >= self.cfg.update_every {
            self.flush();
        }
    }

    fn act(&mut self, s: &CellStateVector) -> usize {
        let out = self.net.forward(&s.to_input()).expect("network takes the 36-cell state");
        let pi = policy(&out);
        if self.learner.is_none() {
            return argmax(&pi);
        }
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (a, &p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        N_ACTIONS - 1
    }

    pub fn a2c_next(&mut self, sim: &Simulation) -> PhaseDirective {
        if let Some(d) = self.sequencer.take_pending() {
            return d;
        }
        let s = sim.encode_cell_state();
        let wait = sim.waiting_on_network();
        self.record(s, wait);
        let a = self.act(&s);
        self.last = Some(Decision { s, a, wait });
        self.sequencer.serve(Arm::ALL[a])
    }
}

impl Controller for A2cAgent {
    fn name(&self) -> &'static str {
        "a2c"
    }

    fn next_directive(&mut self, sim: &Simulation) -> PhaseDirective {
        self.a2c_next(sim)
    }

    fn end_episode(&mut self, sim: &Simulation) {
        self.record(sim.encode_cell_state(), sim.waiting_on_network());
        self.flush();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerReport {
    pub worker: usize,
    pub env_steps: u64,
    /// Time spent inside this worker's episodes.
    pub busy_ms: f64,
    pub steps_per_sec: f64,
}

#[derive(Debug)]
pub struct A2cTrainResult {
    pub net: Mlp,
    /// Training curve of each worker, indexed by worker.
    pub curves: Vec<Vec<EpisodeRecord>>,
    pub workers: Vec<WorkerReport>,
    pub wall_ms: f64,
    /// Environment steps across all workers per second of wall time.
    pub steps_per_sec: f64,
}

struct Worker {
    agent: A2cAgent,
    curve: Vec<EpisodeRecord>,
    env_steps: u64,
    busy_ms: f64,
}

impl Worker {
    fn run(&mut self, index: usize, episode: usize, sim_cfg: &SimConfig, gen_cfg: &GenConfig, seed: u64) -> Result<(), TrainError> {
        let scenario = schedule_scenario(episode);
        let routes = generate_routes(
            &GenConfig {
                seed: training_route_seed(seed, episode, index),
                episode_length: sim_cfg.episode_length,
                ..gen_cfg.clone()
            },
            scenario,
        )?;
        let t0 = Instant::now();
        self.agent.begin_episode();
        let log = run_episode(sim_cfg, &routes, &mut self.agent, EpisodeMeta::new("a2c", scenario, seed))?;
        if let Some(e) = self.agent.take_error() {
            return Err(e.into());
        }
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        self.busy_ms += ms;
        self.env_steps += log.records.len() as u64;
        self.curve.push(EpisodeRecord {
            episode,
            scenario,
            cum_reward: self.agent.episode_reward(),
            total_wait: log.final_cumulative_wait(),
            wall_ms: ms,
        });
        Ok(())
    }
}

/// Trains `cfg.n_workers` workers in parallel, averaging their networks
/// after every episode. Results depend only on the arguments, not on thread
/// scheduling.
pub fn a2c_train(cfg: &A2cConfig, sim_cfg: &SimConfig, gen_cfg: &GenConfig, seed: u64) -> Result<A2cTrainResult, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let global = Mlp::new(&cfg.layer_sizes(), seed::derive(seed, &[0x61]))?;
    let mut workers: Vec<Worker> = (0..cfg.n_workers)
        .map(|w| Worker {
            agent: A2cAgent::new(global.clone(), cfg.clone(), seed::derive(seed, &[0x77, w as u64])),
            curve: Vec::with_capacity(cfg.episodes),
            env_steps: 0,
            busy_ms: 0.0,
        })
        .collect();

    let started = Instant::now();
    let mut global = global;
    for episode in 0..cfg.episodes {
        let outcomes: Vec<Result<(), TrainError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .iter_mut()
                .enumerate()
                .map(|(i, w)| scope.spawn(move || w.run(i, episode, sim_cfg, gen_cfg, seed)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        outcomes.into_iter().collect::<Result<(), _>>()?;
        let nets: Vec<Mlp> = workers.iter().map(|w| w.agent.net.clone()).collect();
        global = a2c_sync(&nets)?;
        for w in &mut workers {
            w.agent.net = global.clone();
        }
    }
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    let total_steps: u64 = workers.iter().map(|w| w.env_steps).sum();
    let reports = workers
        .iter()
        .enumerate()
        .map(|(i, w)| WorkerReport {
            worker: i,
            env_steps: w.env_steps,
            busy_ms: w.busy_ms,
            steps_per_sec: w.env_steps as f64 / (w.busy_ms / 1e3).max(f64::MIN_POSITIVE),
        })
        .collect();
    Ok(A2cTrainResult {
        net: global,
        curves: workers.into_iter().map(|w| w.curve).collect(),
        workers: reports,
        wall_ms,
        steps_per_sec: total_steps as f64 / (wall_ms / 1e3).max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use crate::traffic::RoutePlan;
    use ndarray::Array1;
    use proptest::prelude::*;

    fn state(bits: &[usize]) -> CellStateVector {
        let mut c = [false; CELL_STATE_LEN];
        for &b in bits {
            c[b] = true;
        }
        CellStateVector(c)
    }

    fn small_cfg() -> A2cConfig {
        A2cConfig {
            hidden_layers: vec![8],
            ..A2cConfig::default()
        }
    }

    fn pi_at(net: &Mlp, s: &CellStateVector) -> [f64; 4] {
        policy(&net.forward(&s.to_input()).unwrap())
    }

    /// Fixed-value single transition whose advantage has the sign of `r`:
    /// s_next is s, so the advantage is r - (1 - gamma) V(s).
    fn one_step(r: f64, cfg: &A2cConfig) -> (Mlp, Mlp, CellStateVector) {
        let net = Mlp::new(&cfg.layer_sizes(), 11).unwrap();
        let s = state(&[1, 10, 30]);
        let v = net.forward(&s.to_input()).unwrap()[VALUE];
        let r = r + (1.0 - cfg.gamma) * v;
        let traj = [Transition { s, a: 2, r, s_next: s }];
        let mut after = net.clone();
        a2c_update(&mut after, &mut Optimizer::sgd(0.01), &traj, cfg).unwrap();
        (net, after, s)
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(a2c_advantage(1.0, 0.75, 2.0, 2.0), 0.5);
        assert_eq!(a2c_advantage(0.0, 0.75, 0.0, 0.0), 0.0);
        assert_eq!(a2c_advantage(0.0, 0.75, 4.0, 3.0), 0.0);
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let cfg = A2cConfig { entropy_coefficient: 0.0, value_loss_coefficient: 0.0, ..small_cfg() };
        let (before, after, s) = one_step(1.0, &cfg);
        assert!(pi_at(&after, &s)[2] > pi_at(&before, &s)[2]);
    }

    #[test]
    fn negative_advantage_lowers_probability() {
        let cfg = A2cConfig { entropy_coefficient: 0.0, value_loss_coefficient: 0.0, ..small_cfg() };
        let (before, after, s) = one_step(-1.0, &cfg);
        assert!(pi_at(&after, &s)[2] < pi_at(&before, &s)[2]);
    }

    #[test]
    fn entropy_term_pulls_toward_uniform() {
        let cfg = A2cConfig { entropy_coefficient: 1.0, value_loss_coefficient: 0.0, ..small_cfg() };
        let mut net = Mlp::new(&cfg.layer_sizes(), 5).unwrap();
        let mut layers = net.layers().to_vec();
        let last = layers.len() - 1;
        layers[last].bias = Array1::from(vec![2.0, -1.0, 0.5, 0.0, 0.0]);
        net = Mlp::from_layers(layers).unwrap();
        let s = state(&[4]);
        // Zero advantage: r cancels the value terms exactly.
        let v = net.forward(&s.to_input()).unwrap()[VALUE];
        let traj = [Transition { s, a: 0, r: (1.0 - cfg.gamma) * v, s_next: s }];
        let kl = |p: [f64; 4]| p.iter().map(|&p| p * (4.0 * p).ln()).sum::<f64>();
        let before = kl(pi_at(&net, &s));
        a2c_update(&mut net, &mut Optimizer::sgd(0.01), &traj, &cfg).unwrap();
        assert!(kl(pi_at(&net, &s)) < before);
    }

    #[test]
    fn value_head_moves_toward_target() {
        let cfg = A2cConfig { entropy_coefficient: 0.0, ..small_cfg() };
        let mut net = Mlp::new(&cfg.layer_sizes(), 2).unwrap();
        let s = state(&[0, 9]);
        let s2 = state(&[18]);
        let traj = [Transition { s, a: 1, r: 5.0, s_next: s2 }];
        let adv = |net: &Mlp| {
            let v = net.forward(&s.to_input()).unwrap()[VALUE];
            let v2 = net.forward(&s2.to_input()).unwrap()[VALUE];
            a2c_advantage(5.0, cfg.gamma, v2, v).abs()
        };
        let before = adv(&net);
        a2c_update(&mut net, &mut Optimizer::sgd(0.001), &traj, &cfg).unwrap();
        assert!(adv(&net) < before);
    }

    fn constant_net(value: f64) -> Mlp {
        Mlp::from_layers(vec![Dense {
            weights: Array2::from_elem((5, CELL_STATE_LEN), value),
            bias: Array1::from_elem(5, value),
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn sync_examples() {
        let w = Mlp::new(&small_cfg().layer_sizes(), 3).unwrap();
        assert_eq!(a2c_sync(std::slice::from_ref(&w)).unwrap(), w);

        let mut neg = w.clone();
        neg.set_parameters(&w.parameters().iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
        assert!(a2c_sync(&[w.clone(), neg]).unwrap().parameters().iter().all(|&v| v == 0.0));

        let avg = a2c_sync(&[constant_net(1.0), constant_net(2.0), constant_net(3.0)]).unwrap();
        assert!(avg.parameters().iter().all(|&v| v == 2.0));

        let other = Mlp::new(&[36, 4, 5], 0).unwrap();
        assert!(matches!(a2c_sync(&[w, other]), Err(NnError::ArchitectureMismatch)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sync_is_idempotent(seed in any::<u64>(), n in 1usize..5) {
            let w = Mlp::new(&small_cfg().layer_sizes(), seed).unwrap();
            prop_assert_eq!(a2c_sync(&vec![w.clone(); n]).unwrap(), w);
        }

        #[test]
        fn sync_ignores_worker_order(seeds in proptest::collection::vec(any::<u64>(), 2..5), rot in 0usize..4) {
            let nets: Vec<Mlp> = seeds.iter().map(|&s| Mlp::new(&small_cfg().layer_sizes(), s).unwrap()).collect();
            let mut shuffled = nets.clone();
            shuffled.rotate_left(rot % nets.len());
            shuffled.reverse();
            prop_assert_eq!(a2c_sync(&nets).unwrap(), a2c_sync(&shuffled).unwrap());
        }
    }

    #[test]
    fn greedy_agent_alternates_with_yellow() {
        let sim = Simulation::new(SimConfig::default(), &RoutePlan::default()).unwrap();
        let mut layers = Mlp::new(&small_cfg().layer_sizes(), 0).unwrap().layers().to_vec();
        let last = layers.len() - 1;
        layers[last].weights.fill(0.0);
        layers[last].bias = Array1::from(vec![0.0, 0.0, 0.0, 3.0, 0.0]);
        let mut agent = A2cAgent::greedy(Mlp::from_layers(layers).unwrap(), small_cfg(), 0);
        assert_eq!(agent.a2c_next(&sim), PhaseDirective::green(Arm::W, 10));
        assert_eq!(agent.a2c_next(&sim), PhaseDirective::green(Arm::W, 10));
    }

    #[test]
    fn single_worker_training_is_deterministic() {
        let cfg = A2cConfig { episodes: 2, ..A2cConfig::default() };
        let sim_cfg = SimConfig { episode_length: 600, ..SimConfig::default() };
        let gen = GenConfig { n_vehicles: 120, ..GenConfig::default() };
        let a = a2c_train(&cfg, &sim_cfg, &gen, 9).unwrap();
        let b = a2c_train(&cfg, &sim_cfg, &gen, 9).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.curves[0].len(), 2);
        assert_eq!(
            a.curves[0].iter().map(|r| r.total_wait).collect::<Vec<_>>(),
            b.curves[0].iter().map(|r| r.total_wait).collect::<Vec<_>>()
        );
        assert_ne!(a.net, Mlp::new(&cfg.layer_sizes(), seed::derive(9, &[0x61])).unwrap());
    }

    #[test]
    fn multi_worker_training_reports_each_worker() {
        let cfg = A2cConfig { episodes: 1, n_workers: 3, ..A2cConfig::default() };
        let sim_cfg = SimConfig { episode_length: 300, ..SimConfig::default() };
        let gen = GenConfig { n_vehicles: 60, ..GenConfig::default() };
        let a = a2c_train(&cfg, &sim_cfg, &gen, 1).unwrap();
        let b = a2c_train(&cfg, &sim_cfg, &gen, 1).unwrap();
        assert_eq!(a.workers.len(), 3);
        assert!(a.workers.iter().all(|w| w.env_steps == 300));
        assert_eq!(a.net, b.net);
    }
}
