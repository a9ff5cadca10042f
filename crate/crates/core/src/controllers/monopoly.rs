//! Feedback control ("MONOPOLY"): arms take turns in a fixed order like
//! players in a board game; on its turn an arm picks the green time that best
//! matches its queue length to the distance traffic can cover, then yields
//! through a yellow.

use crate::sim::{Arm, PhaseDirective, Simulation};

use super::Controller;

#[derive(Debug, Clone, PartialEq)]
pub struct MonopolyConfig {
    /// Candidate green durations, strictly increasing.
    pub action_set: Vec<u32>,
    pub arm_order: Vec<Arm>,
    pub yellow_duration: u32,
}

impl Default for MonopolyConfig {
    fn default() -> Self {
        MonopolyConfig {
            action_set: (1..=12).map(|k| 5 * k).collect(),
            arm_order: Arm::ALL.to_vec(),
            yellow_duration: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonopolyObservation {
    /// Queue length of the arm whose turn it is, meters.
    pub queue_meters: f64,
    /// Mean junction speed over the last step, m/s.
    pub speed: f64,
}

/// `argmin_a |queue - speed * a|` over the action set; ties go to the longer
/// green, so a saturated junction falls back to max-time round robin.
pub fn monopoly_best_action(obs: MonopolyObservation, cfg: &MonopolyConfig) -> u32 {
    let mut best = cfg.action_set[0];
    let mut best_gap = f64::INFINITY;
    for &a in &cfg.action_set {
        let gap = (obs.queue_meters - obs.speed * a as f64).abs();
        if gap <= best_gap {
            best = a;
            best_gap = gap;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Monopoly {
    cfg: MonopolyConfig,
    turn: usize,
    yellow_next: bool,
}

impl Monopoly {
    pub fn new(cfg: MonopolyConfig) -> Self {
        assert!(!cfg.action_set.is_empty(), "action set must be non-empty");
        assert!(
            cfg.action_set.windows(2).all(|w| w[0] < w[1]) && cfg.action_set[0] >= 1,
            "action set must be strictly increasing and positive"
        );
        assert!(!cfg.arm_order.is_empty(), "arm order must be non-empty");
        Monopoly {
            cfg,
            turn: 0,
            yellow_next: false,
        }
    }

    pub fn current_turn(&self) -> Arm {
        self.cfg.arm_order[self.turn]
    }

    pub fn monopoly_next(&mut self, obs: MonopolyObservation) -> PhaseDirective {
        let arm = self.current_turn();
        if self.yellow_next {
            self.yellow_next = false;
            self.turn = (self.turn + 1) % self.cfg.arm_order.len();
            PhaseDirective::yellow(arm, self.cfg.yellow_duration)
        } else {
            self.yellow_next = true;
            PhaseDirective::green(arm, monopoly_best_action(obs, &self.cfg))
        }
    }
}

impl Default for Monopoly {
    fn default() -> Self {
        Monopoly::new(MonopolyConfig::default())
    }
}

impl Controller for Monopoly {
    fn name(&self) -> &'static str {
        "monopoly"
    }

    fn next_directive(&mut self, sim: &Simulation) -> PhaseDirective {
        let obs = MonopolyObservation {
            queue_meters: sim.queue_length_meters(self.current_turn()),
            speed: sim.average_speed(),
        };
        self.monopoly_next(obs)
    }
}
