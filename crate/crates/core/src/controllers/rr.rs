//! Fixed-time round robin: every arm gets the same green quantum followed
//! by a yellow, in a fixed cyclic order, regardless of traffic.

use crate::sim::{Arm, PhaseDirective, Simulation};

use super::Controller;

#[derive(Debug, Clone, PartialEq)]
pub struct RrConfig {
    pub green_quantum: u32,
    pub yellow_quantum: u32,
    pub arm_order: Vec<Arm>,
}

impl Default for RrConfig {
    fn default() -> Self {
        RrConfig {
            green_quantum: 30,
            yellow_quantum: 3,
            arm_order: Arm::ALL.to_vec(),
        }
    }
}

impl RrConfig {
    pub fn cycle_length(&self) -> u32 {
        self.arm_order.len() as u32 * (self.green_quantum + self.yellow_quantum)
    }
}

#[derive(Debug, Clone)]
pub struct RoundRobin {
    cfg: RrConfig,
    /// Index into the green/yellow sequence; even = green, odd = yellow.
    position: usize,
}

impl RoundRobin {
    pub fn new(cfg: RrConfig) -> Self {
        assert!(cfg.green_quantum >= 1 && cfg.yellow_quantum >= 1, "quanta must be positive");
        assert!(!cfg.arm_order.is_empty(), "arm order must be non-empty");
        RoundRobin { cfg, position: 0 }
    }

    pub fn rr_next(&mut self) -> PhaseDirective {
        let arm = self.cfg.arm_order[self.position / 2];
        let d = if self.position.is_multiple_of(2) {
            PhaseDirective::green(arm, self.cfg.green_quantum)
        } else {
            PhaseDirective::yellow(arm, self.cfg.yellow_quantum)
        };
        self.position = (self.position + 1) % (2 * self.cfg.arm_order.len());
        d
    }
}

impl Default for RoundRobin {
    fn default() -> Self {
        RoundRobin::new(RrConfig::default())
    }
}

impl Controller for RoundRobin {
    fn name(&self) -> &'static str {
        "rr"
    }

    fn next_directive(&mut self, _sim: &Simulation) -> PhaseDirective {
        self.rr_next()
    }
}
