//! Signal policies. Each one is polled for a new [`PhaseDirective`] whenever
//! the current phase expires.

pub mod a2c;
pub mod dqn;
pub mod monopoly;
pub mod rr;

use crate::sim::{Arm, PhaseDirective, Simulation};

pub use a2c::{A2cAgent, A2cConfig};
pub use dqn::{DqnAgent, DqnConfig, Transition};
pub use monopoly::{Monopoly, MonopolyConfig};
pub use rr::{RoundRobin, RrConfig};

pub trait Controller {
    /// Short identifier used in logs and file names.
    fn name(&self) -> &'static str;

    /// Called only when `sim.needs_directive()`.
    fn next_directive(&mut self, sim: &Simulation) -> PhaseDirective;

    /// Called once after the last step of an episode.
    fn end_episode(&mut self, _sim: &Simulation) {}
}

/// Turns "serve arm X next" decisions into a legal phase stream: switching
/// arms goes through a yellow of the outgoing arm, keeping the same arm
/// extends its green.
#[derive(Debug, Clone)]
pub struct PhaseSequencer {
    green_duration: u32,
    yellow_duration: u32,
    current: Option<Arm>,
    pending: Option<PhaseDirective>,
}

impl PhaseSequencer {
    pub fn new(green_duration: u32, yellow_duration: u32) -> Self {
        PhaseSequencer {
            green_duration,
            yellow_duration,
            current: None,
            pending: None,
        }
    }

    /// A green queued behind a yellow, if any. It must be emitted before the
    /// next decision is taken.
    pub fn take_pending(&mut self) -> Option<PhaseDirective> {
        self.pending.take()
    }

    pub fn current(&self) -> Option<Arm> {
        self.current
    }

    pub fn serve(&mut self, arm: Arm) -> PhaseDirective {
        let green = PhaseDirective::green(arm, self.green_duration);
        let prev = self.current.replace(arm);
        match prev {
            Some(prev) if prev != arm => {
                self.pending = Some(green);
                PhaseDirective::yellow(prev, self.yellow_duration)
            }
            _ => green,
        }
    }
}
