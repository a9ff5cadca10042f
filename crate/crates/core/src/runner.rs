//! Drives a controller through one full episode.

use crate::controllers::Controller;
use crate::metrics::{EpisodeLog, StepRecord};
use crate::sim::{SimConfig, SimError, Simulation, StepEvents};
use crate::traffic::{RoutePlan, Scenario};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeMeta {
    pub controller: String,
    pub scenario: Scenario,
    pub seed: u64,
}

impl EpisodeMeta {
    pub fn new(controller: impl Into<String>, scenario: Scenario, seed: u64) -> Self {
        EpisodeMeta {
            controller: controller.into(),
            scenario,
            seed,
        }
    }
}

pub fn run_episode<C: Controller + ?Sized>(
    sim_cfg: &SimConfig,
    routes: &RoutePlan,
    controller: &mut C,
    meta: EpisodeMeta,
) -> Result<EpisodeLog, SimError> {
    run_episode_observed(sim_cfg, routes, controller, meta, |_, _| {})
}

/// Like [`run_episode`], calling `observe` after every step.
pub fn run_episode_observed<C, F>(
    sim_cfg: &SimConfig,
    routes: &RoutePlan,
    controller: &mut C,
    meta: EpisodeMeta,
    mut observe: F,
) -> Result<EpisodeLog, SimError>
where
    C: Controller + ?Sized,
    F: FnMut(&Simulation, &StepEvents),
{
    let mut sim = Simulation::new(sim_cfg.clone(), routes)?;
    let mut records = Vec::with_capacity(sim_cfg.episode_length as usize);
    while !sim.is_finished() {
        let directive = sim.needs_directive().then(|| controller.next_directive(&sim));
        let step = sim.current_step();
        let events = sim.step(directive)?;
        let queues = sim.queue_lengths().map(|q| q as u32);
        records.push(StepRecord {
            step,
            total_queue: queues.iter().sum(),
            queues,
            cum_wait: sim.cumulative_wait(),
            phase: sim.phase().kind,
        });
        observe(&sim, &events);
    }
    controller.end_episode(&sim);
    Ok(EpisodeLog { meta, records })
}
