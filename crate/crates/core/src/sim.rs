//! Point-queue model of a four-arm, single-lane signalized intersection.
//!
//! Time advances in fixed one-second steps. Vehicles enter an arm at its far
//! end, travel at free-flow speed until they reach the back of the arm's
//! queue, and wait in a numbered slot. Slot 0 sits at the stop line. While an
//! arm holds the green, its queue discharges one vehicle per saturation
//! headway. Yellow and red arms discharge nothing.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::RoutePlan;

/// One of the four incoming approaches. The declaration order fixes the
/// total ordering `N < E < S < W`, which is also the action index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    N,
    E,
    S,
    W,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::N, Arm::E, Arm::S, Arm::W];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Arm> {
        Arm::ALL.get(idx).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Arm::N => 'N',
            Arm::E => 'E',
            Arm::S => 'S',
            Arm::W => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Arm> {
        match c {
            'N' => Some(Arm::N),
            'E' => Some(Arm::E),
            'S' => Some(Arm::S),
            'W' => Some(Arm::W),
            _ => None,
        }
    }

    /// Arm reached by `quarter_turns` clockwise steps (N -> E -> S -> W).
    fn rotate(self, quarter_turns: usize) -> Arm {
        Arm::ALL[(self.index() + quarter_turns) % 4]
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnKind {
    Straight,
    Left,
    Right,
}

/// A (source, destination) pair. Only the twelve pairs with distinct arms
/// are constructible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Movement {
    source: Arm,
    destination: Arm,
}

impl Movement {
    pub fn new(source: Arm, destination: Arm) -> Option<Movement> {
        (source != destination).then_some(Movement { source, destination })
    }

    pub fn source(self) -> Arm {
        self.source
    }

    pub fn destination(self) -> Arm {
        self.destination
    }

    /// A vehicle arriving from the north heads south, so east is on its left.
    pub fn kind(self) -> TurnKind {
        if self.destination == self.source.rotate(2) {
            TurnKind::Straight
        } else if self.destination == self.source.rotate(1) {
            TurnKind::Left
        } else {
            TurnKind::Right
        }
    }

    /// All twelve movements, grouped by source in arm order.
    pub fn all() -> impl Iterator<Item = Movement> {
        Arm::ALL.into_iter().flat_map(|s| {
            Arm::ALL
                .into_iter()
                .filter_map(move |d| Movement::new(s, d))
        })
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.destination)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseKind {
    Green(Arm),
    Yellow(Arm),
}

impl PhaseKind {
    pub fn arm(self) -> Arm {
        match self {
            PhaseKind::Green(a) | PhaseKind::Yellow(a) => a,
        }
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseKind::Green(a) => write!(f, "G{a}"),
            PhaseKind::Yellow(a) => write!(f, "Y{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phase {
    pub kind: PhaseKind,
    pub remaining: u32,
}

/// A controller decision: hold `phase` for `duration` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseDirective {
    pub phase: PhaseKind,
    pub duration: u32,
}

impl PhaseDirective {
    pub fn green(arm: Arm, duration: u32) -> Self {
        PhaseDirective {
            phase: PhaseKind::Green(arm),
            duration,
        }
    }

    pub fn yellow(arm: Arm, duration: u32) -> Self {
        PhaseDirective {
            phase: PhaseKind::Yellow(arm),
            duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Meters from arm entry to stop line.
    pub road_length: f64,
    /// m/s.
    pub free_speed: f64,
    /// Vehicle length plus standstill gap, meters.
    pub vehicle_space: f64,
    /// Seconds per discharged vehicle.
    pub saturation_headway: f64,
    pub yellow_duration: u32,
    /// Seconds per step.
    pub step_duration: f64,
    pub episode_length: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            road_length: 242.8,
            free_speed: 13.89,
            vehicle_space: 7.5,
            saturation_headway: 2.0,
            yellow_duration: 3,
            step_duration: 1.0,
            episode_length: 5400,
        }
    }
}

impl SimConfig {
    pub fn queue_capacity(&self) -> usize {
        (self.road_length / self.vehicle_space).floor() as usize
    }

    /// Entry-relative position of the front of a vehicle parked in `slot`.
    pub fn slot_position(&self, slot: usize) -> f64 {
        self.road_length - self.vehicle_space * slot as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let reals = [
            ("road_length", self.road_length),
            ("free_speed", self.free_speed),
            ("vehicle_space", self.vehicle_space),
            ("saturation_headway", self.saturation_headway),
            ("step_duration", self.step_duration),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.yellow_duration == 0 || self.episode_length == 0 {
            return Err(SimError::InvalidConfig(
                "yellow_duration and episode_length must be positive".into(),
            ));
        }
        if self.queue_capacity() == 0 {
            return Err(SimError::InvalidConfig("road shorter than one vehicle".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("route {index} spawns at step {spawn_step}, before the previous entry at {previous}")]
    UnsortedRoutes {
        index: usize,
        spawn_step: u32,
        previous: u32,
    },
    #[error("route {index} spawns at step {spawn_step}, outside the {episode_length}-step episode")]
    RouteOutOfRange {
        index: usize,
        spawn_step: u32,
        episode_length: u32,
    },
    #[error("phase expired at step {0} but no directive was supplied")]
    DirectiveRequired(u32),
    #[error("directive supplied at step {step} while {remaining} steps of the current phase remain")]
    DirectiveMidPhase { step: u32, remaining: u32 },
    #[error("directive duration must be at least 1")]
    ZeroDuration,
    #[error("illegal phase transition {from} -> {to} at step {step}")]
    IllegalTransition {
        from: PhaseKind,
        to: PhaseKind,
        step: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub movement: Movement,
    pub spawn_step: u32,
    /// Meters from arm entry to the vehicle front.
    pub position: f64,
    pub queued: bool,
    pub wait_steps: u32,
    /// Distance covered during the most recent step.
    last_advance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub spawned: Vec<u32>,
    pub departed: Vec<u32>,
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, Copy)]
struct PendingSpawn {
    id: u32,
    spawn_step: u32,
    movement: Movement,
}

/// Full intersection state. Vehicles on each arm are kept closest to the
/// stop line first; queued vehicles occupy slots `0..queue_len` contiguously.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    step: u32,
    arms: [Vec<Vehicle>; 4],
    phase: Phase,
    /// Set once the first directive has been consumed; transition rules
    /// apply from then on.
    started: bool,
    pending_spawns: VecDeque<PendingSpawn>,
    /// Spawns waiting for room on a full arm, in arrival order.
    held: [VecDeque<PendingSpawn>; 4],
    spawned: u64,
    departed: u64,
    discharge_credit: f64,
    cumulative_wait: u64,
}

impl Simulation {
    pub fn new(config: SimConfig, routes: &RoutePlan) -> Result<Simulation, SimError> {
        config.validate()?;
        let mut previous = 0;
        let mut pending = VecDeque::with_capacity(routes.len());
        for (index, entry) in routes.entries().iter().enumerate() {
            if entry.spawn_step < previous {
                return Err(SimError::UnsortedRoutes {
                    index,
                    spawn_step: entry.spawn_step,
                    previous,
                });
            }
            if entry.spawn_step >= config.episode_length {
                return Err(SimError::RouteOutOfRange {
                    index,
                    spawn_step: entry.spawn_step,
                    episode_length: config.episode_length,
                });
            }
            previous = entry.spawn_step;
            pending.push_back(PendingSpawn {
                id: index as u32,
                spawn_step: entry.spawn_step,
                movement: entry.movement,
            });
        }
        Ok(Simulation {
            config,
            step: 0,
            arms: Default::default(),
            phase: Phase {
                kind: PhaseKind::Green(Arm::N),
                remaining: 0,
            },
            started: false,
            pending_spawns: pending,
            held: Default::default(),
            spawned: 0,
            departed: 0,
            discharge_credit: 0.0,
            cumulative_wait: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn current_step(&self) -> u32 {
        self.step
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn needs_directive(&self) -> bool {
        self.phase.remaining == 0
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.episode_length
    }

    /// Route entries not yet placed on the network, including held spawns.
    pub fn pending_spawns(&self) -> usize {
        self.pending_spawns.len() + self.held.iter().map(VecDeque::len).sum::<usize>()
    }

    pub fn spawned_total(&self) -> u64 {
        self.spawned
    }

    pub fn departed_total(&self) -> u64 {
        self.departed
    }

    pub fn vehicles_on_network(&self) -> usize {
        self.arms.iter().map(Vec::len).sum()
    }

    pub fn vehicles(&self, arm: Arm) -> &[Vehicle] {
        &self.arms[arm.index()]
    }

    pub fn discharge_credit(&self) -> f64 {
        self.discharge_credit
    }

    pub fn queue_length(&self, arm: Arm) -> usize {
        self.arms[arm.index()].iter().filter(|v| v.queued).count()
    }

    pub fn queue_lengths(&self) -> [usize; 4] {
        Arm::ALL.map(|a| self.queue_length(a))
    }

    pub fn total_queue(&self) -> usize {
        self.queue_lengths().iter().sum()
    }

    pub fn queue_length_meters(&self, arm: Arm) -> f64 {
        self.queue_length(arm) as f64 * self.config.vehicle_space
    }

    /// Mean speed over the last step of every vehicle on the network, floored
    /// at 0.1 m/s. An empty network reports free-flow speed.
    pub fn average_speed(&self) -> f64 {
        let n = self.vehicles_on_network();
        if n == 0 {
            return self.config.free_speed;
        }
        let total: f64 = self
            .arms
            .iter()
            .flatten()
            .map(|v| if v.queued { 0.0 } else { v.last_advance / self.config.step_duration })
            .sum();
        (total / n as f64).max(MIN_AVERAGE_SPEED)
    }

    pub fn cumulative_wait(&self) -> u64 {
        self.cumulative_wait
    }

    /// Queued steps accumulated by the vehicles still on the network. Unlike
    /// [`cumulative_wait`](Self::cumulative_wait) this drops when a vehicle
    /// that has waited leaves.
    pub fn waiting_on_network(&self) -> u64 {
        self.arms.iter().flatten().map(|v| v.wait_steps as u64).sum()
    }

    /// Advances exactly one step. A directive must be supplied when, and only
    /// when, the current phase has expired.
    pub fn step(&mut self, directive: Option<PhaseDirective>) -> Result<StepEvents, SimError> {
        match (self.phase.remaining, directive) {
            (0, None) => return Err(SimError::DirectiveRequired(self.step)),
            (0, Some(d)) => self.apply_directive(d)?,
            (remaining, Some(_)) => {
                return Err(SimError::DirectiveMidPhase {
                    step: self.step,
                    remaining,
                })
            }
            (_, None) => {}
        }

        let mut events = StepEvents::default();
        self.spawn_arrivals(&mut events.spawned);
        self.advance_vehicles();
        if let PhaseKind::Green(arm) = self.phase.kind {
            self.discharge(arm, &mut events.departed);
        }
        let queued = self.arms.iter_mut().flatten().filter(|v| v.queued);
        for v in queued {
            v.wait_steps += 1;
            self.cumulative_wait += 1;
        }
        self.phase.remaining -= 1;
        self.step += 1;
        events.phase = Some(self.phase);
        Ok(events)
    }

    fn apply_directive(&mut self, d: PhaseDirective) -> Result<(), SimError> {
        if d.duration == 0 {
            return Err(SimError::ZeroDuration);
        }
        let from = self.phase.kind;
        if self.started {
            let legal = match (from, d.phase) {
                (PhaseKind::Green(a), PhaseKind::Green(b)) => a == b,
                (PhaseKind::Green(a), PhaseKind::Yellow(b)) => a == b,
                (PhaseKind::Yellow(_), PhaseKind::Green(_)) => true,
                (PhaseKind::Yellow(_), PhaseKind::Yellow(_)) => false,
            };
            if !legal {
                return Err(SimError::IllegalTransition {
                    from,
                    to: d.phase,
                    step: self.step,
                });
            }
        }
        if !self.started || from != d.phase {
            self.discharge_credit = 0.0;
        }
        self.started = true;
        self.phase = Phase {
            kind: d.phase,
            remaining: d.duration,
        };
        Ok(())
    }

    fn spawn_arrivals(&mut self, spawned: &mut Vec<u32>) {
        while let Some(p) = self.pending_spawns.front() {
            if p.spawn_step > self.step {
                break;
            }
            let p = self.pending_spawns.pop_front().expect("front exists");
            self.held[p.movement.source().index()].push_back(p);
        }
        let capacity = self.config.queue_capacity();
        for arm in Arm::ALL {
            let i = arm.index();
            while self.arms[i].len() < capacity {
                let Some(p) = self.held[i].pop_front() else { break };
                // Entry is the far end; new vehicles sort last.
                self.arms[i].push(Vehicle {
                    id: p.id,
                    movement: p.movement,
                    spawn_step: p.spawn_step,
                    position: 0.0,
                    queued: false,
                    wait_steps: 0,
                    last_advance: 0.0,
                });
                self.spawned += 1;
                spawned.push(p.id);
            }
        }
    }

    fn advance_vehicles(&mut self) {
        let reach = self.config.free_speed * self.config.step_duration;
        for lane in self.arms.iter_mut() {
            let mut queue_len = lane.iter().take_while(|v| v.queued).count();
            for v in lane.iter_mut().skip(queue_len) {
                let target = self.config.slot_position(queue_len);
                let gap = (target - v.position).max(0.0);
                if reach >= gap {
                    v.last_advance = gap;
                    v.position = target;
                    v.queued = true;
                    queue_len += 1;
                } else {
                    v.last_advance = reach;
                    v.position += reach;
                }
            }
        }
    }

    fn discharge(&mut self, arm: Arm, departed: &mut Vec<u32>) {
        self.discharge_credit += self.config.step_duration / self.config.saturation_headway;
        let lane = &mut self.arms[arm.index()];
        while self.discharge_credit >= 1.0 {
            self.discharge_credit -= 1.0;
            if lane.first().is_some_and(|v| v.queued) {
                let v = lane.remove(0);
                departed.push(v.id);
                self.departed += 1;
                for (slot, v) in lane.iter_mut().take_while(|v| v.queued).enumerate() {
                    v.position = self.config.slot_position(slot);
                }
            }
        }
    }
}

const MIN_AVERAGE_SPEED: f64 = 0.1;

/// Distance-from-stop-line cell edges. Cells are narrow near the light and
/// widen toward the arm entry; the last cell is closed at the road length.
pub const CELL_EDGES: [f64; 9] = [7.0, 14.0, 21.0, 28.0, 42.0, 63.0, 105.0, 168.0, f64::INFINITY];
pub const CELLS_PER_ARM: usize = 9;
pub const CELL_STATE_LEN: usize = 4 * CELLS_PER_ARM;

/// Occupancy of the 36 approach cells, laid out `[N 0..9, E 9..18, S 18..27, W 27..36]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellStateVector(pub [bool; CELL_STATE_LEN]);

impl CellStateVector {
    pub fn count_occupied(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn to_input(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Cell index (0 at the stop line) holding a vehicle front `distance` meters
/// upstream of the stop line.
pub fn cell_for_distance(distance: f64) -> usize {
    CELL_EDGES
        .iter()
        .position(|&edge| distance < edge)
        .unwrap_or(CELLS_PER_ARM - 1)
}

impl Simulation {
    pub fn encode_cell_state(&self) -> CellStateVector {
        let mut cells = [false; CELL_STATE_LEN];
        for arm in Arm::ALL {
            for v in self.vehicles(arm) {
                let distance = (self.config.road_length - v.position).max(0.0);
                cells[arm.index() * CELLS_PER_ARM + cell_for_distance(distance)] = true;
            }
        }
        CellStateVector(cells)
    }
}
