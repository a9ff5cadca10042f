//! Route generation: Weibull-shaped arrival times and per-scenario movement
//! sampling.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Arm, Movement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Uniform demand over all arms.
    Scen1,
    /// 90% of demand on the north/south arms.
    Scen2,
    /// 90% of demand on the east/west arms.
    Scen3,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Scen1, Scenario::Scen2, Scenario::Scen3];

    pub fn number(self) -> u8 {
        match self {
            Scenario::Scen1 => 1,
            Scenario::Scen2 => 2,
            Scenario::Scen3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Scenario> {
        match n {
            1 => Some(Scenario::Scen1),
            2 => Some(Scenario::Scen2),
            3 => Some(Scenario::Scen3),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SCEN-{}", self.number())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches("SCEN-").trim_start_matches("scen");
        digits
            .parse::<u8>()
            .ok()
            .and_then(Scenario::from_number)
            .ok_or_else(|| format!("unknown scenario '{s}' (expected 1, 2 or 3)"))
    }
}

/// Denominator shared by every movement weight. All table entries are exact
/// multiples of 1/160, so sampling and normalization stay in integers.
pub const WEIGHT_DENOMINATOR: u32 = 160;

/// Movement probabilities for one scenario, stored as integer weights over
/// [`WEIGHT_DENOMINATOR`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovementDistribution {
    entries: [(Movement, u32); 12],
}

impl MovementDistribution {
    pub fn entries(&self) -> &[(Movement, u32); 12] {
        &self.entries
    }

    pub fn weight(&self, m: Movement) -> u32 {
        self.entries
            .iter()
            .find(|(mv, _)| *mv == m)
            .map(|&(_, w)| w)
            .unwrap_or(0)
    }

    pub fn probability(&self, m: Movement) -> f64 {
        self.weight(m) as f64 / WEIGHT_DENOMINATOR as f64
    }

    pub fn total_weight(&self) -> u32 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    /// Maps a draw in `0..WEIGHT_DENOMINATOR` to a movement.
    fn pick(&self, ticket: u32) -> Movement {
        let mut acc = 0;
        for &(m, w) in &self.entries {
            acc += w;
            if ticket < acc {
                return m;
            }
        }
        self.entries[11].0
    }
}

pub fn scenario_probabilities(scen: Scenario) -> MovementDistribution {
    // (straight, turn) weights for the north/south arms, then east/west.
    let ((ns_straight, ns_turn), (ew_straight, ew_turn)) = match scen {
        Scenario::Scen1 => ((30, 5), (30, 5)),
        Scenario::Scen2 => ((54, 9), (6, 1)),
        Scenario::Scen3 => ((6, 1), (54, 9)),
    };
    let mut entries = [(Movement::new(Arm::N, Arm::S).expect("distinct arms"), 0); 12];
    for (slot, m) in entries.iter_mut().zip(Movement::all()) {
        let north_south = matches!(m.source(), Arm::N | Arm::S);
        let straight = m.kind() == crate::sim::TurnKind::Straight;
        let w = match (north_south, straight) {
            (true, true) => ns_straight,
            (true, false) => ns_turn,
            (false, true) => ew_straight,
            (false, false) => ew_turn,
        };
        *slot = (m, w);
    }
    MovementDistribution { entries }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("uniform draw {0} outside [0, 1)")]
    UniformOutOfRange(f64),
    #[error("weibull shape must be positive and finite, got {0}")]
    InvalidShape(f64),
    #[error("episode length must be positive")]
    EmptyEpisode,
}

/// Unit-scale Weibull quantile function, `(-ln(1 - u))^(1/shape)`.
pub fn weibull_inverse_cdf(shape: f64, u: f64) -> Result<f64, TrafficError> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(TrafficError::InvalidShape(shape));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(TrafficError::UniformOutOfRange(u));
    }
    Ok((-(-u).ln_1p()).powf(shape.recip()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_vehicles: usize,
    pub episode_length: u32,
    pub weibull_shape: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_vehicles: 1000,
            episode_length: 5400,
            weibull_shape: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub spawn_step: u32,
    pub movement: Movement,
}

/// Vehicle arrivals for one episode, ordered by spawn step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutePlan {
    entries: Vec<RouteEntry>,
}

impl RoutePlan {
    /// Wraps entries as given; ordering is checked when a simulation is built.
    pub fn from_entries(entries: Vec<RouteEntry>) -> RoutePlan {
        RoutePlan { entries }
    }

    pub fn entries(&self) -> &[RouteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["spawn_step", "source", "destination"])?;
        for e in &self.entries {
            w.write_record([
                e.spawn_step.to_string(),
                e.movement.source().to_string(),
                e.movement.destination().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), csv::Error> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<RoutePlan, csv::Error> {
        #[derive(Deserialize)]
        struct Row {
            spawn_step: u32,
            source: char,
            destination: char,
        }
        let mut entries = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: Row = row?;
            let movement = Arm::from_letter(row.source)
                .zip(Arm::from_letter(row.destination))
                .and_then(|(s, d)| Movement::new(s, d))
                .ok_or_else(|| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("invalid movement {}->{}", row.source, row.destination),
                    )
                })?;
            entries.push(RouteEntry {
                spawn_step: row.spawn_step,
                movement,
            });
        }
        Ok(RoutePlan { entries })
    }
}

/// Stream ids for the two independent generator streams.
const TIME_STREAM: u64 = 0;
const MOVEMENT_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Raw unit-scale Weibull variates drawn from the time stream of `seed`.
pub fn weibull_variates(shape: f64, n: usize, seed: u64) -> Result<Vec<f64>, TrafficError> {
    let mut rng = stream_rng(seed, TIME_STREAM);
    (0..n)
        .map(|_| weibull_inverse_cdf(shape, rng.gen::<f64>()))
        .collect()
}

/// Draws `n` movements for `scen` from the movement stream of `seed`.
pub fn sample_movements(scen: Scenario, n: usize, seed: u64) -> Vec<Movement> {
    let dist = scenario_probabilities(scen);
    let mut rng = stream_rng(seed, MOVEMENT_STREAM);
    (0..n)
        .map(|_| dist.pick(rng.gen_range(0..WEIGHT_DENOMINATOR)))
        .collect()
}

/// Builds an episode's routes: Weibull variates are mapped affinely onto
/// `[0, episode_length - 1]` (min to 0, max to the last step), rounded and
/// sorted; movements come from an independent stream.
pub fn generate_routes(config: &GenConfig, scen: Scenario) -> Result<RoutePlan, TrafficError> {
    if config.episode_length == 0 {
        return Err(TrafficError::EmptyEpisode);
    }
    let raw = weibull_variates(config.weibull_shape, config.n_vehicles, config.seed)?;
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let last = (config.episode_length - 1) as f64;
    let mut steps: Vec<u32> = raw
        .iter()
        .map(|&x| {
            let scaled = if hi > lo { (x - lo) / (hi - lo) * last } else { 0.0 };
            scaled.round().clamp(0.0, last) as u32
        })
        .collect();
    steps.sort_unstable();
    let movements = sample_movements(scen, config.n_vehicles, config.seed);
    let entries = steps
        .into_iter()
        .zip(movements)
        .map(|(spawn_step, movement)| RouteEntry {
            spawn_step,
            movement,
        })
        .collect();
    Ok(RoutePlan { entries })
}
