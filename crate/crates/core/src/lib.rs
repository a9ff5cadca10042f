//! Signal-control benchmark for a four-arm, single-lane intersection.
//!
//! [`sim`] holds the traffic model, [`traffic`] generates arrivals,
//! [`controllers`] implements the four signal policies on top of the small
//! dense-network engine in [`nn`], and [`metrics`] turns episode logs into
//! summary tables.

pub mod controllers;
pub mod metrics;
pub mod nn;
pub mod runner;
pub mod seed;
pub mod sim;
pub mod traffic;

pub use sim::{Arm, CellStateVector, Movement, PhaseDirective, PhaseKind, SimConfig, Simulation};
pub use traffic::{GenConfig, RoutePlan, Scenario};
