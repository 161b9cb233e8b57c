//! Tools for defining, solving, and simulating nonlocal games and their
//! latency-constrained variants.
//!
//! A game couples a prior over joint inputs with a utility table over joint
//! outputs. The crate computes exact classical values by exhaustive strategy
//! enumeration, lower-bounds quantum values with a seesaw ascent over
//! state-vector strategies, ships a small catalog of named games, models
//! which parties can talk to each other under a latency deadline, and runs
//! scored rounds against real party processes over a line-delimited TCP
//! protocol.

pub mod catalog;
pub mod classical;
pub mod game;
pub mod harness;
pub mod latency;
pub mod quantum;
mod seeding;
pub mod shape;

pub use game::{Behavior, GameError, GameSpec, NoSignalingReport, ValidatedGame};
pub use shape::Shape;
