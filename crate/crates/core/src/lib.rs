//! Reachability-guided trajectory tracking for double-integrator outputs.
//!
//! The crate is organised bottom-up:
//!
//! * [`path`] builds C² cubic reference paths from random waypoints and answers
//!   closest-point and look-ahead queries.
//! * [`qp`] solves the per-sample tracking QP exactly by projecting onto the
//!   intersection of the acceleration ball and the one-step speed ball.
//! * [`tracker`] computes the one-step reachability margin, adapts the
//!   position/velocity weight and runs the freeze-resume state machine.
//! * [`plant`] simulates the noisy discrete double integrator.
//! * [`pursuit`] is the pure-pursuit baseline used for comparison.
//! * [`screen`] scans a fixed path offline for one-step unreachable intervals.
//! * [`experiment`] runs seeded Monte-Carlo trials and aggregates metrics.
//! * [`config`], [`io`] and [`svg`] handle configuration, CSV/JSON export and plots.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod path;
pub mod plant;
pub mod pursuit;
pub mod qp;
pub mod screen;
pub mod svg;
pub mod tracker;

pub use error::{Error, Result};

/// Planar vector used throughout the simulation.
pub type Vec2 = nalgebra::Vector2<f64>;
