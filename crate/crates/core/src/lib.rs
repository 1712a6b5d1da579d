//! Simulation, coupling, change of measure and ergodicity diagnostics for
//! Hamiltonian-type jump diffusions whose regime switches at state-dependent
//! rates.
//!
//! The state is `(x, k)` with `x = [x1, x2]` stored as one slice of length
//! `2d` (positions first, velocities second) and `k` a 0-based regime index.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod change_of_measure;
pub mod coupling;
pub mod engine;
pub mod ergodicity;
pub mod error;
pub mod model;
pub mod models_builtin;
pub mod rng;
pub mod stats;
pub mod switching;

pub use change_of_measure::{QHat, WeightedPath};
pub use coupling::{CoupledRates, CoupledState, CouplingRun};
pub use engine::{Event, PathSample, RecordMode, SimConfig, StateSample};
pub use error::{Error, Result};
pub use model::{Estimate, JumpMeasure, ModelSpec, Regime, TestFunction};
pub use switching::{Mechanism, RowPartition, SwitchEvent};
