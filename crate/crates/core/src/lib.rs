//! Matter-wave dynamics in tilted single- and double-periodic optical
//! lattices: Bloch and Bloch-Zener oscillations, shuttle transport, beam
//! splitting, interferometry and mean-field probing.

pub mod acceptance;
pub mod bands;
pub mod error;
pub mod experiments;
pub mod model;
pub mod observables;
pub mod parallel;
pub mod propagate;
pub mod tight_binding;

pub use bands::{solve_bands, BandTable, BlochProblem};
pub use error::{Error, Result};
pub use model::{make_gaussian, ControlSchedule, Preset, ScaledParams, SpatialGrid, WaveFunction};
pub use propagate::{run, PropagationConfig, Trajectory};
