//! Simulation laboratory for the multistage critical epidemic.
//!
//! * [`ctmc`]: exact simulation of the finite-population chain and path diagnostics.
//! * [`scaling`]: regime scaling constants and rescaled trajectories.
//! * [`compensator`]: drift and predictable quadratic variation of the rescaled coordinates.
//! * [`sde`]: Euler-Maruyama integration of the limiting diffusions.
//! * [`ode`]: the forced deterministic system, its closed form when unforced, and time changes.
//! * [`experiments`]: Monte Carlo studies built on the above.

pub mod compensator;
pub mod ctmc;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod ode;
pub mod path;
pub mod rng;
pub mod scaling;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use model::{transition_rates, ModelParams, PopulationState, RateVector};
pub use rng::RngSeed;
