//! Simulation of stochastic reaction-diffusion equations on finite metric graphs.
//!
//! Each edge carries a reaction-diffusion equation driven by its own
//! multiplicative space-time noise. At each vertex the edge traces are
//! continuous and satisfy a non-local Neumann-Kirchhoff law `M Lu + Cu = 0`,
//! where `L` collects vertex values and `C` the conductance-weighted outgoing
//! derivatives.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] holds the metric graph, coefficient profiles and the coupling matrix.
//! * [`assembly`] discretizes the generator with linear finite elements.
//! * [`noise`] samples the driving cylindrical Wiener increments.
//! * [`dynamics`] integrates the deterministic and stochastic problems.
//! * [`analysis`] estimates convergence orders, Hölder exponents and checks
//!   semigroup properties.
//! * [`io`] parses experiment configs and emits result bundles.

pub mod analysis;
pub mod assembly;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod io;
pub mod noise;
pub mod sparse;

pub use error::{Error, Result};
