//! Convergence, regularity and semigroup diagnostics.

mod convergence;
mod hoelder;
mod oracle;
mod semigroup;

pub use convergence::{fit_loglog, strong_order_time, ConvergenceRow, ConvergenceTable, LogLogFit, RefinementProblem};
pub use hoelder::{estimate_hoelder, HoelderEstimate};
pub use oracle::{ou_mode_variance, spectral_oracle, OracleResult};
pub use semigroup::{check_semigroup_properties, PropertyCheck, SemigroupReport};

pub use crate::dynamics::EnsembleStats;
