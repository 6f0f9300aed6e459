//! Adaptive elastic-net group quantile regression.
//!
//! Fits `Y_i = X_i' beta + eps_i` where the coefficients are split into `g`
//! groups of `p`, minimizing
//!
//! ```text
//! sum_i rho_tau(Y_i - X_i' beta) + lambda1 sum_j w_j ||beta_j||_2 + lambda2 sum_j ||beta_j||_2^2
//! ```
//!
//! with adaptive weights `w_j = ||pilot_j||^-gamma` taken from the
//! unpenalized quantile fit. The crate is split into:
//!
//! - [`model`]: data containers, check loss and objectives
//! - [`pilot`]: unpenalized fit and adaptive weights
//! - [`solver`]: the block-update algorithm and KKT certificate
//! - [`tuning`]: BIC-type criterion and grid search
//! - [`simulation`]: seeded Monte Carlo harness
//!
//! The `parallel` feature (on by default) evaluates grid cells and
//! replications on the rayon pool.

pub mod error;
pub mod model;
pub mod par;
pub mod pilot;
pub mod simulation;
pub mod solver;
pub mod tuning;

pub use error::{Error, Result};
pub use model::{
    active_set, check_loss, knight_identity_residual, objective_penalized, objective_quantile,
    FitResult, GroupWeight, GroupedCoefficients, GroupedDesign, PenaltyConfig, ZERO_TOL,
};
pub use pilot::{adaptive_weights, fit_pilot, PilotOptions};
pub use simulation::{
    aggregate, gen_design, gen_errors, run_replication, run_scenario, ErrorLaw, GridChoice,
    ReplicationMetrics, SimulationScenario, Summary,
};
pub use solver::{fit_enet, group_score, group_update, kkt_check, KktReport, SolverOptions, SweepMode};
pub use tuning::{
    bic_score, compute_sn, default_grid, estimate_tau, grid_search, BicRecord, GridSearchOutcome,
    TuningGrid,
};
