//! User-level differentially private mean estimation for the few-users regime.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: ball sampling, cover counting, coordinate-wise median and the
//!   randomized Hadamard rotation.
//! - [`mechanism`]: the rejection-sampling exponential mechanism with its two
//!   garbage outcomes, plus a grid reference density for low dimensions.
//! - [`amplify`]: repeated runs with reduced budgets, aggregated by median.
//! - [`blockwise`]: rotate, split into `k²` blocks, estimate each block.
//! - [`userlevel`]: user means, the user-level estimator and discrete
//!   distribution learning.
//! - [`accounting`]: weak/strong composition and the budget schedules.
//! - [`synthdata`]: synthetic user datasets and adversarial corruption.
//! - [`optimizer`]: projected SGD driven by a private gradient oracle.
//! - [`cli`]: file formats, experiments and audits behind the `userdp` binary.

pub mod accounting;
pub mod amplify;
pub mod blockwise;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod mechanism;
pub mod optimizer;
pub mod rng;
pub mod synthdata;
pub mod userlevel;

pub use accounting::{BudgetLedger, PrivacyBudget};
pub use error::{DpError, Result};
pub use geometry::{Point, RotationPlan};
pub use mechanism::{EstimateOutcome, MechanismParams};
pub use rng::DpRng;

/// Crate version embedded in every result record.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
