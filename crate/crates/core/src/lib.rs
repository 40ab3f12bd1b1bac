//! Time-varying backup controllers for rollout-based safety filtering of
//! quadrotors.
//!
//! The filter rolls out a policy that flies a short maneuver, blends into a
//! stopping backup controller, and holds there. If the rollout stays inside
//! the safe set and ends stopped, the pilot keeps authority in proportion
//! to the remaining margin; otherwise the policy takes over.

// Negated comparisons are how NaN inputs get rejected during validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod multi_agent;
pub mod oracle;
pub mod protocol;
pub mod rigid_body;
pub mod safety_filter;
pub mod safety_sets;
pub mod scenario;
pub mod tbc_policies;

pub use error::{ConfigError, ConfigErrors, Error, Result};
