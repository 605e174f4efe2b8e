//! Cooperative path following for a network of nonholonomic vehicles with
//! distributed sampled-data model predictive control.
//!
//! Each vehicle regulates a body-fixed point onto its own desired path while
//! the path parameters are steered toward consensus over a directed
//! communication graph. Agents exchange path parameters once per sample and
//! solve a local finite-horizon problem whose cost trades tracking error
//! against disagreement.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aux_control;
pub mod error;
pub mod mpc;
pub mod net_graph;
pub mod paths;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod vehicle;

pub use error::{Error, Result};
