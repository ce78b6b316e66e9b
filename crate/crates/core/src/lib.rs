//! Distributed nonlinear MPC for coordinating automated vehicles through an
//! intersection.
//!
//! Each agent tracks a reference speed along a fixed path, solves its own
//! penalised optimal control problem with PANOC, and avoids the agents in
//! its conflict set using the trajectories they broadcast one step earlier.

// Negated float comparisons are deliberate: they also reject NaN. Index
// loops mirror the stage-wise formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod collision;
pub mod coordination;
pub mod error;
pub mod kinematics;
pub mod ocp;
pub mod panoc;
pub mod path_geometry;
pub mod scalar;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
