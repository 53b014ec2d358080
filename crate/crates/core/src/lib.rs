//! Asynchronous distributed Method of Multipliers (ASYMM).
//!
//! Nodes of a fixed undirected network cooperatively solve
//!
//! ```text
//! minimize  sum_i f_i(x)   subject to  h_i(x) = 0,  g_i(x) <= 0
//! ```
//!
//! by holding local copies `x_i`, descending on a local Augmented Lagrangian
//! while a distributed logic-AND decides when every node is accurate enough,
//! and then performing one multiplier ascent step each. The crate contains:
//!
//! - [`graph`]: topology construction (Watts-Strogatz, edge lists) and diameter.
//! - [`problem`]: per-node costs and constraints, the source-localization instance
//!   and the infeasibility measure.
//! - [`lagrangian`]: global and local Augmented Lagrangian, multiplier and penalty
//!   updates, step-size estimation and tolerance schedules.
//! - [`logicand`]: stop-matrix based asynchronous logic-AND.
//! - [`node`]: the per-node ASYMM state machine.
//! - [`simulator`]: deterministic event-driven execution and traces.
//! - [`reference`]: centralized inexact / exact Method of Multipliers and the
//!   equivalence checker used to validate ASYMM traces.
//! - [`config`] and [`io`]: configuration documents, CSV and binary trace formats.

pub mod config;
pub mod error;
pub mod graph;
pub mod io;
pub mod lagrangian;
pub mod linalg;
pub mod logicand;
pub mod node;
pub mod problem;
pub mod reference;
pub mod simulator;

pub use error::{Error, Result};
pub use graph::Graph;
pub use problem::{LocalizationInstance, NodeProblem, ProblemSpec};
pub use simulator::{Trace, SimConfig};
