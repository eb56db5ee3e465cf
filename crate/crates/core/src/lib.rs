//! Two-level learning model predictive control for an agent with depleting
//! capacities (state of charge, elapsed time) that visits tasks on a graph.
//!
//! The high level picks the next node by searching short paths under learned
//! per-edge depletion bounds and a safe set of previously completed routes.
//! The low level drives each edge, improving on the most recent stored
//! trajectory for that edge while never doing worse than replaying it.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod high_level;
pub mod learning;
pub mod low_level;
pub mod motion;
pub mod oracle;
pub mod orchestrator;
pub mod output;
pub mod scenarios;
pub mod task_graph;
pub mod trajectory;

pub use error::{Error, Result};
