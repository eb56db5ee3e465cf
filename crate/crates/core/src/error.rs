use std::path::PathBuf;

use thiserror::Error;

use crate::task_graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside the operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// Configuration failed validation. Every violation found is listed.
    #[error("configuration rejected:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    /// The learning data required before the first iteration is missing or unusable.
    #[error("initialization failed: {0}")]
    Initialization(String),

    /// A state was handed to an operation that is only defined inside a node region.
    #[error("state is not inside any node region: {0}")]
    Domain(String),

    /// Backward capacity recursion over a route went negative.
    #[error("route infeasible under the current depletion estimate: {0}")]
    InfeasibleRoute(String),

    /// The high-level problem had no admissible plan.
    #[error("no feasible high-level plan from node {node}: {detail}")]
    NoFeasiblePlan { node: NodeId, detail: String },

    /// A guarantee that must hold on valid inputs was broken.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A call sequence contract was broken (e.g. reading past a planned tail).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Guarded operation refused to run (e.g. exponential enumeration too large).
    #[error("refused: {0}")]
    Refused(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 for configuration problems,
    /// 2 for anything that signals a broken run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
