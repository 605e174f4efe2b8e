use std::fmt;

use thiserror::Error;

use crate::mpc::{DecisionVars, Violations};

/// One failed check on a loaded scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    /// Dotted path of the offending field, e.g. `graph.eps_bar`.
    pub field: String,
    pub message: String,
}

impl ValidationIssue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Best iterate handed back when the solver cannot reach feasibility.
#[derive(Debug, Clone)]
pub struct InfeasibleSolve {
    pub best: DecisionVars,
    pub cost: f64,
    pub violations: Violations,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph: {0}")]
    Graph(String),

    #[error("consensus gain {eps} outside (0, {upper})")]
    GainOutOfRange { eps: f64, upper: f64 },

    #[error("agent {agent}: missing coordination value for neighbor {neighbor}")]
    MissingNeighbor { agent: usize, neighbor: usize },

    #[error("agent {agent}: received coordination value from non-neighbor {other}")]
    UnexpectedNeighbor { agent: usize, other: usize },

    #[error("path: {0}")]
    Path(String),

    #[error("body offset first component must be nonzero (got {0})")]
    SingularOffset(f64),

    #[error("sampling interval {delta} must be positive and at least {lower_bound}")]
    SamplingInterval { delta: f64, lower_bound: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("MPC problem infeasible after iteration budget (max violation {:.3e})", .0.violations.max_violation())]
    Infeasible(Box<InfeasibleSolve>),

    #[error("malformed scenario: {0}")]
    Malformed(String),

    #[error("invalid scenario:\n{}", format_issues(.0))]
    Invalid(Vec<ValidationIssue>),

    #[error("trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
