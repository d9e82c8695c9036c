use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// The constraint that made a problem infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// No blocklength up to the configured maximum meets the error target.
    MaxBlocklength,
    /// A frame cannot carry the packet at the error target, even segmented.
    Reliability,
    /// The frames do not fit into the period.
    Period,
    /// A frame carries no payload at all at the error target.
    ZeroPayload,
    /// A user with traffic holds no subchannel.
    Resources,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Constraint::MaxBlocklength => "max-blocklength",
            Constraint::Reliability => "reliability",
            Constraint::Period => "period",
            Constraint::ZeroPayload => "zero-payload",
            Constraint::Resources => "resources",
        };
        f.write_str(name)
    }
}

/// Infeasibility certificate: the binding constraint and a human readable detail.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("infeasible ({constraint}): {detail}")]
pub struct Infeasibility {
    pub constraint: Constraint,
    pub detail: String,
}

impl Infeasibility {
    pub fn new(constraint: Constraint, detail: impl Into<String>) -> Self {
        Infeasibility {
            constraint,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("scenario line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Infeasible(#[from] Infeasibility),

    #[error(
        "scheduling conflict at t = {time_s} s: subchannel {subchannel} requested for user {user} is held by user {holder}"
    )]
    SchedulingConflict {
        time_s: f64,
        subchannel: usize,
        user: usize,
        holder: usize,
    },

    #[error("search budget exceeded: {required} evaluations required, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
