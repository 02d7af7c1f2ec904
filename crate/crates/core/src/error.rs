use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use crate::runtime::RoundReport;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    InvalidParameter(String),
    /// A precondition the caller is responsible for does not hold.
    Precondition(String),
    /// A node exceeded the per-edge bit budget; the run was aborted.
    BandwidthViolation(Box<RoundReport>),
    /// The round limit was hit. Carries the partial report.
    Timeout(Box<RoundReport>),
    /// A node addressed a message to a vertex it is not adjacent to.
    InvalidDestination { from: u64, to: u64 },
    /// An operation that needs a connected graph got a disconnected one.
    Disconnected { components: usize },
    /// A distributed result failed its brute-force check.
    OracleFailure(String),
    /// An internal invariant broke; signals a bug or a breached precondition.
    Invariant(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(m) => write!(f, "invalid parameter: {m}"),
            Error::Precondition(m) => write!(f, "precondition failed: {m}"),
            Error::BandwidthViolation(r) => {
                write!(f, "bandwidth violation after {} rounds", r.rounds_used)?;
                if let Some(v) = r.violations.first() {
                    write!(f, ": {v}")?;
                }
                Ok(())
            }
            Error::Timeout(r) => write!(f, "round limit reached after {} rounds", r.rounds_used),
            Error::InvalidDestination { from, to } => {
                write!(f, "node {from} sent to non-neighbor {to}")
            }
            Error::Disconnected { components } => {
                write!(f, "graph is disconnected ({components} components)")
            }
            Error::OracleFailure(m) => write!(f, "oracle check failed: {m}"),
            Error::Invariant(m) => write!(f, "invariant violated: {m}"),
        }
    }
}

impl core::error::Error for Error {}
