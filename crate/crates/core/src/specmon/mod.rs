//! Trace predicates and monitor automata.
//!
//! Two routes are provided for most properties:
//!
//! * trace-level predicates in [`predicates`] quantify directly over the
//!   indices of a recorded [`Trace`](crate::machine::Trace), the way the
//!   properties are stated (`∃ q ∈ [start, end] ...`);
//! * the incremental [`Suite`] folds the same properties event by event so
//!   the explorer can judge every edge and fold monitor state into its
//!   visited-state digest.
//!
//! Tests cross-check the two on explored traces.

mod gateway;
mod observe;
pub mod predicates;
mod suite;

pub use gateway::{mutex_violations, GatewayState, GatewayViolationKind};
pub use observe::{acs_operands, current_instr, live_locals, write_effect, AcsOperands, WriteEffect};
pub use predicates::*;
pub use suite::{Findings, Suite, SuiteState};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorKind {
    MemoryChange,
    Increment,
    Acs,
    Gateway,
    Mutex,
    Fdepth,
    Noninterference,
    Active,
    Fault,
}

impl MonitorKind {
    pub const ALL: [MonitorKind; 9] = [
        MonitorKind::MemoryChange,
        MonitorKind::Increment,
        MonitorKind::Acs,
        MonitorKind::Gateway,
        MonitorKind::Mutex,
        MonitorKind::Fdepth,
        MonitorKind::Noninterference,
        MonitorKind::Active,
        MonitorKind::Fault,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MonitorKind::MemoryChange => "memory-change",
            MonitorKind::Increment => "increment",
            MonitorKind::Acs => "acs",
            MonitorKind::Gateway => "gateway",
            MonitorKind::Mutex => "mutex",
            MonitorKind::Fdepth => "fdepth",
            MonitorKind::Noninterference => "noninterference",
            MonitorKind::Active => "active",
            MonitorKind::Fault => "fault",
        }
    }
}

impl fmt::Display for MonitorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MonitorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown monitor `{s}`"))
    }
}

/// Which monitors report findings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorSet(BTreeSet<MonitorKind>);

impl MonitorSet {
    pub fn all() -> Self {
        MonitorSet(MonitorKind::ALL.into_iter().collect())
    }

    pub fn none() -> Self {
        MonitorSet(BTreeSet::new())
    }

    pub fn only(kinds: &[MonitorKind]) -> Self {
        MonitorSet(kinds.iter().copied().collect())
    }

    /// Comma-separated monitor names, or `all`.
    pub fn parse_list(s: &str) -> Result<Self, String> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        s.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>().map(MonitorSet)
    }

    pub fn contains(&self, k: MonitorKind) -> bool {
        self.0.contains(&k)
    }

    pub fn iter(&self) -> impl Iterator<Item = MonitorKind> + '_ {
        self.0.iter().copied()
    }
}

/// A failed property. Messages never carry trace indices, so the same
/// failure reached along different paths compares equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub monitor: MonitorKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.monitor, self.message)
    }
}

/// Something noteworthy that is not a failure, e.g. an acs that failed
/// although the contents never differed from the expected value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation {
    pub kind: String,
    pub message: String,
}

pub const OBS_ACS_BENIGN_FAILURE: &str = "acs-benign-failure";
pub const OBS_CALL_INTERFERED: &str = "call-interfered";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SpecmonError {
    #[error("index {index} out of range for trace of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_list_parsing() {
        let s = MonitorSet::parse_list("acs, gateway").unwrap();
        assert!(s.contains(MonitorKind::Acs) && s.contains(MonitorKind::Gateway));
        assert!(!s.contains(MonitorKind::Mutex));
        assert_eq!(MonitorSet::parse_list("all").unwrap(), MonitorSet::all());
        assert!(MonitorSet::parse_list("acs,bogus").is_err());
        for k in MonitorKind::ALL {
            assert_eq!(k.name().parse::<MonitorKind>(), Ok(k));
        }
    }
}
