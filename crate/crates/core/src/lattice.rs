//! Five-level integrity lattice.
//!
//! Trust levels form a total order. Data derived from several sources takes
//! the minimum of their levels (conservative join).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("empty-source-set: conservative join needs at least one trust level")]
    EmptySourceSet,
    #[error("unknown trust level `{0}`")]
    UnknownLevel(String),
}

/// Integrity level of a data source, lowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrustLevel {
    ToolDesc,
    ToolUntrusted,
    ToolTrusted,
    UserInput,
    SysInstr,
}

impl TrustLevel {
    pub const ALL: [TrustLevel; 5] = [
        TrustLevel::ToolDesc,
        TrustLevel::ToolUntrusted,
        TrustLevel::ToolTrusted,
        TrustLevel::UserInput,
        TrustLevel::SysInstr,
    ];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn from_rank(rank: u8) -> Option<Self> {
        Self::ALL.get(usize::from(rank)).copied()
    }

    /// Canonical external name, as used in config files and audit records.
    pub fn name(self) -> &'static str {
        match self {
            TrustLevel::ToolDesc => "ToolDesc",
            TrustLevel::ToolUntrusted => "ToolUntrusted",
            TrustLevel::ToolTrusted => "ToolTrusted",
            TrustLevel::UserInput => "UserInput",
            TrustLevel::SysInstr => "SysInstr",
        }
    }

    pub fn compare(self, other: TrustLevel) -> Ordering {
        self.rank().cmp(&other.rank())
    }

    pub fn join(self, other: TrustLevel) -> TrustLevel {
        if self.compare(other) == Ordering::Greater {
            other
        } else {
            self
        }
    }
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrustLevel {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|level| level.name() == s)
            .ok_or_else(|| LatticeError::UnknownLevel(s.to_string()))
    }
}

/// Minimum of a nonempty set of levels.
///
/// An empty set is a caller bug: the "no data ancestors" default belongs to
/// the provenance graph, not here.
pub fn conservative_join<I>(levels: I) -> Result<TrustLevel, LatticeError>
where
    I: IntoIterator<Item = TrustLevel>,
{
    levels
        .into_iter()
        .reduce(TrustLevel::join)
        .ok_or(LatticeError::EmptySourceSet)
}
