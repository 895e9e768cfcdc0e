use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// ADME topic of a pharmacokinetics paragraph.
///
/// The declaration order is the fixed reporting order and also the class
/// index used by every classifier (argmax ties resolve to the lowest index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Topic {
    Absorption,
    Distribution,
    Metabolism,
    Excretion,
    Other,
}

impl Topic {
    pub const COUNT: usize = 5;
    pub const ALL: [Topic; 5] = [
        Topic::Absorption,
        Topic::Distribution,
        Topic::Metabolism,
        Topic::Excretion,
        Topic::Other,
    ];
    pub const ADME: [Topic; 4] = [
        Topic::Absorption,
        Topic::Distribution,
        Topic::Metabolism,
        Topic::Excretion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Topic> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Absorption => "Absorption",
            Topic::Distribution => "Distribution",
            Topic::Metabolism => "Metabolism",
            Topic::Excretion => "Excretion",
            Topic::Other => "Other",
        }
    }

    pub fn is_adme(self) -> bool {
        self != Topic::Other
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses the canonical topic names only (case-insensitive). Aliases such as
/// "Elimination" are rejected; mapping raw titles is the annotator's job.
impl FromStr for Topic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Topic::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(&lower))
            .ok_or_else(|| Error::Validation {
                line: None,
                message: format!("unknown topic {s:?}"),
            })
    }
}
