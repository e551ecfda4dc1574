//! Shared study-design labels.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Listening condition a story was presented under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clear,
    Babble,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clear => write!(f, "clear"),
            Condition::Babble => write!(f, "babble"),
        }
    }
}

/// Speaker group a participant belongs to.
///
/// The group is a binary analysis label; the participant's actual language
/// is carried separately as a free-form tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    English,
    NonEnglish,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::English => write!(f, "english"),
            Group::NonEnglish => write!(f, "non_english"),
        }
    }
}
