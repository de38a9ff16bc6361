//! Entity classes shared by the graph, the templates, training records and scoring.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Attribute classes a prompt can mention.
///
/// Declared in alphabetical order so that `BTreeMap<EntityClass, _>` iterates
/// in the same order as the serialized (sorted) JSON keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityClass {
    Actor,
    Director,
    Genre,
    Plot,
    Theme,
    Title,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown entity class `{0}` (expected one of actor, director, genre, plot, theme, title)")]
pub struct UnknownEntityClass(pub String);

impl EntityClass {
    pub const ALL: [EntityClass; 6] = [
        EntityClass::Actor,
        EntityClass::Director,
        EntityClass::Genre,
        EntityClass::Plot,
        EntityClass::Theme,
        EntityClass::Title,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Actor => "actor",
            EntityClass::Director => "director",
            EntityClass::Genre => "genre",
            EntityClass::Plot => "plot",
            EntityClass::Theme => "theme",
            EntityClass::Title => "title",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = UnknownEntityClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownEntityClass(s.to_owned()))
    }
}

/// Routing label: recommendation-seeking or informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Rec,
    NonRec,
}

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Rec => "rec",
            Intent::NonRec => "non_rec",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rec" => Ok(Intent::Rec),
            "non_rec" => Ok(Intent::NonRec),
            _ => Err(format!("unknown intent `{s}` (expected rec or non_rec)")),
        }
    }
}

/// Class → surface values, sorted by class.
pub type EntityMap = std::collections::BTreeMap<EntityClass, Vec<String>>;
