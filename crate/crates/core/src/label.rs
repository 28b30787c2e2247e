use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Channel identity of a waveform, pulse train or estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    C,
    AB,
    BC,
    CA,
    #[serde(rename = "single")]
    Single,
    /// Output of the three-phase pulse adder; carries no phase identity.
    #[serde(rename = "combined")]
    Combined,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
            Label::C => "C",
            Label::AB => "AB",
            Label::BC => "BC",
            Label::CA => "CA",
            Label::Single => "single",
            Label::Combined => "combined",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown channel label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "A" => Label::A,
            "B" => Label::B,
            "C" => Label::C,
            "AB" => Label::AB,
            "BC" => Label::BC,
            "CA" => Label::CA,
            "single" => Label::Single,
            "combined" => Label::Combined,
            other => return Err(UnknownLabel(other.to_string())),
        })
    }
}

/// Sign of the zero crossing a threshold pulse brackets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingDirection {
    Up,
    Down,
}

impl CrossingDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            CrossingDirection::Up => "up",
            CrossingDirection::Down => "down",
        }
    }
}

impl fmt::Display for CrossingDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrossingDirection {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(CrossingDirection::Up),
            "down" => Ok(CrossingDirection::Down),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

/// Confidence attached to a half-cycle measurement and everything derived
/// from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    Ok,
    /// The pulse was assembled from several pieces, or overlapped another
    /// phase's pulse in the adder output.
    Merged,
    /// Spacing or width inconsistent with a clean half period.
    LowConfidence,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Ok => "ok",
            Quality::Merged => "merged",
            Quality::LowConfidence => "low-confidence",
        }
    }

    /// The worse of two qualities.
    pub fn worst(self, other: Quality) -> Quality {
        self.max(other)
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quality {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(Quality::Ok),
            "merged" => Ok(Quality::Merged),
            "low-confidence" => Ok(Quality::LowConfidence),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}
