use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Hazard scenario shown to the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HazardType {
    /// Electric leakage.
    EL,
    /// Lack of edge protection.
    LEP,
    /// Structural instability.
    SI,
}

impl HazardType {
    pub const ALL: [HazardType; 3] = [HazardType::EL, HazardType::LEP, HazardType::SI];

    pub fn as_str(self) -> &'static str {
        match self {
            HazardType::EL => "EL",
            HazardType::LEP => "LEP",
            HazardType::SI => "SI",
        }
    }

    pub fn index(self) -> usize {
        match self {
            HazardType::EL => 0,
            HazardType::LEP => 1,
            HazardType::SI => 2,
        }
    }
}

impl fmt::Display for HazardType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HazardType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "EL" => Ok(HazardType::EL),
            "LEP" => Ok(HazardType::LEP),
            "SI" => Ok(HazardType::SI),
            other => Err(Error::Parse(format!("unknown hazard type `{other}`"))),
        }
    }
}

/// Operator hazard-recognition performance level.
///
/// The declaration order is the class index used by the classifier
/// (High = 0, Medium = 1, Low = 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerformanceLevel {
    High,
    Medium,
    Low,
}

impl PerformanceLevel {
    pub const ALL: [PerformanceLevel; 3] = [
        PerformanceLevel::High,
        PerformanceLevel::Medium,
        PerformanceLevel::Low,
    ];

    pub fn index(self) -> usize {
        match self {
            PerformanceLevel::High => 0,
            PerformanceLevel::Medium => 1,
            PerformanceLevel::Low => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PerformanceLevel::High => "High",
            PerformanceLevel::Medium => "Medium",
            PerformanceLevel::Low => "Low",
        }
    }

    /// Rank from worst (0 = Low) to best (2 = High).
    pub fn rank(self) -> usize {
        2 - self.index()
    }
}

impl fmt::Display for PerformanceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerformanceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(PerformanceLevel::High),
            "medium" => Ok(PerformanceLevel::Medium),
            "low" => Ok(PerformanceLevel::Low),
            other => Err(Error::Parse(format!("unknown performance level `{other}`"))),
        }
    }
}
