//! Isolation scenario labels shared by traces, analysis and the OS layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioLabel {
    NoLoad,
    Load,
    LoadFifo,
    LoadShield,
    LoadShieldFifo,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 5] = [
        ScenarioLabel::NoLoad,
        ScenarioLabel::Load,
        ScenarioLabel::LoadFifo,
        ScenarioLabel::LoadShield,
        ScenarioLabel::LoadShieldFifo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioLabel::NoLoad => "no-load",
            ScenarioLabel::Load => "load",
            ScenarioLabel::LoadFifo => "load-fifo",
            ScenarioLabel::LoadShield => "load-shield",
            ScenarioLabel::LoadShieldFifo => "load-shield-fifo",
        }
    }

    /// Competing tenants run on the other CPUs.
    pub fn has_tenants(self) -> bool {
        !matches!(self, ScenarioLabel::NoLoad)
    }

    pub fn fifo(self) -> bool {
        matches!(self, ScenarioLabel::LoadFifo | ScenarioLabel::LoadShieldFifo)
    }

    pub fn shield(self) -> bool {
        matches!(self, ScenarioLabel::LoadShield | ScenarioLabel::LoadShieldFifo)
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['_', '/'], "-");
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == norm)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected one of no-load, load, load-fifo, load-shield, load-shield-fifo)"))
    }
}
