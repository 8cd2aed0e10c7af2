//! Best-MAUVE hyperparameters per GPT-2 size, as published.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::truncation::{RuleKind, TruncationRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelSize {
    Small,
    Med,
    Large,
    Xl,
}

impl ModelSize {
    pub const ALL: [ModelSize; 4] = [ModelSize::Small, ModelSize::Med, ModelSize::Large, ModelSize::Xl];

    fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelSize::Small => "small",
            ModelSize::Med => "med",
            ModelSize::Large => "large",
            ModelSize::Xl => "xl",
        }
    }
}

impl fmt::Display for ModelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" | "sm" => Ok(ModelSize::Small),
            "med" | "medium" => Ok(ModelSize::Med),
            "large" | "lg" => Ok(ModelSize::Large),
            "xl" => Ok(ModelSize::Xl),
            other => Err(Error::NoPreset(format!("unknown model size {other:?}"))),
        }
    }
}

/// Columns: small, med, large, xl.
pub const PRESET_TABLE: [(RuleKind, [f64; 4]); 4] = [
    (RuleKind::TopP, [0.9, 0.89, 0.95, 0.95]),
    (RuleKind::Typical, [0.9, 0.9, 0.92, 0.92]),
    (RuleKind::Epsilon, [0.0006, 0.0009, 0.0003, 0.0003]),
    (RuleKind::Eta, [0.002, 0.0006, 0.0006, 0.0003]),
];

/// Published rule for `size` and `kind`. Top-k has no entry.
pub fn preset(size: ModelSize, kind: RuleKind) -> Result<TruncationRule> {
    let (_, row) = PRESET_TABLE
        .iter()
        .find(|(k, _)| *k == kind)
        .ok_or_else(|| Error::NoPreset(format!("{kind} has no published preset")))?;
    kind.with_param(row[size.column()])
}
