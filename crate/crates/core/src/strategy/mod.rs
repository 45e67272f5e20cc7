//! The five expert rewriting strategies, strategy-guided prompts, and the
//! structured `{strategy_id, rewritten_query}` action format.

mod action;
mod normalize;
mod prompt;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{parse_action, render_action, Action, ParseFailure, ParseFailureKind};
pub use normalize::{is_unmodified, modification_rate, normalize, unmodified_rate, NormalizationRules};
pub use prompt::{build_prompt, Prompt, PromptStyle};

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("strategy id {0} is not in 1..=5")]
    BadStrategyId(i64),
    #[error("query is empty")]
    EmptyQuery,
    #[error("list is empty")]
    EmptyList,
    #[error("invalid strategy catalog: {0}")]
    Catalog(String),
}

pub const STRATEGY_COUNT: usize = 5;

/// Strategy identifier in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct StrategyId(u8);

impl StrategyId {
    pub fn new(id: i64) -> Result<Self, StrategyError> {
        if (1..=STRATEGY_COUNT as i64).contains(&id) {
            Ok(Self(id as u8))
        } else {
            Err(StrategyError::BadStrategyId(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position in the catalog.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < STRATEGY_COUNT, "strategy index {i} out of range");
        Self(i as u8 + 1)
    }

    pub fn all() -> impl Iterator<Item = StrategyId> {
        (0..STRATEGY_COUNT).map(Self::from_index)
    }
}

impl TryFrom<i64> for StrategyId {
    type Error = StrategyError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<StrategyId> for i64 {
    fn from(s: StrategyId) -> i64 {
        i64::from(s.0)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: StrategyId,
    pub name: String,
    pub targeted_challenge: String,
    pub primary_use_case: String,
    pub definition: String,
    pub example: String,
    /// True when the definition/example wording is a reconstruction rather
    /// than a verbatim transcription.
    #[serde(default)]
    pub reconstructed: bool,
}

impl Strategy {
    /// Definition plus illustrative example, as placed in the prompt.
    pub fn prompt_fragment(&self) -> String {
        format!("{}\nExample: {}", self.definition, self.example)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyCatalog {
    pub version: u32,
    pub strategies: Vec<Strategy>,
}

const BUNDLED_CATALOG: &str = include_str!("../../data/strategies.json");

const EXPECTED_NAMES: [&str; STRATEGY_COUNT] = [
    "Semantic Expansion",
    "Entity Disambiguation",
    "Sub-question Decomposition",
    "Concise Rewriting",
    "Neutralized Claim Reformulation",
];

impl StrategyCatalog {
    pub fn from_json(json: &str) -> Result<Self, StrategyError> {
        let catalog: Self = serde_json::from_str(json).map_err(|e| StrategyError::Catalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StrategyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| StrategyError::Catalog(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    /// Ids must be exactly 1..=5 in order, with the canonical names.
    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.strategies.len() != STRATEGY_COUNT {
            return Err(StrategyError::Catalog(format!(
                "expected {STRATEGY_COUNT} strategies, found {}",
                self.strategies.len()
            )));
        }
        for (i, (s, name)) in self.strategies.iter().zip(EXPECTED_NAMES).enumerate() {
            if s.id.index() != i {
                return Err(StrategyError::Catalog(format!("strategy at position {i} has id {}", s.id)));
            }
            if s.name != name {
                return Err(StrategyError::Catalog(format!("strategy {} is named {:?}, expected {name:?}", s.id, s.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: StrategyId) -> &Strategy {
        &self.strategies[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Strategy> {
        self.strategies.iter()
    }
}

impl Default for StrategyCatalog {
    fn default() -> Self {
        Self::from_json(BUNDLED_CATALOG).expect("bundled strategy catalog is valid")
    }
}

/// The bundled five-strategy catalog, in id order.
pub fn catalog() -> Vec<Strategy> {
    StrategyCatalog::default().strategies
}
