//! Bandit environment with per-strategy reward distributions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Arm, PolicyError, PolicyState};
use crate::generator::whitespace_tokens;
use crate::reward::Rollout;
use crate::strategy::{parse_action, render_action, StrategyId, STRATEGY_COUNT};

/// Expected reward per strategy used by the convergence experiments.
pub const BENCHMARK_MEANS: [f64; STRATEGY_COUNT] = [0.2, 0.3, 0.5, 0.4, 0.1];

const SYNTHETIC_QUERY: &str = "synthetic query";

/// Strategy rewards are `clamp(mean + sigma * z, 0, 1)` with standard
/// normal `z`. The copy action pays `copy_reward` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    pub means: [f64; STRATEGY_COUNT],
    pub sigma: f64,
    pub copy_reward: Option<f64>,
    pub copy_strategy: StrategyId,
}

impl SyntheticEnv {
    pub fn new(means: [f64; STRATEGY_COUNT], sigma: f64) -> Self {
        Self {
            means,
            sigma,
            copy_reward: None,
            copy_strategy: StrategyId::from_index(3),
        }
    }

    pub fn with_copy(mut self, reward: f64, claimed: StrategyId) -> Self {
        self.copy_reward = Some(reward);
        self.copy_strategy = claimed;
        self
    }

    pub fn query(&self) -> &'static str {
        SYNTHETIC_QUERY
    }

    /// Index of the strategy with the highest mean.
    pub fn best_strategy(&self) -> usize {
        (0..STRATEGY_COUNT).fold(0, |b, i| if self.means[i] > self.means[b] { i } else { b })
    }

    pub fn draw(&self, arm: Arm, rng: &mut ChaCha8Rng) -> f64 {
        match arm {
            Arm::Strategy(s) => {
                let z: f64 = rng.sample(StandardNormal);
                (self.means[s.index()] + self.sigma * z).clamp(0.0, 1.0)
            }
            Arm::Copy => self.copy_reward.unwrap_or(0.0),
        }
    }

    /// Policy-weighted nominal mean reward (clipping ignored).
    pub fn expected_reward(&self, state: &PolicyState) -> f64 {
        state
            .probabilities()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p * match state.arm(i) {
                    Arm::Strategy(s) => self.means[s.index()],
                    Arm::Copy => self.copy_reward.unwrap_or(0.0),
                }
            })
            .sum()
    }

    /// Rollout for `arm` with its reward drawn into `r_orig`.
    pub fn rollout(&self, arm: Arm, rng: &mut ChaCha8Rng) -> Result<Rollout, PolicyError> {
        if arm == Arm::Copy && self.copy_reward.is_none() {
            return Err(PolicyError::InvalidConfig("copy arm sampled but environment has no copy reward".into()));
        }
        let (sid, rewrite) = match arm {
            Arm::Strategy(s) => (s, format!("{SYNTHETIC_QUERY} via strategy {s}")),
            Arm::Copy => (self.copy_strategy, SYNTHETIC_QUERY.to_string()),
        };
        let raw = render_action(sid, &rewrite);
        let mut r = Rollout::new("synthetic", SYNTHETIC_QUERY, parse_action(&raw));
        r.tokens = whitespace_tokens(&raw);
        r.r_orig = Some(self.draw(arm, rng));
        Ok(r)
    }
}
