//! Desk-scale softmax policy over the strategy action space, with an
//! optional explicit copy action.

mod eval;
mod synthetic;
mod train;

use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::GeneratorError;
use crate::retrieval::RetrievalError;
use crate::reward::RewardError;
use crate::strategy::{StrategyError, StrategyId, STRATEGY_COUNT};

pub use eval::{evaluate, Candidate, CandidateSource, EvalMetrics, EvalMode, QueryEval};
pub use synthetic::{SyntheticEnv, BENCHMARK_MEANS};
pub use train::{
    sample_rollouts, train, train_step, train_with, RetrievalTrainingEnv, StepOutcome, StepRecord, TraceRecord,
    TrainingEnv, TrainingTrace,
};

/// Bound on |theta| after every update.
pub const DEFAULT_THETA_CAP: f64 = 50.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("rollouts per query must be at least 2, got {0}")]
    TooFewRollouts(usize),
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("environment has no queries")]
    NoQueries,
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

/// One member of the action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Strategy(StrategyId),
    /// Return the original query unchanged.
    Copy,
}

impl Arm {
    pub fn label(self) -> String {
        match self {
            Arm::Strategy(s) => s.to_string(),
            Arm::Copy => "copy".to_string(),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub learning_rate: f64,
    pub rollouts_per_query: usize,
    pub steps: usize,
    /// Emit a trace record every this many steps (and at the last step).
    pub log_every: usize,
    pub enable_copy: bool,
    /// Strategy id the copy action claims in its output, which is what
    /// SCS groups it under.
    pub copy_strategy_id: u8,
    pub theta_cap: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            rollouts_per_query: 16,
            steps: 500,
            log_every: 30,
            enable_copy: false,
            copy_strategy_id: 4,
            theta_cap: DEFAULT_THETA_CAP,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.rollouts_per_query < 2 {
            return Err(PolicyError::TooFewRollouts(self.rollouts_per_query));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(PolicyError::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.theta_cap.is_finite() && self.theta_cap > 0.0) {
            return Err(PolicyError::InvalidConfig(format!("theta_cap must be > 0, got {}", self.theta_cap)));
        }
        if self.log_every == 0 {
            return Err(PolicyError::InvalidConfig("log_every must be >= 1".into()));
        }
        StrategyId::new(i64::from(self.copy_strategy_id))?;
        Ok(())
    }

    pub fn copy_strategy(&self) -> StrategyId {
        StrategyId::new(i64::from(self.copy_strategy_id)).unwrap_or_else(|_| StrategyId::from_index(3))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    /// One logit per arm: strategies 1..=5, then copy when enabled.
    pub theta: Vec<f64>,
    pub learning_rate: f64,
    pub rollouts_per_query: usize,
    pub rng_seed: u64,
    pub theta_cap: f64,
}

pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl PolicyState {
    /// Uniform policy.
    pub fn new(config: &PolicyConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let arms = STRATEGY_COUNT + usize::from(config.enable_copy);
        Ok(Self {
            theta: vec![0.0; arms],
            learning_rate: config.learning_rate,
            rollouts_per_query: config.rollouts_per_query,
            rng_seed: config.seed,
            theta_cap: config.theta_cap,
        })
    }

    pub fn copy_enabled(&self) -> bool {
        self.theta.len() > STRATEGY_COUNT
    }

    pub fn arm_count(&self) -> usize {
        self.theta.len()
    }

    pub fn arm(&self, index: usize) -> Arm {
        if index < STRATEGY_COUNT {
            Arm::Strategy(StrategyId::from_index(index))
        } else {
            Arm::Copy
        }
    }

    pub fn arm_index(&self, arm: Arm) -> Option<usize> {
        match arm {
            Arm::Strategy(s) => Some(s.index()),
            Arm::Copy if self.copy_enabled() => Some(STRATEGY_COUNT),
            Arm::Copy => None,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.theta)
    }

    pub fn probability(&self, arm: Arm) -> f64 {
        self.arm_index(arm).map_or(0.0, |i| self.probabilities()[i])
    }

    /// Most probable arm; ties go to the lowest index.
    pub fn greedy_arm(&self) -> Arm {
        let probs = self.probabilities();
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
        self.arm(best)
    }

    /// `n` arm indices drawn i.i.d. from the current policy.
    pub fn sample_arms<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        let dist = WeightedIndex::new(self.probabilities()).expect("softmax weights are positive and finite");
        (0..n).map(|_| dist.sample(rng)).collect()
    }

    /// Gradient of `Σ adv_i · log π(a_i)` with respect to theta.
    pub fn gradient(&self, samples: &[(usize, f64)]) -> Vec<f64> {
        let probs = self.probabilities();
        let mut grad = vec![0.0; self.theta.len()];
        for &(arm, adv) in samples {
            for (b, g) in grad.iter_mut().enumerate() {
                let indicator = if b == arm { 1.0 } else { 0.0 };
                *g += adv * (indicator - probs[b]);
            }
        }
        grad
    }

    /// One ascent step on the surrogate. Leaves `self` untouched.
    pub fn update(&self, samples: &[(usize, f64)]) -> PolicyState {
        let grad = self.gradient(samples);
        let mut next = self.clone();
        for (t, g) in next.theta.iter_mut().zip(grad) {
            *t = (*t + self.learning_rate * g).clamp(-self.theta_cap, self.theta_cap);
        }
        next
    }
}

/// `Σ adv_i · log π_theta(a_i)`, the objective whose gradient `update` follows.
pub fn surrogate(theta: &[f64], samples: &[(usize, f64)]) -> f64 {
    let probs = softmax(theta);
    samples.iter().map(|&(a, adv)| adv * probs[a].ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(copy: bool) -> PolicyState {
        PolicyState::new(&PolicyConfig { enable_copy: copy, ..PolicyConfig::default() }).unwrap()
    }

    #[test]
    fn rollout_count_precondition() {
        let cfg = PolicyConfig { rollouts_per_query: 1, ..PolicyConfig::default() };
        assert!(matches!(PolicyState::new(&cfg), Err(PolicyError::TooFewRollouts(1))));
        let cfg = PolicyConfig { rollouts_per_query: 2, ..PolicyConfig::default() };
        assert!(PolicyState::new(&cfg).is_ok());
    }

    #[test]
    fn uniform_sampling_is_binomial() {
        let s = state(false);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let mut counts = [0usize; 5];
        for a in s.sample_arms(&mut rng, n) {
            counts[a] += 1;
        }
        let p = 0.2;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn saturated_logit_dominates() {
        let mut s = state(false);
        s.theta[2] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hits = s.sample_arms(&mut rng, 1000).iter().filter(|&&a| a == 2).count();
        assert!(hits >= 999);
    }

    #[test]
    fn zero_advantage_leaves_theta() {
        let s = state(true);
        let next = s.update(&[(0, 0.0), (5, 0.0), (3, 0.0)]);
        assert_eq!(next.theta, s.theta);
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let mut s = state(false);
        s.theta = vec![0.3, -0.2, 0.1, 0.0, 0.5];
        let next = s.update(&[(1, 1.0)]);
        assert!(next.probabilities()[1] > s.probabilities()[1]);
        assert_eq!(s.theta, vec![0.3, -0.2, 0.1, 0.0, 0.5]);
    }

    #[test]
    fn update_respects_cap() {
        let mut s = state(false);
        s.learning_rate = 1e6;
        let next = s.update(&[(0, 1.0), (1, -1.0)]);
        assert!(next.theta.iter().all(|t| t.abs() <= s.theta_cap));
    }

    #[test]
    fn greedy_ties_take_lowest() {
        let s = state(true);
        assert_eq!(s.greedy_arm(), Arm::Strategy(StrategyId::from_index(0)));
        let mut s = s;
        s.theta[5] = 1.0;
        assert_eq!(s.greedy_arm(), Arm::Copy);
        assert_eq!(s.arm(5).label(), "copy");
    }
}
