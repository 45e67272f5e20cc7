//! Reward shaping for rollout groups.
//!
//! Raw NDCG@10 scores (`r_orig`) are turned into learning signals in three
//! stages, always in this order:
//!
//! 1. shaping into `r_base`: passthrough (Direct), strategic credit shaping
//!    (each reward divided by the competition rank of its strategy's mean
//!    reward within the group), or contrastive shaping (reward minus a group
//!    baseline, median by default);
//! 2. the exploration penalty: `r_final = r_base - p` when the rewrite is
//!    identical to the original query after normalization;
//! 3. group-relative advantages `(r - mean) / (std_pop + eps)`.
//!
//! Rollouts whose output failed to parse receive `parse_failure_reward`, take
//! no part in strategy means or baselines, but do enter the advantage step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{RetrievalEnv, RetrievalError};
use crate::strategy::{is_unmodified, Action, NormalizationRules, ParseFailure, StrategyId};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("every rollout in the batch failed to parse")]
    AllParseFailed,
    #[error("batch mixes query ids `{0}` and `{1}`")]
    MixedGroup(String, String),
    #[error("rollout {0} is parsed but has no r_orig")]
    MissingScore(usize),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Direct,
    Scs,
    Crs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    Median,
    Mean,
    LeaveOneOutMean,
}

pub const DEFAULT_PENALTY: f64 = 0.05;
pub const DEFAULT_EPSILON_STD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub baseline: BaselineKind,
    pub penalty_p: f64,
    pub parse_failure_reward: f64,
    pub epsilon_std: f64,
    pub normalization: NormalizationRules,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mode: RewardMode::Direct,
            baseline: BaselineKind::Median,
            penalty_p: DEFAULT_PENALTY,
            parse_failure_reward: 0.0,
            epsilon_std: DEFAULT_EPSILON_STD,
            normalization: NormalizationRules::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.penalty_p.is_finite() && self.penalty_p >= 0.0) {
            return Err(RewardError::InvalidConfig(format!("penalty_p must be >= 0, got {}", self.penalty_p)));
        }
        if !(self.epsilon_std > 0.0 && self.epsilon_std <= 1e-3) {
            return Err(RewardError::InvalidConfig(format!(
                "epsilon_std must be in (0, 1e-3], got {}",
                self.epsilon_std
            )));
        }
        if !self.parse_failure_reward.is_finite() {
            return Err(RewardError::InvalidConfig("parse_failure_reward must be finite".into()));
        }
        Ok(())
    }
}

/// One sampled output for a query and the rewards derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub query_id: String,
    pub q_orig: String,
    pub action: Result<Action, ParseFailure>,
    /// Set iff the action parsed.
    pub r_orig: Option<f64>,
    pub r_base: f64,
    pub r_final: f64,
    pub advantage: f64,
    /// Generated tokens for this output.
    pub tokens: usize,
}

impl Rollout {
    pub fn new(query_id: impl Into<String>, q_orig: impl Into<String>, action: Result<Action, ParseFailure>) -> Self {
        Self {
            query_id: query_id.into(),
            q_orig: q_orig.into(),
            action,
            r_orig: None,
            r_base: 0.0,
            r_final: 0.0,
            advantage: 0.0,
            tokens: 0,
        }
    }

    pub fn parsed(&self) -> Option<&Action> {
        self.action.as_ref().ok()
    }

    pub fn strategy(&self) -> Option<StrategyId> {
        self.parsed().map(|a| a.strategy_id)
    }

    pub fn rewrite(&self) -> Option<&str> {
        self.parsed().map(|a| a.rewritten_query.as_str())
    }

    /// `(strategy, r_orig)` for parsed, scored rollouts.
    fn shaping_input(&self) -> Option<(StrategyId, f64)> {
        Some((self.strategy()?, self.r_orig?))
    }
}

/// Mean initial reward and competition rank of one strategy within a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyRank {
    pub strategy_id: StrategyId,
    pub mean_r_orig: f64,
    pub count: usize,
    /// `1 + #strategies with a strictly greater mean`.
    pub rank: usize,
}

/// Groups `(strategy, reward)` samples, averages per strategy (summing in
/// input order) and assigns competition ranks. Output is ordered by id.
pub fn strategy_ranks(samples: &[(StrategyId, f64)]) -> Vec<StrategyRank> {
    let mut sums: BTreeMap<StrategyId, (f64, usize)> = BTreeMap::new();
    for &(s, r) in samples {
        let e = sums.entry(s).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    let means: Vec<(StrategyId, f64, usize)> = sums.into_iter().map(|(s, (sum, n))| (s, sum / n as f64, n)).collect();
    means
        .iter()
        .map(|&(s, mean, count)| StrategyRank {
            strategy_id: s,
            mean_r_orig: mean,
            count,
            rank: 1 + means.iter().filter(|&&(_, m, _)| m > mean).count(),
        })
        .collect()
}

/// Strategic credit shaping over raw samples; `None` marks a parse failure.
pub fn scs_values(samples: &[Option<(StrategyId, f64)>], parse_failure_reward: f64) -> Result<Vec<f64>, RewardError> {
    if samples.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let parsed: Vec<(StrategyId, f64)> = samples.iter().flatten().copied().collect();
    if parsed.is_empty() {
        return Err(RewardError::AllParseFailed);
    }
    let ranks: BTreeMap<StrategyId, usize> = strategy_ranks(&parsed)
        .into_iter()
        .map(|r| (r.strategy_id, r.rank))
        .collect();
    Ok(samples
        .iter()
        .map(|s| match s {
            Some((sid, r)) => r / ranks[sid] as f64,
            None => parse_failure_reward,
        })
        .collect())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Group baseline over parsed rewards. For `LeaveOneOutMean` this is the
/// full-group mean; per-rollout baselines come from [`crs_values`].
pub fn baseline(values: &[f64], kind: BaselineKind) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(match kind {
        BaselineKind::Median => median(values),
        BaselineKind::Mean | BaselineKind::LeaveOneOutMean => mean(values),
    })
}

/// Contrastive reward shaping over raw samples; `None` marks a parse failure.
///
/// With `LeaveOneOutMean`, each rollout's baseline is the mean of the other
/// parsed rewards; a lone parsed rollout is its own baseline.
pub fn crs_values(samples: &[Option<f64>], kind: BaselineKind, parse_failure_reward: f64) -> Result<Vec<f64>, RewardError> {
    if samples.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let parsed: Vec<f64> = samples.iter().flatten().copied().collect();
    if parsed.is_empty() {
        return Err(RewardError::AllParseFailed);
    }
    let n = parsed.len();
    let total: f64 = parsed.iter().sum();
    let shared = baseline(&parsed, kind).expect("non-empty");
    Ok(samples
        .iter()
        .map(|s| match *s {
            None => parse_failure_reward,
            Some(r) => match kind {
                BaselineKind::LeaveOneOutMean if n > 1 => r - (total - r) / (n - 1) as f64,
                BaselineKind::LeaveOneOutMean => 0.0,
                _ => r - shared,
            },
        })
        .collect())
}

fn check_group(batch: &[Rollout]) -> Result<(), RewardError> {
    let first = batch.first().ok_or(RewardError::EmptyBatch)?;
    if let Some(other) = batch.iter().find(|r| r.query_id != first.query_id) {
        return Err(RewardError::MixedGroup(first.query_id.clone(), other.query_id.clone()));
    }
    for (i, r) in batch.iter().enumerate() {
        if r.parsed().is_some() && r.r_orig.is_none() {
            return Err(RewardError::MissingScore(i));
        }
    }
    Ok(())
}

/// Strategic credit shaping for one query's rollout group.
pub fn shape_scs(batch: &[Rollout], parse_failure_reward: f64) -> Result<Vec<f64>, RewardError> {
    check_group(batch)?;
    let samples: Vec<_> = batch.iter().map(Rollout::shaping_input).collect();
    scs_values(&samples, parse_failure_reward)
}

/// Contrastive reward shaping for one query's rollout group.
pub fn shape_crs(batch: &[Rollout], kind: BaselineKind, parse_failure_reward: f64) -> Result<Vec<f64>, RewardError> {
    check_group(batch)?;
    let samples: Vec<_> = batch
        .iter()
        .map(|r| r.shaping_input().map(|(_, v)| v))
        .collect();
    crs_values(&samples, kind, parse_failure_reward)
}

/// `r_base - p` when the rewrite is unmodified, otherwise `r_base`.
pub fn apply_penalty(r_base: f64, q_orig: &str, rewrite: &str, p: f64, rules: &NormalizationRules) -> f64 {
    if is_unmodified(q_orig, rewrite, rules) {
        r_base - p
    } else {
        r_base
    }
}

/// Group-relative advantages with population std. A constant group gives
/// exactly zero advantages.
pub fn group_advantages(rewards: &[f64], epsilon_std: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon_std;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Fills `r_base`, `r_final` and `advantage` for a group whose parsed
/// rollouts already carry `r_orig`.
pub fn finalize_rewards(mut batch: Vec<Rollout>, config: &RewardConfig) -> Result<Vec<Rollout>, RewardError> {
    check_group(&batch)?;
    let any_parsed = batch.iter().any(|r| r.parsed().is_some());
    let base: Vec<f64> = if !any_parsed {
        vec![config.parse_failure_reward; batch.len()]
    } else {
        match config.mode {
            RewardMode::Direct => batch
                .iter()
                .map(|r| r.r_orig.unwrap_or(config.parse_failure_reward))
                .collect(),
            RewardMode::Scs => shape_scs(&batch, config.parse_failure_reward)?,
            RewardMode::Crs => shape_crs(&batch, config.baseline, config.parse_failure_reward)?,
        }
    };
    for (r, b) in batch.iter_mut().zip(base) {
        r.r_base = b;
        r.r_final = match r.rewrite() {
            Some(rewrite) => apply_penalty(b, &r.q_orig, rewrite, config.penalty_p, &config.normalization),
            None => b,
        };
    }
    let finals: Vec<f64> = batch.iter().map(|r| r.r_final).collect();
    for (r, a) in batch.iter_mut().zip(group_advantages(&finals, config.epsilon_std)?) {
        r.advantage = a;
    }
    Ok(batch)
}

/// Scores every parsed rollout against the retrieval environment, then
/// shapes, penalizes and normalizes the group.
pub fn compute_rewards(mut batch: Vec<Rollout>, env: &RetrievalEnv, config: &RewardConfig) -> Result<Vec<Rollout>, RewardError> {
    for r in batch.iter_mut() {
        r.r_orig = match r.rewrite() {
            Some(rewrite) => Some(env.score_query(&r.query_id, rewrite)?),
            None => None,
        };
    }
    finalize_rewards(batch, config)
}
