use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::QueryEval;
use super::{Arm, PolicyConfig, PolicyError, PolicyState, SyntheticEnv};
use crate::corpus::Query;
use crate::generator::{template_generate, whitespace_tokens, TemplateVariant};
use crate::retrieval::RetrievalEnv;
use crate::reward::{finalize_rewards, RewardConfig, Rollout};
use crate::strategy::{is_unmodified, parse_action, NormalizationRules, StrategyId};

/// Anything the training loop can pull scored rollouts from.
pub trait TrainingEnv {
    fn query_count(&self) -> usize;

    /// One rollout per arm for query `query_index`, with `r_orig` set on
    /// parsed rollouts and `tokens` filled.
    fn rollouts(&self, query_index: usize, arms: &[Arm], rng: &mut ChaCha8Rng) -> Result<Vec<Rollout>, PolicyError>;

    /// Validation score logged with each trace record.
    fn validation(&self, state: &PolicyState) -> Result<f64, PolicyError>;
}

impl TrainingEnv for SyntheticEnv {
    fn query_count(&self) -> usize {
        1
    }

    fn rollouts(&self, _query_index: usize, arms: &[Arm], rng: &mut ChaCha8Rng) -> Result<Vec<Rollout>, PolicyError> {
        arms.iter().map(|&a| self.rollout(a, rng)).collect()
    }

    fn validation(&self, state: &PolicyState) -> Result<f64, PolicyError> {
        Ok(self.expected_reward(state))
    }
}

/// Trains over the evaluable queries of a retrieval environment, one query
/// per step in round-robin order. Strategy arms are rendered by the template
/// rewriter; the copy arm returns the query verbatim.
#[derive(Debug)]
pub struct RetrievalTrainingEnv<'a> {
    env: &'a RetrievalEnv,
    queries: Vec<Query>,
    copy_strategy: StrategyId,
}

impl<'a> RetrievalTrainingEnv<'a> {
    pub fn new(env: &'a RetrievalEnv, copy_strategy: StrategyId) -> Result<Self, PolicyError> {
        let queries: Vec<Query> = env.dataset().evaluable_queries().into_iter().cloned().collect();
        if queries.is_empty() {
            return Err(PolicyError::NoQueries);
        }
        Ok(Self { env, queries, copy_strategy })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    fn raw_output(&self, q: &str, arm: Arm, variant_seed: u64) -> Result<String, PolicyError> {
        Ok(match arm {
            Arm::Strategy(s) => template_generate(q, i64::from(s.get()), TemplateVariant::Rewrite(variant_seed))?,
            Arm::Copy => template_generate(q, i64::from(self.copy_strategy.get()), TemplateVariant::Copy)?,
        })
    }

    fn scored(&self, query: &Query, raw: String) -> Result<Rollout, PolicyError> {
        let mut r = Rollout::new(query.query_id.clone(), query.text.clone(), parse_action(&raw));
        r.tokens = whitespace_tokens(&raw);
        if let Some(rewrite) = r.rewrite() {
            r.r_orig = Some(self.env.score_query(&query.query_id, rewrite)?);
        }
        Ok(r)
    }
}

impl TrainingEnv for RetrievalTrainingEnv<'_> {
    fn query_count(&self) -> usize {
        self.queries.len()
    }

    fn rollouts(&self, query_index: usize, arms: &[Arm], rng: &mut ChaCha8Rng) -> Result<Vec<Rollout>, PolicyError> {
        let query = &self.queries[query_index % self.queries.len()];
        let raws = arms
            .iter()
            .map(|&a| self.raw_output(&query.text, a, rng.next_u64()))
            .collect::<Result<Vec<_>, _>>()?;
        raws.into_iter().map(|raw| self.scored(query, raw)).collect()
    }

    /// Mean NDCG of the greedy arm's first rewrite over all queries.
    fn validation(&self, state: &PolicyState) -> Result<f64, PolicyError> {
        let arm = state.greedy_arm();
        let mut total = 0.0;
        for q in &self.queries {
            let raw = self.raw_output(&q.text, arm, 0)?;
            total += self.scored(q, raw)?.r_orig.unwrap_or(0.0);
        }
        Ok(total / self.queries.len() as f64)
    }
}

/// Draws `n` arms from the policy and scores them on one query.
pub fn sample_rollouts<E: TrainingEnv + ?Sized>(
    state: &PolicyState,
    env: &E,
    query_index: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<Rollout>), PolicyError> {
    if n < 2 {
        return Err(PolicyError::TooFewRollouts(n));
    }
    let indices = state.sample_arms(rng, n);
    let arms: Vec<Arm> = indices.iter().map(|&i| state.arm(i)).collect();
    let rollouts = env.rollouts(query_index, &arms, rng)?;
    Ok((indices, rollouts))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: PolicyState,
    pub arms: Vec<usize>,
    pub rollouts: Vec<Rollout>,
}

/// Sample, score, shape, penalize, normalize, update.
pub fn train_step<E: TrainingEnv + ?Sized>(
    state: &PolicyState,
    env: &E,
    reward: &RewardConfig,
    query_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, PolicyError> {
    let (arms, rollouts) = sample_rollouts(state, env, query_index, state.rollouts_per_query, rng)?;
    let rollouts = finalize_rewards(rollouts, reward)?;
    let samples: Vec<(usize, f64)> = arms.iter().zip(&rollouts).map(|(&a, r)| (a, r.advantage)).collect();
    Ok(StepOutcome {
        state: state.update(&samples),
        arms,
        rollouts,
    })
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub seed: u64,
    /// Mean initial reward over parsed rollouts; null if none parsed.
    pub mean_r_orig: Option<f64>,
    pub mean_r_final: f64,
    pub validation_ndcg: f64,
    pub mean_tokens: f64,
    pub modification_rate: f64,
    pub parse_failures: usize,
    /// Sampled arm counts keyed by arm label; sums to the rollout count.
    pub strategy_histogram: BTreeMap<String, usize>,
    /// Policy after this step's update, in arm order.
    pub action_probs: Vec<f64>,
}

/// A line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Train(StepRecord),
    Eval(QueryEval),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<StepRecord>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn step_record(
    step: usize,
    seed: u64,
    outcome: &StepOutcome,
    validation: f64,
    rules: &NormalizationRules,
) -> StepRecord {
    let rollouts = &outcome.rollouts;
    let parsed: Vec<&Rollout> = rollouts.iter().filter(|r| r.parsed().is_some()).collect();
    let modified = parsed
        .iter()
        .filter(|r| !is_unmodified(&r.q_orig, r.rewrite().unwrap_or_default(), rules))
        .count();
    let mut histogram: BTreeMap<String, usize> =
        (0..outcome.state.arm_count()).map(|i| (outcome.state.arm(i).label(), 0)).collect();
    for &a in &outcome.arms {
        *histogram.entry(outcome.state.arm(a).label()).or_default() += 1;
    }
    StepRecord {
        step,
        seed,
        mean_r_orig: mean(parsed.iter().filter_map(|r| r.r_orig)),
        mean_r_final: mean(rollouts.iter().map(|r| r.r_final)).unwrap_or(0.0),
        validation_ndcg: validation,
        mean_tokens: mean(rollouts.iter().map(|r| r.tokens as f64)).unwrap_or(0.0),
        modification_rate: if parsed.is_empty() { 0.0 } else { modified as f64 / parsed.len() as f64 },
        parse_failures: rollouts.len() - parsed.len(),
        strategy_histogram: histogram,
        action_probs: outcome.state.probabilities(),
    }
}

/// Runs the full loop, calling `observe(step, state, record)` after every
/// update. Steps are 1-based; a record is logged every `log_every` steps and
/// at the final step, and is passed to `observe` when one was logged.
pub fn train_with<E, F>(
    env: &E,
    policy: &PolicyConfig,
    reward: &RewardConfig,
    mut observe: F,
) -> Result<(PolicyState, TrainingTrace), PolicyError>
where
    E: TrainingEnv + ?Sized,
    F: FnMut(usize, &PolicyState, Option<&StepRecord>) -> Result<(), PolicyError>,
{
    reward.validate()?;
    let mut state = PolicyState::new(policy)?;
    if env.query_count() == 0 {
        return Err(PolicyError::NoQueries);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut trace = TrainingTrace::default();
    for step in 1..=policy.steps {
        let outcome = train_step(&state, env, reward, (step - 1) % env.query_count(), &mut rng)?;
        let logged = if step % policy.log_every == 0 || step == policy.steps {
            let validation = env.validation(&outcome.state)?;
            trace
                .records
                .push(step_record(step, policy.seed, &outcome, validation, &reward.normalization));
            trace.records.last()
        } else {
            None
        };
        observe(step, &outcome.state, logged)?;
        state = outcome.state;
    }
    Ok((state, trace))
}

pub fn train<E: TrainingEnv + ?Sized>(
    env: &E,
    policy: &PolicyConfig,
    reward: &RewardConfig,
) -> Result<(PolicyState, TrainingTrace), PolicyError> {
    train_with(env, policy, reward, |_, _, _| Ok(()))
}
