use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Arm, PolicyError, PolicyState};
use crate::corpus::Query;
use crate::generator::{template_generate, whitespace_tokens, RewriteGenerator, TemplateVariant};
use crate::retrieval::RetrievalEnv;
use crate::strategy::{build_prompt, is_unmodified, parse_action, NormalizationRules, PromptStyle, StrategyId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Greedy,
    BestOfN(usize),
}

impl EvalMode {
    pub fn candidates(self) -> usize {
        match self {
            EvalMode::Greedy => 1,
            EvalMode::BestOfN(n) => n,
        }
    }
}

/// Where candidate rewrites come from. In both cases candidate `i` does not
/// depend on how many candidates are requested, so the set for `n` is a
/// prefix of the set for `n + 1`, and greedy is candidate 0.
pub enum CandidateSource<'a> {
    /// Candidate 0 is the policy's most probable arm; later candidates are
    /// arms drawn from the policy with a per-query seeded rng.
    Policy {
        state: &'a PolicyState,
        copy_strategy: StrategyId,
        seed: u64,
    },
    /// Outputs of a generator for the strategy-guided prompt.
    Generator {
        generator: &'a dyn RewriteGenerator,
        style: PromptStyle,
        temperature: f64,
        seed: u64,
    },
}

impl CandidateSource<'_> {
    pub fn seed(&self) -> u64 {
        match *self {
            CandidateSource::Policy { seed, .. } | CandidateSource::Generator { seed, .. } => seed,
        }
    }

    fn raw_outputs(&self, query_index: usize, q: &str, n: usize) -> Result<Vec<(String, usize)>, PolicyError> {
        match *self {
            CandidateSource::Policy { state, copy_strategy, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(query_index as u64));
                let mut arms = vec![state.greedy_arm()];
                arms.extend(state.sample_arms(&mut rng, n.saturating_sub(1)).into_iter().map(|i| state.arm(i)));
                arms.into_iter()
                    .enumerate()
                    .map(|(i, arm)| {
                        let raw = match arm {
                            Arm::Strategy(s) => template_generate(q, i64::from(s.get()), TemplateVariant::Rewrite(i as u64))?,
                            Arm::Copy => template_generate(q, i64::from(copy_strategy.get()), TemplateVariant::Copy)?,
                        };
                        let tokens = whitespace_tokens(&raw);
                        Ok((raw, tokens))
                    })
                    .collect()
            }
            CandidateSource::Generator { generator, style, temperature, seed } => {
                let prompt = build_prompt(q, style)?;
                let records = generator.generate(&prompt, n, temperature, Some(seed.wrapping_add(query_index as u64)))?;
                Ok(records.into_iter().map(|r| (r.raw_output, r.token_count)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub strategy_id: Option<u8>,
    pub rewritten_query: Option<String>,
    /// NDCG@k of the rewrite; 0 when the output did not parse.
    pub ndcg: f64,
    pub tokens: usize,
}

/// Per-query evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub seed: u64,
    pub mode: EvalMode,
    /// Max over candidates.
    pub ndcg: f64,
    /// NDCG@k of the original query, for reference.
    pub original_ndcg: f64,
    pub mean_tokens: f64,
    pub parsed: usize,
    pub modified: usize,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mode: EvalMode,
    pub mean_ndcg: f64,
    pub mean_tokens: f64,
    /// Pooled over parsed candidates of all queries.
    pub modification_rate: f64,
    pub per_query: Vec<QueryEval>,
}

impl EvalMetrics {
    /// Aggregates per-query results; also used to recompute summaries from
    /// a trace file.
    pub fn from_queries(mode: EvalMode, per_query: Vec<QueryEval>) -> Self {
        let n = per_query.len().max(1) as f64;
        let parsed: usize = per_query.iter().map(|q| q.parsed).sum();
        let modified: usize = per_query.iter().map(|q| q.modified).sum();
        Self {
            mode,
            mean_ndcg: per_query.iter().map(|q| q.ndcg).sum::<f64>() / n,
            mean_tokens: per_query.iter().map(|q| q.mean_tokens).sum::<f64>() / n,
            modification_rate: if parsed == 0 { 0.0 } else { modified as f64 / parsed as f64 },
            per_query,
        }
    }
}

pub fn evaluate(
    env: &RetrievalEnv,
    source: &CandidateSource<'_>,
    queries: &[Query],
    mode: EvalMode,
    rules: &NormalizationRules,
) -> Result<EvalMetrics, PolicyError> {
    let n = mode.candidates();
    if n == 0 {
        return Err(PolicyError::InvalidConfig("best_of_n needs n >= 1".into()));
    }
    let mut per_query = Vec::with_capacity(queries.len());
    for (qi, q) in queries.iter().enumerate() {
        let mut candidates = Vec::with_capacity(n);
        for (raw, tokens) in source.raw_outputs(qi, &q.text, n)? {
            let candidate = match parse_action(&raw) {
                Ok(action) => Candidate {
                    strategy_id: Some(action.strategy_id.get()),
                    ndcg: env.score_query(&q.query_id, &action.rewritten_query)?,
                    rewritten_query: Some(action.rewritten_query),
                    tokens,
                },
                Err(_) => Candidate { strategy_id: None, rewritten_query: None, ndcg: 0.0, tokens },
            };
            candidates.push(candidate);
        }
        let parsed: Vec<&str> = candidates.iter().filter_map(|c| c.rewritten_query.as_deref()).collect();
        let modified = parsed.iter().filter(|r| !is_unmodified(&q.text, r, rules)).count();
        per_query.push(QueryEval {
            query_id: q.query_id.clone(),
            seed: source.seed(),
            mode,
            ndcg: candidates.iter().map(|c| c.ndcg).fold(f64::NEG_INFINITY, f64::max),
            original_ndcg: env.score_original(&q.query_id)?,
            mean_tokens: candidates.iter().map(|c| c.tokens as f64).sum::<f64>() / candidates.len() as f64,
            parsed: parsed.len(),
            modified,
            candidates,
        });
    }
    Ok(EvalMetrics::from_queries(mode, per_query))
}
