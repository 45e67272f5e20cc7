//! Rewrite generation backends.

mod chat;
mod template;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::HttpError;
use crate::strategy::{Prompt, STRATEGY_COUNT};

pub use chat::{ChatGenerator, ChatGeneratorConfig};
pub use template::{template_generate, TemplateVariant};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("strategy id {0} is not in 1..=5")]
    BadStrategyId(i64),
    #[error("n must be at least 1")]
    ZeroSamples,
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication rejected (status {0})")]
    Auth(u16),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl From<HttpError> for GeneratorError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Network(m) => GeneratorError::Network(m),
            HttpError::Auth(s) => GeneratorError::Auth(s),
            HttpError::RateLimited { attempts } => GeneratorError::RateLimited(attempts),
            HttpError::Status { status, body, .. } => GeneratorError::Status { status, body },
            HttpError::MalformedResponse(m) => GeneratorError::MalformedResponse(m),
        }
    }
}

/// One generated output with its accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_hash: String,
    pub raw_output: String,
    pub token_count: usize,
    pub latency_ms: u64,
}

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Whitespace-token count, the template backend's token measure.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

pub trait RewriteGenerator: Send + Sync {
    /// Exactly `n` outputs for `prompt`.
    fn generate(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<Vec<GenerationRecord>, GeneratorError>;
}

/// Offline generator that reads the query out of a strategy-guided prompt
/// and answers with template rewrites.
///
/// Strategies are drawn uniformly (cycled in id order at temperature 0).
/// When the prompt carries the conservative "keep unchanged" clause, each
/// output is a verbatim copy with probability `conservative_copy_prob`.
#[derive(Debug, Clone)]
pub struct TemplateGenerator {
    pub conservative_copy_prob: f64,
}

impl Default for TemplateGenerator {
    fn default() -> Self {
        Self { conservative_copy_prob: 0.5 }
    }
}

impl RewriteGenerator for TemplateGenerator {
    fn generate(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<Vec<GenerationRecord>, GeneratorError> {
        if n == 0 {
            return Err(GeneratorError::ZeroSamples);
        }
        let query = Prompt::extract_query(prompt).unwrap_or(prompt);
        let conservative = prompt.contains("keep the original unchanged");
        let hash = prompt_hash(prompt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        (0..n)
            .map(|i| {
                let (strategy, variant) = if temperature <= 0.0 {
                    ((i % STRATEGY_COUNT) as i64 + 1, TemplateVariant::Rewrite((i / STRATEGY_COUNT) as u64))
                } else {
                    let s = rng.gen_range(1..=STRATEGY_COUNT as i64);
                    (s, TemplateVariant::Rewrite(rng.next_u64()))
                };
                let variant = if conservative && rng.gen_bool(self.conservative_copy_prob.clamp(0.0, 1.0)) {
                    TemplateVariant::Copy
                } else {
                    variant
                };
                let raw_output = template_generate(query, strategy, variant)?;
                Ok(GenerationRecord {
                    prompt_hash: hash.clone(),
                    token_count: whitespace_tokens(&raw_output),
                    raw_output,
                    latency_ms: 0,
                })
            })
            .collect()
    }
}
