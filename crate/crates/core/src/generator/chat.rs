//! Chat-completion client (`{"model", "messages", "n", "temperature"}` ->
//! `{"choices": [{"message": {"content"}}], "usage": {...}}`).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use crate::http::{self, RetryPolicy};

use super::{prompt_hash, whitespace_tokens, GenerationRecord, GeneratorError, RewriteGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatGeneratorConfig {
    /// Full URL of the chat-completions endpoint.
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Cap on in-flight requests in [`ChatGenerator::generate_many`].
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_concurrency() -> usize {
    4
}

type Slot = Mutex<Option<Result<Vec<GenerationRecord>, GeneratorError>>>;

#[derive(Debug)]
pub struct ChatGenerator {
    config: ChatGeneratorConfig,
    client: Client,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    completion_tokens: Option<usize>,
}

impl ChatGenerator {
    pub fn new(config: ChatGeneratorConfig) -> Result<Self, GeneratorError> {
        let client = http::build_client(&config.retry)?;
        let api_key = http::api_key_from_env(config.api_key_env.as_deref());
        Ok(Self { config, client, api_key })
    }

    pub fn config(&self) -> &ChatGeneratorConfig {
        &self.config
    }

    /// Runs one request per prompt with at most `max_concurrency` in flight.
    /// Results are returned in prompt order.
    pub fn generate_many(
        &self,
        prompts: &[String],
        n: usize,
        temperature: f64,
    ) -> Vec<Result<Vec<GenerationRecord>, GeneratorError>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Slot> = prompts.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.max_concurrency.max(1).min(prompts.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let result = self.generate(&prompts[i], n, temperature, None);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}

/// Splits a total completion-token count across `n` outputs, remainder first.
fn split_tokens(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

impl RewriteGenerator for ChatGenerator {
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
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": prompt }],
            "n": n,
            "temperature": temperature,
        });
        if let Some(seed) = seed {
            body["seed"] = serde_json::json!(seed);
        }
        let started = Instant::now();
        let resp = http::post_json(&self.client, &self.config.url, &body, self.api_key.as_deref(), &self.config.retry)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        tracing::info!(attempts = resp.attempts, latency_ms, "chat completion");

        let parsed: ChatResponse =
            serde_json::from_value(resp.body).map_err(|e| GeneratorError::MalformedResponse(e.to_string()))?;
        if parsed.choices.len() != n {
            return Err(GeneratorError::MalformedResponse(format!(
                "requested {n} choices, received {}",
                parsed.choices.len()
            )));
        }
        let outputs: Vec<String> = parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect();
        let tokens = match parsed.usage.and_then(|u| u.completion_tokens) {
            Some(total) => split_tokens(total, n),
            None => outputs.iter().map(|o| whitespace_tokens(o)).collect(),
        };
        let hash = prompt_hash(prompt);
        Ok(outputs
            .into_iter()
            .zip(tokens)
            .map(|(raw_output, token_count)| GenerationRecord {
                prompt_hash: hash.clone(),
                raw_output,
                token_count,
                latency_ms,
            })
            .collect())
    }
}
