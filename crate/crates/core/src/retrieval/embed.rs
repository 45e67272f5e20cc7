//! Embedding providers: a deterministic hashing embedder for tests and desk
//! runs, a precomputed-vector file provider, and an HTTP embeddings client.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use crate::http::{self, RetryPolicy};

use super::RetrievalError;

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// One vector per input text, each of length [`dimension`](Self::dimension).
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError>;

    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        check_shape(&out, 1, self.dimension())?;
        Ok(out.pop().expect("one vector"))
    }
}

/// Verifies count and per-vector dimension of a provider response.
pub fn check_shape(vectors: &[Vec<f32>], expected: usize, dim: usize) -> Result<(), RetrievalError> {
    if vectors.len() != expected {
        return Err(RetrievalError::Provider(format!(
            "expected {expected} vectors, provider returned {}",
            vectors.len()
        )));
    }
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(RetrievalError::Provider(format!(
            "expected dimension {dim}, provider returned {}",
            bad.len()
        )));
    }
    Ok(())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bag-of-tokens embedder: lowercased alphanumeric tokens hashed (FNV-1a)
/// into `dimension` buckets, then L2-normalized. Stable across platforms.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Result<Self, RetrievalError> {
        if dimension == 0 {
            return Err(RetrievalError::Provider("dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split_whitespace().filter_map(|raw| {
            let tok: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            (!tok.is_empty()).then_some(tok)
        })
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f64; self.dimension];
        for tok in Self::tokens(text) {
            v[(fnv1a(tok.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v.into_iter().map(|x| x as f32).collect()
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// One line of a precomputed embeddings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

pub fn write_embeddings(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    w.flush()
}

/// Serves vectors from a precomputed JSONL file keyed by id.
///
/// Texts are resolved to ids through registered aliases (for example a
/// document's embedding text to its doc id); a text that is itself a key is
/// also accepted. Anything else goes to the optional fallback provider.
pub struct FileEmbedder {
    dimension: usize,
    vectors: HashMap<String, Vec<f32>>,
    aliases: HashMap<String, String>,
    fallback: Option<Box<dyn EmbeddingProvider>>,
}

impl std::fmt::Debug for FileEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileEmbedder")
            .field("dimension", &self.dimension)
            .field("vectors", &self.vectors.len())
            .field("aliases", &self.aliases.len())
            .field("fallback", &self.fallback.is_some())
            .finish()
    }
}

impl FileEmbedder {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| RetrievalError::Provider(format!("{}: {e}", path.display())))?;
        let mut vectors = HashMap::new();
        let mut dimension = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| RetrievalError::Provider(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| {
                RetrievalError::Provider(format!("line {}: {e}", idx + 1))
            })?;
            let dim = *dimension.get_or_insert(rec.vector.len());
            if rec.vector.len() != dim || dim == 0 {
                return Err(RetrievalError::Provider(format!(
                    "line {}: vector has dimension {}, expected {dim}",
                    idx + 1,
                    rec.vector.len()
                )));
            }
            vectors.insert(rec.id, rec.vector);
        }
        let dimension = dimension
            .ok_or_else(|| RetrievalError::Provider(format!("{} holds no vectors", path.display())))?;
        Ok(Self {
            dimension,
            vectors,
            aliases: HashMap::new(),
            fallback: None,
        })
    }

    pub fn alias(&mut self, text: impl Into<String>, id: impl Into<String>) {
        self.aliases.insert(text.into(), id.into());
    }

    pub fn with_fallback(mut self, fallback: Box<dyn EmbeddingProvider>) -> Result<Self, RetrievalError> {
        if fallback.dimension() != self.dimension {
            return Err(RetrievalError::Provider(format!(
                "fallback dimension {} does not match file dimension {}",
                fallback.dimension(),
                self.dimension
            )));
        }
        self.fallback = Some(fallback);
        Ok(self)
    }

    fn lookup(&self, text: &str) -> Option<&Vec<f32>> {
        self.aliases
            .get(text)
            .and_then(|id| self.vectors.get(id))
            .or_else(|| self.vectors.get(text))
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let mut out: Vec<Option<Vec<f32>>> = texts.iter().map(|t| self.lookup(t).cloned()).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let fallback = self.fallback.as_ref().ok_or_else(|| {
                RetrievalError::Provider(format!(
                    "no precomputed vector for {:?}",
                    texts[missing[0]]
                ))
            })?;
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vecs = fallback.embed_batch(&batch)?;
            check_shape(&vecs, batch.len(), self.dimension)?;
            for (i, v) in missing.into_iter().zip(vecs) {
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    /// Full URL of the embeddings endpoint.
    pub url: String,
    pub model: String,
    pub dimension: usize,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_batch_size() -> usize {
    64
}

/// Client for the `{"input": [...], "model": ...}` -> `{"data": [{"embedding": [...]}]}` API shape.
#[derive(Debug)]
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    client: Client,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, RetrievalError> {
        if config.dimension == 0 {
            return Err(RetrievalError::Provider("dimension must be positive".into()));
        }
        let client = http::build_client(&config.retry).map_err(|e| RetrievalError::Provider(e.to_string()))?;
        let api_key = http::api_key_from_env(config.api_key_env.as_deref());
        Ok(Self { config, client, api_key })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            let body = serde_json::json!({ "input": chunk, "model": self.config.model });
            let resp = http::post_json(
                &self.client,
                &self.config.url,
                &body,
                self.api_key.as_deref(),
                &self.config.retry,
            )
            .map_err(|e| RetrievalError::Provider(e.to_string()))?;
            let parsed: EmbeddingResponse = serde_json::from_value(resp.body)
                .map_err(|e| RetrievalError::Provider(format!("malformed embeddings response: {e}")))?;
            let vecs: Vec<Vec<f32>> = parsed.data.into_iter().map(|d| d.embedding).collect();
            check_shape(&vecs, chunk.len(), self.config.dimension)?;
            out.extend(vecs);
        }
        Ok(out)
    }
}
