//! Dense retrieval environment: embed a query, search the index, score the
//! ranking with NDCG@k against graded judgments.

mod embed;
mod index;
mod metrics;

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::{Dataset, Query, QrelSet};

pub use embed::{
    check_shape, write_embeddings, EmbeddingProvider, EmbeddingRecord, FileEmbedder, HashEmbedder,
    HttpEmbedder, HttpEmbedderConfig,
};
pub use index::{build_index, VectorIndex};
pub use metrics::{dcg, ndcg_at_k, Gain, RankedList, DEFAULT_CUTOFF};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("query vector has dimension {actual}, index expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("query `{0}` has no positive relevance judgments")]
    NoPositiveJudgments(String),
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
}

/// Corpus + judgments + index + provider. Maps a query string to NDCG@k.
pub struct RetrievalEnv {
    dataset: Dataset,
    index: VectorIndex,
    provider: Box<dyn EmbeddingProvider>,
    cutoff: usize,
    gain: Gain,
    query_pos: HashMap<String, usize>,
}

impl std::fmt::Debug for RetrievalEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetrievalEnv")
            .field("docs", &self.index.len())
            .field("queries", &self.dataset.queries.len())
            .field("cutoff", &self.cutoff)
            .field("gain", &self.gain)
            .finish()
    }
}

impl RetrievalEnv {
    pub fn build(dataset: Dataset, provider: Box<dyn EmbeddingProvider>) -> Result<Self, RetrievalError> {
        let index = build_index(&dataset.docs, provider.as_ref())?;
        let query_pos = dataset
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.query_id.clone(), i))
            .collect();
        Ok(Self {
            dataset,
            index,
            provider,
            cutoff: DEFAULT_CUTOFF,
            gain: Gain::Linear,
            query_pos,
        })
    }

    pub fn with_cutoff(mut self, k: usize) -> Self {
        self.cutoff = k.max(1);
        self
    }

    pub fn with_gain(mut self, gain: Gain) -> Self {
        self.gain = gain;
        self
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn qrels(&self) -> &QrelSet {
        &self.dataset.qrels
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn query(&self, query_id: &str) -> Option<&Query> {
        self.query_pos.get(query_id).map(|&i| &self.dataset.queries[i])
    }

    pub fn rank(&self, text: &str) -> Result<RankedList, RetrievalError> {
        let v = self.provider.embed(text)?;
        self.index.search(&v, self.cutoff)
    }

    /// NDCG@k of `rewrite_text` for the judged query `query_id`.
    pub fn score_query(&self, query_id: &str, rewrite_text: &str) -> Result<f64, RetrievalError> {
        if !self.dataset.qrels.has_positive(query_id) {
            return Err(RetrievalError::NoPositiveJudgments(query_id.to_string()));
        }
        let ranked = self.rank(rewrite_text)?;
        ndcg_at_k(&ranked, &self.dataset.qrels, query_id, self.cutoff, self.gain)
    }

    /// Scores the query's original text.
    pub fn score_original(&self, query_id: &str) -> Result<f64, RetrievalError> {
        let q = self
            .query(query_id)
            .ok_or_else(|| RetrievalError::UnknownQuery(query_id.to_string()))?;
        self.score_query(query_id, &q.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    /// Docs whose text is a single token, so the hash embedder maps each to
    /// one basis direction.
    fn env_with(texts: &[(&str, &str)], qrels: &[(&str, u32)], query: &str) -> RetrievalEnv {
        let docs = texts
            .iter()
            .map(|(id, t)| Document { doc_id: id.to_string(), title: String::new(), text: t.to_string() })
            .collect();
        let queries = vec![Query { query_id: "q".into(), text: query.into() }];
        let mut qs = QrelSet::new();
        for (d, g) in qrels {
            qs.insert("q", d, *g);
        }
        let ds = Dataset::new(docs, queries, qs).unwrap();
        RetrievalEnv::build(ds, Box::new(HashEmbedder::new(4096).unwrap())).unwrap()
    }

    #[test]
    fn rewrite_equal_to_query_matches_original_score() {
        let env = env_with(&[("d1", "alpha"), ("d2", "beta")], &[("d1", 1)], "alpha");
        let orig = env.score_original("q").unwrap();
        assert_eq!(orig, 1.0);
        assert_eq!(env.score_query("q", "alpha").unwrap(), orig);
    }

    #[test]
    fn relevant_doc_pushed_out_of_top_ten_scores_zero() {
        let mut texts = vec![("rel", "zebra".to_string())];
        let mut qrels = vec![("rel", 1u32)];
        let fillers: Vec<String> = (0..12).map(|i| format!("d{i:02}")).collect();
        for f in &fillers {
            texts.push((f.as_str(), "apple".to_string()));
            qrels.push((f.as_str(), 0));
        }
        let texts: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (*a, b.as_str())).collect();
        let env = env_with(&texts, &qrels, "zebra");
        // With 12 identical "apple" docs all nearer than "zebra", the relevant doc is rank 13.
        assert_eq!(env.score_query("q", "apple").unwrap(), 0.0);
        assert_eq!(env.score_query("q", "zebra").unwrap(), 1.0);
    }

    #[test]
    fn unjudged_query_rejected() {
        let env = env_with(&[("d1", "alpha")], &[("d1", 0)], "alpha");
        assert!(matches!(
            env.score_query("q", "alpha"),
            Err(RetrievalError::NoPositiveJudgments(_))
        ));
    }
}
