use std::cmp::Ordering;

use crate::corpus::Document;

use super::embed::{check_shape, EmbeddingProvider};
use super::metrics::RankedList;
use super::RetrievalError;

const EMBED_BATCH: usize = 256;

/// Exact cosine-similarity index over unit-normalized document rows.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    doc_ids: Vec<String>,
    dimension: usize,
    rows: Vec<f32>,
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

impl VectorIndex {
    /// Builds an index from raw vectors. Zero (or non-finite) rows are
    /// replaced with the first basis vector and logged.
    pub fn from_vectors(
        doc_ids: Vec<String>,
        vectors: Vec<Vec<f32>>,
        dimension: usize,
    ) -> Result<Self, RetrievalError> {
        if doc_ids.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if dimension == 0 {
            return Err(RetrievalError::Provider("dimension must be positive".into()));
        }
        check_shape(&vectors, doc_ids.len(), dimension)?;
        let mut rows = Vec::with_capacity(doc_ids.len() * dimension);
        for (id, v) in doc_ids.iter().zip(vectors) {
            let norm = l2_norm(&v);
            if norm > 0.0 && norm.is_finite() {
                rows.extend(v.iter().map(|&x| (f64::from(x) / norm) as f32));
            } else {
                tracing::warn!(doc_id = %id, "degenerate document embedding replaced with e1");
                rows.push(1.0);
                rows.extend(std::iter::repeat_n(0.0, dimension - 1));
            }
        }
        Ok(Self { doc_ids, dimension, rows })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Top-`k` documents by cosine similarity; equal scores are ordered by
    /// ascending doc id. A zero query scores every document 0.
    pub fn search(&self, query: &[f32], k: usize) -> Result<RankedList, RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let qnorm = l2_norm(query);
        let scale = if qnorm > 0.0 { 1.0 / qnorm } else { 0.0 };
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let dot: f64 = self
                    .row(i)
                    .iter()
                    .zip(query)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                // `+ 0.0` folds -0.0 into 0.0 so exact ties fall through to the id order.
                (i, dot * scale + 0.0)
            })
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        };
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(RankedList { entries: Vec::new(), k });
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(RankedList {
            entries: scored
                .into_iter()
                .map(|(i, s)| (self.doc_ids[i].clone(), s))
                .collect(),
            k,
        })
    }
}

/// Embeds `title + " " + text` for every document and builds the index.
pub fn build_index(docs: &[Document], provider: &dyn EmbeddingProvider) -> Result<VectorIndex, RetrievalError> {
    if docs.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let dim = provider.dimension();
    let mut vectors = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(EMBED_BATCH) {
        let texts: Vec<String> = chunk.iter().map(Document::embedding_text).collect();
        let vecs = provider.embed_batch(&texts)?;
        check_shape(&vecs, texts.len(), dim)?;
        vectors.extend(vecs);
    }
    VectorIndex::from_vectors(docs.iter().map(|d| d.doc_id.clone()).collect(), vectors, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<Vec<f32>>);

    impl EmbeddingProvider for Fixed {
        fn dimension(&self) -> usize {
            self.0.first().map_or(4, Vec::len)
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
            Ok(self.0.iter().take(texts.len()).cloned().collect())
        }
    }

    fn doc(id: &str) -> Document {
        Document { doc_id: id.into(), title: String::new(), text: format!("text of {id}") }
    }

    #[test]
    fn rows_are_unit_norm() {
        let p = Fixed(vec![vec![3.0, 4.0, 0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0, 2.0]]);
        let idx = build_index(&[doc("a"), doc("b"), doc("c")], &p).unwrap();
        assert_eq!(idx.len(), 3);
        for i in 0..3 {
            assert!((l2_norm(idx.row(i)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_count_is_provider_error() {
        let p = Fixed(vec![vec![1.0, 0.0, 0.0, 0.0]]);
        assert!(matches!(
            build_index(&[doc("a"), doc("b")], &p),
            Err(RetrievalError::Provider(_))
        ));
    }

    #[test]
    fn zero_embedding_becomes_e1() {
        let p = Fixed(vec![vec![0.0; 4], vec![0.0, 1.0, 0.0, 0.0]]);
        let idx = build_index(&[doc("a"), doc("b")], &p).unwrap();
        assert_eq!(idx.row(0), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_corpus() {
        let p = Fixed(vec![]);
        assert!(matches!(build_index(&[], &p), Err(RetrievalError::EmptyCorpus)));
    }

    #[test]
    fn self_similarity_ranks_first() {
        let p = Fixed(vec![vec![1.0, 2.0, 0.0, 0.0], vec![0.0, 1.0, 3.0, 0.0], vec![5.0, 0.0, 0.0, 1.0]]);
        let idx = build_index(&[doc("a"), doc("b"), doc("c")], &p).unwrap();
        let r = idx.search(&[0.0, 1.0, 3.0, 0.0], 2).unwrap();
        assert_eq!(r.entries[0].0, "b");
        assert!((r.entries[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn ties_by_doc_id() {
        let v = vec![1.0, 0.0, 0.0, 0.0];
        let p = Fixed(vec![v.clone(), v.clone(), vec![0.0, 1.0, 0.0, 0.0]]);
        let idx = build_index(&[doc("zeta"), doc("alpha"), doc("mid")], &p).unwrap();
        let r = idx.search(&v, 3).unwrap();
        let ids: Vec<_> = r.doc_ids().collect();
        assert_eq!(ids, ["alpha", "zeta", "mid"]);
    }

    #[test]
    fn k_larger_than_corpus() {
        let p = Fixed(vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
        let idx = build_index(&[doc("a"), doc("b")], &p).unwrap();
        assert_eq!(idx.search(&[1.0, 1.0, 0.0, 0.0], 10).unwrap().len(), 2);
    }

    #[test]
    fn dimension_mismatch() {
        let p = Fixed(vec![vec![1.0, 0.0, 0.0, 0.0]]);
        let idx = build_index(&[doc("a")], &p).unwrap();
        assert!(matches!(
            idx.search(&[1.0, 0.0], 1),
            Err(RetrievalError::DimensionMismatch { expected: 4, actual: 2 })
        ));
    }
}
