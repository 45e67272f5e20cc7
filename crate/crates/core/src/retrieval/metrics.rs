//! Graded ranking metrics.

use serde::{Deserialize, Serialize};

use crate::corpus::QrelSet;

use super::RetrievalError;

pub const DEFAULT_CUTOFF: usize = 10;

/// Gain applied to a relevance grade.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `gain(r) = r`, the trec_eval `ndcg_cut` convention.
    #[default]
    Linear,
    /// `gain(r) = 2^r - 1`.
    Exponential,
}

impl Gain {
    pub fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// Retrieved documents in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<(String, f64)>,
    pub k: usize,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a list from bare doc ids with synthetic descending scores.
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        let entries = ids
            .into_iter()
            .enumerate()
            .map(|(i, d)| (d, (n - i) as f64))
            .collect();
        Self { entries, k: n }
    }
}

/// Discounted cumulative gain of a grade sequence, positions starting at 1.
pub fn dcg(grades: impl IntoIterator<Item = u32>, gain: Gain) -> f64 {
    grades
        .into_iter()
        .enumerate()
        .map(|(i, g)| gain.apply(g) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of `ranked` against the judgments for `query_id`. Unjudged
/// documents contribute zero; the ideal ordering uses every judged document.
pub fn ndcg_at_k(
    ranked: &RankedList,
    qrels: &QrelSet,
    query_id: &str,
    k: usize,
    gain: Gain,
) -> Result<f64, RetrievalError> {
    let judged = qrels
        .judged(query_id)
        .filter(|docs| docs.values().any(|&g| g > 0))
        .ok_or_else(|| RetrievalError::NoPositiveJudgments(query_id.to_string()))?;

    let achieved = dcg(
        ranked
            .doc_ids()
            .take(k)
            .map(|d| judged.get(d).copied().unwrap_or(0)),
        gain,
    );

    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let ideal_dcg = dcg(ideal.into_iter().take(k), gain);

    Ok((achieved / ideal_dcg).clamp(0.0, 1.0))
}
