use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::StrategyError;

/// Which cosmetic differences are ignored when deciding whether a rewrite
/// changed the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationRules {
    pub trim: bool,
    pub collapse_whitespace: bool,
    pub nfc: bool,
    pub case_insensitive: bool,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        Self {
            trim: true,
            collapse_whitespace: true,
            nfc: true,
            case_insensitive: false,
        }
    }
}

impl NormalizationRules {
    /// Byte-exact comparison.
    pub fn exact() -> Self {
        Self {
            trim: false,
            collapse_whitespace: false,
            nfc: false,
            case_insensitive: false,
        }
    }
}

pub fn normalize(s: &str, rules: &NormalizationRules) -> String {
    let mut out: String = if rules.nfc { s.nfc().collect() } else { s.to_string() };
    if rules.collapse_whitespace {
        let mut collapsed = String::with_capacity(out.len());
        let mut in_ws = false;
        for c in out.chars() {
            if c.is_whitespace() {
                if !in_ws {
                    collapsed.push(' ');
                }
                in_ws = true;
            } else {
                collapsed.push(c);
                in_ws = false;
            }
        }
        out = collapsed;
    }
    if rules.trim {
        out = out.trim().to_string();
    }
    if rules.case_insensitive {
        out = out.to_lowercase();
    }
    out
}

/// True iff the rewrite equals the original after normalization.
pub fn is_unmodified(q_orig: &str, rewrite: &str, rules: &NormalizationRules) -> bool {
    normalize(q_orig, rules) == normalize(rewrite, rules)
}

fn count_unmodified<'a, I>(pairs: I, rules: &NormalizationRules) -> Result<(usize, usize), StrategyError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let (mut total, mut same) = (0usize, 0usize);
    for (orig, rewrite) in pairs {
        total += 1;
        same += usize::from(is_unmodified(orig, rewrite, rules));
    }
    if total == 0 {
        return Err(StrategyError::EmptyList);
    }
    Ok((total, same))
}

/// Fraction of `(original, rewrite)` pairs that were actually modified.
pub fn modification_rate<'a, I>(pairs: I, rules: &NormalizationRules) -> Result<f64, StrategyError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let (total, same) = count_unmodified(pairs, rules)?;
    Ok((total - same) as f64 / total as f64)
}

/// `1 - modification_rate`; the two always sum to exactly 1.
pub fn unmodified_rate<'a, I>(pairs: I, rules: &NormalizationRules) -> Result<f64, StrategyError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    Ok(1.0 - modification_rate(pairs, rules)?)
}
