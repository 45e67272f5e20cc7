//! Rule-based rewrites, one transformation per strategy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::strategy::{render_action, StrategyId};

use super::GeneratorError;

/// Which output to produce for a `(query, strategy)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateVariant {
    /// Apply the strategy's transformation; the seed picks among equally valid wordings.
    Rewrite(u64),
    /// Return the original query verbatim (the reward-hacking shortcut).
    Copy,
}

const SYNONYMS: &[(&str, &[&str])] = &[
    ("attack", &["infarction", "cardiac event"]),
    ("attacks", &["infarction", "cardiac events"]),
    ("bone", &["bone density", "skeletal"]),
    ("bones", &["bone density", "osteoporosis", "skeletal"]),
    ("born", &["birthplace", "native"]),
    ("caffeine", &["stimulant", "coffee"]),
    ("cancer", &["tumor", "oncology"]),
    ("coffee", &["caffeine", "espresso"]),
    ("discover", &["discovery", "isolated"]),
    ("disease", &["disorder", "condition"]),
    ("drug", &["medication", "therapy"]),
    ("element", &["chemical element", "radioactive"]),
    ("food", &["glucose", "energy", "nutrients"]),
    ("habitat", &["range", "rainforest", "environment"]),
    ("heart", &["cardiac", "cardiovascular", "myocardial"]),
    ("height", &["tall", "metres"]),
    ("history", &["timeline", "versions"]),
    ("plants", &["photosynthesis", "leaves", "chlorophyll"]),
    ("release", &["version", "released"]),
    ("sleep", &["insomnia", "bedtime"]),
    ("space", &["orbit", "astronauts"]),
    ("speed", &["velocity", "sprint", "km per hour"]),
    ("sunlight", &["light energy", "solar"]),
    ("tall", &["height", "metres"]),
    ("temperature", &["heat", "degrees", "thermal"]),
    ("visible", &["seen", "observable"]),
    ("vitamin", &["nutrient", "deficiency"]),
];

const GENERIC_TERMS: &[&str] = &["overview", "facts", "explanation", "background", "details"];

const AMBIGUOUS: &[(&str, &[&str])] = &[
    ("amazon", &["the river", "the company"]),
    ("apple", &["the fruit", "the technology company"]),
    ("jaguar", &["the big cat", "the car maker"]),
    ("java", &["the programming language", "the island"]),
    ("mercury", &["the planet", "the chemical element"]),
    ("python", &["the programming language", "the snake"]),
];

const ENTITY_KINDS: &[&str] = &["person", "place", "organization", "work", "event"];

const STOP_PHRASES: &[&str] = &[
    "could you please tell me",
    "can you please tell me",
    "could you tell me",
    "can you tell me",
    "i would like to know",
    "i want to know",
    "do you know",
    "i wonder",
    "tell me",
    "please",
    "actually",
    "whether",
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "is", "are", "was", "were", "do", "does", "did", "how", "what", "which",
    "to", "from", "their", "that", "it", "its", "be", "for", "on", "and", "or", "with", "there", "my", "me",
];

const CLAIM_MARKERS: &[&str] = &[
    "claim:",
    "true or false:",
    "fact:",
    "verify that",
    "verify:",
    "is it true that",
    "it is true that",
    "is it the case that",
];

const INTERROGATIVE_LEADS: &[&str] = &["is", "are", "does", "do", "did", "can", "was", "were", "has", "have"];

const AFFIRMING_WORDS: &[&str] = &["true", "really", "actually", "definitely", "indeed", "correct"];

const NEUTRAL_PREFIXES: &[&str] = &["evidence about", "evidence on", "studies on"];

const DECOMPOSE_SEPARATORS: &[&str] = &[", ", "; ", " and ", " or ", " but ", " while ", " where "];

fn bare(word: &str) -> String {
    word.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn lookup<'a>(table: &'a [(&str, &'a [&'a str])], key: &str) -> Option<&'a [&'a str]> {
    table
        .binary_search_by(|(k, _)| k.cmp(&key))
        .ok()
        .map(|i| table[i].1)
}

fn strip_trailing_punct(s: &str) -> &str {
    s.trim_end_matches(['?', '.', '!', ' '])
}

fn semantic_expansion(q: &str, rng: &mut ChaCha8Rng) -> String {
    let mut terms: Vec<&str> = Vec::new();
    for word in q.split_whitespace() {
        if let Some(options) = lookup(SYNONYMS, &bare(word)) {
            let pick = options.choose(rng).expect("non-empty synonym list");
            if !terms.contains(pick) {
                terms.push(pick);
            }
        }
        if terms.len() == 4 {
            break;
        }
    }
    if terms.is_empty() {
        terms.extend(GENERIC_TERMS.choose_multiple(rng, 2));
    }
    format!("{} {}", strip_trailing_punct(q), terms.join(" "))
}

fn entity_disambiguation(q: &str, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = q.split_whitespace().collect();
    let base = strip_trailing_punct(q);
    if let Some((word, options)) = words
        .iter()
        .find_map(|w| lookup(AMBIGUOUS, &bare(w)).map(|o| (bare(w), o)))
    {
        return format!("{base} ({word}: {})", options.choose(rng).expect("non-empty"));
    }
    let entity: Vec<&str> = words
        .iter()
        .skip(1)
        .skip_while(|w| !w.starts_with(char::is_uppercase))
        .take_while(|w| w.starts_with(char::is_uppercase))
        .map(|w| strip_trailing_punct(w))
        .collect();
    if !entity.is_empty() {
        let kind = ENTITY_KINDS.choose(rng).expect("non-empty");
        return format!("{base} ({}: {kind})", entity.join(" "));
    }
    let topic = words
        .iter()
        .map(|w| bare(w))
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
        .max_by_key(String::len)
        .unwrap_or_else(|| bare(words.first().copied().unwrap_or(q)));
    format!("{base} (meaning of {topic} in this context)")
}

fn subquestion_decomposition(q: &str, rng: &mut ChaCha8Rng) -> String {
    let mut marked = strip_trailing_punct(q).to_string();
    for sep in DECOMPOSE_SEPARATORS {
        marked = marked.replace(sep, "\u{1}");
    }
    let parts: Vec<String> = marked
        .split('\u{1}')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect();
    if parts.len() > 1 {
        return parts.join("; ");
    }
    let content: Vec<String> = q
        .split_whitespace()
        .map(bare)
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
        .collect();
    let focus = content.last().cloned().unwrap_or_else(|| bare(q));
    let follow = ["what is known about", "what defines"].choose(rng).expect("non-empty");
    format!("{}; {follow} {focus}", strip_trailing_punct(q))
}

fn remove_phrase_ci(text: &str, phrase: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let target: Vec<String> = phrase.split_whitespace().map(str::to_string).collect();
    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        let matches = i + target.len() <= words.len()
            && words[i..i + target.len()]
                .iter()
                .zip(&target)
                .all(|(w, t)| w.to_lowercase().trim_end_matches([',', '?']) == t.as_str());
        if matches {
            i += target.len();
        } else {
            out.push(words[i]);
            i += 1;
        }
    }
    out.join(" ")
}

fn concise_rewriting(q: &str, rng: &mut ChaCha8Rng) -> String {
    let mut text = q.to_string();
    for phrase in STOP_PHRASES {
        text = remove_phrase_ci(&text, phrase);
    }
    let keep_case = rng.gen_bool(0.5);
    let kept: Vec<String> = text
        .split_whitespace()
        .filter(|w| !STOPWORDS.contains(&bare(w).as_str()))
        .map(|w| {
            let w = strip_trailing_punct(w).trim_end_matches(',');
            if keep_case {
                w.to_string()
            } else {
                w.to_lowercase()
            }
        })
        .filter(|w| !w.is_empty())
        .collect();
    if kept.is_empty() {
        q.to_string()
    } else {
        kept.join(" ")
    }
}

fn neutralized_claim(q: &str, rng: &mut ChaCha8Rng) -> String {
    let mut text = q.trim().to_string();
    loop {
        let lower = text.to_lowercase();
        let before = text.len();
        if let Some(m) = CLAIM_MARKERS.iter().find(|m| lower.starts_with(*m)) {
            text = text[m.len()..].trim_start().to_string();
        } else if let Some(first) = text.split_whitespace().next() {
            if INTERROGATIVE_LEADS.contains(&first.to_lowercase().as_str()) {
                text = text[first.len()..].trim_start().to_string();
            }
        }
        if text.len() == before || text.is_empty() {
            break;
        }
    }
    let words: Vec<&str> = strip_trailing_punct(&text)
        .split_whitespace()
        .filter(|w| !AFFIRMING_WORDS.contains(&bare(w).as_str()))
        .collect();
    let rest = if words.is_empty() {
        strip_trailing_punct(q).to_string()
    } else {
        words.join(" ")
    };
    format!("{} {rest}", NEUTRAL_PREFIXES.choose(rng).expect("non-empty"))
}

const REASONING: [&str; 5] = [
    "The query may not share vocabulary with relevant documents, so I add related terms and synonyms.",
    "The query mentions a name that could refer to several things, so I make the intended referent explicit.",
    "The query bundles several information needs, so I split it into simpler sub-questions.",
    "The query carries conversational filler, so I keep only the informative terms.",
    "The query presupposes an answer, so I restate it as a neutral request for evidence.",
];

const ELABORATION: &[&str] = &[
    "Other strategies seem less suited here.",
    "This keeps the original intent intact.",
    "Dense retrievers respond well to this kind of change.",
    "I considered expanding the query instead but this is more direct.",
];

/// Raw model-style output for `q_orig` under `strategy_id`: one or more
/// reasoning sentences followed by the action JSON on its own line.
pub fn template_generate(q_orig: &str, strategy_id: i64, variant: TemplateVariant) -> Result<String, GeneratorError> {
    let sid = StrategyId::new(strategy_id).map_err(|_| GeneratorError::BadStrategyId(strategy_id))?;
    let (reasoning, rewrite) = match variant {
        TemplateVariant::Copy => (
            "The original query already looks adequate.".to_string(),
            q_orig.to_string(),
        ),
        TemplateVariant::Rewrite(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(sid.get()) << 56));
            let rewrite = match sid.get() {
                1 => semantic_expansion(q_orig, &mut rng),
                2 => entity_disambiguation(q_orig, &mut rng),
                3 => subquestion_decomposition(q_orig, &mut rng),
                4 => concise_rewriting(q_orig, &mut rng),
                _ => neutralized_claim(q_orig, &mut rng),
            };
            let mut reasoning = REASONING[sid.index()].to_string();
            let extras = rng.gen_range(0..=2);
            for extra in ELABORATION.choose_multiple(&mut rng, extras) {
                reasoning.push(' ');
                reasoning.push_str(extra);
            }
            (reasoning, rewrite)
        }
    };
    Ok(format!("{reasoning}\n{}", render_action(sid, &rewrite)))
}
