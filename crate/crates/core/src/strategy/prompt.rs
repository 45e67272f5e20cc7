use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{StrategyCatalog, StrategyError};

/// Whether the prompt pushes the model to always attempt a rewrite or lets
/// it return the original query unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    #[default]
    Proactive,
    Conservative,
}

const PROACTIVE_CLAUSE: &str = "## Exploration\n\
Always attempt a rewrite. Even when the original query looks reasonable, choose the most \
promising strategy and produce a rewritten query that differs from the original; do not \
return the query unchanged.\n\n";

const CONSERVATIVE_CLAUSE: &str = "## Exploration\n\
Rewrite the query only when a strategy clearly helps. If no better query is found, keep the \
original unchanged and return it as the rewritten query.\n\n";

pub(crate) const QUERY_MARKER: &str = "## Query\nOriginal query: ";

/// A strategy-guided prompt split into its query-independent parts and the
/// query block. `header` is identical for every query and style, so the
/// `static_prefix` (header plus exploration clause) can be cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub header: String,
    pub exploration: &'static str,
    pub query_block: String,
}

fn render_header(catalog: &StrategyCatalog) -> String {
    let mut h = String::new();
    h.push_str(
        "You rewrite search queries to improve dense retrieval. Given an original query, pick \
exactly one of the strategies below, apply it, and output the rewritten query together \
with the integer id of the strategy you used.\n\n## Strategies\n",
    );
    for s in catalog.iter() {
        let _ = writeln!(
            h,
            "{id}. {name}\nTargets: {challenge}\nUse when: {use_case}\n{fragment}\n",
            id = s.id,
            name = s.name,
            challenge = s.targeted_challenge,
            use_case = s.primary_use_case,
            fragment = s.prompt_fragment(),
        );
    }
    h.push_str(
        "## Output format\nThink briefly about which strategy fits, then end your answer with a \
single JSON object on its own line:\n{\"strategy_id\": <1-5>, \"rewritten_query\": \"<rewritten query>\"}\n\n",
    );
    h
}

impl Prompt {
    pub fn new(catalog: &StrategyCatalog, q_orig: &str, style: PromptStyle) -> Result<Self, StrategyError> {
        if q_orig.trim().is_empty() {
            return Err(StrategyError::EmptyQuery);
        }
        let exploration = match style {
            PromptStyle::Proactive => PROACTIVE_CLAUSE,
            PromptStyle::Conservative => CONSERVATIVE_CLAUSE,
        };
        Ok(Self {
            header: render_header(catalog),
            exploration,
            query_block: format!("{QUERY_MARKER}{q_orig}\n"),
        })
    }

    pub fn static_prefix(&self) -> String {
        format!("{}{}", self.header, self.exploration)
    }

    pub fn text(&self) -> String {
        format!("{}{}{}", self.header, self.exploration, self.query_block)
    }

    /// Recovers the original query from a rendered prompt.
    pub fn extract_query(prompt: &str) -> Option<&str> {
        let start = prompt.rfind(QUERY_MARKER)? + QUERY_MARKER.len();
        let rest = &prompt[start..];
        Some(rest.strip_suffix('\n').unwrap_or(rest))
    }
}

/// Full prompt text for `q_orig` using the bundled catalog.
pub fn build_prompt(q_orig: &str, style: PromptStyle) -> Result<String, StrategyError> {
    Ok(Prompt::new(&StrategyCatalog::default(), q_orig, style)?.text())
}
