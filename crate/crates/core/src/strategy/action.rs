use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StrategyId;

/// A parsed policy output: the rewritten query and the strategy it claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub rewritten_query: String,
    pub strategy_id: StrategyId,
    /// Full generation, reasoning included.
    pub raw_output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ParseFailureKind {
    MissingObject,
    BadStrategyId(i64),
    EmptyQuery,
}

/// Output that did not contain a usable action. Failures are data: they flow
/// into reward computation rather than aborting a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub raw_output: String,
}

const ID_FIELD: &str = "strategy_id";
const QUERY_FIELD: &str = "rewritten_query";

/// Finds the last JSON object in `raw` carrying both action fields.
fn last_action_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    raw.char_indices()
        .rev()
        .filter(|&(_, c)| c == '{')
        .find_map(|(pos, _)| {
            let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(Value::Object(map))) if map.contains_key(ID_FIELD) && map.contains_key(QUERY_FIELD) => Some(map),
                _ => None,
            }
        })
}

pub fn parse_action(raw_output: &str) -> Result<Action, ParseFailure> {
    let fail = |kind| ParseFailure {
        kind,
        raw_output: raw_output.to_string(),
    };
    let obj = last_action_object(raw_output).ok_or_else(|| fail(ParseFailureKind::MissingObject))?;

    let id = match &obj[ID_FIELD] {
        Value::Number(n) => n.as_i64().ok_or_else(|| fail(ParseFailureKind::BadStrategyId(-1)))?,
        _ => return Err(fail(ParseFailureKind::BadStrategyId(-1))),
    };
    let strategy_id = StrategyId::new(id).map_err(|_| fail(ParseFailureKind::BadStrategyId(id)))?;

    let rewritten_query = match &obj[QUERY_FIELD] {
        Value::String(s) if !s.trim().is_empty() => s.clone(),
        _ => return Err(fail(ParseFailureKind::EmptyQuery)),
    };
    Ok(Action {
        rewritten_query,
        strategy_id,
        raw_output: raw_output.to_string(),
    })
}

/// Wire form of an action: the JSON object alone.
pub fn render_action(strategy_id: StrategyId, rewritten_query: &str) -> String {
    serde_json::json!({ ID_FIELD: strategy_id.get(), QUERY_FIELD: rewritten_query }).to_string()
}
