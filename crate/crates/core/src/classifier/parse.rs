//! Tolerant extraction of the JSON verdict from model text.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason}")]
pub struct ParseFailure {
    pub reason: String,
    pub raw: String,
}

/// Flag tokens and rationales exactly as the model wrote them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedOutput {
    pub flags: Vec<String>,
    pub rationale: BTreeMap<String, String>,
}

/// Byte ranges of balanced `{…}` spans, in order of their opening brace.
fn balanced_objects(text: &str) -> impl Iterator<Item = &str> + '_ {
    let bytes = text.as_bytes();
    let mut start = 0;
    std::iter::from_fn(move || {
        while start < bytes.len() {
            let open = start + text[start..].find('{')?;
            start = open + 1;
            let mut depth = 0usize;
            let mut in_string = false;
            let mut escaped = false;
            for (offset, &b) in bytes[open..].iter().enumerate() {
                if in_string {
                    match (escaped, b) {
                        (true, _) => escaped = false,
                        (false, b'\\') => escaped = true,
                        (false, b'"') => in_string = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_string = true,
                    b'{' => depth += 1,
                    b'}' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(&text[open..=open + offset]);
                        }
                    }
                    _ => {}
                }
            }
        }
        None
    })
}

/// Finds the first balanced JSON object in `text` (bare, fenced, or
/// surrounded by prose) and reads its `flags` array and optional
/// `rationale` object. Other keys are ignored.
pub fn parse_model_output(text: &str) -> Result<ParsedOutput, ParseFailure> {
    let fail = |reason: &str| ParseFailure {
        reason: reason.to_string(),
        raw: text.to_string(),
    };
    let object = balanced_objects(text)
        .find_map(|candidate| match serde_json::from_str::<Value>(candidate) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        })
        .ok_or_else(|| fail("no JSON object found"))?;

    let flags = match object.get("flags") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| fail("\"flags\" must contain only strings"))?,
        Some(_) => return Err(fail("\"flags\" is not an array")),
        None => return Err(fail("\"flags\" missing")),
    };

    let rationale = match object.get("rationale") {
        Some(Value::Object(map)) => map
            .iter()
            .map(|(k, v)| {
                let text = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), text)
            })
            .collect(),
        _ => BTreeMap::new(),
    };
    Ok(ParsedOutput { flags, rationale })
}
