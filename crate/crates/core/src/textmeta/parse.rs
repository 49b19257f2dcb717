use serde_json::{Map, Value};

use crate::types::{MetaPrediction, MetaRecord};

pub const META_OPEN: &str = "<meta>";
pub const META_CLOSE: &str = "</meta>";

const KEYS: [&str; 3] = ["math_notion", "pass_rate", "solution_length"];

/// Canonical JSON for a record: keys in schema order, no whitespace.
pub fn serialize_meta_record(record: &MetaRecord) -> String {
    serde_json::to_string(record).expect("meta record serializes")
}

/// Canonical meta output: the reasoning span followed by the record.
pub fn render_meta_text(reasoning: &str, record: &MetaRecord) -> String {
    format!("{META_OPEN}{reasoning}{META_CLOSE}\n{}", serialize_meta_record(record))
}

fn first_object(text: &str) -> Option<Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

fn record_from(map: &Map<String, Value>, max_response_tokens: u32) -> Option<MetaRecord> {
    if map.len() != KEYS.len() || !KEYS.iter().all(|k| map.contains_key(*k)) {
        return None;
    }
    let notions = map["math_notion"]
        .as_array()?
        .iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()?;
    let pass_rate = u32::try_from(map["pass_rate"].as_u64()?).ok()?;
    let solution_length = u32::try_from(map["solution_length"].as_u64()?).ok()?;
    let record = MetaRecord {
        math_notion: notions,
        pass_rate,
        solution_length,
    };
    record.in_range(max_response_tokens).then_some(record)
}

/// Parses raw meta-rollout text. Never fails: malformed or out-of-range
/// output yields `parse_ok = false` with `parsed = None`. Values are not
/// clamped.
pub fn parse_meta_output(text: &str, max_response_tokens: u32) -> MetaPrediction {
    let mut prediction = MetaPrediction {
        tokens: Vec::new(),
        logprobs: Vec::new(),
        raw_text: text.to_string(),
        reasoning_text: String::new(),
        parsed: None,
        parse_ok: false,
    };
    let Some(open) = text.find(META_OPEN) else {
        return prediction;
    };
    let body_start = open + META_OPEN.len();
    let Some(close_rel) = text[body_start..].find(META_CLOSE) else {
        return prediction;
    };
    prediction.reasoning_text = text[body_start..body_start + close_rel].to_string();
    let after = &text[body_start + close_rel + META_CLOSE.len()..];
    if let Some(map) = first_object(after) {
        prediction.parsed = record_from(&map, max_response_tokens);
        prediction.parse_ok = prediction.parsed.is_some();
    }
    prediction
}
