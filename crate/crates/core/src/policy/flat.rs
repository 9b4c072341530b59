use serde_json::Value;

use super::{char_len, string_leaves, EvaluationContext, LayerId, LayerResult, RuleId, ToolCallRequest};

/// Flat citation baseline.
///
/// Token-like string arguments (no whitespace, at least `flat_min_chars`
/// long) must occur verbatim in an earlier tool output, an earlier argument,
/// or a user message. Free text containing whitespace is treated as composed
/// by the agent and is not checked. The layer has no notion of lineage or of
/// fields within a value.
pub fn l2_flat_evaluate(req: &ToolCallRequest, ctx: &EvaluationContext) -> LayerResult {
    let min = ctx.policy().config().flat_min_chars;
    let mut corpus: Vec<&str> = ctx.user_messages().iter().map(String::as_str).collect();
    for entry in ctx.call_history() {
        corpus.extend(string_leaves(&entry.arguments).into_iter().map(|(_, v)| v));
        if let Some(output) = &entry.output {
            collect_strings(output, &mut corpus);
        }
    }

    for (key, value) in string_leaves(&req.arguments) {
        if char_len(value) < min || value.chars().any(char::is_whitespace) {
            continue;
        }
        if !corpus.iter().any(|text| text.contains(value)) {
            return LayerResult::deny(
                LayerId::L2,
                RuleId::L2Ungrounded,
                format!("argument `{key}` does not appear in session history"),
            );
        }
    }
    LayerResult::pass(LayerId::L2)
}

fn collect_strings<'a>(value: &'a Value, out: &mut Vec<&'a str>) {
    match value {
        Value::String(s) => out.push(s),
        Value::Array(items) => items.iter().for_each(|v| collect_strings(v, out)),
        Value::Object(map) => map.values().for_each(|v| collect_strings(v, out)),
        _ => {}
    }
}
