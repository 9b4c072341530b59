use serde_json::Value;

use super::{char_len, EvaluationContext, LayerId, LayerResult, RuleId, ToolCallRequest};

/// Layer 3: constraints derived from the tool's input schema.
///
/// Without a schema the layer passes. Rules SD-1..SD-3 run in order over the
/// top-level arguments; SD-4 only adds log flags.
pub fn l3_evaluate(req: &ToolCallRequest, ctx: &EvaluationContext) -> LayerResult {
    let Some(schema) = ctx.schema(&req.tool_name) else {
        return LayerResult::pass(LayerId::L3);
    };
    let policy = ctx.policy();
    let cfg = policy.config();
    let limits = policy.limits();
    let required: Vec<&str> = schema
        .get("required")
        .and_then(Value::as_array)
        .map(|items| items.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let strings: Vec<(&str, &str)> = req
        .arguments
        .iter()
        .filter_map(|(k, v)| v.as_str().map(|s| (k.as_str(), s)))
        .collect();

    for &(key, value) in strings.iter().filter(|(k, _)| cfg.free_text_params.contains(*k)) {
        let len = char_len(value);
        if len > limits.max_free_text_chars {
            return LayerResult::deny(
                LayerId::L3,
                RuleId::Sd1,
                format!(
                    "free-text parameter `{key}` is {len} characters, limit is {}",
                    limits.max_free_text_chars
                ),
            );
        }
        if let Some(pattern) = policy.credential_match(value) {
            return LayerResult::deny(
                LayerId::L3,
                RuleId::Sd1,
                format!("free-text parameter `{key}` matches credential pattern `{pattern}`"),
            );
        }
    }

    for &(key, value) in strings.iter().filter(|(k, _)| cfg.path_params.contains(*k)) {
        if policy.is_sensitive_path(value) {
            return LayerResult::deny(
                LayerId::L3,
                RuleId::Sd2,
                format!("filesystem parameter `{key}` names protected path `{value}`"),
            );
        }
    }

    for &(key, value) in strings.iter().filter(|(k, _)| !required.contains(k)) {
        let len = char_len(value);
        if len > limits.max_optional_chars {
            return LayerResult::deny(
                LayerId::L3,
                RuleId::Sd3,
                format!(
                    "optional parameter `{key}` is {len} characters, limit is {}",
                    limits.max_optional_chars
                ),
            );
        }
    }

    let flags = req
        .arguments
        .keys()
        .filter(|k| cfg.network_params.contains(k.as_str()))
        .map(|k| format!("SD-4 network parameter `{k}`"))
        .collect();
    LayerResult::pass(LayerId::L3).with_flags(flags)
}
