use super::{char_len, schema_digest, string_leaves, EvaluationContext, LayerId, LayerResult, RuleId, ToolCallRequest};

/// Layer 1: unconditional boundary checks, HB-1 through HB-5 in order.
///
/// Pure in `(req, ctx)`; never consults the provenance graph.
pub fn l1_evaluate(req: &ToolCallRequest, ctx: &EvaluationContext) -> LayerResult {
    let policy = ctx.policy();
    let limits = policy.limits();
    let leaves = string_leaves(&req.arguments);

    if let Some((key, value)) = leaves.iter().find(|(_, v)| char_len(v) > limits.max_argument_chars) {
        return LayerResult::deny(
            LayerId::L1,
            RuleId::Hb1,
            format!(
                "argument `{key}` is {} characters, limit is {}",
                char_len(value),
                limits.max_argument_chars
            ),
        );
    }

    if let Some((key, value)) = leaves
        .iter()
        .find(|(k, v)| policy.is_path_like(k, v) && policy.is_sensitive_path(v))
    {
        return LayerResult::deny(
            LayerId::L1,
            RuleId::Hb2,
            format!("argument `{key}` names protected path `{value}`"),
        );
    }

    let prior = ctx.call_count(&req.tool_name);
    if prior >= limits.max_calls_per_tool {
        return LayerResult::deny(
            LayerId::L1,
            RuleId::Hb3,
            format!(
                "`{}` already called {prior} times this session, limit is {}",
                req.tool_name, limits.max_calls_per_tool
            ),
        );
    }

    for (key, value) in &leaves {
        if let Some(pattern) = policy.credential_match(value) {
            return LayerResult::deny(
                LayerId::L1,
                RuleId::Hb4,
                format!("argument `{key}` matches credential pattern `{pattern}`"),
            );
        }
    }

    if let (Some(pinned), Some(schema)) = (ctx.pinned_digest(&req.tool_name), ctx.schema(&req.tool_name)) {
        if schema_digest(schema) != *pinned {
            return LayerResult::deny(
                LayerId::L1,
                RuleId::Hb5,
                format!("input schema of `{}` changed since it was pinned", req.tool_name),
            );
        }
    }

    LayerResult::pass(LayerId::L1)
}
