use super::{LayerId, LayerResult, Policy, RuleId, ToolCallRequest};
use crate::graph::{GraphError, NodeId, NodeKind, ProvenanceGraph};

/// Denial reason for calls reached by a counterfactual chain.
pub const CAUSALITY_LAUNDERING: &str = "causality laundering detected";

/// Graph-aware provenance layer.
///
/// `call` must already carry its `InputTo` and `Counterfactual` edges. The
/// counterfactual query runs before the trust query so that the more
/// specific diagnosis is reported when both fire. Calls outside the policy's
/// provenance scope pass without queries.
pub fn l2g_evaluate(
    req: &ToolCallRequest,
    call: NodeId,
    graph: &ProvenanceGraph,
    policy: &Policy,
) -> Result<LayerResult, GraphError> {
    if !policy.is_graph_checked(&req.tool_name) {
        return Ok(LayerResult::pass(LayerId::L2G));
    }

    let chains = graph.counterfactual_chains(call)?;
    if let Some(chain) = chains.first() {
        let path: Vec<String> = chain.nodes.iter().map(NodeId::to_string).collect();
        return Ok(
            LayerResult::deny(LayerId::L2G, RuleId::L2gCounterfactual, CAUSALITY_LAUNDERING)
                .with_flags(vec![format!("witness {}", path.join(" -> "))]),
        );
    }

    let threshold = policy.threshold();
    let below = graph.ancestors_below(call, threshold)?;
    if below.is_empty() {
        return Ok(LayerResult::pass(LayerId::L2G));
    }
    let min = graph.min_trust(call)?;
    let field_only = below.iter().all(|&n| graph.kind(n) == Some(NodeKind::DataField));
    let (rule, what) = if field_only {
        (RuleId::L2gTrustOnField, "field-level provenance")
    } else {
        (RuleId::L2gTrust, "minimum reachable trust")
    };
    Ok(LayerResult::deny(
        LayerId::L2G,
        rule,
        format!("{what} {min} is below threshold {threshold}"),
    ))
}
