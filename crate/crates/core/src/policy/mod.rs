//! Layered enforcement pipeline.
//!
//! Layers run in a fixed order and the first `Deny` ends evaluation:
//!
//! 1. hard boundaries (`HB-1`..`HB-5`)
//! 2. provenance: the flat citation baseline or the graph-aware layer
//! 3. schema-derived constraints (`SD-1`..`SD-4`)
//! 4. manual policy from the session's capability token

mod config;
mod context;
mod flat;
mod graph_layer;
mod hard;
mod schema;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{Arguments, NodeId, ProvenanceGraph};

pub use config::{
    normalize_path, CredentialPattern, DenialDetail, LayerSlot, Limits, Policy, PolicyConfig, PolicyError,
    ProvenanceScope,
};
pub use context::{schema_digest, EvaluationContext, HistoryEntry, SchemaDigest};
pub use flat::l2_flat_evaluate;
pub use graph_layer::{l2g_evaluate, CAUSALITY_LAUNDERING};
pub use hard::l1_evaluate;
pub use schema::l3_evaluate;

use crate::capability::CapabilityToken;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerId {
    L1,
    L2,
    L2G,
    L3,
    L4,
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Deny,
}

/// Stable rule identifiers, as written to audit entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleId {
    #[serde(rename = "HB-1")]
    Hb1,
    #[serde(rename = "HB-2")]
    Hb2,
    #[serde(rename = "HB-3")]
    Hb3,
    #[serde(rename = "HB-4")]
    Hb4,
    #[serde(rename = "HB-5")]
    Hb5,
    #[serde(rename = "L2-ungrounded")]
    L2Ungrounded,
    #[serde(rename = "L2G-counterfactual")]
    L2gCounterfactual,
    #[serde(rename = "L2G-trust")]
    L2gTrust,
    #[serde(rename = "L2G-trust-on-field")]
    L2gTrustOnField,
    #[serde(rename = "SD-1")]
    Sd1,
    #[serde(rename = "SD-2")]
    Sd2,
    #[serde(rename = "SD-3")]
    Sd3,
    #[serde(rename = "L4-not-granted")]
    L4NotGranted,
    #[serde(rename = "L4-budget")]
    L4Budget,
    #[serde(rename = "L4-blocklist")]
    L4Blocklist,
    #[serde(rename = "L4-value-constraint")]
    L4ValueConstraint,
    #[serde(rename = "graph-dangling-input")]
    GraphDanglingInput,
    #[serde(rename = "internal-error")]
    InternalError,
}

impl RuleId {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::Hb1 => "HB-1",
            RuleId::Hb2 => "HB-2",
            RuleId::Hb3 => "HB-3",
            RuleId::Hb4 => "HB-4",
            RuleId::Hb5 => "HB-5",
            RuleId::L2Ungrounded => "L2-ungrounded",
            RuleId::L2gCounterfactual => "L2G-counterfactual",
            RuleId::L2gTrust => "L2G-trust",
            RuleId::L2gTrustOnField => "L2G-trust-on-field",
            RuleId::Sd1 => "SD-1",
            RuleId::Sd2 => "SD-2",
            RuleId::Sd3 => "SD-3",
            RuleId::L4NotGranted => "L4-not-granted",
            RuleId::L4Budget => "L4-budget",
            RuleId::L4Blocklist => "L4-blocklist",
            RuleId::L4ValueConstraint => "L4-value-constraint",
            RuleId::GraphDanglingInput => "graph-dangling-input",
            RuleId::InternalError => "internal-error",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer's verdict. `rule` and `reason` are set exactly on `Deny`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerResult {
    pub layer: LayerId,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Log-only observations, e.g. SD-4 network parameters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl LayerResult {
    pub fn pass(layer: LayerId) -> Self {
        LayerResult {
            layer,
            verdict: Verdict::Pass,
            rule: None,
            reason: None,
            flags: Vec::new(),
        }
    }

    pub fn deny(layer: LayerId, rule: RuleId, reason: impl Into<String>) -> Self {
        LayerResult {
            layer,
            verdict: Verdict::Deny,
            rule: Some(rule),
            reason: Some(reason.into()),
            flags: Vec::new(),
        }
    }

    pub fn with_flags(mut self, flags: Vec<String>) -> Self {
        self.flags = flags;
        self
    }

    pub fn is_deny(&self) -> bool {
        self.verdict == Verdict::Deny
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Allow,
    Deny,
}

/// Composed pipeline outcome with every evaluated layer's result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub layer_results: Vec<LayerResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denied_by: Option<LayerId>,
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        self.outcome == Outcome::Allow
    }

    fn denying(&self) -> Option<&LayerResult> {
        self.layer_results.last().filter(|r| r.is_deny())
    }

    pub fn rule(&self) -> Option<RuleId> {
        self.denying().and_then(|r| r.rule)
    }

    pub fn reason(&self) -> &str {
        self.denying().and_then(|r| r.reason.as_deref()).unwrap_or("allowed")
    }

    /// Deny outside the layer pipeline, e.g. on an internal error.
    pub fn fail_closed(layer: LayerId, rule: RuleId, reason: impl Into<String>) -> Self {
        Decision {
            outcome: Outcome::Deny,
            layer_results: vec![LayerResult::deny(layer, rule, reason)],
            denied_by: Some(layer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Flat,
    Graph,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Flat => "flat",
            Mode::Graph => "graph",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub tool_name: String,
    pub arguments: Arguments,
    #[serde(default)]
    pub input_data: Vec<NodeId>,
}

impl ToolCallRequest {
    pub fn new(tool_name: impl Into<String>, arguments: Arguments) -> Self {
        ToolCallRequest {
            tool_name: tool_name.into(),
            arguments,
            input_data: Vec::new(),
        }
    }

    pub fn with_inputs(mut self, inputs: impl IntoIterator<Item = NodeId>) -> Self {
        self.input_data.extend(inputs);
        self
    }
}

/// Which provenance layer fills the L2 slot.
#[derive(Debug, Clone, Copy)]
pub enum Provenance<'g> {
    Flat,
    Graph { graph: &'g ProvenanceGraph, call: NodeId },
}

/// Compose layers with strict short-circuit: stop at the first `Deny`.
pub fn run_layers<F>(slots: &[LayerSlot], mut evaluate: F) -> Decision
where
    F: FnMut(LayerSlot) -> LayerResult,
{
    let mut layer_results = Vec::with_capacity(slots.len());
    for &slot in slots {
        let result = evaluate(slot);
        let denied = result.is_deny().then_some(result.layer);
        layer_results.push(result);
        if let Some(layer) = denied {
            return Decision {
                outcome: Outcome::Deny,
                layer_results,
                denied_by: Some(layer),
            };
        }
    }
    Decision {
        outcome: Outcome::Allow,
        layer_results,
        denied_by: None,
    }
}

pub fn l4_evaluate(req: &ToolCallRequest, token: &CapabilityToken, ctx: &EvaluationContext) -> LayerResult {
    token.authorize(req, ctx.call_counts())
}

/// Run every enabled layer of the session policy in order.
pub fn pipeline_evaluate(req: &ToolCallRequest, ctx: &EvaluationContext, provenance: Provenance<'_>) -> Decision {
    let policy = ctx.policy();
    let slots: Vec<LayerSlot> = LayerSlot::ALL
        .into_iter()
        .filter(|&s| policy.layer_enabled(s))
        .collect();
    run_layers(&slots, |slot| match slot {
        LayerSlot::Hard => l1_evaluate(req, ctx),
        LayerSlot::Provenance => match provenance {
            Provenance::Flat => l2_flat_evaluate(req, ctx),
            Provenance::Graph { graph, call } => l2g_evaluate(req, call, graph, policy)
                .unwrap_or_else(|e| LayerResult::deny(LayerId::L2G, RuleId::InternalError, e.to_string())),
        },
        LayerSlot::Schema => l3_evaluate(req, ctx),
        LayerSlot::Manual => l4_evaluate(req, ctx.token(), ctx),
    })
}

/// String leaves of an argument map, each paired with its nearest object key.
pub(crate) fn string_leaves(args: &Arguments) -> Vec<(&str, &str)> {
    fn walk<'a>(key: &'a str, value: &'a serde_json::Value, out: &mut Vec<(&'a str, &'a str)>) {
        match value {
            serde_json::Value::String(s) => out.push((key, s)),
            serde_json::Value::Array(items) => items.iter().for_each(|v| walk(key, v, out)),
            serde_json::Value::Object(map) => map.iter().for_each(|(k, v)| walk(k, v, out)),
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (k, v) in args {
        walk(k, v, &mut out);
    }
    out
}

pub(crate) fn char_len(s: &str) -> usize {
    s.chars().count()
}
