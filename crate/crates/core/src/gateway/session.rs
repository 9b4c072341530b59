use std::io;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

use crate::audit::{AuditLog, DecisionRecord};
use crate::capability::CapabilityToken;
use crate::graph::{Arguments, GraphError, NodeId, ProvenanceGraph, TrustOverrideMap};
use crate::lattice::TrustLevel;
use crate::policy::{
    pipeline_evaluate, Decision, EvaluationContext, LayerId, LayerResult, Mode, Policy, Provenance, RuleId,
    ToolCallRequest,
};

/// Reserved argument carrying explicit data-node references.
pub const PROVENANCE_ARG: &str = "$provenance";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown call handle")]
    UnknownCall,
    #[error("result-for-denied-call: `{0}` was not allowed")]
    ResultForDeniedCall(String),
    #[error("duplicate-result: a result for `{0}` is already recorded")]
    DuplicateResult(String),
    #[error("malformed `$provenance` argument: expected an array of node ids")]
    MalformedProvenance,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("audit write failed: {0}")]
    Audit(#[from] io::Error),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownCall => "unknown-call",
            SessionError::ResultForDeniedCall(_) => "result-for-denied-call",
            SessionError::DuplicateResult(_) => "duplicate-result",
            SessionError::MalformedProvenance => "malformed-provenance",
            SessionError::Graph(e) => e.code(),
            SessionError::Audit(_) => "audit-write-failed",
        }
    }
}

/// Refers to one evaluated call within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallHandle {
    seq: usize,
    node: Option<NodeId>,
}

impl CallHandle {
    /// The call's graph node; `None` in flat mode.
    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn seq(&self) -> usize {
        self.seq
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub call: CallHandle,
    pub decision: Decision,
}

/// An evaluated decision whose audit entry has not been written yet.
#[must_use = "every evaluation must be committed to the audit log"]
#[derive(Debug)]
pub struct PendingAudit {
    tool_name: String,
    arguments: Arguments,
    decision: Decision,
}

#[derive(Debug)]
struct CallRecord {
    tool_name: String,
    history_index: Option<usize>,
    node: Option<NodeId>,
    recorded: bool,
}

/// One mediated agent session.
///
/// Requests must be evaluated one at a time in arrival order: the pending
/// denial slot and per-tool counters depend on it.
#[derive(Debug)]
pub struct Session {
    id: String,
    mode: Mode,
    graph: ProvenanceGraph,
    ctx: EvaluationContext,
    audit: AuditLog,
    calls: Vec<CallRecord>,
    last_pipeline_time: Duration,
}

impl Session {
    pub fn new(id: impl Into<String>, mode: Mode, policy: Arc<Policy>, token: Arc<CapabilityToken>) -> Self {
        Session {
            id: id.into(),
            mode,
            graph: ProvenanceGraph::new(),
            ctx: EvaluationContext::new(policy, token),
            audit: AuditLog::new(),
            calls: Vec::new(),
            last_pipeline_time: Duration::ZERO,
        }
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = audit;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn policy(&self) -> &Policy {
        self.ctx.policy()
    }

    pub fn context(&self) -> &EvaluationContext {
        &self.ctx
    }

    pub fn graph(&self) -> &ProvenanceGraph {
        &self.graph
    }

    pub(crate) fn graph_mut(&mut self) -> &mut ProvenanceGraph {
        &mut self.graph
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn add_user_message(&mut self, message: impl Into<String>) {
        self.ctx.add_user_message(message);
    }

    /// Install a tool's advertised input schema, pinning it on first sight.
    pub fn observe_schema(&mut self, tool: impl Into<String>, schema: Value) {
        self.ctx.observe_schema(tool, schema);
    }

    /// Wall time of the most recent pipeline run, excluding graph
    /// construction and audit writes.
    pub fn last_pipeline_time(&self) -> Duration {
        self.last_pipeline_time
    }

    /// Build a request from raw client arguments.
    ///
    /// An explicit `$provenance` array names the input data nodes and is
    /// stripped from the arguments. Otherwise, in graph mode with auto-link
    /// enabled, every data node whose string value (at least
    /// `auto_link_min_chars` long) occurs inside an argument is bound.
    pub fn bind_request(&self, tool_name: &str, mut arguments: Arguments) -> Result<ToolCallRequest, SessionError> {
        let explicit = arguments.remove(PROVENANCE_ARG);
        let inputs = match explicit {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_u64().map(NodeId::new).ok_or(SessionError::MalformedProvenance))
                .collect::<Result<Vec<_>, _>>()?,
            Some(_) => return Err(SessionError::MalformedProvenance),
            None if self.mode == Mode::Graph && self.policy().config().auto_link => self.auto_link(&arguments),
            None => Vec::new(),
        };
        Ok(ToolCallRequest::new(tool_name, arguments).with_inputs(inputs))
    }

    fn auto_link(&self, arguments: &Arguments) -> Vec<NodeId> {
        let min = self.policy().config().auto_link_min_chars;
        let leaves = crate::policy::string_leaves(arguments);
        self.graph
            .nodes()
            .filter_map(|(id, label)| match label.value() {
                Some(Value::String(s)) if s.chars().count() >= min => Some((id, s.as_str())),
                _ => None,
            })
            .filter(|(_, needle)| leaves.iter().any(|(_, hay)| hay.contains(needle)))
            .map(|(id, _)| id)
            .collect()
    }

    /// Evaluate and audit one request.
    pub fn evaluate(&mut self, req: ToolCallRequest) -> Result<Evaluation, SessionError> {
        let (evaluation, pending) = self.evaluate_deferred(req);
        self.commit_audit(pending, None)?;
        Ok(evaluation)
    }

    /// Evaluate one request, leaving the audit write to the caller so that an
    /// execution failure can be annotated on the same entry.
    pub fn evaluate_deferred(&mut self, req: ToolCallRequest) -> (Evaluation, PendingAudit) {
        let (node, decision) = match self.mode {
            Mode::Graph => self.evaluate_graph(&req),
            Mode::Flat => (None, self.timed_pipeline(&req, Provenance::Flat)),
        };

        let history_index = decision
            .is_allow()
            .then(|| self.ctx.record_allow(&req.tool_name, req.arguments.clone()));
        let seq = self.calls.len();
        self.calls.push(CallRecord {
            tool_name: req.tool_name.clone(),
            history_index,
            node,
            recorded: false,
        });

        let evaluation = Evaluation {
            call: CallHandle { seq, node },
            decision: decision.clone(),
        };
        let pending = PendingAudit {
            tool_name: req.tool_name,
            arguments: req.arguments,
            decision,
        };
        (evaluation, pending)
    }

    fn evaluate_graph(&mut self, req: &ToolCallRequest) -> (Option<NodeId>, Decision) {
        let (call, dangling) = match self
            .graph
            .add_call_node(&req.tool_name, req.arguments.clone(), &req.input_data)
        {
            Ok(call) => (call, None),
            Err(err) => {
                let call = self
                    .graph
                    .add_call_node(&req.tool_name, req.arguments.clone(), &[])
                    .expect("a call without inputs always inserts");
                (call, Some(err))
            }
        };

        let mut internal = None;
        if let Some(denied) = self.graph.take_pending_denial() {
            if let Err(err) = self.graph.link_counterfactual(denied, call) {
                internal = Some(err);
            }
        }

        let decision = match (dangling, internal) {
            (Some(err), _) => Decision::fail_closed(LayerId::L2G, RuleId::GraphDanglingInput, err.to_string()),
            (None, Some(err)) => Decision::fail_closed(LayerId::L2G, RuleId::InternalError, err.to_string()),
            (None, None) => {
                let graph = &self.graph;
                let start = Instant::now();
                let decision = pipeline_evaluate(req, &self.ctx, Provenance::Graph { graph, call });
                self.last_pipeline_time = start.elapsed();
                decision
            }
        };

        if !decision.is_allow() {
            self.graph
                .add_denied_action(&req.tool_name, req.arguments.clone(), decision.reason());
        }
        (Some(call), decision)
    }

    fn timed_pipeline(&mut self, req: &ToolCallRequest, provenance: Provenance<'_>) -> Decision {
        let start = Instant::now();
        let decision = pipeline_evaluate(req, &self.ctx, provenance);
        self.last_pipeline_time = start.elapsed();
        decision
    }

    pub fn commit_audit(&mut self, pending: PendingAudit, annotation: Option<String>) -> Result<(), SessionError> {
        self.audit.append(DecisionRecord {
            tool_name: &pending.tool_name,
            arguments: &pending.arguments,
            decision: &pending.decision,
            annotation,
        })?;
        Ok(())
    }

    /// Audit a request that could not be turned into a `ToolCallRequest`.
    pub fn reject_malformed(
        &mut self,
        tool_name: &str,
        arguments: &Arguments,
        reason: &str,
    ) -> Result<Decision, SessionError> {
        let decision = Decision::fail_closed(LayerId::L1, RuleId::InternalError, reason);
        self.audit.append(DecisionRecord {
            tool_name,
            arguments,
            decision: &decision,
            annotation: None,
        })?;
        Ok(decision)
    }

    /// Record the output of an allowed call. Returns the new data node ids
    /// (data node first, then fields); empty in flat mode.
    pub fn record_tool_result(
        &mut self,
        call: CallHandle,
        value: Value,
        trust: TrustLevel,
        overrides: &TrustOverrideMap,
    ) -> Result<Vec<NodeId>, SessionError> {
        let record = self.calls.get(call.seq).ok_or(SessionError::UnknownCall)?;
        let Some(history_index) = record.history_index else {
            return Err(SessionError::ResultForDeniedCall(record.tool_name.clone()));
        };
        if record.recorded {
            return Err(SessionError::DuplicateResult(record.tool_name.clone()));
        }
        let ids = match record.node {
            Some(node) => self.graph.record_output(node, value.clone(), trust, overrides)?,
            None => Vec::new(),
        };
        self.ctx.record_output(history_index, value);
        self.calls[call.seq].recorded = true;
        Ok(ids)
    }

    /// Every layer's standalone verdict for `req`, without short-circuit.
    ///
    /// Materializes the call node like [`Session::evaluate`] but records no
    /// decision. Diagnostic use only.
    pub(crate) fn probe_layers(&mut self, req: &ToolCallRequest) -> Vec<LayerResult> {
        use crate::policy::{l1_evaluate, l2_flat_evaluate, l2g_evaluate, l3_evaluate, l4_evaluate};
        let provenance = match self.mode {
            Mode::Flat => None,
            Mode::Graph => {
                let call = self
                    .graph
                    .add_call_node(&req.tool_name, req.arguments.clone(), &req.input_data)
                    .ok();
                if let (Some(call), Some(denied)) = (call, self.graph.take_pending_denial()) {
                    let _ = self.graph.link_counterfactual(denied, call);
                }
                call
            }
        };
        let l2 = match provenance {
            None => l2_flat_evaluate(req, &self.ctx),
            Some(call) => l2g_evaluate(req, call, &self.graph, self.ctx.policy())
                .unwrap_or_else(|e| LayerResult::deny(LayerId::L2G, RuleId::InternalError, e.to_string())),
        };
        vec![
            l1_evaluate(req, &self.ctx),
            l2,
            l3_evaluate(req, &self.ctx),
            l4_evaluate(req, self.ctx.token(), &self.ctx),
        ]
    }
}
