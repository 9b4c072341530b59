//! Session provenance graph.
//!
//! Nodes are tool calls, returned data items, fields of structured data, and
//! denied actions. Edges record data flow (`DirectOutput`, `InputTo`),
//! structure (`FieldOf`), and denial-induced influence (`Counterfactual`).
//!
//! Node ids are handed out in creation order and every edge runs from a lower
//! id to a higher one, so the graph is acyclic by construction.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::lattice::TrustLevel;

/// Tool-call arguments in canonical (sorted-key) form.
pub type Arguments = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(u64);

impl NodeId {
    pub fn new(raw: u64) -> Self {
        NodeId(raw)
    }

    pub fn get(self) -> u64 {
        self.0
    }

    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Call,
    Data,
    DataField,
    DeniedAction,
}

impl NodeKind {
    pub fn is_data(self) -> bool {
        matches!(self, NodeKind::Data | NodeKind::DataField)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    DirectOutput,
    InputTo,
    Counterfactual,
    FieldOf,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [
        EdgeKind::DirectOutput,
        EdgeKind::InputTo,
        EdgeKind::Counterfactual,
        EdgeKind::FieldOf,
    ];

    /// Source/target kind table for each edge label.
    pub fn admits(self, src: NodeKind, dst: NodeKind) -> bool {
        use NodeKind::*;
        match self {
            EdgeKind::DirectOutput => src == Call && dst == Data,
            EdgeKind::InputTo => src.is_data() && dst == Call,
            EdgeKind::FieldOf => src == DataField && dst == Data,
            EdgeKind::Counterfactual => src == DeniedAction && dst == Call,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum NodeLabel {
    Call {
        tool_name: String,
        arguments: Arguments,
        timestamp: u64,
    },
    Data {
        value: Value,
        trust: TrustLevel,
    },
    DataField {
        field_key: String,
        value: Value,
        trust: TrustLevel,
    },
    DeniedAction {
        tool_name: String,
        arguments: Arguments,
        denial_reason: String,
        timestamp: u64,
    },
}

impl NodeLabel {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeLabel::Call { .. } => NodeKind::Call,
            NodeLabel::Data { .. } => NodeKind::Data,
            NodeLabel::DataField { .. } => NodeKind::DataField,
            NodeLabel::DeniedAction { .. } => NodeKind::DeniedAction,
        }
    }

    pub fn trust(&self) -> Option<TrustLevel> {
        match self {
            NodeLabel::Data { trust, .. } | NodeLabel::DataField { trust, .. } => Some(*trust),
            _ => None,
        }
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            NodeLabel::Data { value, .. } | NodeLabel::DataField { value, .. } => Some(value),
            _ => None,
        }
    }
}

/// Per-field trust overrides applied when a structured output is decomposed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrustOverrideMap(BTreeMap<String, TrustLevel>);

impl TrustOverrideMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, trust: TrustLevel) -> Self {
        self.0.insert(key.into(), trust);
        self
    }

    pub fn get(&self, key: &str) -> Option<TrustLevel> {
        self.0.get(key).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Drop overrides whose key is not a top-level field of `value`.
    pub fn restricted_to(&self, value: &Value) -> Self {
        let Some(obj) = value.as_object() else {
            return Self::default();
        };
        TrustOverrideMap(
            self.0
                .iter()
                .filter(|(k, _)| obj.contains_key(k.as_str()))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        )
    }
}

impl FromIterator<(String, TrustLevel)> for TrustOverrideMap {
    fn from_iter<T: IntoIterator<Item = (String, TrustLevel)>>(iter: T) -> Self {
        TrustOverrideMap(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("dangling-input: node {0} does not exist")]
    DanglingInput(NodeId),
    #[error("edge-kind-violation: {kind:?} edge cannot run from {src:?} to {dst:?}")]
    EdgeKindViolation {
        kind: EdgeKind,
        src: NodeKind,
        dst: NodeKind,
    },
    #[error("edge-order-violation: edge {src} -> {dst} points to an earlier node")]
    EdgeOrderViolation { src: NodeId, dst: NodeId },
    #[error("not-a-call: node {0} is not a Call node")]
    NotACall(NodeId),
    #[error("unknown-field-override: `{0}` is not a field of the output")]
    UnknownFieldOverride(String),
    #[error("node-not-found: {0}")]
    NodeNotFound(NodeId),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::DanglingInput(_) => "dangling-input",
            GraphError::EdgeKindViolation { .. } => "edge-kind-violation",
            GraphError::EdgeOrderViolation { .. } => "edge-order-violation",
            GraphError::NotACall(_) => "not-a-call",
            GraphError::UnknownFieldOverride(_) => "unknown-field-override",
            GraphError::NodeNotFound(_) => "node-not-found",
        }
    }
}

/// A path from a denied action to a call that crosses a `Counterfactual` edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualChain {
    /// Node sequence, denied action first, queried call last.
    pub nodes: Vec<NodeId>,
    /// `edges[i]` connects `nodes[i]` to `nodes[i + 1]`.
    pub edges: Vec<EdgeKind>,
}

impl CounterfactualChain {
    pub fn origin(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: NodeId,
    #[serde(flatten)]
    pub label: NodeLabel,
}

/// Export form of a graph: `nodes` and `edges` arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub nodes: Vec<SnapshotNode>,
    pub edges: Vec<Edge>,
}

impl GraphSnapshot {
    /// Pretty JSON with lexicographically sorted object keys.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("snapshot is always serializable");
        serde_json::to_string_pretty(&value).expect("value is always serializable")
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProvenanceGraph {
    labels: Vec<NodeLabel>,
    incoming: Vec<Vec<(NodeId, EdgeKind)>>,
    outgoing: Vec<Vec<(NodeId, EdgeKind)>>,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
    pending_denial: Option<NodeId>,
    clock: u64,
}

impl ProvenanceGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeLabel> {
        self.labels.get(id.index())
    }

    pub fn kind(&self, id: NodeId) -> Option<NodeKind> {
        self.node(id).map(NodeLabel::kind)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeLabel)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, label)| (NodeId(i as u64), label))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn incoming(&self, id: NodeId) -> &[(NodeId, EdgeKind)] {
        self.incoming.get(id.index()).map_or(&[], Vec::as_slice)
    }

    pub fn outgoing(&self, id: NodeId) -> &[(NodeId, EdgeKind)] {
        self.outgoing.get(id.index()).map_or(&[], Vec::as_slice)
    }

    /// Most recent denial not yet linked to a later call.
    pub fn pending_denial(&self) -> Option<NodeId> {
        self.pending_denial
    }

    pub fn take_pending_denial(&mut self) -> Option<NodeId> {
        self.pending_denial.take()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn push(&mut self, label: NodeLabel) -> NodeId {
        let id = NodeId(self.labels.len() as u64);
        self.labels.push(label);
        self.incoming.push(Vec::new());
        self.outgoing.push(Vec::new());
        id
    }

    /// Insert a typed edge. Returns `false` if the identical edge already exists.
    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind) -> Result<bool, GraphError> {
        let src_kind = self.kind(src).ok_or(GraphError::NodeNotFound(src))?;
        let dst_kind = self.kind(dst).ok_or(GraphError::NodeNotFound(dst))?;
        if !kind.admits(src_kind, dst_kind) {
            return Err(GraphError::EdgeKindViolation {
                kind,
                src: src_kind,
                dst: dst_kind,
            });
        }
        if src >= dst {
            return Err(GraphError::EdgeOrderViolation { src, dst });
        }
        let edge = Edge { src, dst, kind };
        if !self.edge_set.insert(edge) {
            return Ok(false);
        }
        self.edges.push(edge);
        self.outgoing[src.index()].push((dst, kind));
        self.incoming[dst.index()].push((src, kind));
        Ok(true)
    }

    /// Create a call node with an `InputTo` edge from every input data node.
    pub fn add_call_node(
        &mut self,
        tool_name: impl Into<String>,
        arguments: Arguments,
        input_data: &[NodeId],
    ) -> Result<NodeId, GraphError> {
        for &input in input_data {
            let kind = self.kind(input).ok_or(GraphError::DanglingInput(input))?;
            if !EdgeKind::InputTo.admits(kind, NodeKind::Call) {
                return Err(GraphError::EdgeKindViolation {
                    kind: EdgeKind::InputTo,
                    src: kind,
                    dst: NodeKind::Call,
                });
            }
        }
        let timestamp = self.tick();
        let call = self.push(NodeLabel::Call {
            tool_name: tool_name.into(),
            arguments,
            timestamp,
        });
        for &input in input_data {
            self.add_edge(input, call, EdgeKind::InputTo)?;
        }
        Ok(call)
    }

    /// Standalone data node with no producing call.
    pub fn add_data_node(&mut self, value: Value, trust: TrustLevel) -> NodeId {
        self.push(NodeLabel::Data { value, trust })
    }

    /// Standalone field node, not yet attached to a data item.
    pub fn add_field_node(&mut self, field_key: impl Into<String>, value: Value, trust: TrustLevel) -> NodeId {
        self.push(NodeLabel::DataField {
            field_key: field_key.into(),
            value,
            trust,
        })
    }

    /// Record the output of `call`.
    ///
    /// Objects are decomposed one level deep: each top-level key becomes a
    /// `DataField` node whose trust is the override for that key, or
    /// `base_trust` otherwise. Returns the data node first, then the fields
    /// in key order. Field nodes are allocated before the data node so that
    /// `FieldOf` edges keep pointing forward.
    pub fn record_output(
        &mut self,
        call: NodeId,
        value: Value,
        base_trust: TrustLevel,
        overrides: &TrustOverrideMap,
    ) -> Result<Vec<NodeId>, GraphError> {
        if self.kind(call) != Some(NodeKind::Call) {
            return Err(GraphError::NotACall(call));
        }
        let fields: Vec<(String, Value)> = match &value {
            Value::Object(obj) => obj.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            _ => Vec::new(),
        };
        if let Some(unknown) = overrides.keys().find(|k| !fields.iter().any(|(key, _)| key == k)) {
            return Err(GraphError::UnknownFieldOverride(unknown.to_string()));
        }

        let field_ids: Vec<NodeId> = fields
            .into_iter()
            .map(|(key, v)| {
                let trust = overrides.get(&key).unwrap_or(base_trust);
                self.add_field_node(key, v, trust)
            })
            .collect();
        let data = self.add_data_node(value, base_trust);
        self.add_edge(call, data, EdgeKind::DirectOutput)?;
        for &field in &field_ids {
            self.add_edge(field, data, EdgeKind::FieldOf)?;
        }

        let mut out = Vec::with_capacity(field_ids.len() + 1);
        out.push(data);
        out.extend(field_ids);
        Ok(out)
    }

    /// Record a denied call. The new node becomes the pending denial,
    /// replacing any earlier one.
    pub fn add_denied_action(
        &mut self,
        tool_name: impl Into<String>,
        arguments: Arguments,
        reason: impl Into<String>,
    ) -> NodeId {
        let timestamp = self.tick();
        let id = self.push(NodeLabel::DeniedAction {
            tool_name: tool_name.into(),
            arguments,
            denial_reason: reason.into(),
            timestamp,
        });
        self.pending_denial = Some(id);
        id
    }

    /// Idempotent.
    pub fn link_counterfactual(&mut self, denied: NodeId, call: NodeId) -> Result<Edge, GraphError> {
        self.add_edge(denied, call, EdgeKind::Counterfactual)?;
        Ok(Edge {
            src: denied,
            dst: call,
            kind: EdgeKind::Counterfactual,
        })
    }

    fn check(&self, id: NodeId) -> Result<NodeKind, GraphError> {
        self.kind(id).ok_or(GraphError::NodeNotFound(id))
    }

    /// Every node that reaches `node`, excluding `node` itself.
    pub fn ancestors(&self, node: NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        self.check(node)?;
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([node]);
        let mut out = BTreeSet::new();
        seen[node.index()] = true;
        while let Some(v) = queue.pop_front() {
            for &(u, _) in self.incoming(v) {
                if !seen[u.index()] {
                    seen[u.index()] = true;
                    out.insert(u);
                    queue.push_back(u);
                }
            }
        }
        Ok(out)
    }

    /// Minimum trust over data-kind ancestors; `SysInstr` when there are none.
    pub fn min_trust(&self, node: NodeId) -> Result<TrustLevel, GraphError> {
        self.check(node)?;
        let mut seen = vec![false; self.len()];
        let mut stack = vec![node];
        let mut min = TrustLevel::SysInstr;
        seen[node.index()] = true;
        while let Some(v) = stack.pop() {
            for &(u, _) in self.incoming(v) {
                if seen[u.index()] {
                    continue;
                }
                seen[u.index()] = true;
                if let Some(trust) = self.labels[u.index()].trust() {
                    min = min.join(trust);
                    if min == TrustLevel::ToolDesc {
                        return Ok(min);
                    }
                }
                stack.push(u);
            }
        }
        Ok(min)
    }

    /// Data-kind ancestors whose trust is strictly below `threshold`.
    pub fn ancestors_below(&self, node: NodeId, threshold: TrustLevel) -> Result<Vec<NodeId>, GraphError> {
        Ok(self
            .ancestors(node)?
            .into_iter()
            .filter(|&u| self.labels[u.index()].trust().is_some_and(|t| t < threshold))
            .collect())
    }

    /// Shortest witness path from each denied action that reaches `call`.
    ///
    /// Denied actions have no incoming edges and only `Counterfactual`
    /// outgoing edges, so every such path starts with a `Counterfactual` edge.
    /// Witnesses are ordered by originating node id.
    pub fn counterfactual_chains(&self, call: NodeId) -> Result<Vec<CounterfactualChain>, GraphError> {
        if self.check(call)? != NodeKind::Call {
            return Err(GraphError::NotACall(call));
        }
        // Reverse BFS; `next[u]` is u's successor on a shortest path to `call`.
        let mut next: Vec<Option<(NodeId, EdgeKind)>> = vec![None; self.len()];
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([call]);
        let mut origins = Vec::new();
        seen[call.index()] = true;
        while let Some(v) = queue.pop_front() {
            for &(u, kind) in self.incoming(v) {
                if seen[u.index()] {
                    continue;
                }
                seen[u.index()] = true;
                next[u.index()] = Some((v, kind));
                if self.labels[u.index()].kind() == NodeKind::DeniedAction {
                    origins.push(u);
                }
                queue.push_back(u);
            }
        }
        origins.sort_unstable();

        Ok(origins
            .into_iter()
            .map(|origin| {
                let mut nodes = vec![origin];
                let mut edges = Vec::new();
                let mut cur = origin;
                while let Some((succ, kind)) = next[cur.index()] {
                    nodes.push(succ);
                    edges.push(kind);
                    cur = succ;
                }
                debug_assert_eq!(edges.first(), Some(&EdgeKind::Counterfactual));
                CounterfactualChain { nodes, edges }
            })
            .collect())
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            nodes: self
                .nodes()
                .map(|(id, label)| SnapshotNode {
                    id,
                    label: label.clone(),
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }
}
