//! A deterministic reference monitor for tool-calling agents.
//!
//! Every tool call an agent issues is checked by a layered policy pipeline
//! before it reaches the tool server. The provenance-aware layer reasons over
//! a per-session graph of calls, their outputs, and denied actions, so a
//! call that follows a denial, or that consumes low-integrity data, can be
//! refused even when its arguments look harmless. Each decision is written
//! to a hash-chained audit log.

pub mod audit;
pub mod capability;
pub mod gateway;
pub mod graph;
pub mod harness;
pub mod lattice;
pub mod policy;

pub use audit::{verify_chain, verify_file, verify_jsonl, AuditEntry, AuditLog, VerificationReport};
pub use capability::{Budget, CapabilityError, CapabilityToken, Restriction, ToolPermission};
pub use gateway::{serve, ProcessUpstream, Session, SessionError, Upstream, UpstreamError};
pub use graph::{Arguments, EdgeKind, GraphError, NodeId, NodeKind, NodeLabel, ProvenanceGraph, TrustOverrideMap};
pub use lattice::{conservative_join, LatticeError, TrustLevel};
pub use policy::{
    pipeline_evaluate, Decision, EvaluationContext, LayerId, LayerResult, Mode, Outcome, Policy, PolicyConfig, RuleId,
    ToolCallRequest, Verdict,
};
