use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::Policy;
use crate::capability::CapabilityToken;
use crate::graph::Arguments;

pub type SchemaDigest = [u8; 32];

/// SHA-256 over the canonical (sorted-key, compact) JSON form of a schema.
pub fn schema_digest(schema: &Value) -> SchemaDigest {
    let canonical = serde_json::to_vec(schema).expect("JSON values always serialize");
    Sha256::digest(&canonical).into()
}

/// One allowed call and, once recorded, its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub tool_name: String,
    pub arguments: Arguments,
    pub output: Option<Value>,
}

/// Everything the layers may consult besides the provenance graph.
#[derive(Debug, Clone)]
pub struct EvaluationContext {
    policy: Arc<Policy>,
    token: Arc<CapabilityToken>,
    tool_schemas: BTreeMap<String, Value>,
    pinned: BTreeMap<String, SchemaDigest>,
    call_history: Vec<HistoryEntry>,
    call_counts: BTreeMap<String, u64>,
    user_messages: Vec<String>,
}

impl EvaluationContext {
    pub fn new(policy: Arc<Policy>, token: Arc<CapabilityToken>) -> Self {
        EvaluationContext {
            policy,
            token,
            tool_schemas: BTreeMap::new(),
            pinned: BTreeMap::new(),
            call_history: Vec::new(),
            call_counts: BTreeMap::new(),
            user_messages: Vec::new(),
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn token(&self) -> &CapabilityToken {
        &self.token
    }

    pub fn schema(&self, tool: &str) -> Option<&Value> {
        self.tool_schemas.get(tool)
    }

    /// Install the tool's current schema. Pins its digest the first time the
    /// tool is seen; later changes leave the pin in place.
    pub fn observe_schema(&mut self, tool: impl Into<String>, schema: Value) {
        let tool = tool.into();
        self.pinned
            .entry(tool.clone())
            .or_insert_with(|| schema_digest(&schema));
        self.tool_schemas.insert(tool, schema);
    }

    pub fn pinned_digest(&self, tool: &str) -> Option<&SchemaDigest> {
        self.pinned.get(tool)
    }

    pub fn call_history(&self) -> &[HistoryEntry] {
        &self.call_history
    }

    pub fn call_counts(&self) -> &BTreeMap<String, u64> {
        &self.call_counts
    }

    pub fn call_count(&self, tool: &str) -> u64 {
        self.call_counts.get(tool).copied().unwrap_or(0)
    }

    pub fn user_messages(&self) -> &[String] {
        &self.user_messages
    }

    pub fn add_user_message(&mut self, message: impl Into<String>) {
        self.user_messages.push(message.into());
    }

    /// Book an allowed call; returns its history index.
    pub fn record_allow(&mut self, tool: &str, arguments: Arguments) -> usize {
        *self.call_counts.entry(tool.to_string()).or_default() += 1;
        self.call_history.push(HistoryEntry {
            tool_name: tool.to_string(),
            arguments,
            output: None,
        });
        self.call_history.len() - 1
    }

    pub fn record_output(&mut self, history_index: usize, output: Value) {
        if let Some(entry) = self.call_history.get_mut(history_index) {
            entry.output = Some(output);
        }
    }
}
