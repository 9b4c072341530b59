//! Immutable capability tokens.
//!
//! A token grants a set of tools, each with a call budget, an argument-key
//! blocklist and per-argument value allowlists. Tokens can be narrowed with
//! [`CapabilityToken::attenuate`]; any attempt to widen a grant is rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::{LayerId, LayerResult, RuleId, ToolCallRequest};

#[derive(Debug, Error)]
pub enum CapabilityError {
    #[error("amplification-rejected: {0}")]
    AmplificationRejected(String),
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error("malformed token document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read token file: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-tool call budget. `Unlimited` is distinct from every count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "BudgetRepr", into = "BudgetRepr")]
pub enum Budget {
    Limited(u64),
    Unlimited,
}

impl Budget {
    pub fn permits(self, used: u64) -> bool {
        match self {
            Budget::Limited(n) => used < n,
            Budget::Unlimited => true,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(u64),
    Word(String),
}

impl TryFrom<BudgetRepr> for Budget {
    type Error = String;

    fn try_from(repr: BudgetRepr) -> Result<Self, Self::Error> {
        match repr {
            BudgetRepr::Count(n) => Ok(Budget::Limited(n)),
            BudgetRepr::Word(w) if w == "unlimited" => Ok(Budget::Unlimited),
            BudgetRepr::Word(w) => Err(format!("budget must be a count or \"unlimited\", got `{w}`")),
        }
    }
}

impl From<Budget> for BudgetRepr {
    fn from(b: Budget) -> Self {
        match b {
            Budget::Limited(n) => BudgetRepr::Count(n),
            Budget::Unlimited => BudgetRepr::Word("unlimited".into()),
        }
    }
}

/// Exact-match allowlist, kept sorted by canonical JSON text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Value>", into = "Vec<Value>")]
pub struct ValueSet(Vec<(String, Value)>);

impl ValueSet {
    pub fn contains(&self, value: &Value) -> bool {
        let key = value.to_string();
        self.0.binary_search_by(|(k, _)| k.cmp(&key)).is_ok()
    }

    pub fn is_subset(&self, other: &ValueSet) -> bool {
        self.0.iter().all(|(_, v)| other.contains(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = &Value> {
        self.0.iter().map(|(_, v)| v)
    }
}

impl From<Vec<Value>> for ValueSet {
    fn from(values: Vec<Value>) -> Self {
        let mut items: Vec<(String, Value)> = values.into_iter().map(|v| (v.to_string(), v)).collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));
        items.dedup_by(|a, b| a.0 == b.0);
        ValueSet(items)
    }
}

impl From<ValueSet> for Vec<Value> {
    fn from(set: ValueSet) -> Self {
        set.0.into_iter().map(|(_, v)| v).collect()
    }
}

impl FromIterator<Value> for ValueSet {
    fn from_iter<T: IntoIterator<Item = Value>>(iter: T) -> Self {
        ValueSet::from(iter.into_iter().collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolPermission {
    #[serde(skip)]
    tool_name: String,
    call_budget: Budget,
    #[serde(default)]
    blocked_argument_keys: BTreeSet<String>,
    #[serde(default)]
    value_constraints: BTreeMap<String, ValueSet>,
}

impl ToolPermission {
    pub fn new(tool_name: impl Into<String>, call_budget: Budget) -> Self {
        ToolPermission {
            tool_name: tool_name.into(),
            call_budget,
            blocked_argument_keys: BTreeSet::new(),
            value_constraints: BTreeMap::new(),
        }
    }

    pub fn block_key(mut self, key: impl Into<String>) -> Self {
        self.blocked_argument_keys.insert(key.into());
        self
    }

    pub fn constrain(mut self, key: impl Into<String>, allowed: ValueSet) -> Self {
        self.value_constraints.insert(key.into(), allowed);
        self
    }

    pub fn tool_name(&self) -> &str {
        &self.tool_name
    }

    pub fn call_budget(&self) -> Budget {
        self.call_budget
    }

    pub fn blocked_argument_keys(&self) -> &BTreeSet<String> {
        &self.blocked_argument_keys
    }

    pub fn value_constraints(&self) -> &BTreeMap<String, ValueSet> {
        &self.value_constraints
    }

    /// True when `self` grants nothing beyond `parent`.
    pub fn within(&self, parent: &ToolPermission) -> bool {
        self.tool_name == parent.tool_name
            && self.call_budget <= parent.call_budget
            && self.blocked_argument_keys.is_superset(&parent.blocked_argument_keys)
            && parent.value_constraints.iter().all(|(k, allowed)| {
                self.value_constraints
                    .get(k)
                    .is_some_and(|mine| mine.is_subset(allowed))
            })
    }
}

/// Narrowing request for one tool. Unset fields inherit the parent's.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermissionRestriction {
    pub call_budget: Option<Budget>,
    pub blocked_argument_keys: Option<BTreeSet<String>>,
    pub value_constraints: Option<BTreeMap<String, ValueSet>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Restriction {
    /// Tools the child keeps; `None` keeps all of the parent's.
    pub retain: Option<BTreeSet<String>>,
    pub tools: BTreeMap<String, PermissionRestriction>,
}

impl Restriction {
    pub fn retain<I, S>(tools: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Restriction {
            retain: Some(tools.into_iter().map(Into::into).collect()),
            tools: BTreeMap::new(),
        }
    }

    pub fn restrict(mut self, tool: impl Into<String>, spec: PermissionRestriction) -> Self {
        self.tools.insert(tool.into(), spec);
        self
    }
}

#[derive(Deserialize)]
struct TokenRepr {
    token_id: String,
    #[serde(default)]
    parent_id: Option<String>,
    #[serde(default)]
    permissions: BTreeMap<String, ToolPermission>,
}

/// Immutable per-session grant. There are no mutating methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TokenRepr")]
pub struct CapabilityToken {
    token_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_id: Option<String>,
    permissions: BTreeMap<String, ToolPermission>,
}

impl TryFrom<TokenRepr> for CapabilityToken {
    type Error = String;

    fn try_from(repr: TokenRepr) -> Result<Self, Self::Error> {
        if repr.token_id.is_empty() {
            return Err("token_id must not be empty".into());
        }
        let permissions = repr
            .permissions
            .into_iter()
            .map(|(name, mut perm)| {
                perm.tool_name = name.clone();
                (name, perm)
            })
            .collect();
        Ok(CapabilityToken {
            token_id: repr.token_id,
            parent_id: repr.parent_id,
            permissions,
        })
    }
}

impl CapabilityToken {
    pub fn new(token_id: impl Into<String>, permissions: impl IntoIterator<Item = ToolPermission>) -> Self {
        CapabilityToken {
            token_id: token_id.into(),
            parent_id: None,
            permissions: permissions.into_iter().map(|p| (p.tool_name.clone(), p)).collect(),
        }
    }

    /// Every listed tool with an unlimited budget and no constraints.
    pub fn unrestricted<I, S>(token_id: impl Into<String>, tools: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            token_id,
            tools.into_iter().map(|t| ToolPermission::new(t, Budget::Unlimited)),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, CapabilityError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CapabilityError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn token_id(&self) -> &str {
        &self.token_id
    }

    pub fn parent_id(&self) -> Option<&str> {
        self.parent_id.as_deref()
    }

    pub fn permission(&self, tool: &str) -> Option<&ToolPermission> {
        self.permissions.get(tool)
    }

    pub fn permissions(&self) -> impl Iterator<Item = &ToolPermission> {
        self.permissions.values()
    }

    /// True when every grant of `self` is contained in `parent`'s.
    pub fn is_within(&self, parent: &CapabilityToken) -> bool {
        self.permissions
            .iter()
            .all(|(tool, perm)| parent.permissions.get(tool).is_some_and(|p| perm.within(p)))
    }

    /// Derive a narrower child token; `self` is untouched.
    pub fn attenuate(&self, restriction: &Restriction) -> Result<CapabilityToken, CapabilityError> {
        let reject = |msg: String| Err(CapabilityError::AmplificationRejected(msg));

        if let Some(retain) = &restriction.retain {
            if let Some(extra) = retain.iter().find(|t| !self.permissions.contains_key(*t)) {
                return reject(format!("tool `{extra}` is not granted by the parent"));
            }
        }
        if let Some(extra) = restriction.tools.keys().find(|t| !self.permissions.contains_key(*t)) {
            return reject(format!("tool `{extra}` is not granted by the parent"));
        }

        let mut permissions = BTreeMap::new();
        for (tool, parent) in &self.permissions {
            if restriction.retain.as_ref().is_some_and(|r| !r.contains(tool)) {
                continue;
            }
            let mut child = parent.clone();
            if let Some(spec) = restriction.tools.get(tool) {
                if let Some(budget) = spec.call_budget {
                    if budget > parent.call_budget {
                        return reject(format!("budget for `{tool}` exceeds the parent's"));
                    }
                    child.call_budget = budget;
                }
                if let Some(blocked) = &spec.blocked_argument_keys {
                    if let Some(dropped) = parent.blocked_argument_keys.difference(blocked).next() {
                        return reject(format!("`{tool}` would unblock argument `{dropped}`"));
                    }
                    child.blocked_argument_keys = blocked.clone();
                }
                if let Some(constraints) = &spec.value_constraints {
                    for (key, allowed) in &parent.value_constraints {
                        match constraints.get(key) {
                            Some(mine) if mine.is_subset(allowed) => {}
                            Some(_) => {
                                return reject(format!("`{tool}` would widen allowed values of `{key}`"));
                            }
                            None => {
                                return reject(format!("`{tool}` would drop the constraint on `{key}`"));
                            }
                        }
                    }
                    child.value_constraints = constraints.clone();
                }
            }
            debug_assert!(child.within(parent));
            permissions.insert(tool.clone(), child);
        }

        Ok(CapabilityToken {
            token_id: self.child_id(restriction),
            parent_id: Some(self.token_id.clone()),
            permissions,
        })
    }

    fn child_id(&self, restriction: &Restriction) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.token_id.as_bytes());
        hasher.update(serde_json::to_vec(restriction).expect("restriction serializes"));
        let digest = hex::encode(hasher.finalize());
        format!("{}.{}", self.token_id, &digest[..12])
    }

    /// Layer 4 check of `req` against this token. `used` counts finalized
    /// `Allow` decisions per tool.
    pub fn authorize(&self, req: &ToolCallRequest, used: &BTreeMap<String, u64>) -> LayerResult {
        let tool = req.tool_name.as_str();
        let Some(perm) = self.permissions.get(tool) else {
            return LayerResult::deny(
                LayerId::L4,
                RuleId::L4NotGranted,
                format!("`{tool}` is not granted by token {}", self.token_id),
            );
        };
        let spent = used.get(tool).copied().unwrap_or(0);
        if !perm.call_budget.permits(spent) {
            return LayerResult::deny(
                LayerId::L4,
                RuleId::L4Budget,
                format!("call budget for `{tool}` exhausted after {spent} calls"),
            );
        }
        if let Some(key) = req.arguments.keys().find(|k| perm.blocked_argument_keys.contains(*k)) {
            return LayerResult::deny(
                LayerId::L4,
                RuleId::L4Blocklist,
                format!("argument `{key}` is blocked for `{tool}`"),
            );
        }
        for (key, allowed) in &perm.value_constraints {
            if let Some(value) = req.arguments.get(key) {
                if !allowed.contains(value) {
                    return LayerResult::deny(
                        LayerId::L4,
                        RuleId::L4ValueConstraint,
                        format!("value of `{key}` is not allowed for `{tool}`"),
                    );
                }
            }
        }
        LayerResult::pass(LayerId::L4)
    }
}
