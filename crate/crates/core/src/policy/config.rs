use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use globset::{Glob, GlobSet, GlobSetBuilder};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::TrustOverrideMap;
use crate::lattice::TrustLevel;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid credential pattern `{name}`: {source}")]
    Pattern {
        name: String,
        #[source]
        source: regex::Error,
    },
    #[error("invalid sensitive-path glob `{pattern}`: {source}")]
    Glob {
        pattern: String,
        #[source]
        source: globset::Error,
    },
    #[error("malformed policy document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read policy file: {0}")]
    Io(#[from] std::io::Error),
}

/// Pipeline slot. `L2` is the provenance slot: the flat citation layer in
/// flat mode, the graph-aware layer in graph mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerSlot {
    #[serde(rename = "L1")]
    Hard,
    #[serde(rename = "L2", alias = "L2G")]
    Provenance,
    #[serde(rename = "L3")]
    Schema,
    #[serde(rename = "L4")]
    Manual,
}

impl LayerSlot {
    pub const ALL: [LayerSlot; 4] = [
        LayerSlot::Hard,
        LayerSlot::Provenance,
        LayerSlot::Schema,
        LayerSlot::Manual,
    ];
}

/// Which calls the graph-aware layer inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvenanceScope {
    /// Only tools listed in `sink_tools`.
    Sinks,
    /// Every call.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenialDetail {
    Full,
    Minimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    /// HB-1: longest allowed string argument, in characters.
    pub max_argument_chars: usize,
    /// HB-3: allowed calls per tool per session.
    pub max_calls_per_tool: u64,
    /// SD-1: longest free-text parameter.
    pub max_free_text_chars: usize,
    /// SD-3: longest optional string parameter.
    pub max_optional_chars: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_argument_chars: 10_000,
            max_calls_per_tool: 100,
            max_free_text_chars: 100,
            max_optional_chars: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialPattern {
    pub name: String,
    pub regex: String,
}

impl CredentialPattern {
    fn new(name: &str, regex: &str) -> Self {
        CredentialPattern {
            name: name.to_string(),
            regex: regex.to_string(),
        }
    }
}

fn names(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Operator-facing policy document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Minimum trust a sink call's provenance must carry.
    pub threshold: TrustLevel,
    pub layers: Vec<LayerSlot>,
    pub limits: Limits,
    pub credential_patterns: Vec<CredentialPattern>,
    pub sensitive_paths: Vec<String>,
    /// Expansion for a leading `~` in paths and patterns. When unset `~` is
    /// matched literally.
    pub home_dir: Option<String>,
    pub free_text_params: BTreeSet<String>,
    pub path_params: BTreeSet<String>,
    pub network_params: BTreeSet<String>,
    /// Flat baseline: shortest argument that must be grounded in history.
    pub flat_min_chars: usize,
    pub provenance_scope: ProvenanceScope,
    pub sink_tools: BTreeSet<String>,
    /// Source trust for each tool's results.
    pub tool_trust: BTreeMap<String, TrustLevel>,
    pub default_tool_trust: TrustLevel,
    pub field_overrides: BTreeMap<String, TrustOverrideMap>,
    pub denial_detail: DenialDetail,
    /// Bind data nodes to calls by substring match when the client gives no
    /// explicit `$provenance` references.
    pub auto_link: bool,
    pub auto_link_min_chars: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            threshold: TrustLevel::ToolTrusted,
            layers: LayerSlot::ALL.to_vec(),
            limits: Limits::default(),
            credential_patterns: vec![
                CredentialPattern::new("aws-access-key", r"AKIA[0-9A-Z]{16}"),
                CredentialPattern::new("github-token", r"gh[pousr]_[A-Za-z0-9]{36,}"),
                CredentialPattern::new("jwt", r"eyJ[A-Za-z0-9_-]+\.eyJ[A-Za-z0-9_-]+\.[A-Za-z0-9_-]*"),
                CredentialPattern::new("pem-private-key", r"-----BEGIN (?:[A-Z0-9]+ )*PRIVATE KEY-----"),
            ],
            sensitive_paths: vec!["~/.ssh/*".into(), "/etc/shadow".into(), "~/.aws/*".into()],
            home_dir: None,
            free_text_params: names(&["note", "comment", "metadata", "description"]),
            path_params: names(&["path", "file", "directory"]),
            network_params: names(&["url", "endpoint", "host"]),
            flat_min_chars: 8,
            provenance_scope: ProvenanceScope::Sinks,
            sink_tools: names(&[
                "send_email",
                "post_message",
                "write_file",
                "delete_file",
                "transfer_funds",
                "update_record",
                "run_code",
            ]),
            tool_trust: BTreeMap::new(),
            default_tool_trust: TrustLevel::ToolTrusted,
            field_overrides: BTreeMap::new(),
            denial_detail: DenialDetail::Full,
            auto_link: true,
            auto_link_min_chars: 8,
        }
    }
}

impl PolicyConfig {
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A policy document with its patterns compiled.
#[derive(Debug, Clone)]
pub struct Policy {
    config: PolicyConfig,
    credentials: Vec<(String, Regex)>,
    sensitive: GlobSet,
}

impl Default for Policy {
    fn default() -> Self {
        Policy::new(PolicyConfig::default()).expect("default policy compiles")
    }
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self, PolicyError> {
        let credentials = config
            .credential_patterns
            .iter()
            .map(|p| {
                Regex::new(&p.regex)
                    .map(|re| (p.name.clone(), re))
                    .map_err(|source| PolicyError::Pattern {
                        name: p.name.clone(),
                        source,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut builder = GlobSetBuilder::new();
        for pattern in &config.sensitive_paths {
            let normalized = normalize_path(pattern, config.home_dir.as_deref());
            let glob = Glob::new(&normalized).map_err(|source| PolicyError::Glob {
                pattern: pattern.clone(),
                source,
            })?;
            builder.add(glob);
        }
        let sensitive = builder.build().map_err(|source| PolicyError::Glob {
            pattern: config.sensitive_paths.join(", "),
            source,
        })?;

        Ok(Policy {
            config,
            credentials,
            sensitive,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn limits(&self) -> &Limits {
        &self.config.limits
    }

    pub fn threshold(&self) -> TrustLevel {
        self.config.threshold
    }

    pub fn layer_enabled(&self, slot: LayerSlot) -> bool {
        self.config.layers.contains(&slot)
    }

    /// Name of the first credential pattern found in `text`.
    pub fn credential_match(&self, text: &str) -> Option<&str> {
        self.credentials
            .iter()
            .find(|(_, re)| re.is_match(text))
            .map(|(name, _)| name.as_str())
    }

    pub fn is_sensitive_path(&self, raw: &str) -> bool {
        self.sensitive
            .is_match(normalize_path(raw, self.config.home_dir.as_deref()))
    }

    /// Path-like: named like a filesystem parameter, or shaped like a path.
    pub fn is_path_like(&self, key: &str, value: &str) -> bool {
        self.config.path_params.contains(key)
            || value.starts_with('/')
            || value.starts_with('~')
            || value.starts_with("./")
    }

    pub fn is_graph_checked(&self, tool: &str) -> bool {
        match self.config.provenance_scope {
            ProvenanceScope::All => true,
            ProvenanceScope::Sinks => self.config.sink_tools.contains(tool),
        }
    }

    pub fn source_trust(&self, tool: &str) -> TrustLevel {
        self.config
            .tool_trust
            .get(tool)
            .copied()
            .unwrap_or(self.config.default_tool_trust)
    }

    pub fn field_overrides(&self, tool: &str) -> TrustOverrideMap {
        self.config.field_overrides.get(tool).cloned().unwrap_or_default()
    }
}

/// Lexical normalization: expands `~`, drops empty and `.` segments, and
/// resolves `..`. Never touches the filesystem.
pub fn normalize_path(raw: &str, home: Option<&str>) -> String {
    let expanded = match (home, raw.strip_prefix('~')) {
        (Some(home), Some(rest)) if rest.is_empty() || rest.starts_with('/') => {
            format!("{}{}", home.trim_end_matches('/'), rest)
        }
        _ => raw.to_string(),
    };
    let absolute = expanded.starts_with('/');
    let mut parts: Vec<&str> = Vec::new();
    for seg in expanded.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                // `..` above a root or `~` anchor is dropped
                if parts.last().is_some_and(|p| *p != ".." && *p != "~") {
                    parts.pop();
                } else if !absolute && parts.first() != Some(&"~") {
                    parts.push("..");
                }
            }
            s => parts.push(s),
        }
    }
    let joined = parts.join("/");
    if absolute {
        format!("/{joined}")
    } else {
        joined
    }
}
