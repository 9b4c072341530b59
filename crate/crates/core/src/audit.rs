//! Hash-chained, append-only audit log.
//!
//! Each entry's `entry_hash` is the SHA-256 of the canonical JSON form of
//! every other field (sorted keys, no insignificant whitespace). `prev_hash`
//! links to the previous entry; the first entry links to 32 zero bytes.
//! The file form is JSON lines in that same canonical form.
//!
//! Dropping a suffix of the log is not detectable from the chain alone.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::graph::Arguments;
use crate::policy::{Decision, LayerResult, Outcome};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub index: u64,
    pub tool_name: String,
    pub arguments: Arguments,
    pub outcome: Outcome,
    pub reason: String,
    pub layer_results: Vec<LayerResult>,
    /// Set when an allowed call later failed upstream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
    pub prev_hash: String,
    pub entry_hash: String,
}

impl AuditEntry {
    fn canonical_value(&self) -> Value {
        serde_json::to_value(self).expect("audit entries always serialize")
    }

    /// Digest over every field except `entry_hash`.
    pub fn compute_hash(&self) -> String {
        let mut value = self.canonical_value();
        value.as_object_mut().expect("entry is an object").remove("entry_hash");
        let bytes = serde_json::to_vec(&value).expect("values always serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Canonical one-line JSON form.
    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.canonical_value()).expect("values always serialize")
    }
}

/// What a caller hands to [`AuditLog::append`].
#[derive(Debug, Clone)]
pub struct DecisionRecord<'a> {
    pub tool_name: &'a str,
    pub arguments: &'a Arguments,
    pub decision: &'a Decision,
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub entries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_broken_index: Option<usize>,
}

impl VerificationReport {
    fn ok(entries: usize) -> Self {
        VerificationReport {
            ok: true,
            entries,
            first_broken_index: None,
        }
    }

    fn broken(entries: usize, index: usize) -> Self {
        VerificationReport {
            ok: false,
            entries,
            first_broken_index: Some(index),
        }
    }
}

#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
    sink: Option<BufWriter<File>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// In-memory log that also appends each entry to `path`.
    pub fn with_file(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).truncate(true).write(true).open(path)?;
        Ok(AuditLog {
            entries: Vec::new(),
            sink: Some(BufWriter::new(file)),
        })
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head_hash(&self) -> &str {
        self.entries.last().map_or(GENESIS_HASH, |e| e.entry_hash.as_str())
    }

    pub fn append(&mut self, record: DecisionRecord<'_>) -> io::Result<&AuditEntry> {
        let mut entry = AuditEntry {
            index: self.entries.len() as u64,
            tool_name: record.tool_name.to_string(),
            arguments: record.arguments.clone(),
            outcome: record.decision.outcome,
            reason: record.decision.reason().to_string(),
            layer_results: record.decision.layer_results.clone(),
            annotation: record.annotation,
            prev_hash: self.head_hash().to_string(),
            entry_hash: String::new(),
        };
        entry.entry_hash = entry.compute_hash();
        if let Some(sink) = &mut self.sink {
            writeln!(sink, "{}", entry.to_line())?;
            sink.flush()?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn verify(&self) -> VerificationReport {
        verify_chain(&self.entries)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| e.to_line() + "\n").collect()
    }
}

/// Check every digest and every back-link; report the first bad index.
pub fn verify_chain(entries: &[AuditEntry]) -> VerificationReport {
    let mut prev = GENESIS_HASH;
    for (i, entry) in entries.iter().enumerate() {
        if entry.index != i as u64 || entry.prev_hash != prev || entry.compute_hash() != entry.entry_hash {
            return VerificationReport::broken(entries.len(), i);
        }
        prev = &entry.entry_hash;
    }
    VerificationReport::ok(entries.len())
}

/// Verify the serialized JSON-lines form.
///
/// A line that fails to parse, or that is not byte-identical to the canonical
/// form of what it parses to, counts as broken at its index.
pub fn verify_jsonl(bytes: &[u8]) -> VerificationReport {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if body.is_empty() {
        return VerificationReport::ok(0);
    }
    let lines: Vec<&[u8]> = body.split(|&b| b == b'\n').collect();
    let mut entries = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let parsed = std::str::from_utf8(line).ok().and_then(|text| {
            serde_json::from_str::<AuditEntry>(text)
                .ok()
                .filter(|e| e.to_line() == text)
        });
        match parsed {
            Some(entry) => entries.push(entry),
            None => {
                // earlier entries may already be broken
                let report = verify_chain(&entries);
                return VerificationReport::broken(lines.len(), report.first_broken_index.unwrap_or(i));
            }
        }
    }
    let report = verify_chain(&entries);
    VerificationReport {
        entries: lines.len(),
        ..report
    }
}

pub fn verify_file(path: &Path) -> io::Result<VerificationReport> {
    Ok(verify_jsonl(&std::fs::read(path)?))
}
