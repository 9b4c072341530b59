use std::io::{self, BufRead, Write};

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::session::Session;
use super::upstream::{Upstream, UpstreamError};
use crate::graph::Arguments;
use crate::policy::{Decision, DenialDetail};

/// JSON-RPC error code returned for a denied tool call.
pub const TOOL_DENIED: i64 = -32040;

const PARSE_ERROR: i64 = -32700;
const METHOD_NOT_FOUND: i64 = -32601;
const INTERNAL_ERROR: i64 = -32603;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ServeStats {
    pub messages: u64,
    pub tool_calls: u64,
    pub allowed: u64,
    pub denied: u64,
    pub forwarded: u64,
}

/// Mediate one JSON-RPC stream until the client closes its input.
///
/// Every `tools/call` produces exactly one audit entry, and only allowed
/// calls reach `upstream`. `tools/list` responses pin each tool's input
/// schema and are relayed unchanged. Other methods are rejected.
pub fn serve<R, W, U>(session: &mut Session, upstream: &mut U, input: R, mut output: W) -> io::Result<ServeStats>
where
    R: BufRead,
    W: Write,
    U: Upstream,
{
    let mut stats = ServeStats::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.messages += 1;
        let message: Value = match serde_json::from_str(&line) {
            Ok(message) => message,
            Err(e) => {
                write_message(
                    &mut output,
                    &error_response(Value::Null, PARSE_ERROR, &e.to_string(), None),
                )?;
                continue;
            }
        };
        if let Some(response) = handle_message(session, upstream, message, &mut stats) {
            write_message(&mut output, &response)?;
        }
    }
    Ok(stats)
}

fn write_message<W: Write>(output: &mut W, message: &Value) -> io::Result<()> {
    let mut line = serde_json::to_string(message).expect("values always serialize");
    line.push('\n');
    output.write_all(line.as_bytes())?;
    output.flush()
}

fn handle_message<U: Upstream>(
    session: &mut Session,
    upstream: &mut U,
    message: Value,
    stats: &mut ServeStats,
) -> Option<Value> {
    let method = message.get("method").and_then(Value::as_str)?.to_string();
    let params = message.get("params").cloned().unwrap_or_else(|| json!({}));
    let Some(id) = message.get("id").cloned() else {
        if method.starts_with("notifications/") {
            let _ = upstream.notify(&method, params);
        }
        return None;
    };

    let response = match method.as_str() {
        "initialize" | "ping" => relay(upstream.request(&method, params)),
        "tools/list" => {
            let result = upstream.request(&method, params);
            if let Ok(listing) = &result {
                pin_schemas(session, listing);
            }
            relay(result)
        }
        "tools/call" => {
            stats.tool_calls += 1;
            call_tool(session, upstream, params, stats)
        }
        other => Err((
            METHOD_NOT_FOUND,
            format!("method not supported by the gateway: {other}"),
            None,
        )),
    };

    Some(match response {
        Ok(result) => json!({"jsonrpc": "2.0", "id": id, "result": result}),
        Err((code, message, data)) => error_response(id, code, &message, data),
    })
}

type RpcResult = Result<Value, (i64, String, Option<Value>)>;

fn relay(result: Result<Value, UpstreamError>) -> RpcResult {
    result.map_err(upstream_error)
}

fn upstream_error(err: UpstreamError) -> (i64, String, Option<Value>) {
    match err {
        UpstreamError::Rpc { code, message, data } => (code, message, data),
        UpstreamError::Transport(message) => (INTERNAL_ERROR, message, None),
    }
}

fn error_response(id: Value, code: i64, message: &str, data: Option<Value>) -> Value {
    let mut error = json!({"code": code, "message": message});
    if let Some(data) = data {
        error["data"] = data;
    }
    json!({"jsonrpc": "2.0", "id": id, "error": error})
}

fn pin_schemas(session: &mut Session, listing: &Value) {
    let Some(tools) = listing.get("tools").and_then(Value::as_array) else {
        return;
    };
    for tool in tools {
        if let Some(name) = tool.get("name").and_then(Value::as_str) {
            let schema = tool.get("inputSchema").cloned().unwrap_or_else(|| json!({}));
            session.observe_schema(name, schema);
        }
    }
}

fn denial_error(session: &Session, decision: &Decision) -> (i64, String, Option<Value>) {
    match session.policy().config().denial_detail {
        DenialDetail::Minimal => (TOOL_DENIED, "tool call denied".into(), None),
        DenialDetail::Full => {
            let rule = decision.rule().map(|r| r.as_str()).unwrap_or("unknown");
            let layer = decision.denied_by.map(|l| l.to_string());
            (
                TOOL_DENIED,
                format!("denied by {rule}: {}", decision.reason()),
                Some(json!({"rule": rule, "reason": decision.reason(), "layer": layer})),
            )
        }
    }
}

fn audit_failure(err: impl std::fmt::Display) -> (i64, String, Option<Value>) {
    (INTERNAL_ERROR, format!("audit write failed: {err}"), None)
}

fn call_tool<U: Upstream>(session: &mut Session, upstream: &mut U, params: Value, stats: &mut ServeStats) -> RpcResult {
    let name = params.get("name").and_then(Value::as_str).map(str::to_string);
    let arguments: Option<Arguments> = match params.get("arguments") {
        None | Some(Value::Null) => Some(Arguments::new()),
        Some(Value::Object(map)) => Some(map.clone().into_iter().collect()),
        Some(_) => None,
    };

    let bound = match (name.as_deref(), arguments) {
        (Some(name), Some(arguments)) => session
            .bind_request(name, arguments.clone())
            .map_err(|e| (name.to_string(), arguments, e.to_string())),
        (name, arguments) => Err((
            name.unwrap_or("").to_string(),
            arguments.unwrap_or_default(),
            "malformed tools/call parameters".to_string(),
        )),
    };
    let request = match bound {
        Ok(request) => request,
        Err((name, arguments, reason)) => {
            stats.denied += 1;
            let decision = session
                .reject_malformed(&name, &arguments, &reason)
                .map_err(audit_failure)?;
            return Err(denial_error(session, &decision));
        }
    };

    let tool = request.tool_name.clone();
    let forwarded_args: Map<String, Value> = request.arguments.clone().into_iter().collect();
    let (evaluation, pending) = session.evaluate_deferred(request);
    if !evaluation.decision.is_allow() {
        stats.denied += 1;
        session.commit_audit(pending, None).map_err(audit_failure)?;
        return Err(denial_error(session, &evaluation.decision));
    }
    stats.allowed += 1;

    let mut forward = params;
    forward["arguments"] = Value::Object(forwarded_args);
    stats.forwarded += 1;
    match upstream.request("tools/call", forward) {
        Ok(result) => {
            session.commit_audit(pending, None).map_err(audit_failure)?;
            let value = result_value(&result);
            let trust = session.policy().source_trust(&tool);
            let overrides = session.policy().field_overrides(&tool).restricted_to(&value);
            if let Err(e) = session.record_tool_result(evaluation.call, value, trust, &overrides) {
                eprintln!("warning: could not record result of `{tool}`: {e}");
            }
            Ok(result)
        }
        Err(err) => {
            session
                .commit_audit(pending, Some(format!("execution-failed: {err}")))
                .map_err(audit_failure)?;
            Err(upstream_error(err))
        }
    }
}

/// The data value of a `tools/call` result: structured content when
/// present, else the concatenated text content.
pub fn result_value(result: &Value) -> Value {
    if let Some(structured) = result.get("structuredContent") {
        return structured.clone();
    }
    match result.get("content").and_then(Value::as_array) {
        Some(items) => {
            let text: Vec<&str> = items
                .iter()
                .filter_map(|item| item.get("text").and_then(Value::as_str))
                .collect();
            Value::String(text.join("\n"))
        }
        None => result.clone(),
    }
}
