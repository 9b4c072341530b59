use std::sync::Arc;

use armgate::gateway::{serve, Session, TOOL_DENIED};
use armgate::harness::tools::{scenario_token, MockToolServer, CONTACT_EMAIL};
use armgate::policy::{DenialDetail, Mode, Outcome, Policy, PolicyConfig};
use armgate::{TrustLevel, TrustOverrideMap};
use serde_json::{json, Value};

fn session(mode: Mode, config: PolicyConfig) -> Session {
    Session::new(
        "test",
        mode,
        Arc::new(Policy::new(config).unwrap()),
        Arc::new(scenario_token()),
    )
}

fn call(id: u64, name: &str, arguments: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "method": "tools/call", "params": {"name": name, "arguments": arguments}})
}

fn list(id: u64) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "method": "tools/list"})
}

fn run(session: &mut Session, upstream: &mut MockToolServer, messages: &[Value]) -> Vec<Value> {
    let input: String = messages.iter().map(|m| format!("{m}\n")).collect();
    let mut output = Vec::new();
    serve(session, upstream, input.as_bytes(), &mut output).unwrap();
    String::from_utf8(output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn schema_change_after_listing_is_denied() {
    let mut s = session(Mode::Graph, PolicyConfig::default());
    let mut up = MockToolServer::new();
    let replies = run(&mut s, &mut up, &[list(1), call(2, "get_contact", json!({}))]);
    assert!(replies[1]["result"].is_object());

    up.set_schema(
        "get_contact",
        json!({"type": "object", "properties": {"name": {"type": "string", "description": "contact namf"}}}),
    );
    let replies = run(&mut s, &mut up, &[list(3), call(4, "get_contact", json!({}))]);
    assert_eq!(replies[1]["error"]["data"]["rule"], "HB-5");
    assert_eq!(up.executed().len(), 1);
}

#[test]
fn upstream_failure_is_annotated_on_the_allow_entry() {
    let mut s = session(Mode::Graph, PolicyConfig::default());
    let mut up = MockToolServer::new();
    up.fail_tool("read_emails");
    let replies = run(&mut s, &mut up, &[call(1, "read_emails", json!({}))]);
    assert_eq!(replies[0]["error"]["code"], -32603);
    let entry = &s.audit().entries()[0];
    assert_eq!(entry.outcome, Outcome::Allow);
    assert!(entry.annotation.as_deref().unwrap().starts_with("execution-failed"));
    assert!(s.audit().verify().ok);
}

#[test]
fn minimal_denial_detail_hides_the_rule() {
    let config = PolicyConfig {
        denial_detail: DenialDetail::Minimal,
        ..PolicyConfig::default()
    };
    let mut s = session(Mode::Graph, config);
    let mut up = MockToolServer::new();
    let replies = run(&mut s, &mut up, &[call(1, "read_file", json!({"path": "/etc/shadow"}))]);
    assert_eq!(replies[0]["error"]["code"], TOOL_DENIED);
    assert_eq!(replies[0]["error"]["message"], "tool call denied");
    assert!(replies[0]["error"].get("data").is_none());
}

#[test]
fn field_override_and_auto_link_catch_poisoned_contact() {
    let mut config = PolicyConfig::default();
    config.field_overrides.insert(
        "get_contact".into(),
        TrustOverrideMap::new().with("email", TrustLevel::ToolUntrusted),
    );
    let mut s = session(Mode::Graph, config);
    let mut up = MockToolServer::new();
    let replies = run(
        &mut s,
        &mut up,
        &[
            list(1),
            call(2, "get_contact", json!({})),
            call(3, "send_email", json!({"to": CONTACT_EMAIL, "body": "Hello Alice"})),
        ],
    );
    assert_eq!(replies[2]["error"]["data"]["rule"], "L2G-trust-on-field");
    assert_eq!(up.executed().len(), 1);
}

#[test]
fn explicit_provenance_is_stripped_before_forwarding() {
    let mut config = PolicyConfig::default();
    config
        .tool_trust
        .insert("read_emails".into(), TrustLevel::ToolUntrusted);
    let mut s = session(Mode::Graph, config);
    let mut up = MockToolServer::new();
    let replies = run(
        &mut s,
        &mut up,
        &[
            call(1, "read_emails", json!({})),
            call(2, "format_response", json!({"text": "short", "$provenance": [1]})),
        ],
    );
    assert!(replies[1]["result"].is_object(), "{}", replies[1]);
    let (_, forwarded) = &up.executed()[1];
    assert!(!forwarded.contains_key("$provenance"));

    // node 1 is the `body` field, node 2 the whole untrusted record
    let replies = run(
        &mut s,
        &mut up,
        &[call(
            3,
            "send_email",
            json!({"to": "x@y.z", "body": "ok", "$provenance": [2]}),
        )],
    );
    assert_eq!(replies[0]["error"]["data"]["rule"], "L2G-trust");

    let replies = run(
        &mut s,
        &mut up,
        &[call(
            4,
            "send_email",
            json!({"to": "x@y.z", "body": "ok", "$provenance": [999]}),
        )],
    );
    assert_eq!(replies[0]["error"]["data"]["rule"], "graph-dangling-input");
}

#[test]
fn malformed_calls_are_audited_and_not_forwarded() {
    let mut s = session(Mode::Graph, PolicyConfig::default());
    let mut up = MockToolServer::new();
    let replies = run(
        &mut s,
        &mut up,
        &[
            json!({"jsonrpc": "2.0", "id": 1, "method": "tools/call", "params": {"arguments": {}}}),
            json!({"jsonrpc": "2.0", "id": 2, "method": "tools/call", "params": {"name": "x", "arguments": [1]}}),
            call(3, "send_email", json!({"to": "a", "body": "b", "$provenance": "nope"})),
        ],
    );
    assert!(replies.iter().all(|r| r["error"]["code"] == TOOL_DENIED));
    assert_eq!(s.audit().len(), 3);
    assert!(up.executed().is_empty());
}

#[test]
fn parse_errors_do_not_stop_the_session() {
    let mut s = session(Mode::Flat, PolicyConfig::default());
    let mut up = MockToolServer::new();
    let input = format!("not json\n{}\n", call(1, "read_emails", json!({})));
    let mut output = Vec::new();
    let stats = serve(&mut s, &mut up, input.as_bytes(), &mut output).unwrap();
    assert_eq!(stats.tool_calls, 1);
    assert_eq!(stats.forwarded, 1);
    let text = String::from_utf8(output).unwrap();
    assert!(text.lines().next().unwrap().contains("-32700"));
}
