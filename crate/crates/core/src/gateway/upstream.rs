use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum UpstreamError {
    #[error("upstream error {code}: {message}")]
    Rpc {
        code: i64,
        message: String,
        data: Option<Value>,
    },
    #[error("upstream transport failure: {0}")]
    Transport(String),
}

impl From<io::Error> for UpstreamError {
    fn from(err: io::Error) -> Self {
        UpstreamError::Transport(err.to_string())
    }
}

/// The real tool server behind the gateway.
pub trait Upstream {
    fn request(&mut self, method: &str, params: Value) -> Result<Value, UpstreamError>;

    fn notify(&mut self, _method: &str, _params: Value) -> Result<(), UpstreamError> {
        Ok(())
    }
}

/// A tool server child process speaking newline-delimited JSON-RPC on stdio.
pub struct ProcessUpstream {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

impl ProcessUpstream {
    /// Spawn `command` through `sh -c`.
    pub fn spawn(command: &str) -> io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(ProcessUpstream {
            child,
            stdin,
            stdout,
            next_id: 1,
        })
    }

    fn send(&mut self, message: &Value) -> Result<(), UpstreamError> {
        let mut line = serde_json::to_string(message).expect("values always serialize");
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;
        Ok(())
    }
}

impl Upstream for ProcessUpstream {
    fn request(&mut self, method: &str, params: Value) -> Result<Value, UpstreamError> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params}))?;
        loop {
            let mut line = String::new();
            if self.stdout.read_line(&mut line)? == 0 {
                return Err(UpstreamError::Transport("upstream closed its output".into()));
            }
            if line.trim().is_empty() {
                continue;
            }
            let message: Value = serde_json::from_str(&line)
                .map_err(|e| UpstreamError::Transport(format!("malformed upstream message: {e}")))?;
            // skip server-initiated notifications and stale responses
            if message.get("id").and_then(Value::as_u64) != Some(id) {
                continue;
            }
            return parse_response(message);
        }
    }

    fn notify(&mut self, method: &str, params: Value) -> Result<(), UpstreamError> {
        self.send(&json!({"jsonrpc": "2.0", "method": method, "params": params}))
    }
}

impl Drop for ProcessUpstream {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn parse_response(mut message: Value) -> Result<Value, UpstreamError> {
    if let Some(error) = message.get_mut("error").map(Value::take) {
        return Err(UpstreamError::Rpc {
            code: error.get("code").and_then(Value::as_i64).unwrap_or(-32603),
            message: error
                .get("message")
                .and_then(Value::as_str)
                .unwrap_or("upstream error")
                .to_string(),
            data: error.get("data").cloned(),
        });
    }
    Ok(message.get_mut("result").map(Value::take).unwrap_or(Value::Null))
}
