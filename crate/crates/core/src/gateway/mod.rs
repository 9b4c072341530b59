//! Session engine and the JSON-RPC stdio proxy built on it.

mod serve;
mod session;
mod upstream;

pub use serve::{result_value, serve, ServeStats, TOOL_DENIED};
pub use session::{CallHandle, Evaluation, PendingAudit, Session, SessionError, PROVENANCE_ARG};
pub use upstream::{ProcessUpstream, Upstream, UpstreamError};
