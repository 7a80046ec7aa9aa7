//! Line-oriented TCP protocols spoken by simulated sites.
//!
//! Job-manager requests, one per line:
//!
//! ```text
//! PING                          -> PONG <site_id>
//! SUBMIT <base64 json>          -> OK <contact>
//! STATUS <contact>              -> STATE <JOBSTATE> [<exit_code>]
//! CANCEL <contact>              -> STATE <JOBSTATE> [<exit_code>]
//! JDL <base64 doc> [<base64 cred json>] -> OK <contact>
//! ```
//!
//! Any request may instead be answered by `ERR <CODE> <message>`. The exit code
//! trails the state only for DONE and FAILED.
//!
//! File-server requests:
//!
//! ```text
//! PING                          -> PONG <site_id>
//! GET <path>                    -> OK <length>\n<bytes>
//! PUT <path> <length>\n<bytes>  -> OK
//! DEL <path>                    -> OK
//! ```

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{
    AsyncBufRead, AsyncBufReadExt, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader,
};
use tokio::net::TcpStream;
use tokio::time::timeout;

use crate::credential::ProxyCredential;
use crate::fabric::WrapperRequest;
use crate::model::JobState;

/// Upper bound on a single request or response line.
pub const MAX_LINE: usize = 1 << 20;
/// Upper bound on a file body moved over the file-server protocol.
pub const MAX_BODY: u64 = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Auth,
    CacheMissing,
    QueueFull,
    UnknownContact,
    MalformedDescription,
    NotFound,
    Io,
    BadRequest,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Auth => "AUTH",
            ErrorCode::CacheMissing => "CACHE_MISSING",
            ErrorCode::QueueFull => "QUEUE_FULL",
            ErrorCode::UnknownContact => "UNKNOWN_CONTACT",
            ErrorCode::MalformedDescription => "MALFORMED_DESCRIPTION",
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::Io => "IO",
            ErrorCode::BadRequest => "BAD_REQUEST",
        }
    }
}

impl FromStr for ErrorCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "AUTH" => ErrorCode::Auth,
            "CACHE_MISSING" => ErrorCode::CacheMissing,
            "QUEUE_FULL" => ErrorCode::QueueFull,
            "UNKNOWN_CONTACT" => ErrorCode::UnknownContact,
            "MALFORMED_DESCRIPTION" => ErrorCode::MalformedDescription,
            "NOT_FOUND" => ErrorCode::NotFound,
            "IO" => ErrorCode::Io,
            "BAD_REQUEST" => ErrorCode::BadRequest,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} {message}", code.as_str())]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

impl WireError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        // Messages travel on one line.
        let message = message.into().replace(['\n', '\r'], " ");
        WireError { code, message }
    }
}

/// Body of a `SUBMIT` request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitPayload {
    pub request: WrapperRequest,
    pub credential: ProxyCredential,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobManagerRequest {
    Ping,
    Submit(Box<SubmitPayload>),
    Status(String),
    Cancel(String),
    Jdl {
        document: String,
        credential: Option<ProxyCredential>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobManagerResponse {
    Pong(String),
    Ok(String),
    State(JobState, Option<i32>),
    Err(WireError),
}

fn b64_json<T: Serialize>(value: &T) -> String {
    B64.encode(serde_json::to_vec(value).expect("wire payloads serialize"))
}

fn from_b64_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, WireError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| WireError::new(ErrorCode::BadRequest, format!("base64: {e}")))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| WireError::new(ErrorCode::BadRequest, format!("json: {e}")))
}

impl JobManagerRequest {
    pub fn encode(&self) -> String {
        match self {
            JobManagerRequest::Ping => "PING".into(),
            JobManagerRequest::Submit(payload) => format!("SUBMIT {}", b64_json(payload)),
            JobManagerRequest::Status(c) => format!("STATUS {c}"),
            JobManagerRequest::Cancel(c) => format!("CANCEL {c}"),
            JobManagerRequest::Jdl {
                document,
                credential,
            } => {
                let mut line = format!("JDL {}", B64.encode(document.as_bytes()));
                if let Some(cred) = credential {
                    line.push(' ');
                    line.push_str(&b64_json(cred));
                }
                line
            }
        }
    }

    pub fn decode(line: &str) -> Result<Self, WireError> {
        let mut parts = line.split_whitespace();
        let verb = parts.next().unwrap_or("");
        let arg = parts.next();
        let need = |arg: Option<&str>| {
            arg.map(str::to_string).ok_or_else(|| {
                WireError::new(ErrorCode::BadRequest, format!("{verb} needs an argument"))
            })
        };
        let req = match verb {
            "PING" => JobManagerRequest::Ping,
            "SUBMIT" => JobManagerRequest::Submit(Box::new(from_b64_json(&need(arg)?)?)),
            "STATUS" => JobManagerRequest::Status(need(arg)?),
            "CANCEL" => JobManagerRequest::Cancel(need(arg)?),
            "JDL" => {
                // Fields are split on single spaces so an empty document
                // keeps its (empty) position.
                let mut fields = line.trim_end().split(' ').skip(1);
                let doc = fields.next().unwrap_or("");
                let extra = fields.next().filter(|c| !c.is_empty());
                let bytes = B64.decode(doc).map_err(|e| {
                    WireError::new(ErrorCode::MalformedDescription, format!("base64: {e}"))
                })?;
                let document = String::from_utf8(bytes).map_err(|_| {
                    WireError::new(ErrorCode::MalformedDescription, "document is not UTF-8")
                })?;
                let credential = extra.map(from_b64_json).transpose()?;
                JobManagerRequest::Jdl {
                    document,
                    credential,
                }
            }
            other => {
                return Err(WireError::new(
                    ErrorCode::BadRequest,
                    format!("unknown request {other:?}"),
                ))
            }
        };
        Ok(req)
    }
}

impl fmt::Display for JobManagerResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JobManagerResponse::Pong(site) => write!(f, "PONG {site}"),
            JobManagerResponse::Ok(contact) => write!(f, "OK {contact}"),
            JobManagerResponse::State(state, Some(code)) => write!(f, "STATE {state} {code}"),
            JobManagerResponse::State(state, None) => write!(f, "STATE {state}"),
            JobManagerResponse::Err(e) => write!(f, "ERR {e}"),
        }
    }
}

impl JobManagerResponse {
    pub fn decode(line: &str) -> Result<Self, RpcError> {
        let bad = || RpcError::Protocol(format!("unexpected response {line:?}"));
        let (verb, rest) = line.split_once(' ').unwrap_or((line, ""));
        Ok(match verb {
            "PONG" => JobManagerResponse::Pong(rest.to_string()),
            "OK" if !rest.is_empty() => JobManagerResponse::Ok(rest.to_string()),
            "STATE" => {
                let mut it = rest.split_whitespace();
                let state = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let code = it
                    .next()
                    .map(|c| c.parse())
                    .transpose()
                    .map_err(|_| bad())?;
                JobManagerResponse::State(state, code)
            }
            "ERR" => JobManagerResponse::Err(parse_err(rest).ok_or_else(bad)?),
            _ => return Err(bad()),
        })
    }
}

fn parse_err(rest: &str) -> Option<WireError> {
    let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
    Some(WireError::new(code.parse().ok()?, message))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RpcError {
    #[error("endpoint {0} unreachable: {1}")]
    Unreachable(String, String),
    #[error("endpoint {0} timed out")]
    Timeout(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote error: {0}")]
    Remote(WireError),
}

impl RpcError {
    /// Whether the failure says nothing about the remote job (network trouble).
    pub fn is_transport(&self) -> bool {
        matches!(self, RpcError::Unreachable(..) | RpcError::Timeout(_))
    }
}

/// `host:port` from a contact string of the form `host:port[/service]`.
pub fn endpoint_address(contact: &str) -> &str {
    contact.split('/').next().unwrap_or(contact)
}

/// Reads one `\n`-terminated line, bounded by [`MAX_LINE`].
pub async fn read_line<R: AsyncBufRead + Unpin>(reader: &mut R) -> std::io::Result<Option<String>> {
    let mut buf = Vec::new();
    let n = (&mut *reader)
        .take(MAX_LINE as u64 + 1)
        .read_until(b'\n', &mut buf)
        .await?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "line too long or truncated",
        ));
    }
    buf.pop();
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "line is not UTF-8"))
}

pub async fn write_line<W: AsyncWrite + Unpin>(writer: &mut W, line: &str) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(line.len() + 1);
    bytes.extend_from_slice(line.as_bytes());
    bytes.push(b'\n');
    writer.write_all(&bytes).await?;
    writer.flush().await
}

async fn connect(addr: &str, limit: Duration) -> Result<BufReader<TcpStream>, RpcError> {
    match timeout(limit, TcpStream::connect(addr)).await {
        Err(_) => Err(RpcError::Timeout(addr.to_string())),
        Ok(Err(e)) => Err(RpcError::Unreachable(addr.to_string(), e.to_string())),
        Ok(Ok(stream)) => {
            let _ = stream.set_nodelay(true);
            Ok(BufReader::new(stream))
        }
    }
}

/// Sends one line, returns the one-line reply.
pub async fn call_line(addr: &str, line: &str, limit: Duration) -> Result<String, RpcError> {
    let fut = async {
        let mut stream = connect(addr, limit).await?;
        let io = |e: std::io::Error| RpcError::Unreachable(addr.to_string(), e.to_string());
        write_line(stream.get_mut(), line).await.map_err(io)?;
        read_line(&mut stream)
            .await
            .map_err(io)?
            .ok_or_else(|| RpcError::Protocol("connection closed before reply".into()))
    };
    timeout(limit, fut)
        .await
        .unwrap_or_else(|_| Err(RpcError::Timeout(addr.to_string())))
}

/// Client for a site job-manager endpoint.
#[derive(Debug, Clone)]
pub struct JobManagerClient {
    addr: String,
    limit: Duration,
}

impl JobManagerClient {
    pub fn new(contact: &str, limit: Duration) -> Self {
        JobManagerClient {
            addr: endpoint_address(contact).to_string(),
            limit,
        }
    }

    pub fn address(&self) -> &str {
        &self.addr
    }

    pub async fn call(&self, req: &JobManagerRequest) -> Result<JobManagerResponse, RpcError> {
        let reply = call_line(&self.addr, &req.encode(), self.limit).await?;
        match JobManagerResponse::decode(&reply)? {
            JobManagerResponse::Err(e) => Err(RpcError::Remote(e)),
            other => Ok(other),
        }
    }

    pub async fn ping(&self) -> Result<String, RpcError> {
        match self.call(&JobManagerRequest::Ping).await? {
            JobManagerResponse::Pong(site) => Ok(site),
            other => Err(RpcError::Protocol(format!("expected PONG, got {other}"))),
        }
    }

    async fn expect_contact(&self, req: JobManagerRequest) -> Result<String, RpcError> {
        match self.call(&req).await? {
            JobManagerResponse::Ok(contact) => Ok(contact),
            other => Err(RpcError::Protocol(format!("expected OK, got {other}"))),
        }
    }

    async fn expect_state(
        &self,
        req: JobManagerRequest,
    ) -> Result<(JobState, Option<i32>), RpcError> {
        match self.call(&req).await? {
            JobManagerResponse::State(s, code) => Ok((s, code)),
            other => Err(RpcError::Protocol(format!("expected STATE, got {other}"))),
        }
    }

    pub async fn submit(&self, payload: SubmitPayload) -> Result<String, RpcError> {
        self.expect_contact(JobManagerRequest::Submit(Box::new(payload)))
            .await
    }

    pub async fn submit_jdl(
        &self,
        document: String,
        credential: Option<ProxyCredential>,
    ) -> Result<String, RpcError> {
        self.expect_contact(JobManagerRequest::Jdl {
            document,
            credential,
        })
        .await
    }

    pub async fn status(&self, contact: &str) -> Result<(JobState, Option<i32>), RpcError> {
        self.expect_state(JobManagerRequest::Status(contact.to_string()))
            .await
    }

    pub async fn cancel(&self, contact: &str) -> Result<(JobState, Option<i32>), RpcError> {
        self.expect_state(JobManagerRequest::Cancel(contact.to_string()))
            .await
    }
}

/// Client for a site file-server endpoint.
#[derive(Debug, Clone)]
pub struct FileServerClient {
    addr: String,
    limit: Duration,
}

fn check_path(path: &str) -> Result<(), RpcError> {
    if path.is_empty() || path.contains(char::is_whitespace) {
        return Err(RpcError::Protocol(format!("path {path:?} cannot be sent")));
    }
    Ok(())
}

impl FileServerClient {
    pub fn new(contact: &str, limit: Duration) -> Self {
        FileServerClient {
            addr: endpoint_address(contact).to_string(),
            limit,
        }
    }

    pub async fn ping(&self) -> Result<String, RpcError> {
        let reply = call_line(&self.addr, "PING", self.limit).await?;
        reply
            .strip_prefix("PONG ")
            .map(str::to_string)
            .ok_or_else(|| RpcError::Protocol(format!("expected PONG, got {reply:?}")))
    }

    async fn exchange(&self, head: &str, body: Option<&[u8]>) -> Result<Option<Vec<u8>>, RpcError> {
        let addr = self.addr.clone();
        let fut = async {
            let mut stream = connect(&addr, self.limit).await?;
            let io = |e: std::io::Error| RpcError::Unreachable(addr.clone(), e.to_string());
            let mut out = Vec::with_capacity(head.len() + 1 + body.map_or(0, <[u8]>::len));
            out.extend_from_slice(head.as_bytes());
            out.push(b'\n');
            if let Some(body) = body {
                out.extend_from_slice(body);
            }
            stream.get_mut().write_all(&out).await.map_err(io)?;
            stream.get_mut().flush().await.map_err(io)?;
            let reply = read_line(&mut stream)
                .await
                .map_err(io)?
                .ok_or_else(|| RpcError::Protocol("connection closed before reply".into()))?;
            if let Some(rest) = reply.strip_prefix("ERR ") {
                return Err(RpcError::Remote(
                    parse_err(rest).ok_or_else(|| RpcError::Protocol(reply.clone()))?,
                ));
            }
            match reply.strip_prefix("OK") {
                Some("") => Ok(None),
                Some(len) => {
                    let len: u64 = len
                        .trim()
                        .parse()
                        .map_err(|_| RpcError::Protocol(format!("bad length in {reply:?}")))?;
                    if len > MAX_BODY {
                        return Err(RpcError::Protocol("body too large".into()));
                    }
                    let mut buf = vec![0u8; len as usize];
                    stream.read_exact(&mut buf).await.map_err(io)?;
                    Ok(Some(buf))
                }
                None => Err(RpcError::Protocol(format!("unexpected reply {reply:?}"))),
            }
        };
        // Large bodies get proportionally more time.
        let budget = self.limit + Duration::from_millis(body.map_or(0, |b| b.len() as u64 / 1024));
        timeout(budget, fut)
            .await
            .unwrap_or_else(|_| Err(RpcError::Timeout(self.addr.clone())))
    }

    pub async fn get(&self, path: &str) -> Result<Vec<u8>, RpcError> {
        check_path(path)?;
        self.exchange(&format!("GET {path}"), None)
            .await?
            .ok_or_else(|| RpcError::Protocol("GET reply without body".into()))
    }

    pub async fn put(&self, path: &str, bytes: &[u8]) -> Result<(), RpcError> {
        check_path(path)?;
        self.exchange(&format!("PUT {path} {}", bytes.len()), Some(bytes))
            .await
            .map(|_| ())
    }

    pub async fn delete(&self, path: &str) -> Result<(), RpcError> {
        check_path(path)?;
        self.exchange(&format!("DEL {path}"), None)
            .await
            .map(|_| ())
    }
}
