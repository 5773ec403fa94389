//! Validation of candidate endpoints as live MCP servers and classification
//! of their authentication status.

mod handshake;

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::Mutex;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use url::Url;

use crate::http::HttpClient;
use crate::oauth::{discover_with_hint, Discovery};

pub use handshake::{initialize_handshake, HandshakeOutcome, HandshakeResult};
pub(crate) use handshake::{mcp_request, response_for, send_following};

pub const DEFAULT_PROTOCOL_VERSION: &str = "2025-06-18";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEndpoint {
    pub url: Url,
    pub source_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProbeInputError {
    #[error("`{0}` is not an absolute http(s) URL")]
    InvalidUrl(String),
    #[error("line {line}: {message}")]
    TargetFile { line: usize, message: String },
}

impl CandidateEndpoint {
    pub fn new(url: &str, source_label: impl Into<String>) -> Result<Self, ProbeInputError> {
        let parsed = Url::parse(url.trim()).map_err(|_| ProbeInputError::InvalidUrl(url.to_string()))?;
        if !matches!(parsed.scheme(), "http" | "https") || parsed.host_str().is_none() {
            return Err(ProbeInputError::InvalidUrl(url.to_string()));
        }
        Ok(Self {
            url: parsed,
            source_label: source_label.into(),
        })
    }

    fn host_port(&self) -> (String, u16) {
        (
            self.url.host_str().unwrap_or_default().to_ascii_lowercase(),
            self.url.port_or_known_default().unwrap_or(0),
        )
    }
}

/// Parses a newline-delimited target file of `url[,label]` lines.
/// Blank lines and `#` comments are skipped.
pub fn parse_target_file(text: &str) -> Result<Vec<CandidateEndpoint>, ProbeInputError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (url, label) = line.split_once(',').unwrap_or((line, ""));
        let label = if label.trim().is_empty() {
            format!("line {}", i + 1)
        } else {
            label.trim().to_string()
        };
        out.push(
            CandidateEndpoint::new(url, label).map_err(|e| ProbeInputError::TargetFile {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    StreamableHttp,
    HttpSse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Tools,
    Resources,
    Prompts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthStatus {
    None,
    StaticToken,
    Oauth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McpEndpoint {
    pub url: String,
    pub transport: Transport,
    /// Absent when the handshake itself was challenged.
    pub protocol_version: Option<String>,
    pub server_info: Option<ServerInfo>,
    pub capabilities: BTreeSet<Capability>,
    pub auth_status: AuthStatus,
    /// Which request first met an authentication challenge, if any.
    pub challenged_request: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeOptions {
    pub protocol_version: String,
    pub max_retries: u32,
    pub max_redirect_hops: u32,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            protocol_version: DEFAULT_PROTOCOL_VERSION.into(),
            max_retries: 1,
            max_redirect_hops: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClassifyError {
    #[error("endpoint unreachable: {}", .0.error.as_deref().unwrap_or("unknown error"))]
    Unreachable(Box<HandshakeResult>),
    #[error("endpoint is not an MCP server")]
    NotMcp(Box<HandshakeResult>),
}

impl ClassifyError {
    pub fn handshake(&self) -> &HandshakeResult {
        match self {
            ClassifyError::Unreachable(h) | ClassifyError::NotMcp(h) => h,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuthClassification {
    pub status: AuthStatus,
    pub endpoint: McpEndpoint,
    pub handshake: HandshakeResult,
    pub discovery: Option<Discovery>,
    pub tools_list_status: Option<u16>,
}

/// Unauthenticated `initialize` followed, when admitted, by `tools/list`.
/// Never sends credentials.
pub async fn classify_auth(
    http: &HttpClient,
    endpoint: &CandidateEndpoint,
    opts: &ProbeOptions,
) -> Result<AuthClassification, ClassifyError> {
    let hs = initialize_handshake(http, endpoint, None, opts).await;
    let (challenge, challenged, tools_status) = match hs.outcome {
        HandshakeOutcome::Unreachable => return Err(ClassifyError::Unreachable(Box::new(hs))),
        HandshakeOutcome::NotMcp => return Err(ClassifyError::NotMcp(Box::new(hs))),
        HandshakeOutcome::AuthChallenge => (Some(hs.www_authenticate.clone()), "initialize", None),
        HandshakeOutcome::ValidMcp => {
            let (status, header) = list_tools_unauthenticated(http, &hs, opts).await;
            match status {
                Some(401 | 403) => (Some(header), "tools/list", status),
                _ => (None, "", status),
            }
        }
    };
    let (status, discovery) = match challenge {
        None => (AuthStatus::None, None),
        Some(header) => match discover_with_hint(http, &hs.url, header.as_deref()).await {
            Ok(d) => (AuthStatus::Oauth, Some(d)),
            Err(_) => (AuthStatus::StaticToken, None),
        },
    };
    let endpoint = McpEndpoint {
        url: endpoint.url.to_string(),
        transport: hs.transport.unwrap_or(Transport::StreamableHttp),
        protocol_version: hs.protocol_version.clone(),
        server_info: hs.server_info.clone(),
        capabilities: hs.capabilities.clone(),
        auth_status: status,
        challenged_request: (!challenged.is_empty()).then(|| challenged.to_string()),
    };
    Ok(AuthClassification {
        status,
        endpoint,
        handshake: hs,
        discovery,
        tools_list_status: tools_status,
    })
}

async fn list_tools_unauthenticated(
    http: &HttpClient,
    hs: &HandshakeResult,
    opts: &ProbeOptions,
) -> (Option<u16>, Option<String>) {
    let session = hs.session_id.as_deref();
    let version = hs.protocol_version.as_deref();
    let note = json!({"jsonrpc": "2.0", "method": "notifications/initialized"});
    let _ = http.send(mcp_request(&hs.url, &note, None, session, version)).await;
    let id = handshake::fresh_id();
    let body = json!({"jsonrpc": "2.0", "id": id, "method": "tools/list", "params": {}});
    match send_following(http, mcp_request(&hs.url, &body, None, session, version), opts.max_redirect_hops).await {
        Ok(resp) => {
            let header = resp.header("www-authenticate").map(str::to_string);
            (Some(resp.status), header)
        }
        Err(_) => (None, None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOutcome {
    ValidMcp,
    AuthChallenge,
    NotMcp,
    Unreachable,
    Duplicate,
}

impl From<HandshakeOutcome> for CandidateOutcome {
    fn from(o: HandshakeOutcome) -> Self {
        match o {
            HandshakeOutcome::ValidMcp => CandidateOutcome::ValidMcp,
            HandshakeOutcome::AuthChallenge => CandidateOutcome::AuthChallenge,
            HandshakeOutcome::NotMcp => CandidateOutcome::NotMcp,
            HandshakeOutcome::Unreachable => CandidateOutcome::Unreachable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEvidence {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http_status: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub www_authenticate: Option<String>,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub body_excerpt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub challenged_request: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One JSON line of validation output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub url: String,
    pub source_label: String,
    pub outcome: CandidateOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auth_status: Option<AuthStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<Transport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<String>,
    pub evidence: CandidateEvidence,
}

/// Append-only destination for validation records, shared across concurrent probes.
pub trait RecordSink: Send + Sync {
    fn push(&self, record: &CandidateRecord);
}

#[derive(Debug, Default)]
pub struct MemorySink(Mutex<Vec<CandidateRecord>>);

impl MemorySink {
    pub fn records(&self) -> Vec<CandidateRecord> {
        self.0.lock().expect("sink lock").clone()
    }
}

impl RecordSink for MemorySink {
    fn push(&self, record: &CandidateRecord) {
        self.0.lock().expect("sink lock").push(record.clone());
    }
}

/// Writes one JSON object per line.
pub struct JsonLinesSink<W: Write + Send>(Mutex<W>);

impl<W: Write + Send> JsonLinesSink<W> {
    pub fn new(w: W) -> Self {
        Self(Mutex::new(w))
    }

    pub fn into_inner(self) -> W {
        self.0.into_inner().expect("sink lock")
    }
}

impl<W: Write + Send> RecordSink for JsonLinesSink<W> {
    fn push(&self, record: &CandidateRecord) {
        let mut w = self.0.lock().expect("sink lock");
        let line = serde_json::to_string(record).expect("record serializes");
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            tracing::warn!("validation sink write failed: {e}");
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Validation {
    pub endpoints: Vec<McpEndpoint>,
    /// One record per input, in input order.
    pub records: Vec<CandidateRecord>,
    /// Classifications of accepted endpoints, parallel to `endpoints`.
    pub classifications: Vec<AuthClassification>,
}

/// Validates candidates concurrently (at most `concurrency` in flight). Per-host
/// pacing comes from the client's rate limit. Duplicate `(host, port)` entries
/// are probed once.
pub async fn validate_candidates(
    http: &HttpClient,
    candidates: &[CandidateEndpoint],
    concurrency: usize,
    opts: &ProbeOptions,
    sink: &dyn RecordSink,
) -> Validation {
    let mut first_seen: HashMap<(String, u16), usize> = HashMap::new();
    let mut duplicates = HashMap::new();
    let mut unique = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        match first_seen.get(&c.host_port()) {
            Some(&j) => {
                duplicates.insert(i, j);
            }
            None => {
                first_seen.insert(c.host_port(), i);
                unique.push(i);
            }
        }
    }

    let results: Vec<(usize, CandidateRecord, Option<AuthClassification>)> = stream::iter(unique)
        .map(|i| async move {
            let (record, class) = probe_one(http, &candidates[i], opts).await;
            sink.push(&record);
            (i, record, class)
        })
        .buffer_unordered(concurrency.max(1))
        .collect()
        .await;

    let mut by_index: HashMap<usize, (CandidateRecord, Option<AuthClassification>)> =
        results.into_iter().map(|(i, r, c)| (i, (r, c))).collect();
    let mut out = Validation::default();
    for (i, c) in candidates.iter().enumerate() {
        if let Some(&j) = duplicates.get(&i) {
            let record = CandidateRecord {
                url: c.url.to_string(),
                source_label: c.source_label.clone(),
                outcome: CandidateOutcome::Duplicate,
                auth_status: None,
                transport: None,
                protocol_version: None,
                evidence: CandidateEvidence {
                    duplicate_of: Some(candidates[j].url.to_string()),
                    ..empty_evidence()
                },
            };
            sink.push(&record);
            out.records.push(record);
            continue;
        }
        let (record, class) = by_index.remove(&i).expect("every unique candidate probed");
        if let Some(class) = class {
            out.endpoints.push(class.endpoint.clone());
            out.classifications.push(class);
        }
        out.records.push(record);
    }
    out
}

fn empty_evidence() -> CandidateEvidence {
    CandidateEvidence {
        http_status: None,
        www_authenticate: None,
        body_excerpt: String::new(),
        challenged_request: None,
        duplicate_of: None,
        error: None,
    }
}

async fn probe_one(
    http: &HttpClient,
    c: &CandidateEndpoint,
    opts: &ProbeOptions,
) -> (CandidateRecord, Option<AuthClassification>) {
    let base = |outcome, hs: &HandshakeResult| CandidateRecord {
        url: c.url.to_string(),
        source_label: c.source_label.clone(),
        outcome,
        auth_status: None,
        transport: hs.transport,
        protocol_version: hs.protocol_version.clone(),
        evidence: CandidateEvidence {
            http_status: hs.http_status,
            www_authenticate: hs.www_authenticate.clone(),
            body_excerpt: excerpt(&hs.body_excerpt),
            error: hs.error.clone(),
            ..empty_evidence()
        },
    };
    match classify_auth(http, c, opts).await {
        Ok(class) => {
            let mut rec = base(class.handshake.outcome.into(), &class.handshake);
            rec.auth_status = Some(class.status);
            rec.evidence.challenged_request = class.endpoint.challenged_request.clone();
            (rec, Some(class))
        }
        Err(err) => {
            let outcome = err.handshake().outcome.into();
            (base(outcome, err.handshake()), None)
        }
    }
}

fn excerpt(s: &str) -> String {
    s.chars().take(512).collect()
}

/// Lists tools with an optional bearer token, returning tool names.
pub async fn list_tools(
    http: &HttpClient,
    mcp_url: &str,
    token: Option<&str>,
    opts: &ProbeOptions,
) -> Option<Vec<String>> {
    let endpoint = CandidateEndpoint::new(mcp_url, "").ok()?;
    let hs = initialize_handshake(http, &endpoint, token, opts).await;
    if hs.outcome != HandshakeOutcome::ValidMcp {
        return None;
    }
    let session = hs.session_id.as_deref();
    let version = hs.protocol_version.as_deref();
    let id = handshake::fresh_id();
    let body = json!({"jsonrpc": "2.0", "id": id, "method": "tools/list", "params": {}});
    let resp = http
        .send(mcp_request(&hs.url, &body, token, session, version))
        .await
        .ok()?;
    let msg = response_for(&resp, id)?;
    let tools = msg.get("result")?.get("tools")?.as_array()?;
    Some(
        tools
            .iter()
            .filter_map(|t| t.get("name").and_then(Value::as_str).map(str::to_string))
            .collect(),
    )
}
