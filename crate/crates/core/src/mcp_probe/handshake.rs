use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CandidateEndpoint, Capability, ProbeOptions, ServerInfo, Transport};
use crate::http::{HttpClient, HttpRequest, HttpResponse};

const EXCERPT_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandshakeOutcome {
    ValidMcp,
    AuthChallenge,
    NotMcp,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeResult {
    pub outcome: HandshakeOutcome,
    pub http_status: Option<u16>,
    pub www_authenticate: Option<String>,
    pub body_excerpt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<Transport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server_info: Option<ServerInfo>,
    #[serde(skip_serializing_if = "BTreeSet::is_empty", default)]
    pub capabilities: BTreeSet<Capability>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    /// Final URL after permitted redirects.
    pub url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl HandshakeResult {
    fn unreachable(url: &str, error: String) -> Self {
        Self {
            outcome: HandshakeOutcome::Unreachable,
            http_status: None,
            www_authenticate: None,
            body_excerpt: String::new(),
            transport: None,
            protocol_version: None,
            server_info: None,
            capabilities: BTreeSet::new(),
            session_id: None,
            url: url.to_string(),
            error: Some(error),
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) fn transport_of(resp: &HttpResponse) -> Transport {
    if resp.content_type().contains("text/event-stream") {
        Transport::HttpSse
    } else {
        Transport::StreamableHttp
    }
}

/// JSON-RPC messages carried by a response body, plain JSON or SSE `data:` events.
pub(crate) fn jsonrpc_messages(resp: &HttpResponse) -> Vec<Value> {
    if resp.content_type().contains("text/event-stream") {
        let text = resp.text();
        let mut out = Vec::new();
        let mut data = String::new();
        for line in text.lines().chain(std::iter::once("")) {
            if let Some(rest) = line.strip_prefix("data:") {
                if !data.is_empty() {
                    data.push('\n');
                }
                data.push_str(rest.strip_prefix(' ').unwrap_or(rest));
            } else if line.is_empty() && !data.is_empty() {
                if let Ok(v) = serde_json::from_str::<Value>(&data) {
                    out.push(v);
                }
                data.clear();
            }
        }
        out
    } else {
        match resp.json() {
            Some(Value::Array(items)) => items,
            Some(v) => vec![v],
            None => vec![],
        }
    }
}

/// The JSON-RPC 2.0 response to request `id`, if present.
pub(crate) fn response_for(resp: &HttpResponse, id: u64) -> Option<Value> {
    jsonrpc_messages(resp).into_iter().find(|m| {
        m.get("jsonrpc").and_then(Value::as_str) == Some("2.0")
            && m.get("id").and_then(Value::as_u64) == Some(id)
            && (m.get("result").is_some() || m.get("error").is_some())
    })
}

pub(crate) fn mcp_request(
    url: &str,
    body: &Value,
    token: Option<&str>,
    session_id: Option<&str>,
    protocol_version: Option<&str>,
) -> HttpRequest {
    let mut req = HttpRequest::post_json(url, body).header("accept", "application/json, text/event-stream");
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    if let Some(s) = session_id {
        req = req.header("mcp-session-id", s);
    }
    if let Some(v) = protocol_version {
        req = req.header("mcp-protocol-version", v);
    }
    req
}

/// Sends `req`, re-sending to `Location` on 307/308 within the hop budget.
pub(crate) async fn send_following(
    http: &HttpClient,
    mut req: HttpRequest,
    max_hops: u32,
) -> Result<HttpResponse, crate::http::TransportError> {
    let mut hops = 0;
    loop {
        let resp = http.send(req.clone()).await?;
        if matches!(resp.status, 307 | 308) && hops < max_hops {
            if let Some(loc) = resp.location() {
                hops += 1;
                req.url = loc;
                continue;
            }
        }
        return Ok(resp);
    }
}

/// Sends an MCP `initialize` request and interprets the answer.
pub async fn initialize_handshake(
    http: &HttpClient,
    endpoint: &CandidateEndpoint,
    token: Option<&str>,
    opts: &ProbeOptions,
) -> HandshakeResult {
    let id = fresh_id();
    let body = json!({
        "jsonrpc": "2.0",
        "id": id,
        "method": "initialize",
        "params": {
            "protocolVersion": opts.protocol_version,
            "capabilities": {},
            "clientInfo": {"name": "mcp-authscan", "version": env!("CARGO_PKG_VERSION")},
        },
    });
    let req = mcp_request(endpoint.url.as_str(), &body, token, None, None);
    let mut attempt = 0;
    let resp = loop {
        match send_following(http, req.clone(), opts.max_redirect_hops).await {
            Ok(r) => break r,
            Err(e) if attempt >= opts.max_retries => {
                return HandshakeResult::unreachable(endpoint.url.as_str(), e.to_string())
            }
            Err(_) => attempt += 1,
        }
    };
    interpret(&resp, id)
}

pub(crate) fn interpret(resp: &HttpResponse, id: u64) -> HandshakeResult {
    let mut out = HandshakeResult {
        outcome: HandshakeOutcome::NotMcp,
        http_status: Some(resp.status),
        www_authenticate: resp.header("www-authenticate").map(str::to_string),
        body_excerpt: resp.excerpt(EXCERPT_LIMIT),
        transport: None,
        protocol_version: None,
        server_info: None,
        capabilities: BTreeSet::new(),
        session_id: resp.header("mcp-session-id").map(str::to_string),
        url: resp.url.clone(),
        error: None,
    };
    if matches!(resp.status, 401 | 403) {
        out.outcome = HandshakeOutcome::AuthChallenge;
        out.transport = Some(transport_of(resp));
        return out;
    }
    let Some(msg) = response_for(resp, id) else {
        return out;
    };
    let Some(result) = msg.get("result") else {
        return out;
    };
    let Some(version) = result.get("protocolVersion").and_then(Value::as_str) else {
        return out;
    };
    let Some(caps) = result.get("capabilities").and_then(Value::as_object) else {
        return out;
    };
    out.outcome = HandshakeOutcome::ValidMcp;
    out.transport = Some(transport_of(resp));
    out.protocol_version = Some(version.to_string());
    out.capabilities = caps
        .keys()
        .filter_map(|k| match k.as_str() {
            "tools" => Some(Capability::Tools),
            "resources" => Some(Capability::Resources),
            "prompts" => Some(Capability::Prompts),
            _ => None,
        })
        .collect();
    out.server_info = result.get("serverInfo").map(|s| ServerInfo {
        name: s.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
        version: s.get("version").and_then(Value::as_str).unwrap_or_default().to_string(),
    });
    out
}
