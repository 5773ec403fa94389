//! Small servers that look like MCP endpoints at a glance but are not, plus a
//! few legitimate edge cases (SSE replies, redirects, OIDC-only discovery).

use std::net::{Ipv4Addr, SocketAddr};

use axum::body::Bytes;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    /// A marketing page served with 200 for every method.
    HtmlLanding,
    /// Answers JSON-RPC but without an MCP `initialize` result.
    JsonRpcLookalike,
    /// A REST API returning unrelated JSON.
    PlainJson,
    /// Nothing listens on `/mcp`.
    NotFound,
    /// A working MCP server that replies over `text/event-stream`.
    SseMcp,
    /// `/mcp` permanently redirects (308) to `/v2/mcp`, a working server.
    Redirecting,
    /// An OAuth-protected MCP server whose authorization server only publishes
    /// OpenID discovery, appended to an issuer path.
    OidcOnly,
}

impl Fixture {
    pub const ALL: [Fixture; 7] = [
        Fixture::HtmlLanding,
        Fixture::JsonRpcLookalike,
        Fixture::PlainJson,
        Fixture::NotFound,
        Fixture::SseMcp,
        Fixture::Redirecting,
        Fixture::OidcOnly,
    ];

    /// Whether a correct prober should accept the fixture as an MCP endpoint.
    pub fn is_mcp(self) -> bool {
        matches!(self, Fixture::SseMcp | Fixture::Redirecting | Fixture::OidcOnly)
    }
}

pub struct FixtureHandle {
    pub kind: Fixture,
    /// The URL a scanner would be given.
    pub url: String,
    pub origin: String,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl FixtureHandle {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.task.take() {
            let _ = t.await;
        }
    }
}

impl Drop for FixtureHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

fn initialize_result(req: &Value) -> Value {
    json!({
        "jsonrpc": "2.0",
        "id": req.get("id").cloned().unwrap_or(Value::Null),
        "result": {
            "protocolVersion": req.pointer("/params/protocolVersion").cloned().unwrap_or(json!("2025-06-18")),
            "capabilities": {"tools": {}, "resources": {}},
            "serverInfo": {"name": "fixture", "version": "0.0.1"},
        }
    })
}

async fn landing() -> Response {
    (
        [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
        "<!doctype html><html><head><title>Acme AI</title></head><body><h1>Connect Acme to your assistant</h1></body></html>",
    )
        .into_response()
}

async fn lookalike(body: Bytes) -> Response {
    let id = serde_json::from_slice::<Value>(&body)
        .ok()
        .and_then(|v| v.get("id").cloned())
        .unwrap_or(Value::Null);
    axum::Json(json!({"jsonrpc": "2.0", "id": id, "result": {"status": "ok", "items": []}})).into_response()
}

async fn plain_json() -> Response {
    axum::Json(json!({"service": "inventory", "endpoints": ["/items", "/orders"]})).into_response()
}

async fn sse_mcp(body: Bytes) -> Response {
    let Ok(req) = serde_json::from_slice::<Value>(&body) else {
        return StatusCode::BAD_REQUEST.into_response();
    };
    if req.get("id").is_none() {
        return StatusCode::ACCEPTED.into_response();
    }
    let reply = match req.get("method").and_then(Value::as_str) {
        Some("initialize") => initialize_result(&req),
        Some("tools/list") => json!({"jsonrpc": "2.0", "id": req["id"], "result": {"tools": []}}),
        _ => json!({"jsonrpc": "2.0", "id": req["id"], "error": {"code": -32601, "message": "method not found"}}),
    };
    (
        [
            (header::CONTENT_TYPE, "text/event-stream"),
            (header::CACHE_CONTROL, "no-cache"),
        ],
        format!("event: message\ndata: {reply}\n\n"),
    )
        .into_response()
}

fn router(kind: Fixture, origin: &str) -> Router {
    match kind {
        Fixture::HtmlLanding => Router::new().fallback(landing),
        Fixture::JsonRpcLookalike => Router::new().route("/mcp", post(lookalike)),
        Fixture::PlainJson => Router::new().fallback(plain_json),
        Fixture::NotFound => Router::new(),
        Fixture::SseMcp => Router::new().route("/mcp", post(sse_mcp)),
        Fixture::Redirecting => Router::new()
            .route(
                "/mcp",
                post(|| async { (StatusCode::PERMANENT_REDIRECT, [(header::LOCATION, "/v2/mcp")]) }),
            )
            .route("/v2/mcp", post(sse_mcp)),
        Fixture::OidcOnly => {
            let issuer = format!("{origin}/tenant");
            let prm = json!({"resource": format!("{origin}/mcp"), "authorization_servers": [issuer]});
            let oidc = json!({
                "issuer": issuer,
                "authorization_endpoint": format!("{issuer}/authorize"),
                "token_endpoint": format!("{issuer}/token"),
                "response_types_supported": ["code"],
                "code_challenge_methods_supported": ["S256"],
            });
            Router::new()
                .route(
                    "/mcp",
                    post(|| async {
                        (
                            StatusCode::UNAUTHORIZED,
                            [(header::WWW_AUTHENTICATE, "Bearer realm=\"fixture\"")],
                            axum::Json(json!({"error": "invalid_token"})),
                        )
                    }),
                )
                .route(
                    "/.well-known/oauth-protected-resource",
                    get(move || async move { axum::Json(prm) }),
                )
                .route(
                    "/tenant/.well-known/openid-configuration",
                    get(move || async move { axum::Json(oidc) }),
                )
        }
    }
}

pub async fn spawn_fixture(kind: Fixture) -> std::io::Result<FixtureHandle> {
    let listener = TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, 0))).await?;
    let origin = format!("http://127.0.0.1:{}", listener.local_addr()?.port());
    let app = router(kind, &origin);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(FixtureHandle {
        kind,
        url: format!("{origin}/mcp"),
        origin,
        shutdown: Some(tx),
        task: Some(task),
    })
}
