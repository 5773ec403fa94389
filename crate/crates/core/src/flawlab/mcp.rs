//! The lab's MCP server, including its client role toward the upstream service.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use serde_json::{json, Map, Value};
use sha2::Sha256;

use super::auth::{code_redirect, issue_code};
use super::state::{html, json, params, redirect, s256, with_query, Lab};
use super::{AuthMode, BridgeEncoding, F8Variant, UPSTREAM_CLIENT_ID};
use crate::taxonomy::FlawId;

pub(super) fn router() -> Router<Arc<Lab>> {
    Router::new()
        .route("/.well-known/oauth-protected-resource", get(resource_metadata))
        .route("/.well-known/oauth-protected-resource/mcp", get(resource_metadata))
        .route("/mcp", get(mcp_get).post(mcp_post))
        .route("/oauth/callback", get(delegated_callback))
}

fn prm_url(lab: &Lab) -> String {
    format!("{}/.well-known/oauth-protected-resource/mcp", lab.mcp_origin)
}

async fn resource_metadata(State(lab): State<Arc<Lab>>) -> Response {
    if lab.config.auth_mode != AuthMode::Oauth {
        return StatusCode::NOT_FOUND.into_response();
    }
    json(
        StatusCode::OK,
        json!({
            "resource": format!("{}/mcp", lab.mcp_origin),
            "authorization_servers": [lab.auth_origin],
            "scopes_supported": [super::LAB_SCOPE],
            "bearer_methods_supported": ["header"],
        }),
    )
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer ").or_else(|| v.strip_prefix("bearer ")))
        .map(str::trim)
}

/// `None` when the request may proceed, otherwise the rejection.
fn gate(lab: &Lab, headers: &HeaderMap) -> Option<Response> {
    match lab.config.auth_mode {
        AuthMode::None => None,
        AuthMode::StaticToken => {
            let key = headers
                .get("x-api-key")
                .and_then(|v| v.to_str().ok())
                .or_else(|| bearer(headers));
            (key != Some(lab.config.static_token.as_str())).then(|| {
                json(
                    StatusCode::UNAUTHORIZED,
                    json!({"error": "invalid_api_key", "message": "a valid API key is required"}),
                )
            })
        }
        AuthMode::Oauth => {
            let ok = bearer(headers).is_some_and(|t| lab.with(|s| s.tokens.contains_key(t)));
            (!ok).then(|| {
                let mut r = json(
                    StatusCode::UNAUTHORIZED,
                    json!({"error": "invalid_token", "error_description": "authorization required"}),
                );
                let challenge = format!("Bearer resource_metadata=\"{}\"", prm_url(lab));
                r.headers_mut()
                    .insert(header::WWW_AUTHENTICATE, challenge.parse().expect("ascii header"));
                r
            })
        }
    }
}

async fn mcp_get(State(lab): State<Arc<Lab>>, headers: HeaderMap) -> Response {
    if let Some(r) = gate(&lab, &headers) {
        return r;
    }
    StatusCode::METHOD_NOT_ALLOWED.into_response()
}

fn rpc_result(id: &Value, result: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "result": result})
}

fn rpc_error(id: &Value, code: i64, message: &str) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message}})
}

async fn mcp_post(State(lab): State<Arc<Lab>>, headers: HeaderMap, body: Bytes) -> Response {
    if let Some(r) = gate(&lab, &headers) {
        return r;
    }
    let Ok(msg) = serde_json::from_slice::<Value>(&body) else {
        return json(StatusCode::BAD_REQUEST, rpc_error(&Value::Null, -32700, "parse error"));
    };
    let method = msg.get("method").and_then(Value::as_str).unwrap_or_default();
    let Some(id) = msg.get("id") else {
        // notifications carry no id and get no body
        return StatusCode::ACCEPTED.into_response();
    };
    let reply = match method {
        "initialize" => {
            let version = msg
                .pointer("/params/protocolVersion")
                .and_then(Value::as_str)
                .unwrap_or(crate::mcp_probe::DEFAULT_PROTOCOL_VERSION);
            let session = lab.with(|s| s.artifact());
            let mut r = json(
                StatusCode::OK,
                rpc_result(
                    id,
                    json!({
                        "protocolVersion": version,
                        "capabilities": {"tools": {"listChanged": false}},
                        "serverInfo": {"name": "flawlab", "version": env!("CARGO_PKG_VERSION")},
                    }),
                ),
            );
            r.headers_mut()
                .insert("mcp-session-id", session.parse().expect("base64url is a valid header"));
            return r;
        }
        "tools/list" => rpc_result(
            id,
            json!({"tools": [{
                "name": "whoami",
                "description": "Returns the identity bound to the presented credential.",
                "inputSchema": {"type": "object", "properties": {}},
            }]}),
        ),
        "tools/call" => rpc_result(
            id,
            json!({"content": [{"type": "text", "text": "flawlab-user"}], "isError": false}),
        ),
        "ping" => rpc_result(id, json!({})),
        _ => rpc_error(id, -32601, "method not found"),
    };
    json(StatusCode::OK, reply)
}

fn sign(lab: &Lab, fields: &Map<String, Value>) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(&lab.hmac_key).expect("hmac takes any key length");
    mac.update(Value::Object(fields.clone()).to_string().as_bytes());
    mac.finalize()
        .into_bytes()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn decode_state(raw: &str) -> Option<Map<String, Value>> {
    let bytes = URL_SAFE_NO_PAD.decode(raw.trim_end_matches('=')).ok()?;
    match serde_json::from_slice(&bytes).ok()? {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Consent was granted for `tx_id`: the MCP server now sends the user to the upstream service.
pub(super) fn begin_upstream(lab: &Lab, tx_id: &str) -> Response {
    let Some(upstream) = lab.upstream_origin.clone() else {
        return html(StatusCode::INTERNAL_SERVER_ERROR, "Upstream unavailable", "");
    };
    let Some(tx) = lab.with(|s| s.txs.get(tx_id).cloned()) else {
        return html(StatusCode::BAD_REQUEST, "Authorization error", "<p>unknown transaction</p>");
    };
    let callback = format!("{}/oauth/callback", lab.mcp_origin);
    let pkce = !lab.on(FlawId::F3);

    let upstream_state = if lab.on(FlawId::F8) {
        match lab.config.variants.f8 {
            F8Variant::Omit => None,
            F8Variant::Fixed => Some("state".to_string()),
            F8Variant::Short => Some("1234".to_string()),
        }
    } else if lab.on(FlawId::F4) {
        let ctx = json!({
            "tx": tx_id,
            "client_id": tx.client_id,
            "redirect_uri": tx.redirect_uri,
            "state": tx.state,
        });
        Some(URL_SAFE_NO_PAD.encode(ctx.to_string()))
    } else {
        match lab.config.bridge_encoding {
            BridgeEncoding::OpaqueMap => Some(lab.with(|s| {
                let st = s.artifact();
                s.upstream_map.insert(st.clone(), tx_id.to_string());
                st
            })),
            BridgeEncoding::SignedNested => {
                let mut fields = Map::new();
                fields.insert("tx".into(), json!(tx_id));
                fields.insert("client_id".into(), json!(tx.client_id));
                fields.insert("redirect_uri".into(), json!(tx.redirect_uri));
                fields.insert("state".into(), json!(tx.state));
                let sig = sign(lab, &fields);
                fields.insert("sig".into(), json!(sig));
                Some(URL_SAFE_NO_PAD.encode(Value::Object(fields).to_string()))
            }
        }
    };

    let verifier = lab.with(|s| {
        let v = pkce.then(|| s.verifier());
        if let Some(t) = s.txs.get_mut(tx_id) {
            t.upstream_verifier = v.clone();
        }
        s.pending_upstream.retain(|p| p != tx_id);
        s.pending_upstream.push(tx_id.to_string());
        v
    });

    let mut pairs: Vec<(&str, String)> = vec![
        ("response_type", "code".into()),
        ("client_id", UPSTREAM_CLIENT_ID.into()),
        ("redirect_uri", callback),
        ("scope", "profile".into()),
    ];
    if let Some(st) = upstream_state {
        pairs.push(("state", st));
    }
    if let Some(v) = &verifier {
        pairs.push(("code_challenge", s256(v)));
        pairs.push(("code_challenge_method", "S256".into()));
    }
    let borrowed: Vec<(&str, &str)> = pairs.iter().map(|(k, v)| (*k, v.as_str())).collect();
    redirect(&with_query(&format!("{upstream}/authorize"), &borrowed))
}

struct Resume {
    tx_id: String,
    /// Where the downstream code goes.
    redirect_uri: String,
    state: Option<String>,
    /// Whether the pending transaction is consumed by this callback.
    consume: bool,
}

fn resolve(lab: &Lab, upstream_state: Option<&str>) -> Result<Resume, &'static str> {
    let stored = |tx_id: String, consume: bool| -> Result<Resume, &'static str> {
        let tx = lab
            .with(|s| s.txs.get(&tx_id).cloned())
            .ok_or("the pending authorization no longer exists")?;
        Ok(Resume {
            tx_id,
            redirect_uri: tx.redirect_uri,
            state: tx.state,
            consume,
        })
    };
    if lab.on(FlawId::F4) {
        // the decoded context is trusted as-is and stays replayable
        let ctx = upstream_state.and_then(decode_state).ok_or("state is not a context blob")?;
        let tx_id = ctx.get("tx").and_then(Value::as_str).ok_or("context has no tx")?;
        let base = stored(tx_id.to_string(), false)?;
        return Ok(Resume {
            redirect_uri: ctx
                .get("redirect_uri")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or(base.redirect_uri),
            state: ctx.get("state").and_then(Value::as_str).map(str::to_string),
            ..base
        });
    }
    if lab.on(FlawId::F8) {
        let latest = lab
            .with(|s| s.pending_upstream.last().cloned())
            .ok_or("no authorization is pending")?;
        return stored(latest, true);
    }
    let st = upstream_state.ok_or("state missing")?;
    match lab.config.bridge_encoding {
        BridgeEncoding::OpaqueMap => {
            let tx_id = lab
                .with(|s| s.upstream_map.remove(st))
                .ok_or("state does not match a pending authorization")?;
            stored(tx_id, true)
        }
        BridgeEncoding::SignedNested => {
            let mut ctx = decode_state(st).ok_or("state is not a context blob")?;
            let sig = ctx
                .remove("sig")
                .and_then(|v| v.as_str().map(str::to_string))
                .ok_or("context is unsigned")?;
            if sign(lab, &ctx) != sig {
                return Err("context signature mismatch");
            }
            let tx_id = ctx.get("tx").and_then(Value::as_str).ok_or("context has no tx")?;
            stored(tx_id.to_string(), true)
        }
    }
}

async fn delegated_callback(State(lab): State<Arc<Lab>>, RawQuery(q): RawQuery) -> Response {
    let p = params(q.as_deref().unwrap_or(""));
    let Some(code) = p.get("code").cloned() else {
        let err = p.get("error").cloned().unwrap_or_else(|| "missing code".into());
        return html(StatusCode::BAD_REQUEST, "Upstream error", &format!("<p>{}</p>", super::state::escape(&err)));
    };
    let resume = match resolve(&lab, p.get("state").map(String::as_str)) {
        Ok(r) => r,
        Err(msg) => return html(StatusCode::BAD_REQUEST, "Callback rejected", &format!("<p>{msg}</p>")),
    };
    let Some(tx) = lab.with(|s| s.txs.get(&resume.tx_id).cloned()) else {
        return html(StatusCode::BAD_REQUEST, "Callback rejected", "<p>unknown transaction</p>");
    };

    let upstream = lab.upstream_origin.clone().unwrap_or_default();
    let mut form = vec![
        ("grant_type", "authorization_code".to_string()),
        ("code", code),
        ("redirect_uri", format!("{}/oauth/callback", lab.mcp_origin)),
        ("client_id", UPSTREAM_CLIENT_ID.to_string()),
    ];
    if let Some(v) = &tx.upstream_verifier {
        form.push(("code_verifier", v.clone()));
    }
    let body = url::form_urlencoded::Serializer::new(String::new())
        .extend_pairs(form.iter().map(|(k, v)| (*k, v.as_str())))
        .finish();
    let exchanged = lab
        .http
        .post(format!("{upstream}/token"))
        .header(header::CONTENT_TYPE, "application/x-www-form-urlencoded")
        .body(body)
        .send()
        .await;
    let upstream_token = match exchanged {
        Ok(r) if r.status().is_success() => r
            .bytes()
            .await
            .ok()
            .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
            .and_then(|v| v.get("access_token").and_then(Value::as_str).map(str::to_string)),
        _ => None,
    };
    let Some(upstream_token) = upstream_token else {
        return html(StatusCode::BAD_GATEWAY, "Upstream token exchange failed", "");
    };

    let code = lab.with(|s| {
        s.upstream_tokens.insert(upstream_token, resume.tx_id.clone());
        if resume.consume {
            s.txs.remove(&resume.tx_id);
            s.pending_upstream.retain(|t| t != &resume.tx_id);
        }
        issue_code(s, &tx.client_id, &tx.redirect_uri, tx.challenge.clone())
    });
    code_redirect(&resume.redirect_uri, &code, resume.state.as_deref())
}
