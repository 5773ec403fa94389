//! The upstream service the MCP server delegates to. Its user is always signed in
//! and consents automatically.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use serde_json::json;

use super::state::{
    challenge_matches, html, json, params, redirect, with_query, ChallengeMethod, Lab, UpstreamCode,
};
use super::UPSTREAM_CLIENT_ID;

pub(super) fn router() -> Router<Arc<Lab>> {
    Router::new()
        .route("/authorize", get(authorize))
        .route("/token", post(token))
        .route("/api/me", get(me))
}

async fn authorize(State(lab): State<Arc<Lab>>, RawQuery(q): RawQuery) -> Response {
    let p = params(q.as_deref().unwrap_or(""));
    let expected = format!("{}/oauth/callback", lab.mcp_origin);
    if p.get("client_id").map(String::as_str) != Some(UPSTREAM_CLIENT_ID) {
        return html(StatusCode::BAD_REQUEST, "Upstream error", "<p>unknown client</p>");
    }
    if p.get("redirect_uri") != Some(&expected) {
        return html(StatusCode::BAD_REQUEST, "Upstream error", "<p>redirect_uri mismatch</p>");
    }
    let challenge = match (p.get("code_challenge"), p.get("code_challenge_method").map(String::as_str)) {
        (Some(c), Some("S256")) => Some((c.clone(), ChallengeMethod::S256)),
        (Some(c), _) => Some((c.clone(), ChallengeMethod::Plain)),
        (None, _) => None,
    };
    let code = lab.with(|s| {
        let code = s.artifact();
        s.upstream_codes.insert(
            code.clone(),
            UpstreamCode {
                redirect_uri: expected.clone(),
                challenge,
                redeemed: false,
            },
        );
        code
    });
    let mut pairs = vec![("code", code.as_str())];
    if let Some(st) = p.get("state") {
        pairs.push(("state", st));
    }
    redirect(&with_query(&expected, &pairs))
}

async fn token(State(lab): State<Arc<Lab>>, body: Bytes) -> Response {
    let p = params(&String::from_utf8_lossy(&body));
    let code = p.get("code").cloned().unwrap_or_default();
    let result = lab.with(|s| {
        let issued = s.upstream_codes.get_mut(&code).ok_or("unknown code")?;
        if issued.redeemed {
            return Err("code already used");
        }
        if p.get("redirect_uri") != Some(&issued.redirect_uri) {
            return Err("redirect_uri mismatch");
        }
        if let Some(ch) = &issued.challenge {
            match p.get("code_verifier") {
                Some(v) if challenge_matches(ch, v) => {}
                _ => return Err("code_verifier mismatch"),
            }
        }
        issued.redeemed = true;
        let token = s.artifact();
        s.upstream_tokens.insert(token.clone(), String::new());
        Ok(token)
    });
    match result {
        Ok(token) => json(
            StatusCode::OK,
            json!({"access_token": token, "token_type": "Bearer", "expires_in": 3600}),
        ),
        Err(msg) => json(
            StatusCode::BAD_REQUEST,
            json!({"error": "invalid_grant", "error_description": msg}),
        ),
    }
}

async fn me(State(lab): State<Arc<Lab>>, headers: HeaderMap) -> Response {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match token {
        Some(t) if lab.with(|s| s.upstream_tokens.contains_key(t)) => {
            json(StatusCode::OK, json!({"sub": "upstream-user"}))
        }
        _ => json(StatusCode::UNAUTHORIZED, json!({"error": "invalid_token"})),
    }
}
