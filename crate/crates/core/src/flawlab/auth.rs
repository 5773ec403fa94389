//! The lab's authorization server.

use std::net::Ipv4Addr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{RawQuery, State};
use axum::http::StatusCode;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use serde_json::json;

use super::state::{
    challenge_matches, escape, html, json, params, redirect, with_query, AuthTx, ChallengeMethod,
    IssuedCode, Lab, LabClient, LabState,
};
use super::{F5Variant, F7Variant, CODE_TTL_SECS, LAB_SCOPE};
use crate::taxonomy::FlawId;

pub(super) fn router() -> Router<Arc<Lab>> {
    Router::new()
        .route("/.well-known/oauth-authorization-server", get(metadata))
        .route("/register", post(register))
        .route("/authorize", get(authorize))
        .route("/authorize/continue", get(authorize_continue))
        .route("/consent", get(consent_page).post(consent_decision))
        .route("/token", post(token))
}

async fn metadata(State(lab): State<Arc<Lab>>) -> Response {
    let origin = &lab.auth_origin;
    let mut doc = json!({
        "issuer": origin,
        "authorization_endpoint": format!("{origin}/authorize"),
        "token_endpoint": format!("{origin}/token"),
        "registration_endpoint": format!("{origin}/register"),
        "response_types_supported": ["code"],
        "grant_types_supported": ["authorization_code"],
        "token_endpoint_auth_methods_supported": ["none"],
        "scopes_supported": [LAB_SCOPE],
    });
    let methods = match (lab.on(FlawId::F5), lab.config.variants.f5) {
        (false, _) => Some(json!(["S256"])),
        (true, F5Variant::Strip) => None,
        (true, F5Variant::Plain) => Some(json!(["plain", "S256"])),
    };
    if let Some(m) = methods {
        doc["code_challenge_methods_supported"] = m;
    }
    json(StatusCode::OK, doc)
}

fn is_loopback_http(uri: &str) -> bool {
    let Ok(u) = url::Url::parse(uri) else { return false };
    u.scheme() == "http"
        && match u.host() {
            Some(url::Host::Ipv4(ip)) => ip.is_loopback(),
            Some(url::Host::Ipv6(ip)) => ip.is_loopback(),
            Some(url::Host::Domain(d)) => d.eq_ignore_ascii_case("localhost"),
            None => false,
        }
}

async fn register(State(lab): State<Arc<Lab>>, body: Bytes) -> Response {
    let Ok(doc) = serde_json::from_slice::<serde_json::Value>(&body) else {
        return json(StatusCode::BAD_REQUEST, json!({"error": "invalid_client_metadata"}));
    };
    let uris: Vec<String> = doc
        .get("redirect_uris")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    if uris.is_empty() {
        return json(
            StatusCode::BAD_REQUEST,
            json!({"error": "invalid_redirect_uri", "error_description": "redirect_uris required"}),
        );
    }
    if !lab.on(FlawId::F1) {
        if let Some(bad) = uris.iter().find(|u| !is_loopback_http(u)) {
            return json(
                StatusCode::BAD_REQUEST,
                json!({
                    "error": "invalid_redirect_uri",
                    "error_description": format!("{bad} is not a loopback redirect URI"),
                }),
            );
        }
    }
    let name = doc
        .get("client_name")
        .and_then(|v| v.as_str())
        .unwrap_or("unnamed client")
        .to_string();
    let client_id = lab.with(|s| {
        let id = format!("client_{}", s.artifact());
        s.clients.insert(
            id.clone(),
            LabClient {
                name: name.clone(),
                redirect_uris: uris.clone(),
            },
        );
        id
    });
    json(
        StatusCode::CREATED,
        json!({
            "client_id": client_id,
            "client_name": name,
            "redirect_uris": uris,
            "grant_types": ["authorization_code"],
            "response_types": ["code"],
            "token_endpoint_auth_method": "none",
        }),
    )
}

fn is_subpath(registered: &str, requested: &str) -> bool {
    requested
        .strip_prefix(registered)
        .is_some_and(|rest| rest.starts_with('/'))
}

/// `http://2130706433:8080/cb` is the decimal spelling of `http://127.0.0.1:8080/cb`.
fn is_decimal_alias(registered: &str, requested: &str) -> bool {
    let Some((scheme, rest)) = requested.split_once("://") else { return false };
    let host_end = rest.find([':', '/', '?']).unwrap_or(rest.len());
    let host = &rest[..host_end];
    if host.is_empty() || !host.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let Ok(n) = host.parse::<u32>() else { return false };
    let dotted = Ipv4Addr::from(n).to_string();
    format!("{scheme}://{dotted}{}", &rest[host_end..]) == registered
}

fn redirect_allowed(lab: &Lab, client: &LabClient, requested: &str) -> bool {
    if client.redirect_uris.is_empty() {
        // an unregistered client admitted by blind trust has nothing to compare against
        return lab.on(FlawId::F2);
    }
    if client.redirect_uris.iter().any(|r| r == requested) {
        return true;
    }
    if !lab.on(FlawId::F7) {
        return false;
    }
    match lab.config.variants.f7 {
        F7Variant::Full => true,
        F7Variant::Weak => client
            .redirect_uris
            .iter()
            .any(|r| is_subpath(r, requested) || is_decimal_alias(r, requested)),
    }
}

fn pkce_policy(
    lab: &Lab,
    challenge: Option<&String>,
    method: Option<&String>,
) -> Result<Option<(String, ChallengeMethod)>, &'static str> {
    let f5 = lab.on(FlawId::F5).then_some(lab.config.variants.f5);
    match (challenge, method.map(String::as_str)) {
        (None, Some(_)) => Err("code_challenge_method without code_challenge"),
        (None, None) if f5 == Some(F5Variant::Strip) => Ok(None),
        (None, None) => Err("code_challenge required"),
        (Some(c), Some("S256")) => Ok(Some((c.clone(), ChallengeMethod::S256))),
        (Some(c), None | Some("plain")) if f5 == Some(F5Variant::Plain) => {
            Ok(Some((c.clone(), ChallengeMethod::Plain)))
        }
        (Some(_), _) => Err("code_challenge_method must be S256"),
    }
}

fn error_page(status: StatusCode, error: &str, detail: &str) -> Response {
    html(
        status,
        "Authorization error",
        &format!(
            "<p class=\"error\">error={}</p>\n<p>{}</p>",
            escape(error),
            escape(detail)
        ),
    )
}

fn error_redirect(uri: &str, error: &str, detail: &str, state: Option<&str>) -> Response {
    let mut pairs = vec![("error", error), ("error_description", detail)];
    if let Some(s) = state {
        pairs.push(("state", s));
    }
    redirect(&with_query(uri, &pairs))
}

async fn authorize(State(lab): State<Arc<Lab>>, RawQuery(q): RawQuery) -> Response {
    let p = params(q.as_deref().unwrap_or(""));
    let Some(client_id) = p.get("client_id").cloned() else {
        return error_page(StatusCode::BAD_REQUEST, "invalid_request", "client_id missing");
    };
    let client = match lab.with(|s| s.clients.get(&client_id).cloned()) {
        Some(c) => c,
        None if lab.on(FlawId::F2) => LabClient {
            name: client_id.clone(),
            redirect_uris: vec![],
        },
        None => return error_page(StatusCode::BAD_REQUEST, "invalid_client", "unknown client_id"),
    };
    let Some(redirect_uri) = p.get("redirect_uri").cloned() else {
        return error_page(StatusCode::BAD_REQUEST, "invalid_request", "redirect_uri missing");
    };
    if p.get("response_type").map(String::as_str) != Some("code") {
        return error_page(
            StatusCode::BAD_REQUEST,
            "unsupported_response_type",
            "only response_type=code is supported",
        );
    }
    let deferred = lab.config.redirect_validation_hop;
    if deferred.is_none() && !redirect_allowed(&lab, &client, &redirect_uri) {
        return error_page(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            "redirect_uri does not match a registered value",
        );
    }
    let state = p.get("state").cloned();
    let challenge = match pkce_policy(&lab, p.get("code_challenge"), p.get("code_challenge_method")) {
        Ok(c) => c,
        Err(msg) if deferred.is_none() => {
            return error_redirect(&redirect_uri, "invalid_request", msg, state.as_deref())
        }
        Err(msg) => return error_page(StatusCode::BAD_REQUEST, "invalid_request", msg),
    };
    let tx_id = lab.with(|s| {
        let id = s.artifact();
        s.txs.insert(
            id.clone(),
            AuthTx {
                client_id,
                client_name: client.name.clone(),
                redirect_uri,
                state,
                challenge,
                scope: p.get("scope").cloned(),
                redirect_validated: deferred.is_none(),
                upstream_verifier: None,
            },
        );
        id
    });
    match deferred {
        Some(_) => redirect(&format!("/authorize/continue?tx={tx_id}&hop=1")),
        None => redirect(&format!("/consent?tx={tx_id}")),
    }
}

/// Internal redirect chain that postpones redirect URI validation to a configured hop.
async fn authorize_continue(State(lab): State<Arc<Lab>>, RawQuery(q): RawQuery) -> Response {
    let p = params(q.as_deref().unwrap_or(""));
    let tx_id = p.get("tx").cloned().unwrap_or_default();
    let hop: u32 = p.get("hop").and_then(|h| h.parse().ok()).unwrap_or(1);
    let target = lab.config.redirect_validation_hop.unwrap_or(1);
    let Some(tx) = lab.with(|s| s.txs.get(&tx_id).cloned()) else {
        return error_page(StatusCode::BAD_REQUEST, "invalid_request", "unknown transaction");
    };
    if hop < target {
        return redirect(&format!("/authorize/continue?tx={tx_id}&hop={}", hop + 1));
    }
    let client = lab.with(|s| s.clients.get(&tx.client_id).cloned()).unwrap_or(LabClient {
        name: tx.client_name.clone(),
        redirect_uris: vec![],
    });
    if !redirect_allowed(&lab, &client, &tx.redirect_uri) {
        lab.with(|s| s.txs.remove(&tx_id));
        return error_page(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            "redirect_uri does not match a registered value",
        );
    }
    lab.with(|s| {
        if let Some(t) = s.txs.get_mut(&tx_id) {
            t.redirect_validated = true;
        }
    });
    redirect(&format!("/consent?tx={tx_id}"))
}

async fn consent_page(State(lab): State<Arc<Lab>>, RawQuery(q): RawQuery) -> Response {
    let p = params(q.as_deref().unwrap_or(""));
    let tx_id = p.get("tx").cloned().unwrap_or_default();
    let Some(tx) = lab.with(|s| s.txs.get(&tx_id).cloned()).filter(|t| t.redirect_validated) else {
        return error_page(StatusCode::BAD_REQUEST, "invalid_request", "unknown transaction");
    };
    let mut body = format!(
        "<p>The application <strong>{}</strong> requests access to your MCP tools (scope: {}).</p>\n",
        escape(&tx.client_name),
        escape(tx.scope.as_deref().unwrap_or(LAB_SCOPE)),
    );
    if !lab.on(FlawId::F6) {
        body.push_str(&format!(
            "<p class=\"redirect-target\">After approval you will be redirected to: <code>{}</code></p>\n",
            escape(&tx.redirect_uri)
        ));
        if is_loopback_http(&tx.redirect_uri) {
            body.push_str(
                "<p class=\"warning\">Warning: this redirect goes to an application on your own machine (localhost). Approve only if you started this sign-in.</p>\n",
            );
        }
    }
    body.push_str(&format!(
        "<form method=\"post\" action=\"/consent\">\n<input type=\"hidden\" name=\"tx\" value=\"{}\">\n<button type=\"submit\" name=\"decision\" value=\"deny\">Deny</button>\n<button type=\"submit\" name=\"decision\" value=\"approve\">Approve</button>\n</form>",
        escape(&tx_id)
    ));
    html(StatusCode::OK, "Authorize access", &body)
}

pub(super) fn issue_code(
    s: &mut LabState,
    client_id: &str,
    redirect_uri: &str,
    challenge: Option<(String, ChallengeMethod)>,
) -> String {
    let code = s.artifact();
    s.codes.insert(
        code.clone(),
        IssuedCode {
            client_id: client_id.to_string(),
            redirect_uri: redirect_uri.to_string(),
            challenge,
            issued_at: Instant::now(),
            redemptions: 0,
        },
    );
    code
}

pub(super) fn code_redirect(redirect_uri: &str, code: &str, state: Option<&str>) -> Response {
    let mut pairs = vec![("code", code)];
    if let Some(s) = state {
        pairs.push(("state", s));
    }
    redirect(&with_query(redirect_uri, &pairs))
}

async fn consent_decision(State(lab): State<Arc<Lab>>, body: Bytes) -> Response {
    let p = params(&String::from_utf8_lossy(&body));
    let tx_id = p.get("tx").cloned().unwrap_or_default();
    let Some(tx) = lab.with(|s| s.txs.get(&tx_id).cloned()).filter(|t| t.redirect_validated) else {
        return error_page(StatusCode::BAD_REQUEST, "invalid_request", "unknown transaction");
    };
    if p.get("decision").map(String::as_str) != Some("approve") {
        lab.with(|s| s.txs.remove(&tx_id));
        return error_redirect(&tx.redirect_uri, "access_denied", "user denied", tx.state.as_deref());
    }
    if lab.config.delegated_mode {
        return super::mcp::begin_upstream(&lab, &tx_id);
    }
    let code = lab.with(|s| {
        s.txs.remove(&tx_id);
        issue_code(s, &tx.client_id, &tx.redirect_uri, tx.challenge.clone())
    });
    code_redirect(&tx.redirect_uri, &code, tx.state.as_deref())
}

fn token_error(error: &str, detail: &str) -> Response {
    json(
        StatusCode::BAD_REQUEST,
        json!({"error": error, "error_description": detail}),
    )
}

async fn token(State(lab): State<Arc<Lab>>, body: Bytes) -> Response {
    let p = params(&String::from_utf8_lossy(&body));
    if p.get("grant_type").map(String::as_str) != Some("authorization_code") {
        return token_error("unsupported_grant_type", "only authorization_code is supported");
    }
    let code = p.get("code").cloned().unwrap_or_default();
    let strip_tolerated = lab.on(FlawId::F5) && lab.config.variants.f5 == F5Variant::Strip;
    let replay_allowed = lab.on(FlawId::F9);
    let outcome = lab.with(|s| {
        let Some(issued) = s.codes.get(&code).cloned() else {
            return Err(("invalid_grant", "unknown code"));
        };
        if issued.issued_at.elapsed() > Duration::from_secs(CODE_TTL_SECS) {
            return Err(("invalid_grant", "code expired"));
        }
        if issued.redemptions > 0 && !replay_allowed {
            return Err(("invalid_grant", "code already used"));
        }
        if p.get("client_id") != Some(&issued.client_id) {
            return Err(("invalid_grant", "code was issued to another client"));
        }
        if p.get("redirect_uri") != Some(&issued.redirect_uri) {
            return Err(("invalid_grant", "redirect_uri mismatch"));
        }
        match (&issued.challenge, p.get("code_verifier")) {
            (Some(ch), Some(v)) if !challenge_matches(ch, v) => {
                return Err(("invalid_grant", "code_verifier mismatch"))
            }
            (Some(_), None) if !strip_tolerated => {
                return Err(("invalid_grant", "code_verifier required"))
            }
            _ => {}
        }
        if let Some(c) = s.codes.get_mut(&code) {
            c.redemptions += 1;
        }
        let token = s.artifact();
        s.tokens.insert(token.clone(), issued.client_id.clone());
        Ok(token)
    });
    match outcome {
        Ok(token) => json(
            StatusCode::OK,
            json!({
                "access_token": token,
                "token_type": "Bearer",
                "expires_in": 3600,
                "scope": LAB_SCOPE,
            }),
        ),
        Err((e, d)) => token_error(e, d),
    }
}
