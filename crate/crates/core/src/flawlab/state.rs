use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{FlawLabConfig, LoggedRequest, DEMO_CLIENT_ID, DEMO_REDIRECT_URI};
use crate::taxonomy::FlawId;

#[derive(Debug, Clone)]
pub(crate) struct LabClient {
    pub name: String,
    pub redirect_uris: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ChallengeMethod {
    S256,
    Plain,
}

/// A pending authorization at the lab's authorization server.
#[derive(Debug, Clone)]
pub(crate) struct AuthTx {
    pub client_id: String,
    pub client_name: String,
    pub redirect_uri: String,
    pub state: Option<String>,
    pub challenge: Option<(String, ChallengeMethod)>,
    pub scope: Option<String>,
    /// Redirect URI still awaiting deferred validation.
    pub redirect_validated: bool,
    /// Verifier the MCP server keeps for its own upstream request.
    pub upstream_verifier: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct IssuedCode {
    pub client_id: String,
    pub redirect_uri: String,
    pub challenge: Option<(String, ChallengeMethod)>,
    pub issued_at: Instant,
    pub redemptions: u32,
}

#[derive(Debug, Clone)]
pub(crate) struct UpstreamCode {
    pub redirect_uri: String,
    pub challenge: Option<(String, ChallengeMethod)>,
    pub redeemed: bool,
}

#[derive(Debug)]
pub(crate) struct LabState {
    rng: ChaCha20Rng,
    pub clients: HashMap<String, LabClient>,
    pub txs: HashMap<String, AuthTx>,
    pub codes: HashMap<String, IssuedCode>,
    pub tokens: HashMap<String, String>,
    /// Upstream state value to pending transaction.
    pub upstream_map: HashMap<String, String>,
    /// Transactions waiting on the upstream callback, oldest first.
    pub pending_upstream: Vec<String>,
    pub upstream_codes: HashMap<String, UpstreamCode>,
    pub upstream_tokens: HashMap<String, String>,
    log: Vec<LoggedRequest>,
}

impl LabState {
    /// 16 seeded random bytes, base64url.
    pub fn artifact(&mut self) -> String {
        let mut b = [0u8; 16];
        self.rng.fill_bytes(&mut b);
        URL_SAFE_NO_PAD.encode(b)
    }

    /// 32 seeded random bytes, base64url (a 43-character PKCE verifier).
    pub fn verifier(&mut self) -> String {
        let mut b = [0u8; 32];
        self.rng.fill_bytes(&mut b);
        URL_SAFE_NO_PAD.encode(b)
    }
}

pub(crate) struct Lab {
    pub config: FlawLabConfig,
    pub mcp_origin: String,
    pub auth_origin: String,
    pub upstream_origin: Option<String>,
    pub hmac_key: Vec<u8>,
    pub http: reqwest::Client,
    state: Mutex<LabState>,
}

impl Lab {
    pub fn new(
        config: FlawLabConfig,
        mcp_origin: String,
        auth_origin: String,
        upstream_origin: Option<String>,
    ) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut key = vec![0u8; 32];
        rng.fill_bytes(&mut key);
        let mut clients = HashMap::new();
        clients.insert(
            DEMO_CLIENT_ID.to_string(),
            LabClient {
                name: "Flawlab Demo Client".into(),
                redirect_uris: vec![DEMO_REDIRECT_URI.to_string()],
            },
        );
        Self {
            config,
            mcp_origin,
            auth_origin,
            upstream_origin,
            hmac_key: key,
            http: reqwest::Client::builder()
                .redirect(reqwest::redirect::Policy::none())
                .no_proxy()
                .build()
                .expect("static client config"),
            state: Mutex::new(LabState {
                rng,
                clients,
                txs: HashMap::new(),
                codes: HashMap::new(),
                tokens: HashMap::new(),
                upstream_map: HashMap::new(),
                pending_upstream: Vec::new(),
                upstream_codes: HashMap::new(),
                upstream_tokens: HashMap::new(),
                log: Vec::new(),
            }),
        }
    }

    pub fn on(&self, f: FlawId) -> bool {
        self.config.is_on(f)
    }

    /// Runs `f` with the store locked. Never held across an await.
    pub fn with<R>(&self, f: impl FnOnce(&mut LabState) -> R) -> R {
        let mut guard = self.state.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }

    pub fn log(&self, mut entry: LoggedRequest) {
        self.with(|s| {
            entry.seq = s.log.len() as u64 + 1;
            s.log.push(entry);
        });
    }

    pub fn log_snapshot(&self) -> Vec<LoggedRequest> {
        self.with(|s| s.log.clone())
    }

    pub fn log_len(&self) -> usize {
        self.with(|s| s.log.len())
    }
}

pub(crate) fn params(raw: &str) -> HashMap<String, String> {
    url::form_urlencoded::parse(raw.as_bytes())
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect()
}

pub(crate) fn redirect(location: &str) -> Response {
    (StatusCode::FOUND, [(header::LOCATION, location.to_string())]).into_response()
}

pub(crate) fn json(status: StatusCode, body: serde_json::Value) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
}

pub(crate) fn html(status: StatusCode, title: &str, body: &str) -> Response {
    let page = format!(
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title></head>\n<body>\n<h1>{title}</h1>\n{body}\n</body></html>\n"
    );
    (status, [(header::CONTENT_TYPE, "text/html; charset=utf-8")], page).into_response()
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&#39;")
}

/// `uri` with OAuth response parameters appended to its query.
pub(crate) fn with_query(uri: &str, pairs: &[(&str, &str)]) -> String {
    let q = url::form_urlencoded::Serializer::new(String::new())
        .extend_pairs(pairs)
        .finish();
    let sep = if uri.contains('?') { '&' } else { '?' };
    format!("{uri}{sep}{q}")
}

pub(crate) fn s256(verifier: &str) -> String {
    use sha2::{Digest, Sha256};
    URL_SAFE_NO_PAD.encode(Sha256::digest(verifier.as_bytes()))
}

pub(crate) fn challenge_matches(challenge: &(String, ChallengeMethod), verifier: &str) -> bool {
    match challenge.1 {
        ChallengeMethod::S256 => s256(verifier) == challenge.0,
        ChallengeMethod::Plain => verifier == challenge.0,
    }
}
