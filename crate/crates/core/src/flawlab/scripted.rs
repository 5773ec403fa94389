//! Deterministic client sessions against a running lab, recorded as captures.

use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{LabHandle, LAB_SCOPE};
use crate::capture::{to_native_jsonl, HttpExchange, Recorder};
use crate::http::{HttpClient, HttpConfig, TransportError};
use crate::oauth::{
    discover, exchange_code, generate_pkce_with, AgentConfig, AgentRun, AgentStepper,
    AuthServerMetadata, AuthorizationRequest, ClientRegistration, DiscoveryError, PkceMethod,
    PkcePair, TokenError, TokenOutcome,
};

pub const DEMO_CLIENT_ID: &str = "flawlab-demo-client";
/// Nothing listens here; the scripted agent stops at the redirect.
pub const DEMO_REDIRECT_URI: &str = "http://127.0.0.1:33418/callback";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    /// One complete authorization under session tag `session-1`.
    Single,
    /// Two authorizations whose requests alternate, tagged `session-1` and `session-2`.
    Interleaved,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Token(#[from] TokenError),
}

#[derive(Debug, Clone)]
pub struct ScriptedRun {
    pub session_tag: String,
    pub state: String,
    pub pkce: Option<PkcePair>,
    pub agent: AgentRun,
    pub token: Option<TokenOutcome>,
}

#[derive(Debug, Clone)]
pub struct ScriptedSession {
    pub exchanges: Vec<HttpExchange>,
    pub runs: Vec<ScriptedRun>,
}

/// The first advertised PKCE method, or none when the server advertises none.
fn pick_method(meta: &AuthServerMetadata) -> Option<PkceMethod> {
    meta.code_challenge_methods_supported
        .iter()
        .flatten()
        .find_map(|m| match m.as_str() {
            "S256" => Some(PkceMethod::S256),
            "plain" => Some(PkceMethod::Plain),
            _ => None,
        })
}

struct Pending {
    tag: String,
    state: String,
    pkce: Option<PkcePair>,
    http: HttpClient,
    stepper: AgentStepper,
}

pub async fn scripted_session(lab: &LabHandle, script: Script, seed: u64) -> Result<ScriptedSession, ScriptError> {
    let recorder = Recorder::new();
    let base = HttpClient::new(HttpConfig::unthrottled());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let discovery = discover(&base.recording(recorder.clone(), "session-1"), &lab.mcp_url).await?;
    let meta = discovery.auth_server;
    let method = pick_method(&meta);
    let client = ClientRegistration::preregistered(DEMO_CLIENT_ID, vec![DEMO_REDIRECT_URI.to_string()]);
    let stop = vec![DEMO_REDIRECT_URI.to_string()];

    let count = match script {
        Script::Single => 1,
        Script::Interleaved => 2,
    };
    let mut pending: Vec<Pending> = (1..=count)
        .map(|i| {
            let mut raw = [0u8; 16];
            rng.fill_bytes(&mut raw);
            let state = URL_SAFE_NO_PAD.encode(raw);
            let pkce = method.map(|m| generate_pkce_with(m, &mut rng));
            let mut req = AuthorizationRequest::new(&meta.authorization_endpoint, DEMO_CLIENT_ID)
                .with_redirect_uri(DEMO_REDIRECT_URI)
                .with_state(&state)
                .with_scope(LAB_SCOPE)
                .with_resource(&lab.mcp_url);
            if let Some(p) = &pkce {
                req = req.with_pkce(&p.challenge, p.method.as_str());
            }
            let tag = format!("session-{i}");
            Pending {
                http: base.recording(recorder.clone(), tag.clone()),
                tag,
                state,
                pkce,
                stepper: AgentStepper::new(AgentConfig::default(), &req.to_url(), &stop),
            }
        })
        .collect();

    // round-robin one request per session so the flows overlap in time
    while pending.iter().any(|p| !p.stepper.is_done()) {
        for p in pending.iter_mut() {
            let Some(req) = p.stepper.next_request().cloned() else { continue };
            match p.http.send(req).await {
                Ok(resp) => p.stepper.feed(&resp),
                Err(e) => {
                    if !p.stepper.feed_error() {
                        return Err(e.into());
                    }
                }
            }
        }
    }

    let mut runs = Vec::new();
    for p in pending {
        let agent = p.stepper.finish();
        let token = match agent.code() {
            Some(code) => Some(
                exchange_code(
                    &p.http,
                    &meta,
                    code,
                    p.pkce.as_ref().map(|k| k.verifier.as_str()),
                    &client,
                    DEMO_REDIRECT_URI,
                )
                .await?,
            ),
            None => None,
        };
        runs.push(ScriptedRun {
            session_tag: p.tag,
            state: p.state,
            pkce: p.pkce,
            agent,
            token,
        });
    }
    Ok(ScriptedSession {
        exchanges: recorder.snapshot(),
        runs,
    })
}

/// Writes exchanges as native JSON lines.
pub fn write_capture(path: &Path, exchanges: &[HttpExchange]) -> std::io::Result<()> {
    std::fs::write(path, to_native_jsonl(exchanges))
}
