//! A mock remote MCP deployment with individually switchable authorization flaws.
//!
//! Three loopback listeners make up one lab: the MCP server (which doubles as
//! an OAuth client of the upstream service in delegated mode), its
//! authorization server, and the upstream service. All codes, states and
//! tokens come from a ChaCha RNG seeded by the configuration.

mod auth;
pub mod fixtures;
mod mcp;
mod scripted;
mod state;
mod upstream;

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddr};
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::middleware::Next;
use axum::response::Response;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::taxonomy::FlawId;

pub use scripted::{
    scripted_session, write_capture, Script, ScriptError, ScriptedRun, ScriptedSession, DEMO_CLIENT_ID,
    DEMO_REDIRECT_URI,
};

pub(crate) use state::Lab;

/// Client id the MCP server uses toward the upstream service.
pub const UPSTREAM_CLIENT_ID: &str = "flawlab-mcp-upstream";
pub const DEFAULT_STATIC_TOKEN: &str = "flawlab-static-key";
pub const CODE_TTL_SECS: u64 = 60;
pub const LAB_SCOPE: &str = "mcp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F5Variant {
    /// Requests without PKCE are accepted and redeemed without a verifier.
    #[default]
    Strip,
    /// `code_challenge_method=plain` is accepted.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F7Variant {
    /// Any redirect target is accepted for a known client.
    #[default]
    Full,
    /// Only decimal-IP spellings and sub-paths of a registered URI are accepted.
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F8Variant {
    #[default]
    Omit,
    /// The constant `state`.
    Fixed,
    /// The constant `1234`.
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Variants {
    pub f5: F5Variant,
    pub f7: F7Variant,
    pub f8: F8Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    /// Tool interface open to anyone.
    None,
    /// A fixed API key; no OAuth metadata is published.
    StaticToken,
    #[default]
    Oauth,
}

/// How the MCP server carries downstream context through the upstream `state`
/// when nested-context pollution is switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeEncoding {
    /// Random state mapped to the pending transaction server-side.
    #[default]
    OpaqueMap,
    /// Nested JSON with an HMAC the server verifies and whose redirect it ignores.
    SignedNested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LabPorts {
    pub mcp: u16,
    pub auth: u16,
    pub upstream: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlawLabConfig {
    pub flags: BTreeMap<FlawId, bool>,
    pub variants: Variants,
    pub delegated_mode: bool,
    pub auth_mode: AuthMode,
    pub bridge_encoding: BridgeEncoding,
    /// Redirect URI validation happens only after this many internal redirects.
    pub redirect_validation_hop: Option<u32>,
    pub ports: LabPorts,
    pub seed: u64,
    pub static_token: String,
}

impl Default for FlawLabConfig {
    fn default() -> Self {
        Self {
            flags: BTreeMap::new(),
            variants: Variants::default(),
            delegated_mode: false,
            auth_mode: AuthMode::Oauth,
            bridge_encoding: BridgeEncoding::OpaqueMap,
            redirect_validation_hop: None,
            ports: LabPorts::default(),
            seed: 0,
            static_token: DEFAULT_STATIC_TOKEN.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid flawlab configuration: {}", violations.join("; "))]
pub struct ConfigError {
    pub violations: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

impl FlawLabConfig {
    /// Secure configuration with the given flaws switched on.
    pub fn with_flaws(flaws: impl IntoIterator<Item = FlawId>) -> Self {
        let mut c = Self::default();
        for f in flaws {
            c.flags.insert(f, true);
        }
        c.delegated_mode = c.requires_delegation();
        c
    }

    pub fn enable(mut self, flaw: FlawId) -> Self {
        self.flags.insert(flaw, true);
        self
    }

    pub fn delegated(mut self, on: bool) -> Self {
        self.delegated_mode = on;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_on(&self, flaw: FlawId) -> bool {
        self.flags.get(&flaw).copied().unwrap_or(false)
    }

    pub fn enabled(&self) -> BTreeSet<FlawId> {
        self.flags.iter().filter(|(_, on)| **on).map(|(f, _)| *f).collect()
    }

    /// Whether any enabled flaw lives in the upstream leg.
    pub fn requires_delegation(&self) -> bool {
        [FlawId::F3, FlawId::F4, FlawId::F8].iter().any(|f| self.is_on(*f))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut violations = Vec::new();
        for f in [FlawId::F3, FlawId::F4, FlawId::F8] {
            if self.is_on(f) && !self.delegated_mode {
                violations.push(format!("{f} requires delegated_mode"));
            }
        }
        if self.is_on(FlawId::F4) && self.is_on(FlawId::F8) {
            violations.push("F4 and F8 both define the upstream state and cannot be combined".into());
        }
        if self.auth_mode != AuthMode::Oauth && !self.enabled().is_empty() {
            violations.push("flaw flags require auth_mode=oauth".into());
        }
        if self.auth_mode != AuthMode::Oauth && self.delegated_mode {
            violations.push("delegated_mode requires auth_mode=oauth".into());
        }
        if self.redirect_validation_hop == Some(0) {
            violations.push("redirect_validation_hop must be at least 1".into());
        }
        if self.auth_mode == AuthMode::StaticToken && self.static_token.is_empty() {
            violations.push("static_token must not be empty".into());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations })
        }
    }

    /// Applies a `F5=strip`-style variant selector.
    pub fn set_variant(&mut self, spec: &str) -> Result<(), ConfigError> {
        let bad = |m: String| ConfigError { violations: vec![m] };
        let (flaw, value) = spec
            .split_once('=')
            .ok_or_else(|| bad(format!("variant `{spec}` is not FLAW=VALUE")))?;
        let flaw = FlawId::from_str(flaw.trim()).map_err(|e| bad(e.to_string()))?;
        let value = value.trim().to_ascii_lowercase();
        fn parse<T: serde::de::DeserializeOwned>(v: &str) -> Result<T, serde_json::Error> {
            serde_json::from_value(serde_json::Value::String(v.to_string()))
        }
        let unknown = || bad(format!("unknown variant `{value}` for {flaw}"));
        match flaw {
            FlawId::F5 => self.variants.f5 = parse(&value).map_err(|_| unknown())?,
            FlawId::F7 => self.variants.f7 = parse(&value).map_err(|_| unknown())?,
            FlawId::F8 => self.variants.f8 = parse(&value).map_err(|_| unknown())?,
            _ => return Err(bad(format!("{flaw} has no variants"))),
        }
        Ok(())
    }
}

/// Which flaw pairs can be seeded together.
pub fn composable_pairs() -> Vec<(FlawId, FlawId)> {
    let mut out = Vec::new();
    for (i, a) in FlawId::ALL.iter().enumerate() {
        for b in &FlawId::ALL[i + 1..] {
            let cfg = FlawLabConfig::with_flaws([*a, *b]);
            if cfg.validate().is_ok() {
                out.push((*a, *b));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    Mcp,
    Auth,
    Upstream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    Metadata,
    Registration,
    Authorize,
    AuthorizeContinue,
    ConsentPage,
    ConsentDecision,
    Token,
    McpRpc,
    McpGet,
    DelegatedCallback,
    UpstreamAuthorize,
    UpstreamToken,
    UpstreamApi,
    Other,
}

fn route_kind(service: Service, method: &str, path: &str) -> RouteKind {
    use RouteKind::*;
    if path.starts_with("/.well-known/") {
        return Metadata;
    }
    match (service, method, path) {
        (Service::Auth, "POST", "/register") => Registration,
        (Service::Auth, _, "/authorize") => Authorize,
        (Service::Auth, _, "/authorize/continue") => AuthorizeContinue,
        (Service::Auth, "GET", "/consent") => ConsentPage,
        (Service::Auth, "POST", "/consent") => ConsentDecision,
        (Service::Auth, "POST", "/token") => Token,
        (Service::Mcp, "POST", "/mcp") => McpRpc,
        (Service::Mcp, _, "/mcp") => McpGet,
        (Service::Mcp, _, "/oauth/callback") => DelegatedCallback,
        (Service::Upstream, _, "/authorize") => UpstreamAuthorize,
        (Service::Upstream, "POST", "/token") => UpstreamToken,
        (Service::Upstream, _, p) if p.starts_with("/api/") => UpstreamApi,
        _ => Other,
    }
}

/// One request as received by the lab.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub service: Service,
    pub kind: RouteKind,
    pub method: String,
    pub path: String,
    pub query: String,
    pub body: String,
    pub authorization: Option<String>,
}

impl LoggedRequest {
    /// A query or form-body parameter.
    pub fn param(&self, name: &str) -> Option<String> {
        url::form_urlencoded::parse(self.query.as_bytes())
            .chain(url::form_urlencoded::parse(self.body.as_bytes()))
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.into_owned())
    }
}

pub struct LabHandle {
    pub mcp_url: String,
    pub auth_server_url: String,
    pub upstream_url: Option<String>,
    lab: Arc<Lab>,
    shutdown: Vec<oneshot::Sender<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for LabHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabHandle")
            .field("mcp_url", &self.mcp_url)
            .field("auth_server_url", &self.auth_server_url)
            .field("upstream_url", &self.upstream_url)
            .finish()
    }
}

impl LabHandle {
    pub fn config(&self) -> &FlawLabConfig {
        &self.lab.config
    }

    /// Every request received so far, in arrival order.
    pub fn request_log(&self) -> Vec<LoggedRequest> {
        self.lab.log_snapshot()
    }

    pub fn log_len(&self) -> usize {
        self.lab.log_len()
    }

    /// Requests received after the first `from` entries.
    pub fn log_since(&self, from: usize) -> Vec<LoggedRequest> {
        self.lab.log_snapshot().split_off(from.min(self.lab.log_len()))
    }

    /// The redirect URI registered for the preregistered demo client.
    pub fn demo_client(&self) -> (&'static str, &'static str) {
        (DEMO_CLIENT_ID, DEMO_REDIRECT_URI)
    }

    pub async fn shutdown(mut self) {
        self.stop();
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }

    fn stop(&mut self) {
        for tx in self.shutdown.drain(..) {
            let _ = tx.send(());
        }
    }
}

impl Drop for LabHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn bind(port: u16) -> Result<TcpListener, LabError> {
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    TcpListener::bind(addr)
        .await
        .map_err(|source| LabError::Bind { addr, source })
}

fn origin_of(listener: &TcpListener) -> String {
    format!(
        "http://127.0.0.1:{}",
        listener.local_addr().expect("bound listener has an address").port()
    )
}

async fn log_layer(State((lab, service)): State<(Arc<Lab>, Service)>, req: Request, next: Next) -> Response {
    let (parts, body) = req.into_parts();
    let bytes = axum::body::to_bytes(body, 1 << 20).await.unwrap_or_default();
    let method = parts.method.as_str().to_string();
    let path = parts.uri.path().to_string();
    lab.log(LoggedRequest {
        seq: 0,
        timestamp: Utc::now(),
        service,
        kind: route_kind(service, &method, &path),
        method,
        path,
        query: parts.uri.query().unwrap_or("").to_string(),
        body: String::from_utf8_lossy(&bytes).into_owned(),
        authorization: parts
            .headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    });
    next.run(Request::from_parts(parts, Body::from(bytes))).await
}

fn serve(listener: TcpListener, router: axum::Router) -> (oneshot::Sender<()>, JoinHandle<()>) {
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    (tx, task)
}

/// Starts the lab's listeners on loopback.
pub async fn spawn_lab(config: FlawLabConfig) -> Result<LabHandle, LabError> {
    config.validate()?;
    let mcp_l = bind(config.ports.mcp).await?;
    let auth_l = bind(config.ports.auth).await?;
    let upstream_l = if config.delegated_mode {
        Some(bind(config.ports.upstream).await?)
    } else {
        None
    };
    let mcp_origin = origin_of(&mcp_l);
    let auth_origin = origin_of(&auth_l);
    let upstream_origin = upstream_l.as_ref().map(origin_of);

    let lab = Arc::new(Lab::new(
        config,
        mcp_origin.clone(),
        auth_origin.clone(),
        upstream_origin.clone(),
    ));

    let mut shutdown = Vec::new();
    let mut tasks = Vec::new();
    let mut start = |listener, router: axum::Router<Arc<Lab>>, service| {
        let router = router
            .layer(axum::middleware::from_fn_with_state((lab.clone(), service), log_layer))
            .with_state(lab.clone());
        let (tx, task) = serve(listener, router);
        shutdown.push(tx);
        tasks.push(task);
    };
    start(mcp_l, mcp::router(), Service::Mcp);
    start(auth_l, auth::router(), Service::Auth);
    if let Some(l) = upstream_l {
        start(l, upstream::router(), Service::Upstream);
    }

    Ok(LabHandle {
        mcp_url: format!("{mcp_origin}/mcp"),
        auth_server_url: auth_origin,
        upstream_url: upstream_origin,
        lab,
        shutdown,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delegated_flaws_need_delegation() {
        let c = FlawLabConfig::default().enable(FlawId::F3);
        let err = c.validate().unwrap_err();
        assert!(err.violations[0].contains("F3"));
        assert!(FlawLabConfig::with_flaws([FlawId::F3]).validate().is_ok());
        assert!(FlawLabConfig::with_flaws([FlawId::F4, FlawId::F8]).validate().is_err());
    }

    #[test]
    fn pair_count() {
        let pairs = composable_pairs();
        assert_eq!(pairs.len(), 35);
        assert!(!pairs.contains(&(FlawId::F4, FlawId::F8)));
    }

    #[test]
    fn variant_selectors() {
        let mut c = FlawLabConfig::default();
        c.set_variant("F5=plain").unwrap();
        c.set_variant("f7=WEAK").unwrap();
        c.set_variant("F8=short").unwrap();
        assert_eq!(c.variants.f5, F5Variant::Plain);
        assert_eq!(c.variants.f7, F7Variant::Weak);
        assert_eq!(c.variants.f8, F8Variant::Short);
        assert!(c.set_variant("F1=x").is_err());
        assert!(c.set_variant("F5=bogus").is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let mut c = FlawLabConfig::with_flaws([FlawId::F1, FlawId::F4]);
        c.seed = 42;
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains(r#""flags":{"F1":true,"F4":true}"#));
        assert_eq!(serde_json::from_str::<FlawLabConfig>(&text).unwrap(), c);
        let partial: FlawLabConfig = serde_json::from_str(r#"{"flags":{"F9":true}}"#).unwrap();
        assert!(partial.is_on(FlawId::F9));
        assert_eq!(partial.auth_mode, AuthMode::Oauth);
    }
}
