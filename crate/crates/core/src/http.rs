//! HTTP client used by every scanner component.
//!
//! Redirects are never followed automatically; callers that walk redirect
//! chains do so explicitly so they can enforce a hop budget.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use tokio::sync::Mutex;
use url::Url;

use crate::capture::{find_header, HttpExchange, Recorder};

pub const ENV_CONNECT_TIMEOUT: &str = "MCP_AUTHSCAN_CONNECT_TIMEOUT_SECS";
pub const ENV_REQUEST_TIMEOUT: &str = "MCP_AUTHSCAN_TIMEOUT_SECS";
pub const ENV_RATE_LIMIT: &str = "MCP_AUTHSCAN_RATE_LIMIT";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub connect_timeout: Duration,
    pub request_timeout: Duration,
    /// Requests per second per host; `None` disables throttling.
    pub rate_limit: Option<f64>,
    pub user_agent: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(10),
            request_timeout: Duration::from_secs(30),
            rate_limit: Some(2.0),
            user_agent: concat!("mcp-authscan/", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

impl HttpConfig {
    /// No throttling; for loopback fixtures.
    pub fn unthrottled() -> Self {
        Self {
            rate_limit: None,
            ..Self::default()
        }
    }

    /// Applies `MCP_AUTHSCAN_*` environment overrides. A rate limit of 0 disables throttling.
    pub fn with_env_overrides(mut self) -> Self {
        let secs = |k: &str| {
            std::env::var(k)
                .ok()
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| *v > 0.0)
        };
        if let Some(s) = secs(ENV_CONNECT_TIMEOUT) {
            self.connect_timeout = Duration::from_secs_f64(s);
        }
        if let Some(s) = secs(ENV_REQUEST_TIMEOUT) {
            self.request_timeout = Duration::from_secs_f64(s);
        }
        if let Some(r) = std::env::var(ENV_RATE_LIMIT)
            .ok()
            .and_then(|v| v.parse::<f64>().ok())
        {
            self.rate_limit = (r > 0.0).then_some(r);
        }
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("invalid URL `{0}`")]
    InvalidUrl(String),
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("request to {url} failed: {message}")]
    Network { url: String, message: String },
}

/// A request description independent of the underlying client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: "GET".into(),
            url: url.into(),
            headers: vec![],
            body: vec![],
        }
    }

    pub fn post_json(url: impl Into<String>, body: &serde_json::Value) -> Self {
        Self {
            method: "POST".into(),
            url: url.into(),
            headers: vec![("content-type".into(), "application/json".into())],
            body: serde_json::to_vec(body).expect("json value serializes"),
        }
    }

    pub fn post_form(url: impl Into<String>, pairs: &[(&str, &str)]) -> Self {
        let body = url::form_urlencoded::Serializer::new(String::new())
            .extend_pairs(pairs)
            .finish();
        Self {
            method: "POST".into(),
            url: url.into(),
            headers: vec![(
                "content-type".into(),
                "application/x-www-form-urlencoded".into(),
            )],
            body: body.into_bytes(),
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub url: String,
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    /// Sequence number in the attached recorder, if any.
    pub exchange_ref: Option<u64>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn is_redirect(&self) -> bool {
        (300..400).contains(&self.status) && self.header("location").is_some()
    }

    /// `Location` resolved against the request URL.
    pub fn location(&self) -> Option<String> {
        let loc = self.header("location")?;
        // absolute values stay verbatim; `Url` would normalize hosts such as decimal IPs
        if loc.contains("://") {
            return Some(loc.to_string());
        }
        Some(
            Url::parse(&self.url)
                .and_then(|base| base.join(loc))
                .map(|u| u.to_string())
                .unwrap_or_else(|_| loc.to_string()),
        )
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn json(&self) -> Option<serde_json::Value> {
        serde_json::from_slice(&self.body).ok()
    }

    pub fn content_type(&self) -> String {
        self.header("content-type").unwrap_or("").to_ascii_lowercase()
    }

    /// Up to `n` bytes of body, lossily decoded.
    pub fn excerpt(&self, n: usize) -> String {
        let end = self.body.len().min(n);
        String::from_utf8_lossy(&self.body[..end]).into_owned()
    }
}

#[derive(Debug, Default)]
struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    fn new(per_second: Option<f64>) -> Self {
        Self {
            interval: per_second
                .filter(|r| *r > 0.0)
                .map(|r| Duration::from_secs_f64(1.0 / r)),
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    async fn acquire(&self, host: &str) {
        let Some(interval) = self.interval else {
            return;
        };
        let wait = {
            let mut slots = self.next_slot.lock().await;
            let now = Instant::now();
            let slot = slots.entry(host.to_string()).or_insert(now);
            let start = (*slot).max(now);
            *slot = start + interval;
            start - now
        };
        if !wait.is_zero() {
            tokio::time::sleep(wait).await;
        }
    }
}

/// Cheap-to-clone client. Clones share the connection pool and rate limiter.
#[derive(Debug, Clone)]
pub struct HttpClient {
    inner: reqwest::Client,
    limiter: Arc<RateLimiter>,
    recorder: Option<Recorder>,
    session_tag: String,
    config: Arc<HttpConfig>,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let inner = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .connect_timeout(config.connect_timeout)
            .timeout(config.request_timeout)
            .user_agent(config.user_agent.clone())
            .no_proxy()
            .build()
            .expect("reqwest client builds with static settings");
        Self {
            inner,
            limiter: Arc::new(RateLimiter::new(config.rate_limit)),
            recorder: None,
            session_tag: "scanner".into(),
            config: Arc::new(config),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// A clone that records every exchange into `recorder` under `session_tag`.
    pub fn recording(&self, recorder: Recorder, session_tag: impl Into<String>) -> Self {
        Self {
            recorder: Some(recorder),
            session_tag: session_tag.into(),
            ..self.clone()
        }
    }

    /// A clone that does not record.
    pub fn unrecorded(&self) -> Self {
        Self {
            recorder: None,
            ..self.clone()
        }
    }

    pub async fn send(&self, req: HttpRequest) -> Result<HttpResponse, TransportError> {
        let url = Url::parse(&req.url).map_err(|_| TransportError::InvalidUrl(req.url.clone()))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(TransportError::InvalidUrl(req.url.clone()));
        }
        let host = format!(
            "{}:{}",
            url.host_str().unwrap_or(""),
            url.port_or_known_default().unwrap_or(0)
        );
        self.limiter.acquire(&host).await;

        let method = reqwest::Method::from_bytes(req.method.as_bytes())
            .map_err(|_| TransportError::InvalidUrl(req.url.clone()))?;
        let mut builder = self.inner.request(method, url);
        for (k, v) in &req.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        if !req.body.is_empty() {
            builder = builder.body(req.body.clone());
        }
        let started = Utc::now();
        let result = async {
            let resp = builder.send().await?;
            let status = resp.status().as_u16();
            let headers: Vec<(String, String)> = resp
                .headers()
                .iter()
                .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
                .collect();
            let body = resp.bytes().await?.to_vec();
            Ok::<_, reqwest::Error>((status, headers, body))
        }
        .await;

        let (status, headers, body) = match result {
            Ok(parts) => parts,
            Err(e) => {
                self.record(&req, started, None, vec![], vec![]);
                return Err(if e.is_timeout() {
                    TransportError::Timeout { url: req.url }
                } else {
                    TransportError::Network {
                        url: req.url,
                        message: error_chain(&e),
                    }
                });
            }
        };
        let exchange_ref = self.record(&req, started, Some(status), headers.clone(), body.clone());
        Ok(HttpResponse {
            url: req.url,
            status,
            headers,
            body,
            exchange_ref,
        })
    }

    fn record(
        &self,
        req: &HttpRequest,
        timestamp: chrono::DateTime<Utc>,
        status: Option<u16>,
        response_headers: Vec<(String, String)>,
        response_body: Vec<u8>,
    ) -> Option<u64> {
        let recorder = self.recorder.as_ref()?;
        Some(recorder.record(HttpExchange {
            sequence_no: 0,
            timestamp,
            method: req.method.clone(),
            url: req.url.clone(),
            request_headers: req.headers.clone(),
            request_body: req.body.clone(),
            status,
            response_headers,
            response_body,
            session_tag: self.session_tag.clone(),
        }))
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    msg
}
