//! A minimal user agent that walks authorization redirect chains.
//!
//! It follows `Location` headers up to a hop budget, optionally submits a
//! consent form, and stops as soon as a redirect targets one of the
//! configured callback endpoints. The stepper form lets callers interleave
//! several flows over one client.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::capture::parse_query;
use crate::http::{HttpClient, HttpRequest, HttpResponse, TransportError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentConfig {
    pub max_redirect_hops: u32,
    /// Submit the approve button of a consent form when one is shown.
    pub complete_consent: bool,
    pub max_consent_submissions: u32,
    /// Issue a GET to the callback URL once reached (for loopback catchers).
    pub deliver_callback: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_redirect_hops: 5,
            complete_consent: true,
            max_consent_submissions: 2,
            deliver_callback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub method: String,
    pub url: String,
    pub status: Option<u16>,
    pub location: Option<String>,
    pub exchange_ref: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentOutcome {
    /// A redirect reached a callback endpoint (or a non-HTTP client scheme).
    Callback {
        url: String,
        code: Option<String>,
        state: Option<String>,
        error: Option<String>,
        hops: u32,
    },
    /// A non-redirect response ended the walk.
    Page {
        url: String,
        status: u16,
        body: String,
        consent_form: bool,
        hops: u32,
    },
    /// The hop budget ran out before a terminal response.
    Exhausted { hops: u32, next: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRun {
    pub outcome: AgentOutcome,
    pub transcript: Vec<TranscriptStep>,
    pub consent_submitted: bool,
}

impl AgentRun {
    pub fn code(&self) -> Option<&str> {
        match &self.outcome {
            AgentOutcome::Callback { code, .. } => code.as_deref(),
            _ => None,
        }
    }
}

/// Endpoint part of a URL: everything before `?` or `#`.
pub fn endpoint_of(url: &str) -> &str {
    let end = url.find(['?', '#']).unwrap_or(url.len());
    &url[..end]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormSubmission {
    pub action: String,
    pub method: String,
    pub fields: Vec<(String, String)>,
}

fn attr(tag: &str, name: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r#"(?is)([a-z_:-]+)\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))"#).expect("static regex")
    });
    re.captures_iter(tag).find_map(|c| {
        c[1].eq_ignore_ascii_case(name).then(|| {
            c.get(2)
                .or(c.get(3))
                .or(c.get(4))
                .map(|m| html_unescape(m.as_str()))
                .unwrap_or_default()
        })
    })
}

fn html_unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

fn is_approval(s: &str) -> bool {
    let s = s.to_ascii_lowercase();
    ["approve", "allow", "accept", "authorize", "consent", "yes", "continue"]
        .iter()
        .any(|w| s.contains(w))
}

/// Finds the first form in `html` and prepares an approving submission.
pub fn find_consent_form(html: &str, page_url: &str) -> Option<FormSubmission> {
    static FORM: OnceLock<Regex> = OnceLock::new();
    static FIELD: OnceLock<Regex> = OnceLock::new();
    let form_re =
        FORM.get_or_init(|| Regex::new(r"(?is)<form\b([^>]*)>(.*?)</form>").expect("static regex"));
    let field_re = FIELD.get_or_init(|| {
        Regex::new(r"(?is)<(input|button)\b([^>]*)>(?:([^<]*)</button>)?").expect("static regex")
    });
    let caps = form_re.captures(html)?;
    let form_attrs = caps.get(1).map_or("", |m| m.as_str());
    let inner = caps.get(2).map_or("", |m| m.as_str());
    let action = attr(form_attrs, "action").unwrap_or_default();
    let action = Url::parse(page_url)
        .and_then(|b| b.join(&action))
        .map(|u| u.to_string())
        .unwrap_or(action);
    let method = attr(form_attrs, "method")
        .unwrap_or_else(|| "GET".into())
        .to_ascii_uppercase();

    let mut fields = Vec::new();
    let mut submit: Option<(String, String)> = None;
    for f in field_re.captures_iter(inner) {
        let tag = f[1].to_ascii_lowercase();
        let attrs = &f[2];
        let kind = attr(attrs, "type")
            .unwrap_or_else(|| if tag == "button" { "submit".into() } else { "text".into() })
            .to_ascii_lowercase();
        let Some(name) = attr(attrs, "name") else { continue };
        let value = attr(attrs, "value").unwrap_or_default();
        if kind == "submit" {
            let label = f.get(3).map_or("", |m| m.as_str());
            if submit.is_none() && (is_approval(&value) || is_approval(label)) {
                submit = Some((name, value));
            }
        } else if kind != "checkbox" || attrs.to_ascii_lowercase().contains("checked") {
            fields.push((name, value));
        }
    }
    fields.extend(submit);
    Some(FormSubmission {
        action,
        method,
        fields,
    })
}

fn callback_outcome(url: &str, hops: u32) -> AgentOutcome {
    let query = url.split_once('?').map_or("", |(_, q)| q);
    let query = query.split('#').next().unwrap_or("");
    let mut code = None;
    let mut state = None;
    let mut error = None;
    for p in parse_query(query) {
        match p.key.as_str() {
            "code" => code = Some(p.value),
            "state" => state = Some(p.value),
            "error" => error = Some(p.value),
            _ => {}
        }
    }
    AgentOutcome::Callback {
        url: url.to_string(),
        code,
        state,
        error,
        hops,
    }
}

/// Incremental form of the agent: take [`next_request`](Self::next_request),
/// send it, then [`feed`](Self::feed) the response.
#[derive(Debug)]
pub struct AgentStepper {
    config: AgentConfig,
    stop: Vec<String>,
    pending: Option<HttpRequest>,
    hops: u32,
    consents: u32,
    delivering: bool,
    transcript: Vec<TranscriptStep>,
    outcome: Option<AgentOutcome>,
}

impl AgentStepper {
    /// `stop_at` lists callback endpoints (query ignored).
    pub fn new(config: AgentConfig, start_url: &str, stop_at: &[String]) -> Self {
        Self {
            config,
            stop: stop_at.iter().map(|s| endpoint_of(s).to_string()).collect(),
            pending: Some(HttpRequest::get(start_url)),
            hops: 0,
            consents: 0,
            delivering: false,
            transcript: vec![],
            outcome: None,
        }
    }

    /// Starts from an arbitrary request, e.g. a consent form POST.
    pub fn from_request(config: AgentConfig, req: HttpRequest, stop_at: &[String]) -> Self {
        let mut s = Self::new(config, &req.url, stop_at);
        s.pending = Some(req);
        s
    }

    pub fn next_request(&self) -> Option<&HttpRequest> {
        self.pending.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none()
    }

    fn is_stop(&self, loc: &str) -> bool {
        let ep = endpoint_of(loc);
        self.stop.iter().any(|s| s == ep) || !(loc.starts_with("http://") || loc.starts_with("https://"))
    }

    pub fn feed(&mut self, resp: &HttpResponse) {
        let Some(req) = self.pending.take() else { return };
        let location = resp.is_redirect().then(|| resp.location()).flatten();
        self.transcript.push(TranscriptStep {
            method: req.method.clone(),
            url: req.url.clone(),
            status: Some(resp.status),
            location: location.clone(),
            exchange_ref: resp.exchange_ref,
        });
        if self.delivering {
            return;
        }
        if let Some(loc) = location {
            if self.is_stop(&loc) {
                let outcome = callback_outcome(&loc, self.hops);
                if self.config.deliver_callback && loc.starts_with("http") {
                    self.delivering = true;
                    self.pending = Some(HttpRequest::get(loc));
                }
                self.outcome = Some(outcome);
            } else if self.hops >= self.config.max_redirect_hops {
                self.outcome = Some(AgentOutcome::Exhausted {
                    hops: self.hops,
                    next: loc,
                });
            } else {
                self.hops += 1;
                self.pending = Some(HttpRequest::get(loc));
            }
            return;
        }
        let body = resp.text();
        let form = (resp.status == 200 && resp.content_type().contains("html"))
            .then(|| find_consent_form(&body, &resp.url))
            .flatten();
        if let Some(form) = &form {
            if self.config.complete_consent && self.consents < self.config.max_consent_submissions {
                self.consents += 1;
                let pairs: Vec<(&str, &str)> = form
                    .fields
                    .iter()
                    .map(|(k, v)| (k.as_str(), v.as_str()))
                    .collect();
                self.pending = Some(if form.method == "POST" {
                    HttpRequest::post_form(&form.action, &pairs)
                } else {
                    let q = url::form_urlencoded::Serializer::new(String::new())
                        .extend_pairs(pairs)
                        .finish();
                    HttpRequest::get(format!("{}?{q}", endpoint_of(&form.action)))
                });
                return;
            }
        }
        self.outcome = Some(AgentOutcome::Page {
            url: resp.url.clone(),
            status: resp.status,
            body,
            consent_form: form.is_some(),
            hops: self.hops,
        });
    }

    /// A transport failure while delivering the callback is not fatal.
    pub fn feed_error(&mut self) -> bool {
        if self.delivering {
            self.pending = None;
            true
        } else {
            false
        }
    }

    pub fn finish(self) -> AgentRun {
        AgentRun {
            outcome: self.outcome.unwrap_or(AgentOutcome::Exhausted {
                hops: self.hops,
                next: String::new(),
            }),
            transcript: self.transcript,
            consent_submitted: self.consents > 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BrowserAgent {
    pub config: AgentConfig,
}

impl BrowserAgent {
    pub fn new(config: AgentConfig) -> Self {
        Self { config }
    }

    pub async fn run(
        &self,
        http: &HttpClient,
        start_url: &str,
        stop_at: &[String],
    ) -> Result<AgentRun, TransportError> {
        drive(
            http,
            AgentStepper::new(self.config.clone(), start_url, stop_at),
        )
        .await
    }

    pub async fn run_request(
        &self,
        http: &HttpClient,
        req: HttpRequest,
        stop_at: &[String],
    ) -> Result<AgentRun, TransportError> {
        drive(
            http,
            AgentStepper::from_request(self.config.clone(), req, stop_at),
        )
        .await
    }
}

async fn drive(http: &HttpClient, mut stepper: AgentStepper) -> Result<AgentRun, TransportError> {
    while let Some(req) = stepper.next_request().cloned() {
        match http.send(req).await {
            Ok(resp) => stepper.feed(&resp),
            Err(e) => {
                if !stepper.feed_error() {
                    return Err(e);
                }
            }
        }
    }
    Ok(stepper.finish())
}
