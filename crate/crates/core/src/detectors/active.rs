//! Probes that send mutated requests in scanner-owned sessions.

use std::net::Ipv4Addr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use rand::RngCore;

use super::catcher::CallbackCatcher;
use super::{aggregate, Evidence, Finding, ProbeBudget, SubResult, Verdict};
use crate::capture::{HttpExchange, ParamOrigin, Recorder};
use crate::http::{HttpClient, HttpRequest};
use crate::lifecycle::DelegatedChain;
use crate::oauth::{
    endpoint_of, generate_pkce, register_client, token_request, AgentConfig, AgentOutcome, AgentRun,
    AuthServerMetadata, AuthorizationRequest, BrowserAgent, ClientRegistration, PkceMethod,
    RegistrationError, TokenOutcome,
};
use crate::taxonomy::{EvidenceLevel, FlawId};

/// Redirect target registered by the malicious-registration probe. The
/// reserved `.invalid` name guarantees nothing is ever delivered there.
pub const PROBE_REDIRECT_URI: &str = "https://attacker.mcp-authscan.invalid/callback";

/// A client the scanner registered (or was given) for its own sessions.
#[derive(Debug, Clone)]
pub struct ScannerClient {
    pub registration: ClientRegistration,
    pub redirect_uri: String,
}

/// A token request that already succeeded once in a scanner-owned session.
#[derive(Debug, Clone)]
pub struct ReplayableToken {
    pub request: HttpRequest,
    pub first: TokenOutcome,
}

pub struct ProbeContext<'a> {
    pub http: HttpClient,
    /// When set, each probe records under its own session tag.
    pub recorder: Option<Recorder>,
    pub meta: &'a AuthServerMetadata,
    pub catcher: &'a CallbackCatcher,
    pub budget: &'a ProbeBudget,
    pub target: String,
    pub resource: Option<String>,
    pub scope: Option<String>,
    /// Prefixes session tags and catcher paths; unique per target.
    pub probe_prefix: String,
    pub malicious_redirect: String,
}

impl ProbeContext<'_> {
    pub(crate) fn tag(&self, probe: &str) -> String {
        format!("{}{probe}", self.probe_prefix)
    }

    pub(crate) fn client_for(&self, probe: &str) -> HttpClient {
        match &self.recorder {
            Some(r) => self.http.recording(r.clone(), self.tag(probe)),
            None => self.http.unrecorded(),
        }
    }

    pub(crate) fn refs_for(&self, probe: &str) -> Vec<u64> {
        let tag = self.tag(probe);
        self.recorder
            .as_ref()
            .map(|r| {
                r.snapshot()
                    .into_iter()
                    .filter(|e| e.session_tag == tag)
                    .map(|e| e.sequence_no)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub(crate) fn agent(&self, complete_consent: bool) -> BrowserAgent {
        BrowserAgent::new(AgentConfig {
            max_redirect_hops: self.budget.max_redirect_hops,
            complete_consent,
            max_consent_submissions: 2,
            deliver_callback: true,
        })
    }

    pub(crate) fn authorization(&self, client_id: &str, redirect_uri: &str) -> AuthorizationRequest {
        let mut req = AuthorizationRequest::new(&self.meta.authorization_endpoint, client_id)
            .with_redirect_uri(redirect_uri)
            .with_state(random_token(16));
        if let Some(s) = &self.scope {
            req = req.with_scope(s);
        }
        if let Some(r) = &self.resource {
            req = req.with_resource(r);
        }
        req
    }

    fn finding(&self, flaw: FlawId, verdict: Verdict, detail: impl Into<String>) -> Finding {
        Finding::new(flaw, EvidenceLevel::Active, verdict, &self.target, detail)
    }

    fn dry_run(&self, flaw: FlawId) -> Option<Finding> {
        self.budget
            .dry_run
            .then(|| self.finding(flaw, Verdict::Inconclusive, "dry run: no request sent"))
    }
}

pub(crate) fn random_token(bytes: usize) -> String {
    let mut b = vec![0u8; bytes];
    rand::rng().fill_bytes(&mut b);
    URL_SAFE_NO_PAD.encode(b)
}

fn with_s256(req: AuthorizationRequest) -> AuthorizationRequest {
    let p = generate_pkce(PkceMethod::S256);
    req.with_pkce(p.challenge, "S256")
}

/// Whether the authorization server went on with a request instead of refusing it.
/// `None` when the walk ended before that was clear.
pub fn proceeds(run: &AgentRun) -> Option<bool> {
    const REFUSALS: [&str; 5] = [
        "invalid_client",
        "invalid_request",
        "unauthorized_client",
        "invalid_redirect",
        "access_denied",
    ];
    const MARKERS: [&str; 8] = [
        "<form", "consent", "authorize", "approve", "allow", "sign in", "log in", "login",
    ];
    match &run.outcome {
        AgentOutcome::Callback { code: Some(_), .. } => Some(true),
        AgentOutcome::Callback { error: Some(_), .. } => Some(false),
        AgentOutcome::Callback { .. } => None,
        AgentOutcome::Page {
            status,
            body,
            consent_form,
            ..
        } => {
            let lower = body.to_ascii_lowercase();
            if *status >= 400 || REFUSALS.iter().any(|r| lower.contains(r)) {
                Some(false)
            } else if (200..300).contains(status) && (*consent_form || MARKERS.iter().any(|m| lower.contains(m))) {
                Some(true)
            } else {
                None
            }
        }
        AgentOutcome::Exhausted { next, .. } => {
            let n = next.to_ascii_lowercase();
            (n.contains("login") || n.contains("signin") || n.contains("sign-in")).then_some(true)
        }
    }
}

fn describe(run: &AgentRun) -> String {
    match &run.outcome {
        AgentOutcome::Callback { url, code, error, .. } => match (code, error) {
            (Some(_), _) => format!("redirected to {} with a code", endpoint_of(url)),
            (_, Some(e)) => format!("redirected to {} with error={e}", endpoint_of(url)),
            _ => format!("redirected to {} without code or error", endpoint_of(url)),
        },
        AgentOutcome::Page { url, status, consent_form, .. } => {
            let form = if *consent_form { " with a consent form" } else { "" };
            format!("HTTP {status} page at {}{form}", endpoint_of(url))
        }
        AgentOutcome::Exhausted { hops, next } => {
            format!("redirect budget exhausted after {hops} hops (next: {})", endpoint_of(next))
        }
    }
}

pub async fn probe_f1_malicious_dcr(ctx: &ProbeContext<'_>) -> Finding {
    if let Some(f) = ctx.dry_run(FlawId::F1) {
        return f;
    }
    let flaw = FlawId::F1;
    if ctx.meta.registration_endpoint.is_none() {
        return ctx.finding(flaw, Verdict::Secure, "no registration endpoint advertised");
    }
    let http = ctx.client_for("f1");
    let uris = vec![ctx.malicious_redirect.clone()];
    let mut e = Evidence::default();
    let reg = match register_client(&http, ctx.meta, &uris, "mcp-authscan-probe").await {
        Ok(r) => r,
        Err(RegistrationError::Rejected { status, body }) => {
            e.refs(ctx.refs_for("f1"));
            e.note(format!("registration response: {}", body.chars().take(200).collect::<String>()));
            return ctx
                .finding(
                    flaw,
                    Verdict::Secure,
                    format!("registration with redirect_uri {} rejected with HTTP {status}", uris[0]),
                )
                .with_evidence(e);
        }
        Err(err) => {
            e.refs(ctx.refs_for("f1"));
            return ctx
                .finding(flaw, Verdict::Inconclusive, format!("registration failed: {err}"))
                .with_evidence(e);
        }
    };
    e.note(format!("issued client_id {}", reg.client_id));
    let req = with_s256(ctx.authorization(&reg.client_id, &uris[0]));
    let run = ctx.agent(false).run(&http, &req.to_url(), &uris).await;
    e.refs(ctx.refs_for("f1"));
    let run = match run {
        Ok(r) => r,
        Err(err) => {
            return ctx
                .finding(flaw, Verdict::Inconclusive, format!("authorization request failed: {err}"))
                .with_evidence(e)
        }
    };
    e.steps(&run.transcript);
    let verdict = match proceeds(&run) {
        Some(true) => Verdict::Vulnerable,
        Some(false) => Verdict::Secure,
        None => Verdict::Inconclusive,
    };
    let detail = match verdict {
        Verdict::Vulnerable => format!(
            "registered {} as redirect_uri and the authorization server proceeded: {}",
            uris[0],
            describe(&run)
        ),
        _ => format!("registration accepted but authorization {}", describe(&run)),
    };
    ctx.finding(flaw, verdict, detail).with_evidence(e)
}

pub async fn probe_f2_blind_client_trust(ctx: &ProbeContext<'_>, client: Option<&ScannerClient>) -> Finding {
    if let Some(f) = ctx.dry_run(FlawId::F2) {
        return f;
    }
    let flaw = FlawId::F2;
    let http = ctx.client_for("f2");
    let redirect = client
        .map(|c| c.redirect_uri.clone())
        .unwrap_or_else(|| ctx.catcher.url_for(&ctx.tag("f2")));
    let mut raw = [0u8; 6];
    rand::rng().fill_bytes(&mut raw);
    let spoofed: String = format!(
        "evil_client_id_{}",
        raw.iter().map(|b| format!("{b:02x}")).collect::<String>()
    );
    let req = with_s256(ctx.authorization(&spoofed, &redirect));
    let mut e = Evidence::default();
    e.note(format!("spoofed client_id {spoofed}"));
    let run = ctx.agent(false).run(&http, &req.to_url(), &[redirect]).await;
    e.refs(ctx.refs_for("f2"));
    let run = match run {
        Ok(r) => r,
        Err(err) => {
            return ctx
                .finding(flaw, Verdict::Inconclusive, format!("authorization endpoint unreachable: {err}"))
                .with_evidence(e)
        }
    };
    e.steps(&run.transcript);
    let (verdict, detail) = match proceeds(&run) {
        Some(true) => (
            Verdict::Vulnerable,
            format!("unregistered client_id accepted: {}", describe(&run)),
        ),
        Some(false) => (Verdict::Secure, format!("unregistered client_id refused: {}", describe(&run))),
        None => (Verdict::Inconclusive, describe(&run)),
    };
    ctx.finding(flaw, verdict, detail).with_evidence(e)
}

/// URL of the recorded request (or redirect) that carried an authorization request.
fn recorded_url(capture: &[HttpExchange], exchange_ref: u64, origin: ParamOrigin) -> Option<String> {
    let ex = capture.iter().find(|e| e.sequence_no == exchange_ref)?;
    match origin {
        ParamOrigin::Request => Some(ex.url.clone()),
        ParamOrigin::Location => ex.response_header("location").map(str::to_string),
    }
}

pub(crate) fn replace_param(url: &str, name: &str, value: &str) -> String {
    let (base, query) = url.split_once('?').unwrap_or((url, ""));
    let (query, fragment) = match query.split_once('#') {
        Some((q, f)) => (q, Some(f)),
        None => (query, None),
    };
    let mut found = false;
    let mut ser = url::form_urlencoded::Serializer::new(String::new());
    for (k, v) in url::form_urlencoded::parse(query.as_bytes()) {
        if k == name {
            if !found {
                ser.append_pair(name, value);
                found = true;
            }
        } else {
            ser.append_pair(&k, &v);
        }
    }
    if !found {
        ser.append_pair(name, value);
    }
    let mut out = format!("{base}?{}", ser.finish());
    if let Some(f) = fragment {
        out.push('#');
        out.push_str(f);
    }
    out
}

pub async fn probe_f4_nested_pollution(
    ctx: &ProbeContext<'_>,
    chain: Option<&DelegatedChain>,
    capture: &[HttpExchange],
) -> Finding {
    if let Some(f) = ctx.dry_run(FlawId::F4) {
        return f;
    }
    let flaw = FlawId::F4;
    let inconclusive = |d: &str| ctx.finding(flaw, Verdict::Inconclusive, d);
    let Some(chain) = chain else {
        return inconclusive("no delegated authorization chain observed");
    };
    let Some(ctx_state) = chain.bridge.as_ref().filter(|b| b.nested_redirect_uri.is_some()) else {
        return inconclusive("upstream state is opaque; no nested redirect to tamper with");
    };
    let Some(l2_auth) = chain.l2.as_ref().and_then(|l| l.auth_request.as_ref()) else {
        return inconclusive("upstream authorization request not observed");
    };
    let Some(original) = recorded_url(capture, l2_auth.exchange_ref, l2_auth.origin) else {
        return inconclusive("upstream authorization request not found in the capture");
    };
    let probe_id = ctx.tag("f4");
    let target = ctx.catcher.url_for(&probe_id);
    let Some(tampered) = ctx_state.with_redirect(&target) else {
        return inconclusive("nested context could not be re-encoded");
    };
    let replay = replace_param(&original, "state", &tampered);
    let mut e = Evidence::default();
    e.note(format!(
        "nested redirect {} replaced by {target}",
        ctx_state.nested_redirect_uri.as_deref().unwrap_or_default()
    ));
    let mut stop = vec![target.clone()];
    if let Some(r) = chain.l1.redirect_uri() {
        stop.push(r.to_string());
    }
    let http = ctx.client_for("f4");
    let run = ctx.agent(true).run(&http, &replay, &stop).await;
    e.refs(ctx.refs_for("f4"));
    let run = match run {
        Ok(r) => r,
        Err(err) => return inconclusive(&format!("replay failed: {err}")).with_evidence(e),
    };
    e.steps(&run.transcript);
    let (verdict, detail) = match &run.outcome {
        AgentOutcome::Callback { url, code: Some(code), .. } if endpoint_of(url) == target => {
            match ctx.catcher.find_code(code) {
                Some(hit) => {
                    e.note(format!("catcher received {}", hit.url));
                    (
                        Verdict::Vulnerable,
                        "callback handler forwarded the authorization code to the tampered nested redirect".to_string(),
                    )
                }
                None => (
                    Verdict::Vulnerable,
                    "callback handler redirected a code to the tampered nested redirect (delivery not observed)".to_string(),
                ),
            }
        }
        AgentOutcome::Callback { url, .. } if endpoint_of(url) == target => (
            Verdict::Inconclusive,
            "callback handler redirected to the tampered target without a code".to_string(),
        ),
        AgentOutcome::Callback { .. } => (
            Verdict::Secure,
            format!("tampered nested redirect ignored: {}", describe(&run)),
        ),
        AgentOutcome::Page { status, .. } if *status >= 400 => (
            Verdict::Secure,
            format!("tampered state rejected: {}", describe(&run)),
        ),
        _ => (Verdict::Inconclusive, describe(&run)),
    };
    ctx.finding(flaw, verdict, detail).with_evidence(e)
}

async fn downgrade_variant(
    ctx: &ProbeContext<'_>,
    client: &ScannerClient,
    variant: &str,
    e: &mut Evidence,
) -> SubResult {
    let probe = format!("f5-{variant}");
    let http = ctx.client_for(&probe);
    let base = ctx.authorization(&client.registration.client_id, &client.redirect_uri);
    let (req, verifier) = if variant == "plain" {
        let v = random_token(32);
        (base.with_pkce(v.clone(), "plain"), Some(v))
    } else {
        (base, None)
    };
    let sub = |verdict, detail: String| SubResult {
        variant: variant.to_string(),
        verdict,
        detail,
    };
    let run = ctx
        .agent(true)
        .run(&http, &req.to_url(), std::slice::from_ref(&client.redirect_uri))
        .await;
    let run = match run {
        Ok(r) => r,
        Err(err) => {
            e.refs(ctx.refs_for(&probe));
            return sub(Verdict::Inconclusive, format!("authorization failed: {err}"));
        }
    };
    e.steps(&run.transcript);
    let result = match (&run.outcome, proceeds(&run)) {
        (AgentOutcome::Callback { code: Some(code), .. }, _) => {
            let treq = token_request(
                &ctx.meta.token_endpoint,
                code,
                verifier.as_deref(),
                &client.registration,
                &client.redirect_uri,
            );
            match http.send(treq).await {
                Ok(resp) => match TokenOutcome::from_response(&resp) {
                    TokenOutcome::Issued(_) => sub(
                        Verdict::Vulnerable,
                        match variant {
                            "plain" => "code issued for a plain challenge and redeemed with verifier = challenge".into(),
                            _ => "code issued without PKCE and redeemed without a code_verifier".into(),
                        },
                    ),
                    TokenOutcome::Rejected(err) => sub(
                        Verdict::Secure,
                        format!("token request rejected ({})", err.error),
                    ),
                },
                Err(err) => sub(Verdict::Inconclusive, format!("token endpoint unreachable: {err}")),
            }
        }
        (_, Some(false)) => sub(Verdict::Secure, format!("rejected at authorization: {}", describe(&run))),
        _ => sub(Verdict::Inconclusive, describe(&run)),
    };
    e.refs(ctx.refs_for(&probe));
    result
}

pub async fn probe_f5_downgrade(ctx: &ProbeContext<'_>, client: Option<&ScannerClient>) -> Finding {
    if let Some(f) = ctx.dry_run(FlawId::F5) {
        return f;
    }
    let Some(client) = client else {
        return ctx.finding(FlawId::F5, Verdict::Inconclusive, "no scanner-owned client available");
    };
    let mut e = Evidence::default();
    let mut subs = Vec::new();
    for variant in ["strip", "plain"]
        .into_iter()
        .take(ctx.budget.max_probes_per_flaw as usize)
    {
        subs.push(downgrade_variant(ctx, client, variant, &mut e).await);
    }
    let verdict = aggregate(&subs);
    let detail = match subs.iter().filter(|s| s.verdict == Verdict::Vulnerable).map(|s| s.variant.as_str()).collect::<Vec<_>>() {
        v if !v.is_empty() => format!("PKCE downgrade accepted ({})", v.join(", ")),
        _ if verdict == Verdict::Secure => "both downgrade variants rejected".into(),
        _ => "downgrade probes did not complete".into(),
    };
    let mut f = ctx.finding(FlawId::F5, verdict, detail).with_evidence(e);
    f.sub_results = subs;
    f
}

/// Weak spellings of a legitimate redirect URI.
pub(crate) fn weak_variants(legit: &str) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    if let Ok(u) = url::Url::parse(legit) {
        if let Some(url::Host::Ipv4(ip)) = u.host() {
            let decimal = u32::from(ip).to_string();
            let prefix = format!("{}://{}", u.scheme(), ip);
            if let Some(rest) = legit.strip_prefix(&prefix) {
                out.push(("decimal_ip", format!("{}://{decimal}{rest}", u.scheme())));
            }
        }
    }
    let (base, _) = legit.split_once('?').unwrap_or((legit, ""));
    out.push(("subpath", format!("{}/..%2fprobe", base.trim_end_matches('/'))));
    out
}

/// `http://2130706433:8080/x` → `127.0.0.1`. Used to recognize decimal-form hosts in results.
pub(crate) fn decimal_host(url: &str) -> Option<Ipv4Addr> {
    let rest = url.split_once("://")?.1;
    let end = rest.find([':', '/', '?']).unwrap_or(rest.len());
    let host = &rest[..end];
    (!host.is_empty() && host.bytes().all(|b| b.is_ascii_digit()))
        .then(|| host.parse::<u32>().ok().map(Ipv4Addr::from))
        .flatten()
}

pub async fn probe_f7_open_redirect(ctx: &ProbeContext<'_>, client: Option<&ScannerClient>) -> Finding {
    if let Some(f) = ctx.dry_run(FlawId::F7) {
        return f;
    }
    let Some(client) = client else {
        return ctx.finding(FlawId::F7, Verdict::Inconclusive, "no scanner-owned client available");
    };
    let full = ctx.catcher.url_for(&ctx.tag("f7-full"));
    let mut variants = vec![("full", full)];
    variants.extend(weak_variants(&client.redirect_uri));
    variants.retain(|(_, u)| u != &client.redirect_uri);
    variants.truncate(ctx.budget.max_probes_per_flaw as usize);

    let mut e = Evidence::default();
    let mut subs = Vec::new();
    for (name, mutated) in variants {
        let probe = format!("f7-{name}");
        let http = ctx.client_for(&probe);
        let req = with_s256(ctx.authorization(&client.registration.client_id, &mutated));
        let run = ctx
            .agent(true)
            .run(&http, &req.to_url(), std::slice::from_ref(&mutated))
            .await;
        e.refs(ctx.refs_for(&probe));
        let sub = |verdict, detail: String| SubResult {
            variant: name.to_string(),
            verdict,
            detail,
        };
        let result = match run {
            Err(err) => sub(Verdict::Inconclusive, format!("authorization failed: {err}")),
            Ok(run) => {
                e.steps(&run.transcript);
                match &run.outcome {
                    AgentOutcome::Callback { code: Some(code), .. } => {
                        let caught = ctx.catcher.find_code(code);
                        let how = if caught.is_some() {
                            "catcher received the code"
                        } else {
                            "code issued, delivery not observed"
                        };
                        if let Some(ip) = decimal_host(&mutated) {
                            e.note(format!("{mutated} resolves to {ip}"));
                        }
                        sub(Verdict::Vulnerable, format!("redirect_uri {mutated} accepted; {how}"))
                    }
                    AgentOutcome::Callback { error: Some(err), .. } => sub(
                        Verdict::Inconclusive,
                        format!("server redirected error={err} to the mutated URI"),
                    ),
                    AgentOutcome::Page { status, .. } if *status >= 400 => {
                        sub(Verdict::Secure, format!("mutated redirect_uri rejected: {}", describe(&run)))
                    }
                    _ => sub(Verdict::Inconclusive, describe(&run)),
                }
            }
        };
        subs.push(result);
    }
    let verdict = aggregate(&subs);
    let detail = match verdict {
        Verdict::Vulnerable => format!(
            "mutated redirect_uri accepted ({})",
            subs.iter()
                .filter(|s| s.verdict == Verdict::Vulnerable)
                .map(|s| s.variant.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ),
        Verdict::Secure => "every mutated redirect_uri was rejected".into(),
        _ => subs
            .iter()
            .find(|s| s.verdict == Verdict::Inconclusive)
            .map(|s| format!("{}: {}", s.variant, s.detail))
            .unwrap_or_default(),
    };
    let mut f = ctx.finding(FlawId::F7, verdict, detail).with_evidence(e);
    f.sub_results = subs;
    f
}

pub async fn probe_f9_code_replay(ctx: &ProbeContext<'_>, replay: Option<&ReplayableToken>) -> Finding {
    if let Some(f) = ctx.dry_run(FlawId::F9) {
        return f;
    }
    let flaw = FlawId::F9;
    let Some(replay) = replay else {
        return ctx.finding(flaw, Verdict::Inconclusive, "no redeemed code from a scanner-owned session");
    };
    let TokenOutcome::Issued(first) = &replay.first else {
        return ctx.finding(flaw, Verdict::Inconclusive, "the original token request did not succeed");
    };
    let http = ctx.client_for("f9");
    let resp = http.send(replay.request.clone()).await;
    let mut e = Evidence::default();
    e.refs(ctx.refs_for("f9"));
    let resp = match resp {
        Ok(r) => r,
        Err(err) => {
            return ctx
                .finding(flaw, Verdict::Inconclusive, format!("token endpoint unreachable: {err}"))
                .with_evidence(e)
        }
    };
    match TokenOutcome::from_response(&resp) {
        TokenOutcome::Issued(second) => {
            let mask = |t: &str| format!("{}…", t.chars().take(6).collect::<String>());
            e.note(format!(
                "first access token {}, second {}",
                mask(&first.access_token),
                mask(&second.access_token)
            ));
            ctx.finding(flaw, Verdict::Vulnerable, "a redeemed authorization code was accepted again")
                .with_evidence(e)
        }
        TokenOutcome::Rejected(err) => ctx
            .finding(
                flaw,
                Verdict::Secure,
                format!(
                    "replayed code rejected with HTTP {} {}",
                    err.status, err.error
                ),
            )
            .with_evidence(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_variant_generation() {
        let v = weak_variants("http://127.0.0.1:8080/cb/client");
        assert_eq!(
            v,
            vec![
                ("decimal_ip", "http://2130706433:8080/cb/client".to_string()),
                ("subpath", "http://127.0.0.1:8080/cb/client/..%2fprobe".to_string()),
            ]
        );
        let v = weak_variants("https://app.example/cb");
        assert_eq!(v.len(), 1);
        assert_eq!(decimal_host("http://2130706433:8080/cb"), Some(Ipv4Addr::LOCALHOST));
        assert_eq!(decimal_host("http://127.0.0.1/cb"), None);
    }

    #[test]
    fn state_replacement_keeps_other_params() {
        let u = replace_param("http://up/authorize?client_id=a&state=old&x=1", "state", "n/ew");
        assert_eq!(u, "http://up/authorize?client_id=a&state=n%2Few&x=1");
        assert_eq!(replace_param("http://up/a", "state", "s"), "http://up/a?state=s");
    }

    fn page(status: u16, body: &str, form: bool) -> AgentRun {
        AgentRun {
            outcome: AgentOutcome::Page {
                url: "http://as/x".into(),
                status,
                body: body.into(),
                consent_form: form,
                hops: 1,
            },
            transcript: vec![],
            consent_submitted: false,
        }
    }

    #[test]
    fn proceed_classifier() {
        assert_eq!(proceeds(&page(200, "<form>", true)), Some(true));
        assert_eq!(proceeds(&page(200, "<h1>Sign in</h1>", false)), Some(true));
        assert_eq!(proceeds(&page(400, "error=invalid_client", false)), Some(false));
        assert_eq!(proceeds(&page(200, "error: invalid_client", false)), Some(false));
        assert_eq!(proceeds(&page(200, "hello", false)), None);
    }
}
