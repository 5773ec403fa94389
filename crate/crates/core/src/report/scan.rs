use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::time::Duration;

use chrono::Utc;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use url::Url;

use super::{ChainSummary, LifecycleSummary, Report, ReportFormat, TargetReport};
use crate::capture::{
    identify_traffic, ingest_flow_log, live_proxy, CaptureError, HttpExchange, Layer, LayerClassifier,
    ProxyConfig, Recorder,
};
use crate::detectors::{
    self, assist_f6_consent, check_f3_layer_inconsistency, check_f8_weak_state, merge_f5,
    probe_f1_malicious_dcr, probe_f2_blind_client_trust, probe_f4_nested_pollution,
    probe_f5_downgrade, probe_f7_open_redirect, probe_f9_code_replay, run_callback_catcher,
    CallbackCatcher, CatcherError, ConsentMode, Finding, ProbeBudget, ProbeContext,
    ReplayableToken, ScannerClient, Verdict, PROBE_REDIRECT_URI,
};
use crate::http::{HttpClient, HttpConfig};
use crate::lifecycle::{link_delegated, reconstruct, DelegatedChain};
use crate::mcp_probe::{
    validate_candidates, AuthClassification, AuthStatus, CandidateEndpoint, CandidateRecord,
    MemorySink, ProbeOptions,
};
use crate::oauth::{generate_pkce, register_client, token_request, AgentOutcome, PkceMethod, TokenOutcome};
use crate::taxonomy::{EvidenceLevel, FlawId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Read traffic only; no registration, mutation or replay is ever sent.
    PassiveOnly,
    Active,
    /// Active plus UI-assisted consent checks.
    #[default]
    Full,
}

impl ScanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanMode::PassiveOnly => "passive_only",
            ScanMode::Active => "active",
            ScanMode::Full => "full",
        }
    }

    fn probes(self) -> bool {
        self != ScanMode::PassiveOnly
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaptureSource {
    /// The scanner runs one authorization of its own and analyses that.
    Drive,
    /// A recorded flow log (native JSON lines or HAR).
    FlowLog(PathBuf),
    /// Relay an operator's client through a proxy for `window`, then analyse.
    LiveProxy { listen: SocketAddr, window: Duration },
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub targets: Vec<CandidateEndpoint>,
    pub mode: ScanMode,
    pub budget: ProbeBudget,
    pub catcher_address: SocketAddr,
    /// Non-loopback addresses the operator allows the catcher to bind.
    pub declared_catcher_ips: Vec<IpAddr>,
    pub capture_source: CaptureSource,
    pub output: Option<(PathBuf, ReportFormat)>,
    /// Where to write the scanner's own exchanges that evidence refers to.
    pub evidence_log: Option<PathBuf>,
    pub concurrency: usize,
    pub http: HttpConfig,
    pub probe: ProbeOptions,
    pub consent: ConsentMode,
    pub scope: Option<String>,
    /// Redirect URI registered by the malicious-registration probe.
    pub malicious_redirect: String,
}

impl ScanConfig {
    pub fn new(targets: Vec<CandidateEndpoint>) -> Self {
        Self {
            targets,
            mode: ScanMode::Full,
            budget: ProbeBudget::default(),
            catcher_address: SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), 0),
            declared_catcher_ips: vec![],
            capture_source: CaptureSource::Drive,
            output: None,
            evidence_log: None,
            concurrency: 4,
            http: HttpConfig::default(),
            probe: ProbeOptions::default(),
            consent: ConsentMode::HtmlAssertions,
            scope: None,
            malicious_redirect: PROBE_REDIRECT_URI.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if self.targets.is_empty() {
            return Err(ScanError::NoTargets);
        }
        if self.mode == ScanMode::PassiveOnly && self.capture_source == CaptureSource::Drive {
            return Err(ScanError::Config(
                "passive_only needs a flow log or live proxy capture; driving a flow registers a client".into(),
            ));
        }
        if self.budget.max_redirect_hops == 0 {
            return Err(ScanError::Config("max_redirect_hops must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("no targets given")]
    NoTargets,
    #[error("invalid scan configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catcher(#[from] CatcherError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct Shared<'a> {
    config: &'a ScanConfig,
    http: HttpClient,
    recorder: Recorder,
    catcher: Option<CallbackCatcher>,
    capture: Option<Vec<HttpExchange>>,
}

/// Runs the whole pipeline over every target and writes the report when an
/// output is configured.
pub async fn scan(config: &ScanConfig) -> Result<Report, ScanError> {
    config.validate()?;
    let started = Utc::now();
    let http = HttpClient::new(config.http.clone());
    let sink = MemorySink::default();
    let validation = validate_candidates(&http, &config.targets, config.concurrency, &config.probe, &sink).await;

    let capture = match &config.capture_source {
        CaptureSource::Drive => None,
        CaptureSource::FlowLog(path) => {
            let ingested = ingest_flow_log(path)?;
            if ingested.skipped > 0 {
                tracing::warn!("{} unparseable flow-log records skipped", ingested.skipped);
            }
            Some(ingested.exchanges)
        }
        CaptureSource::LiveProxy { listen, window } => {
            let mut proxy = live_proxy(ProxyConfig::plain(*listen)).await?;
            tracing::info!("proxy listening on {}; capturing for {:?}", proxy.addr, window);
            tokio::time::sleep(*window).await;
            let got = proxy.drain();
            proxy.shutdown();
            Some(got)
        }
    };
    let catcher = if config.mode.probes() {
        Some(run_callback_catcher(config.catcher_address, &config.declared_catcher_ips).await?)
    } else {
        None
    };
    let shared = Shared {
        config,
        http,
        recorder: Recorder::new(),
        catcher,
        capture,
    };

    let mut classes = validation.classifications.into_iter();
    let jobs: Vec<(usize, CandidateRecord, Option<AuthClassification>)> = validation
        .records
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let reachable = matches!(
                rec.outcome,
                crate::mcp_probe::CandidateOutcome::ValidMcp | crate::mcp_probe::CandidateOutcome::AuthChallenge
            );
            let class = if reachable { classes.next() } else { None };
            (i, rec, class)
        })
        .collect();

    let shared_ref = &shared;
    let mut targets: Vec<(usize, TargetReport)> = stream::iter(jobs)
        .map(|(i, rec, class)| async move { (i, scan_target(shared_ref, i, rec, class).await) })
        .buffer_unordered(config.concurrency.max(1))
        .collect()
        .await;
    targets.sort_by_key(|(i, _)| *i);

    let report = Report::new(config.mode, started, targets.into_iter().map(|(_, t)| t).collect());
    if let Some(path) = &config.evidence_log {
        crate::flawlab::write_capture(path, &shared.recorder.snapshot()).map_err(|source| ScanError::Output {
            path: path.display().to_string(),
            source,
        })?;
    }
    if let Some((path, format)) = &config.output {
        super::write_report(&report, path, *format).map_err(|source| ScanError::Output {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(report)
}

fn empty_target(rec: &CandidateRecord) -> TargetReport {
    TargetReport {
        url: rec.url.clone(),
        source_label: rec.source_label.clone(),
        outcome: rec.outcome,
        endpoint: None,
        auth_status: rec.auth_status,
        findings: vec![],
        lifecycles: vec![],
        chains: vec![],
        consent_bundle: None,
        errors: rec.evidence.error.iter().cloned().collect(),
    }
}

/// A completed authorization in a scanner-owned session.
struct OwnFlow {
    token: Option<ReplayableToken>,
    note: Option<String>,
}

async fn own_flow(ctx: &ProbeContext<'_>, client: &ScannerClient, probe: &str) -> OwnFlow {
    let http = ctx.client_for(probe);
    let pkce = generate_pkce(PkceMethod::S256);
    let req = ctx
        .authorization(&client.registration.client_id, &client.redirect_uri)
        .with_pkce(&pkce.challenge, "S256");
    let run = match ctx
        .agent(true)
        .run(&http, &req.to_url(), std::slice::from_ref(&client.redirect_uri))
        .await
    {
        Ok(r) => r,
        Err(e) => {
            return OwnFlow {
                token: None,
                note: Some(format!("authorization walk failed: {e}")),
            }
        }
    };
    let code = match &run.outcome {
        AgentOutcome::Callback { code: Some(c), .. } => c.clone(),
        other => {
            let what = match other {
                AgentOutcome::Callback { error, .. } => {
                    format!("callback without code (error={})", error.as_deref().unwrap_or("none"))
                }
                AgentOutcome::Page { status, url, .. } => format!("stopped at HTTP {status} {url}"),
                AgentOutcome::Exhausted { hops, .. } => format!("redirect budget exhausted after {hops} hops"),
            };
            return OwnFlow {
                token: None,
                note: Some(format!("own authorization did not yield a code: {what}")),
            };
        }
    };
    let request = token_request(
        &ctx.meta.token_endpoint,
        &code,
        Some(&pkce.verifier),
        &client.registration,
        &client.redirect_uri,
    );
    match http.send(request.clone()).await {
        Ok(resp) => OwnFlow {
            token: Some(ReplayableToken {
                request,
                first: TokenOutcome::from_response(&resp),
            }),
            note: None,
        },
        Err(e) => OwnFlow {
            token: None,
            note: Some(format!("token endpoint unreachable: {e}")),
        },
    }
}

fn best_chain(chains: &[DelegatedChain]) -> Option<&DelegatedChain> {
    chains
        .iter()
        .find(|c| c.bridge.is_some() && c.l2.is_some())
        .or_else(|| chains.iter().find(|c| c.l2.is_some()))
        .or_else(|| chains.first())
}

async fn scan_target(
    shared: &Shared<'_>,
    index: usize,
    rec: CandidateRecord,
    class: Option<AuthClassification>,
) -> TargetReport {
    let mut report = empty_target(&rec);
    let Some(class) = class else { return report };
    report.endpoint = Some(class.endpoint.clone());
    report.auth_status = Some(class.status);
    let discovery = match (&class.status, &class.discovery) {
        (AuthStatus::Oauth, Some(d)) => d,
        _ => return report,
    };
    let config = shared.config;
    let target = class.endpoint.url.clone();
    let prefix = format!("t{index}-");
    let meta = &discovery.auth_server;

    let Some(catcher) = shared.catcher.as_ref() else {
        return passive_only(shared, report, &target);
    };
    let ctx = ProbeContext {
        http: shared.http.clone(),
        recorder: Some(shared.recorder.clone()),
        meta,
        catcher,
        budget: &config.budget,
        target: target.clone(),
        resource: Some(
            discovery
                .protected_resource
                .as_ref()
                .map(|p| p.resource.clone())
                .unwrap_or_else(|| target.clone()),
        ),
        scope: config.scope.clone(),
        probe_prefix: prefix.clone(),
        malicious_redirect: config.malicious_redirect.clone(),
    };

    let client = if config.budget.dry_run {
        None
    } else if meta.registration_endpoint.is_some() {
        let redirect = catcher.url_for(&format!("{prefix}client"));
        match register_client(&ctx.client_for("register"), meta, std::slice::from_ref(&redirect), "mcp-authscan").await {
            Ok(reg) => Some(ScannerClient {
                registration: reg,
                redirect_uri: redirect,
            }),
            Err(e) => {
                report.errors.push(format!("scanner client registration failed: {e}"));
                None
            }
        }
    } else {
        report
            .errors
            .push("no registration endpoint; probes needing a client are inconclusive".into());
        None
    };

    let mut replay = None;
    let capture: Vec<HttpExchange> = match &shared.capture {
        Some(c) => c.clone(),
        None => {
            if let Some(c) = &client {
                let flow = own_flow(&ctx, c, "drive").await;
                report.errors.extend(flow.note);
                replay = flow.token;
            }
            let tag = ctx.tag("drive");
            shared
                .recorder
                .snapshot()
                .into_iter()
                .filter(|e| e.session_tag == tag)
                .collect()
        }
    };
    let (mut findings, chains) = analyse(&mut report, &capture, &target, shared.capture.is_some());

    if !config.budget.dry_run && replay.is_none() {
        if let Some(c) = &client {
            let flow = own_flow(&ctx, c, "f9-seed").await;
            report.errors.extend(flow.note);
            replay = flow.token;
        }
    }

    let passive_f5 = take(&mut findings, FlawId::F5);
    findings.push(probe_f1_malicious_dcr(&ctx).await);
    findings.push(probe_f2_blind_client_trust(&ctx, client.as_ref()).await);
    findings.push(probe_f4_nested_pollution(&ctx, best_chain(&chains), &capture).await);
    let active_f5 = probe_f5_downgrade(&ctx, client.as_ref()).await;
    findings.extend(merge_f5(passive_f5, Some(active_f5)));
    findings.push(probe_f7_open_redirect(&ctx, client.as_ref()).await);
    findings.push(probe_f9_code_replay(&ctx, replay.as_ref()).await);
    if config.mode == ScanMode::Full {
        let (f6, bundle) = assist_f6_consent(&ctx, client.as_ref(), &config.consent).await;
        findings.push(f6);
        report.consent_bundle = bundle;
    }
    findings.sort_by_key(|f| f.flaw);
    report.findings = findings;
    report
}

fn take(findings: &mut Vec<Finding>, flaw: FlawId) -> Option<Finding> {
    let i = findings.iter().position(|f| f.flaw == flaw)?;
    Some(findings.remove(i))
}

fn passive_only(shared: &Shared<'_>, mut report: TargetReport, target: &str) -> TargetReport {
    let capture = shared.capture.clone().unwrap_or_default();
    let (mut findings, _) = analyse(&mut report, &capture, target, true);
    findings.sort_by_key(|f| f.flaw);
    report.findings = findings;
    report
}

/// Reconstruction plus passive checks over one capture.
fn analyse(
    report: &mut TargetReport,
    capture: &[HttpExchange],
    target: &str,
    external: bool,
) -> (Vec<Finding>, Vec<DelegatedChain>) {
    let classifier = Url::parse(target)
        .map(|u| LayerClassifier::for_target(&u))
        .unwrap_or_else(|_| LayerClassifier::unscoped());
    let traffic = identify_traffic(capture, &classifier);
    let rec = reconstruct(&traffic.items);
    let chains = link_delegated(&rec.lifecycles);
    report.lifecycles = rec.lifecycles.iter().map(LifecycleSummary::from).collect();
    report.chains = chains.iter().map(ChainSummary::from).collect();

    let mut findings = Vec::new();
    let f3: Vec<Finding> = chains.iter().map(|c| check_f3_layer_inconsistency(c, target)).collect();
    findings.push(detectors::passive_pick(f3).unwrap_or_else(|| {
        Finding::new(
            FlawId::F3,
            EvidenceLevel::Passive,
            Verdict::Inconclusive,
            target,
            "no authorization flow observed",
        )
    }));
    findings.push(
        detectors::passive_f5(&rec.lifecycles, target).unwrap_or_else(|| {
            Finding::new(
                FlawId::F5,
                EvidenceLevel::Passive,
                Verdict::Inconclusive,
                target,
                "no client-facing authorization request observed",
            )
        }),
    );
    // the scanner's own state says nothing about the server; only upstream
    // flows count unless the capture came from someone else's client
    let f8_input: Vec<_> = rec
        .lifecycles
        .iter()
        .filter(|l| external || l.layer == Layer::L2UpstreamDelegated)
        .cloned()
        .collect();
    findings.push(check_f8_weak_state(&f8_input, target));
    (findings, chains)
}
