//! Scan orchestration and report rendering.

mod scan;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::capture::Layer;
use crate::detectors::{Finding, TestLinkBundle, Verdict};
use crate::lifecycle::{Binding, DelegatedChain, Lifecycle, LinkBasis, Phase};
use crate::mcp_probe::{AuthStatus, CandidateOutcome, McpEndpoint};
use crate::taxonomy::{Category, FlawId};

pub use scan::{scan, CaptureSource, ScanConfig, ScanError, ScanMode};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleSummary {
    pub id: usize,
    pub layer: Layer,
    pub session_tag: String,
    pub binding: Option<Binding>,
    pub phases: BTreeSet<Phase>,
    pub complete: bool,
    pub redirect_uri: Option<String>,
    pub state_present: bool,
    pub pkce_method: Option<String>,
    pub duplicate_state: bool,
    pub exchange_refs: Vec<u64>,
}

impl From<&Lifecycle> for LifecycleSummary {
    fn from(lc: &Lifecycle) -> Self {
        let auth = lc.auth_request.as_ref();
        Self {
            id: lc.id,
            layer: lc.layer,
            session_tag: lc.session_tag.clone(),
            binding: lc.binding,
            phases: lc.phase_coverage.clone(),
            complete: lc.is_complete(),
            redirect_uri: lc.redirect_uri().map(str::to_string),
            state_present: lc.state().is_some(),
            pkce_method: auth.and_then(|a| {
                a.code_challenge
                    .as_ref()
                    .map(|_| a.code_challenge_method.clone().unwrap_or_else(|| "plain".into()))
            }),
            duplicate_state: lc.duplicate_state,
            exchange_refs: lc.exchange_refs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub l1: usize,
    pub l2: Option<usize>,
    pub bridge: bool,
    pub nested_redirect_uri: Option<String>,
    pub link_basis: Option<LinkBasis>,
    pub ambiguous: bool,
}

impl From<&DelegatedChain> for ChainSummary {
    fn from(c: &DelegatedChain) -> Self {
        Self {
            l1: c.l1.id,
            l2: c.l2.as_ref().map(|l| l.id),
            bridge: c.bridge.is_some(),
            nested_redirect_uri: c.bridge.as_ref().and_then(|b| b.nested_redirect_uri.clone()),
            link_basis: c.link_basis,
            ambiguous: c.ambiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetReport {
    pub url: String,
    pub source_label: String,
    pub outcome: CandidateOutcome,
    pub endpoint: Option<McpEndpoint>,
    pub auth_status: Option<AuthStatus>,
    pub findings: Vec<Finding>,
    pub lifecycles: Vec<LifecycleSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chains: Vec<ChainSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_bundle: Option<TestLinkBundle>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl TargetReport {
    pub fn reachable(&self) -> bool {
        matches!(self.outcome, CandidateOutcome::ValidMcp | CandidateOutcome::AuthChallenge)
    }

    pub fn finding(&self, flaw: FlawId) -> Option<&Finding> {
        self.findings.iter().find(|f| f.flaw == flaw)
    }

    pub fn vulnerable_flaws(&self) -> BTreeSet<FlawId> {
        self.findings
            .iter()
            .filter(|f| f.is_vulnerable())
            .map(|f| f.flaw)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub vulnerable: usize,
    pub secure: usize,
    pub inconclusive: usize,
    pub needs_human: usize,
}

impl VerdictCounts {
    fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Vulnerable => self.vulnerable += 1,
            Verdict::Secure => self.secure += 1,
            Verdict::Inconclusive => self.inconclusive += 1,
            Verdict::NeedsHuman => self.needs_human += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub targets: usize,
    pub reachable: usize,
    pub oauth: usize,
    /// Targets with at least one vulnerable finding.
    pub affected_targets: usize,
    pub per_flaw: BTreeMap<FlawId, VerdictCounts>,
    /// Targets with at least one vulnerable finding in the category.
    pub per_category: BTreeMap<Category, usize>,
}

impl Totals {
    pub fn compute(targets: &[TargetReport]) -> Self {
        let mut per_flaw: BTreeMap<FlawId, VerdictCounts> =
            FlawId::ALL.iter().map(|f| (*f, VerdictCounts::default())).collect();
        let mut per_category: BTreeMap<Category, usize> =
            Category::ALL.iter().map(|c| (*c, 0)).collect();
        for t in targets {
            for f in &t.findings {
                per_flaw.entry(f.flaw).or_default().add(f.verdict);
            }
            let cats: BTreeSet<Category> = t.vulnerable_flaws().iter().map(|f| f.category()).collect();
            for c in cats {
                *per_category.entry(c).or_default() += 1;
            }
        }
        Self {
            targets: targets.len(),
            reachable: targets.iter().filter(|t| t.reachable()).count(),
            oauth: targets
                .iter()
                .filter(|t| t.auth_status == Some(AuthStatus::Oauth))
                .count(),
            affected_targets: targets.iter().filter(|t| !t.vulnerable_flaws().is_empty()).count(),
            per_flaw,
            per_category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub mode: ScanMode,
    pub targets: Vec<TargetReport>,
    pub totals: Totals,
}

impl Report {
    pub fn new(mode: ScanMode, started_at: DateTime<Utc>, targets: Vec<TargetReport>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            started_at,
            finished_at: Utc::now(),
            mode,
            totals: Totals::compute(&targets),
            targets,
        }
    }

    pub fn exit_status(&self) -> ExitStatus {
        if self.totals.reachable == 0 {
            ExitStatus::Error
        } else if self.targets.iter().any(|t| !t.vulnerable_flaws().is_empty()) {
            ExitStatus::Findings
        } else {
            ExitStatus::Clean
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Clean = 0,
    Findings = 1,
    Error = 2,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Markdown,
}

impl ReportFormat {
    /// `.md` and `.markdown` select markdown; anything else is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("md" | "markdown") => ReportFormat::Markdown,
            _ => ReportFormat::Json,
        }
    }
}

pub fn render_report(report: &Report, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Markdown => render_markdown(report).into_bytes(),
    }
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Vulnerable => "VULNERABLE",
        Verdict::Secure => "secure",
        Verdict::Inconclusive => "inconclusive",
        Verdict::NeedsHuman => "needs human review",
    }
}

fn render_markdown(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# MCP authorization scan\n");
    let _ = writeln!(s, "- Tool version: {}", r.tool_version);
    let _ = writeln!(s, "- Mode: {}", r.mode.as_str());
    let _ = writeln!(s, "- Started: {}", r.started_at.to_rfc3339());
    let _ = writeln!(s, "- Finished: {}", r.finished_at.to_rfc3339());
    let t = &r.totals;
    let _ = writeln!(
        s,
        "- Targets: {} ({} reachable, {} OAuth-protected, {} with findings)\n",
        t.targets, t.reachable, t.oauth, t.affected_targets
    );

    let _ = writeln!(s, "## Summary\n");
    let _ = writeln!(s, "| Category | Flaw | Vulnerable | Secure | Inconclusive | Needs human |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for c in Category::ALL {
        for f in c.flaws() {
            let n = t.per_flaw.get(&f).copied().unwrap_or_default();
            let _ = writeln!(
                s,
                "| {c} {} | {f} {} | {} | {} | {} | {} |",
                c.name(),
                f.name(),
                n.vulnerable,
                n.secure,
                n.inconclusive,
                n.needs_human
            );
        }
    }

    for target in &r.targets {
        let _ = writeln!(s, "\n## {} ({})\n", target.url, target.source_label);
        let auth = target
            .auth_status
            .map(|a| format!("{a:?}"))
            .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(s, "- Outcome: {:?}", target.outcome);
        let _ = writeln!(s, "- Authentication: {auth}");
        if let Some(ep) = &target.endpoint {
            let _ = writeln!(
                s,
                "- Transport: {:?}, protocol {}",
                ep.transport,
                ep.protocol_version.as_deref().unwrap_or("unknown")
            );
        }
        if !target.lifecycles.is_empty() {
            let complete = target.lifecycles.iter().filter(|l| l.complete).count();
            let _ = writeln!(
                s,
                "- Lifecycles: {} ({complete} complete), delegated chains: {}",
                target.lifecycles.len(),
                target.chains.iter().filter(|c| c.l2.is_some()).count()
            );
        }
        for e in &target.errors {
            let _ = writeln!(s, "- Error: {e}");
        }
        for c in Category::ALL {
            let fs: Vec<&Finding> = target.findings.iter().filter(|f| f.category == c).collect();
            if fs.is_empty() {
                continue;
            }
            let _ = writeln!(s, "\n### {c} {}\n", c.name());
            for f in fs {
                let prov = if f.provisional { ", provisional" } else { "" };
                let _ = writeln!(
                    s,
                    "- **{} {}**: {} ({} evidence{prov}). {}",
                    f.flaw,
                    f.flaw.name(),
                    verdict_label(f.verdict),
                    f.evidence_level,
                    f.detail
                );
                for sub in &f.sub_results {
                    let _ = writeln!(s, "  - {}: {} ({})", sub.variant, verdict_label(sub.verdict), sub.detail);
                }
                if !f.evidence.exchange_refs.is_empty() {
                    let refs: Vec<String> = f.evidence.exchange_refs.iter().map(u64::to_string).collect();
                    let _ = writeln!(s, "  - Exchanges: {}", refs.join(", "));
                }
            }
        }
    }
    s
}

/// Writes the rendered report through a temporary file in the same directory.
pub fn write_report(report: &Report, path: &Path, format: ReportFormat) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&render_report(report, format))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::EvidenceLevel;

    fn target(findings: Vec<Finding>) -> TargetReport {
        TargetReport {
            url: "http://127.0.0.1:1/mcp".into(),
            source_label: "t".into(),
            outcome: CandidateOutcome::AuthChallenge,
            endpoint: None,
            auth_status: Some(AuthStatus::Oauth),
            findings,
            lifecycles: vec![],
            chains: vec![],
            consent_bundle: None,
            errors: vec![],
        }
    }

    #[test]
    fn empty_report_has_zero_counts_and_error_exit() {
        let r = Report::new(ScanMode::Full, Utc::now(), vec![]);
        assert_eq!(r.totals.targets, 0);
        assert!(r.totals.per_flaw.values().all(|c| *c == VerdictCounts::default()));
        assert_eq!(r.exit_status(), ExitStatus::Error);
        let back: Report = serde_json::from_slice(&render_report(&r, ReportFormat::Json)).unwrap();
        assert_eq!(back, r);
        assert!(String::from_utf8(render_report(&r, ReportFormat::Markdown)).unwrap().contains("| C1 "));
    }

    #[test]
    fn exit_codes_follow_findings() {
        let clean = Finding::new(FlawId::F2, EvidenceLevel::Active, Verdict::Secure, "t", "");
        let bad = Finding::new(FlawId::F9, EvidenceLevel::Active, Verdict::Vulnerable, "t", "");
        let r = Report::new(ScanMode::Full, Utc::now(), vec![target(vec![clean.clone()])]);
        assert_eq!(r.exit_status(), ExitStatus::Clean);
        let r = Report::new(ScanMode::Full, Utc::now(), vec![target(vec![clean, bad])]);
        assert_eq!(r.exit_status().code(), 1);
        assert_eq!(r.totals.per_category[&Category::C4], 1);
        assert_eq!(r.totals.per_flaw[&FlawId::F9].vulnerable, 1);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        std::fs::write(&path, "old").unwrap();
        let r = Report::new(ScanMode::PassiveOnly, Utc::now(), vec![]);
        write_report(&r, &path, ReportFormat::Json).unwrap();
        let back: Report = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(ReportFormat::from_path(Path::new("x.md")), ReportFormat::Markdown);
    }
}
