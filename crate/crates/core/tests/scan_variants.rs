use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;

use chrono::{TimeZone, Utc};
use mcp_authscan::detectors::{Finding, SubResult, Verdict};
use mcp_authscan::flawlab::{spawn_lab, BridgeEncoding, F5Variant, F7Variant, F8Variant, FlawLabConfig, RouteKind};
use mcp_authscan::http::HttpConfig;
use mcp_authscan::mcp_probe::{AuthStatus, CandidateEndpoint, CandidateOutcome};
use mcp_authscan::report::{
    render_report, scan, ExitStatus, Report, ReportFormat, ScanConfig, ScanError, ScanMode, TargetReport,
};
use mcp_authscan::{Category, EvidenceLevel, FlawId};

async fn scan_cfg(cfg: FlawLabConfig, tweak: impl FnOnce(&mut ScanConfig)) -> (Report, Vec<RouteKind>) {
    let lab = spawn_lab(cfg).await.unwrap();
    let mut sc = ScanConfig::new(vec![CandidateEndpoint::new(&lab.mcp_url, "lab").unwrap()]);
    sc.http = HttpConfig::unthrottled();
    tweak(&mut sc);
    let report = scan(&sc).await.unwrap();
    let kinds = lab.request_log().iter().map(|r| r.kind).collect();
    lab.shutdown().await;
    (report, kinds)
}

fn verdict(r: &Report, f: FlawId) -> Verdict {
    r.targets[0].finding(f).map(|f| f.verdict).unwrap_or_else(|| panic!("{f} missing"))
}

#[tokio::test]
async fn lab_variants_are_detected() {
    let mut plain = FlawLabConfig::with_flaws([FlawId::F5]);
    plain.variants.f5 = F5Variant::Plain;
    let (r, _) = scan_cfg(plain, |_| {}).await;
    assert_eq!(r.targets[0].vulnerable_flaws(), BTreeSet::from([FlawId::F5]));
    let f5 = r.targets[0].finding(FlawId::F5).unwrap();
    assert!(f5.sub_results.iter().any(|s| s.variant.contains("plain") && s.verdict == Verdict::Vulnerable), "{f5:?}");

    let mut weak = FlawLabConfig::with_flaws([FlawId::F7]);
    weak.variants.f7 = F7Variant::Weak;
    let (r, _) = scan_cfg(weak, |_| {}).await;
    assert_eq!(r.targets[0].vulnerable_flaws(), BTreeSet::from([FlawId::F7]));
    let f7 = r.targets[0].finding(FlawId::F7).unwrap();
    let by_variant = |v: &str| f7.sub_results.iter().find(|s| s.variant == v).map(|s| s.verdict);
    assert_eq!(by_variant("full"), Some(Verdict::Secure), "{f7:?}");
    assert!(
        [by_variant("decimal_ip"), by_variant("subpath")].contains(&Some(Verdict::Vulnerable)),
        "{f7:?}"
    );

    for v in [F8Variant::Fixed, F8Variant::Short] {
        let mut cfg = FlawLabConfig::with_flaws([FlawId::F8]);
        cfg.variants.f8 = v;
        let (r, _) = scan_cfg(cfg, |_| {}).await;
        assert_eq!(r.targets[0].vulnerable_flaws(), BTreeSet::from([FlawId::F8]), "{v:?}");
    }
}

#[tokio::test]
async fn signed_nested_bridge_is_not_reported_as_pollutable() {
    let mut cfg = FlawLabConfig::default().delegated(true);
    cfg.bridge_encoding = BridgeEncoding::SignedNested;
    let (r, _) = scan_cfg(cfg, |_| {}).await;
    assert!(r.targets[0].vulnerable_flaws().is_empty(), "{:?}", r.targets[0].findings);
    assert_ne!(verdict(&r, FlawId::F4), Verdict::Vulnerable);
    assert_eq!(r.targets[0].chains.len(), 1);
}

#[tokio::test]
async fn dry_run_sends_nothing_that_mutates() {
    let all = FlawLabConfig::with_flaws([FlawId::F1, FlawId::F5, FlawId::F7, FlawId::F9]);
    let (r, kinds) = scan_cfg(all, |sc| sc.budget.dry_run = true).await;
    for k in [RouteKind::Registration, RouteKind::Token, RouteKind::Authorize] {
        assert!(!kinds.contains(&k), "{k:?} sent during dry run: {kinds:?}");
    }
    for f in &r.targets[0].findings {
        if f.evidence_level == EvidenceLevel::Active {
            assert_eq!(f.verdict, Verdict::Inconclusive, "{f:?}");
        }
    }
    assert!(r.targets[0].vulnerable_flaws().is_empty());
}

#[tokio::test]
async fn unreachable_targets_yield_error_status() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut sc = ScanConfig::new(vec![CandidateEndpoint::new(&format!("http://127.0.0.1:{port}/mcp"), "dead").unwrap()]);
    sc.http = HttpConfig::unthrottled();
    let r = scan(&sc).await.unwrap();
    assert_eq!(r.targets[0].outcome, CandidateOutcome::Unreachable);
    assert!(r.targets[0].findings.is_empty());
    assert_eq!(r.exit_status(), ExitStatus::Error);
    assert_eq!(ExitStatus::Error.code(), 2);
}

#[tokio::test]
async fn real_reports_round_trip_and_are_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let evidence = dir.path().join("evidence.jsonl");
    let (r, _) = scan_cfg(FlawLabConfig::with_flaws([FlawId::F3, FlawId::F9]), |sc| {
        sc.output = Some((out.clone(), ReportFormat::Json));
        sc.evidence_log = Some(evidence.clone());
    })
    .await;
    assert_eq!(r.targets[0].vulnerable_flaws(), BTreeSet::from([FlawId::F3, FlawId::F9]));
    assert_eq!(r.exit_status(), ExitStatus::Findings);

    let written = std::fs::read(&out).unwrap();
    assert_eq!(written, render_report(&r, ReportFormat::Json));
    let back: Report = serde_json::from_slice(&written).unwrap();
    assert_eq!(back, r);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);

    // every evidence reference points at a recorded exchange
    let recorded = std::fs::read_to_string(&evidence).unwrap().lines().count() as u64;
    for f in &r.targets[0].findings {
        for seq in &f.evidence.exchange_refs {
            assert!(*seq >= 1 && *seq <= recorded, "{}: {seq} of {recorded}", f.flaw);
        }
    }
}

#[tokio::test]
async fn invalid_configurations_are_rejected() {
    assert!(matches!(scan(&ScanConfig::new(vec![])).await, Err(ScanError::NoTargets)));
    let t = vec![CandidateEndpoint::new("http://127.0.0.1:9/mcp", "x").unwrap()];
    let mut sc = ScanConfig::new(t.clone());
    sc.mode = ScanMode::PassiveOnly;
    assert!(matches!(scan(&sc).await, Err(ScanError::Config(_))));
    let mut sc = ScanConfig::new(t);
    sc.budget.max_redirect_hops = 0;
    assert!(matches!(scan(&sc).await, Err(ScanError::Config(_))));
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn mixed_report() -> Report {
    let target = "https://mcp.example/mcp";
    let mut f7 = Finding::new(FlawId::F7, EvidenceLevel::Active, Verdict::Vulnerable, target, "redirect to an unregistered host was honoured");
    f7.sub_results = vec![
        SubResult { variant: "full".into(), verdict: Verdict::Vulnerable, detail: "code delivered".into() },
        SubResult { variant: "subpath".into(), verdict: Verdict::Secure, detail: "rejected".into() },
    ];
    f7.evidence.exchange_refs = vec![4, 5];
    let findings = vec![
        f7,
        Finding::new(FlawId::F3, EvidenceLevel::Passive, Verdict::Secure, target, "one layer"),
        Finding::new(FlawId::F6, EvidenceLevel::UiAssisted, Verdict::NeedsHuman, target, "check the consent page"),
        Finding::new(FlawId::F1, EvidenceLevel::Active, Verdict::Inconclusive, target, "no registration endpoint"),
    ];
    let t = TargetReport {
        url: target.into(),
        source_label: "example".into(),
        outcome: CandidateOutcome::AuthChallenge,
        endpoint: None,
        auth_status: Some(AuthStatus::Oauth),
        findings,
        lifecycles: vec![],
        chains: vec![],
        consent_bundle: None,
        errors: vec!["discovery: issuer mismatch".into()],
    };
    let mut r = Report::new(ScanMode::Full, Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap(), vec![t]);
    r.finished_at = Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 9).unwrap();
    r.tool_version = "test".into();
    r
}

#[test]
fn markdown_matches_golden_file() {
    let r = mixed_report();
    let md = String::from_utf8(render_report(&r, ReportFormat::Markdown)).unwrap();
    let path = fixture("report_mixed.md");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &md).unwrap();
    }
    assert_eq!(md, std::fs::read_to_string(&path).unwrap());

    // category sections follow taxonomy order regardless of finding order
    let pos = |needle: String| md.find(&needle).unwrap_or_else(|| panic!("{needle} missing"));
    let sections = [Category::C1, Category::C2, Category::C3, Category::C4].map(|c| pos(format!("### {c} {}", c.name())));
    assert!(sections.windows(2).all(|w| w[0] < w[1]));
    assert!(pos(format!("**{} ", FlawId::F1)) < pos(format!("**{} ", FlawId::F7)));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcp-authscan"))
}

#[test]
fn cli_rejects_an_empty_target_file() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets.txt");
    std::fs::write(&targets, "# nothing here\n").unwrap();
    let out = cli().args(["scan", "--targets"]).arg(&targets).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[tokio::test]
async fn cli_probe_emits_json_lines() {
    let lab = spawn_lab(FlawLabConfig::default()).await.unwrap();
    let url = lab.mcp_url.clone();
    let out = tokio::task::spawn_blocking(move || cli().args(["probe", "--target", &url]).output().unwrap())
        .await
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rec: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(rec["outcome"], "auth_challenge");
    assert_eq!(rec["auth_status"], "oauth");
}
