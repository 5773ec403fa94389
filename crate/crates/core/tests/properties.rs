use chrono::{TimeZone, Utc};
use mcp_authscan::capture::parse_query;
use mcp_authscan::detectors::{aggregate, state_entropy_bits, Finding, SubResult, Verdict};
use mcp_authscan::lifecycle::{decode_nested_state, encode_steps, EncodingStep, StateAnalysis};
use mcp_authscan::mcp_probe::{AuthStatus, CandidateOutcome};
use mcp_authscan::oauth::{generate_pkce_with, verify_pkce, AuthorizationRequest, PkceMethod, PkcePair};
use mcp_authscan::report::{render_report, Report, ReportFormat, ScanMode, TargetReport, Totals};
use mcp_authscan::taxonomy::EvidenceLevel;
use mcp_authscan::FlawId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Map, Value};

const VERIFIER_LIKE: &str = "[A-Za-z0-9._~-]{0,140}";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn generated_pkce_pairs_verify(seed in any::<u64>(), other in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let pair = generate_pkce_with(PkceMethod::S256, &mut rng);
        prop_assert_eq!(pair.challenge.len(), 43);
        prop_assert!(pair.verifies(&pair.verifier));
        prop_assert!(verify_pkce(&pair.challenge, PkceMethod::S256, &pair.verifier));
        let rebuilt = PkcePair::from_verifier(&pair.verifier, PkceMethod::S256).unwrap();
        prop_assert_eq!(&rebuilt, &pair);
        if other != seed {
            let mut rng = ChaCha20Rng::seed_from_u64(other);
            let stranger = generate_pkce_with(PkceMethod::S256, &mut rng);
            prop_assert!(!pair.verifies(&stranger.verifier));
        }
    }
}

proptest! {
    #[test]
    fn verifier_shape_is_enforced(v in VERIFIER_LIKE) {
        let ok = PkcePair::from_verifier(&v, PkceMethod::Plain).is_ok();
        prop_assert_eq!(ok, (43..=128).contains(&v.len()));
    }

    #[test]
    fn authorization_urls_round_trip(
        client in "\\PC{1,20}",
        redirect in "\\PC{0,40}",
        state in proptest::option::of("\\PC{0,30}"),
        scope in proptest::option::of("[a-z:]{1,10}( [a-z:]{1,10}){0,3}"),
        extra in proptest::collection::vec(("x_[a-z]{1,6}", "\\PC{0,12}"), 0..3),
    ) {
        let mut req = AuthorizationRequest::new("https://as.example/authorize", client).with_redirect_uri(redirect);
        req.state = state;
        req.scope = scope;
        req.extra_params = extra;
        let back = AuthorizationRequest::parse(&req.to_url());
        prop_assert_eq!(back, req);
    }

    #[test]
    fn query_parsing_inverts_form_encoding(pairs in proptest::collection::vec(("\\PC{1,10}", "\\PC{0,20}"), 0..6)) {
        let encoded = url::form_urlencoded::Serializer::new(String::new()).extend_pairs(&pairs).finish();
        let parsed: Vec<(String, String)> = parse_query(&encoded).into_iter().map(|p| {
            assert!(!p.malformed);
            (p.key, p.value)
        }).collect();
        prop_assert_eq!(parsed, pairs);
    }

    #[test]
    fn nested_states_reencode_byte_identically(
        tx in "[a-z0-9]{1,12}",
        port in 1024u16..,
        path in "[a-z/]{0,12}",
        note in "\\PC{0,16}",
        depth in 1usize..=3,
        chain in 0usize..4,
    ) {
        let mut inner = Map::new();
        inner.insert("redirect_uri".into(), json!(format!("http://127.0.0.1:{port}/{path}")));
        inner.insert("note".into(), json!(note));
        let mut ctx = inner;
        for i in 1..depth {
            let mut outer = Map::new();
            outer.insert("tx".into(), json!(format!("{tx}{i}")));
            outer.insert("ctx".into(), Value::Object(ctx));
            ctx = outer;
        }
        let json = serde_json::to_string(&Value::Object(ctx)).unwrap();
        let steps: &[EncodingStep] = match chain {
            0 => &[EncodingStep::Base64url { padded: false }, EncodingStep::Json],
            1 => &[EncodingStep::Base64url { padded: true }, EncodingStep::Json],
            2 => &[EncodingStep::UrlencodeStrict, EncodingStep::Json],
            _ => &[EncodingStep::UrlencodeStrict, EncodingStep::Base64url { padded: false }, EncodingStep::Json],
        };
        let state = encode_steps(steps, &json);
        let StateAnalysis::Nested(found) = decode_nested_state(&state) else {
            return Err(TestCaseError::fail(format!("not decoded: {state}")));
        };
        prop_assert_eq!(found.encode(), state);
        let tampered = found.with_redirect("http://attacker.invalid/cb").unwrap();
        let again = decode_nested_state(&tampered).into_context().unwrap();
        prop_assert_eq!(again.nested_redirect_uri.as_deref(), Some("http://attacker.invalid/cb"));
        prop_assert_eq!(again.steps.len(), found.steps.len());
        prop_assert_eq!(again.encode(), tampered);
    }

    #[test]
    fn entropy_estimate_is_bounded(s in "\\PC{0,64}") {
        let bits = state_entropy_bits(&s);
        prop_assert!(bits >= 0.0);
        prop_assert!(bits <= s.chars().count() as f64 * 95f64.log2() + 1e-9);
    }

    #[test]
    fn any_vulnerable_sub_result_wins(verdicts in proptest::collection::vec(0u8..4, 0..6)) {
        let subs: Vec<SubResult> = verdicts.iter().map(|v| SubResult {
            variant: "v".into(),
            verdict: [Verdict::Vulnerable, Verdict::Secure, Verdict::Inconclusive, Verdict::NeedsHuman][*v as usize],
            detail: String::new(),
        }).collect();
        let agg = aggregate(&subs);
        prop_assert_eq!(agg == Verdict::Vulnerable, verdicts.contains(&0));
        prop_assert_eq!(agg == Verdict::Secure, !verdicts.is_empty() && verdicts.iter().all(|v| *v == 1));
    }

    #[test]
    fn totals_are_recomputable(targets in proptest::collection::vec(proptest::collection::vec((0usize..9, 0u8..4), 0..9), 0..5)) {
        let targets: Vec<TargetReport> = targets.into_iter().enumerate().map(|(i, fs)| {
            let findings = fs.into_iter().map(|(f, v)| {
                let flaw = FlawId::ALL[f];
                let level = [EvidenceLevel::Passive, EvidenceLevel::Active, EvidenceLevel::UiAssisted]
                    .into_iter().find(|l| flaw.permits(*l)).unwrap();
                let verdict = [Verdict::Vulnerable, Verdict::Secure, Verdict::Inconclusive, Verdict::NeedsHuman][v as usize];
                Finding::new(flaw, level, verdict, "t", "d")
            }).collect();
            TargetReport {
                url: format!("http://127.0.0.1:{}/mcp", 1000 + i),
                source_label: format!("t{i}"),
                outcome: CandidateOutcome::AuthChallenge,
                endpoint: None,
                auth_status: Some(AuthStatus::Oauth),
                findings,
                lifecycles: vec![],
                chains: vec![],
                consent_bundle: None,
                errors: vec![],
            }
        }).collect();
        let mut report = Report::new(ScanMode::Full, Utc.timestamp_opt(0, 0).unwrap(), targets);
        report.finished_at = Utc.timestamp_opt(1, 0).unwrap();
        let bytes = render_report(&report, ReportFormat::Json);
        let back: Report = serde_json::from_slice(&bytes).unwrap();
        prop_assert_eq!(&back, &report);
        prop_assert_eq!(render_report(&back, ReportFormat::Json), bytes);
        prop_assert_eq!(Totals::compute(&back.targets), back.totals.clone());
        let findings: usize = back.targets.iter().map(|t| t.findings.len()).sum();
        let counted: usize = back.totals.per_flaw.values()
            .map(|c| c.vulnerable + c.secure + c.inconclusive + c.needs_human).sum();
        prop_assert_eq!(findings, counted);
        prop_assert!(back.totals.per_category.values().all(|n| *n <= back.totals.targets));
    }
}
