use mcp_authscan::flawlab::fixtures::{spawn_fixture, Fixture};
use mcp_authscan::flawlab::{spawn_lab, AuthMode, FlawLabConfig};
use mcp_authscan::http::{HttpClient, HttpConfig};
use mcp_authscan::mcp_probe::{
    parse_target_file, validate_candidates, AuthStatus, CandidateEndpoint, CandidateOutcome,
    JsonLinesSink, MemorySink, ProbeOptions, Transport,
};

fn client() -> HttpClient {
    HttpClient::new(HttpConfig::unthrottled())
}

fn unused_port() -> u16 {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

#[tokio::test]
async fn fixtures_are_classified_like_a_careful_human_would() {
    let mut handles = Vec::new();
    for kind in Fixture::ALL {
        handles.push(spawn_fixture(kind).await.unwrap());
    }
    let candidates: Vec<_> = handles
        .iter()
        .map(|h| CandidateEndpoint::new(&h.url, format!("{:?}", h.kind)).unwrap())
        .collect();
    let sink = MemorySink::default();
    let v = validate_candidates(&client(), &candidates, 4, &ProbeOptions::default(), &sink).await;

    assert_eq!(v.records.len(), Fixture::ALL.len());
    assert_eq!(sink.records().len(), Fixture::ALL.len());
    for (h, rec) in handles.iter().zip(&v.records) {
        let accepted = matches!(rec.outcome, CandidateOutcome::ValidMcp | CandidateOutcome::AuthChallenge);
        assert_eq!(accepted, h.kind.is_mcp(), "{:?}: {rec:?}", h.kind);
        match h.kind {
            Fixture::SseMcp => {
                assert_eq!(rec.transport, Some(Transport::HttpSse));
                assert_eq!(rec.auth_status, Some(AuthStatus::None));
            }
            Fixture::OidcOnly => {
                assert_eq!(rec.outcome, CandidateOutcome::AuthChallenge);
                assert_eq!(rec.auth_status, Some(AuthStatus::Oauth));
                assert!(rec.evidence.www_authenticate.is_some());
            }
            Fixture::NotFound => assert_eq!(rec.evidence.http_status, Some(404)),
            _ => {}
        }
    }
    assert_eq!(v.endpoints.len(), Fixture::ALL.iter().filter(|f| f.is_mcp()).count());

    let oidc = v
        .classifications
        .iter()
        .find(|c| c.endpoint.auth_status == AuthStatus::Oauth)
        .unwrap();
    let d = oidc.discovery.as_ref().unwrap();
    assert!(d.attempted.iter().any(|u| u.contains("openid-configuration")));

    for h in handles {
        h.shutdown().await;
    }
}

#[tokio::test]
async fn duplicates_and_dead_ports_are_reported_in_input_order() {
    let lab = spawn_lab(FlawLabConfig::default()).await.unwrap();
    let dead = format!("http://127.0.0.1:{}/mcp", unused_port());
    let text = format!(
        "# targets\n{mcp},lab\n\n{mcp}?again=1,lab again\n{dead}\n",
        mcp = lab.mcp_url
    );
    let candidates = parse_target_file(&text).unwrap();
    assert_eq!(candidates.len(), 3);
    assert_eq!(candidates[2].source_label, "line 5");

    let sink = JsonLinesSink::new(Vec::new());
    let v = validate_candidates(&client(), &candidates, 2, &ProbeOptions::default(), &sink).await;
    let outcomes: Vec<_> = v.records.iter().map(|r| r.outcome).collect();
    assert_eq!(
        outcomes,
        [CandidateOutcome::AuthChallenge, CandidateOutcome::Duplicate, CandidateOutcome::Unreachable]
    );
    assert_eq!(v.records[1].evidence.duplicate_of.as_deref(), Some(lab.mcp_url.as_str()));
    assert!(v.records[2].evidence.error.is_some());

    let written = String::from_utf8(sink.into_inner()).unwrap();
    let lines: Vec<serde_json::Value> = written
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["url"].is_string() && l["outcome"].is_string()));
}

#[tokio::test]
async fn auth_modes_of_the_lab_are_distinguished() {
    for (mode, want) in [
        (AuthMode::None, AuthStatus::None),
        (AuthMode::StaticToken, AuthStatus::StaticToken),
        (AuthMode::Oauth, AuthStatus::Oauth),
    ] {
        let cfg = FlawLabConfig {
            auth_mode: mode,
            ..FlawLabConfig::default()
        };
        let lab = spawn_lab(cfg).await.unwrap();
        let c = CandidateEndpoint::new(&lab.mcp_url, "lab").unwrap();
        let v = validate_candidates(&client(), &[c], 1, &ProbeOptions::default(), &MemorySink::default()).await;
        assert_eq!(v.records[0].auth_status, Some(want), "{mode:?}");
        assert_eq!(v.endpoints.len(), 1);
    }
}

#[test]
fn malformed_target_lines_name_their_line() {
    let err = parse_target_file("http://ok.example/mcp\nftp://nope\n").unwrap_err();
    assert!(err.to_string().starts_with("line 2"), "{err}");
}
