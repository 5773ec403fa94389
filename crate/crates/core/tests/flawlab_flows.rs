use mcp_authscan::flawlab::{
    scripted_session, spawn_lab, BridgeEncoding, FlawLabConfig, RouteKind, Script,
};
use mcp_authscan::oauth::AgentOutcome;
use mcp_authscan::FlawId;

#[tokio::test]
async fn secure_lab_issues_a_token() {
    let lab = spawn_lab(FlawLabConfig::default().seed(1)).await.unwrap();
    let s = scripted_session(&lab, Script::Single, 7).await.unwrap();
    let run = &s.runs[0];
    assert!(run.agent.consent_submitted);
    assert!(run.token.as_ref().unwrap().is_issued(), "{:?}", run);
    assert!(lab.request_log().iter().any(|r| r.kind == RouteKind::Token));
}

#[tokio::test]
async fn delegated_lab_round_trips_both_bridges() {
    for bridge in [BridgeEncoding::OpaqueMap, BridgeEncoding::SignedNested] {
        let mut cfg = FlawLabConfig::default().delegated(true);
        cfg.bridge_encoding = bridge;
        let lab = spawn_lab(cfg).await.unwrap();
        let s = scripted_session(&lab, Script::Interleaved, 3).await.unwrap();
        for run in &s.runs {
            assert!(run.token.as_ref().unwrap().is_issued(), "{bridge:?} {:?}", run.agent);
        }
        let upstream_tokens = lab
            .request_log()
            .iter()
            .filter(|r| r.kind == RouteKind::UpstreamToken)
            .count();
        assert_eq!(upstream_tokens, 2);
    }
}

#[tokio::test]
async fn nested_context_and_weak_state_flows_complete() {
    for flaws in [vec![FlawId::F4], vec![FlawId::F8], vec![FlawId::F3], vec![FlawId::F5]] {
        let lab = spawn_lab(FlawLabConfig::with_flaws(flaws.clone())).await.unwrap();
        let s = scripted_session(&lab, Script::Single, 3).await.unwrap();
        let run = &s.runs[0];
        assert!(
            matches!(run.agent.outcome, AgentOutcome::Callback { .. }),
            "{flaws:?} {:?}",
            run.agent.outcome
        );
        assert!(run.token.as_ref().unwrap().is_issued(), "{flaws:?}");
    }
}

#[tokio::test]
async fn delegated_captures_link_both_layers() {
    use mcp_authscan::capture::{identify_traffic, Layer, LayerClassifier};
    use mcp_authscan::lifecycle::{link_delegated, reconstruct, Binding, LinkBasis};
    for flaws in [vec![FlawId::F4], vec![], vec![FlawId::F8]] {
        let lab = spawn_lab(FlawLabConfig::with_flaws(flaws.clone()).delegated(true)).await.unwrap();
        let s = scripted_session(&lab, Script::Single, 3).await.unwrap();
        let cls = LayerClassifier::for_target(&url::Url::parse(&lab.mcp_url).unwrap());
        let r = reconstruct(&identify_traffic(&s.exchanges, &cls).items);
        let chains = link_delegated(&r.lifecycles);
        assert_eq!(chains.len(), 1, "{flaws:?}");
        let chain = &chains[0];
        let l2 = chain.l2.as_ref().expect("upstream flow linked");
        assert_eq!(chain.l1.layer, Layer::L1LocalClient);
        assert_eq!(l2.layer, Layer::L2UpstreamDelegated);
        assert!(chain.l1.is_complete(), "{flaws:?}");
        // the upstream code is redeemed server to server, out of the client's view
        assert!(l2.auth_request.is_some() && l2.callback.is_some() && l2.token_exchange.is_none());
        match flaws.first() {
            Some(FlawId::F4) => {
                assert_eq!(chain.link_basis, Some(LinkBasis::NestedState));
                let bridge = chain.bridge.as_ref().unwrap();
                assert_eq!(bridge.nested_redirect_uri.as_deref(), chain.l1.redirect_uri());
            }
            Some(_) => {
                assert_eq!(l2.state(), None);
                assert_eq!(l2.binding, Some(Binding::ByOrder));
                assert_eq!(chain.link_basis, Some(LinkBasis::TemporalContainment));
            }
            None => {
                assert!(chain.bridge.is_none());
                assert_eq!(chain.link_basis, Some(LinkBasis::TemporalContainment));
            }
        }
    }
}
