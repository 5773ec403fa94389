//! Correlation of OAuth parameter sets into per-flow lifecycles and of
//! first-layer flows with the delegated upstream flows they trigger.

mod nested;

use std::collections::{BTreeSet, HashMap};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::capture::{Classified, Layer, OAuthParamSet, ParamOrigin, ParamRole};

pub use nested::{
    decode_nested_state, encode_steps, Encoding, EncodingStep, IntegrityMarker, NestedContext,
    StateAnalysis, MAX_DECODED_BYTES, MAX_DECODE_DEPTH,
};

/// Window for order-based pairing of stateless callbacks.
pub const BY_ORDER_WINDOW_SECS: i64 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    P1,
    P2,
    P3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    /// Authorization request and callback share a `state` value.
    ByState,
    /// Only the authorization code links callback and token exchange.
    ByCode,
    /// Stateless callback paired with the nearest preceding request in the same session.
    ByOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifecycle {
    pub id: usize,
    pub layer: Layer,
    pub session_tag: String,
    pub auth_request: Option<OAuthParamSet>,
    pub callback: Option<OAuthParamSet>,
    pub token_exchange: Option<OAuthParamSet>,
    /// `None` for a lifecycle holding a single message.
    pub binding: Option<Binding>,
    /// Another flow in the capture used the same `state`; pairing among them is by recency.
    pub duplicate_state: bool,
    pub phase_coverage: BTreeSet<Phase>,
}

impl Lifecycle {
    fn new(id: usize, first: &Classified) -> Self {
        Self {
            id,
            layer: first.layer,
            session_tag: first.params.session_tag.clone(),
            auth_request: None,
            callback: None,
            token_exchange: None,
            binding: None,
            duplicate_state: false,
            phase_coverage: BTreeSet::new(),
        }
    }

    /// State of the flow, from the request or else the callback.
    pub fn state(&self) -> Option<&str> {
        self.auth_request
            .as_ref()
            .and_then(|a| a.state.as_deref())
            .or_else(|| self.callback.as_ref().and_then(|c| c.state.as_deref()))
    }

    pub fn redirect_uri(&self) -> Option<&str> {
        self.auth_request
            .as_ref()
            .and_then(|a| a.redirect_uri.as_deref())
            .or_else(|| self.token_exchange.as_ref().and_then(|t| t.redirect_uri.as_deref()))
    }

    pub fn is_complete(&self) -> bool {
        self.auth_request.is_some() && self.callback.is_some() && self.token_exchange.is_some()
    }

    /// Exchange references of every message, in capture order.
    pub fn exchange_refs(&self) -> Vec<u64> {
        let mut v: Vec<u64> = [&self.auth_request, &self.callback, &self.token_exchange]
            .into_iter()
            .flatten()
            .map(|p| p.exchange_ref)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn first_position(&self) -> (u64, ParamOrigin) {
        [&self.auth_request, &self.callback, &self.token_exchange]
            .into_iter()
            .flatten()
            .map(|p| p.position())
            .min()
            .expect("lifecycle holds at least one message")
    }

    fn refresh_coverage(&mut self) {
        self.phase_coverage.clear();
        if self.auth_request.is_some() {
            self.phase_coverage.extend([Phase::P1, Phase::P2]);
        }
        if self.callback.is_some() {
            self.phase_coverage.insert(Phase::P2);
        }
        if self.token_exchange.is_some() {
            self.phase_coverage.insert(Phase::P3);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub lifecycles: Vec<Lifecycle>,
    /// Parameter sets that are not part of an authorization flow (registration, other).
    pub discarded: usize,
}

/// Greedy correlation over parameter sets in capture order.
///
/// Callbacks bind to the latest unconsumed authorization request with equal
/// `state`; token requests bind to the latest callback carrying the same code
/// and no token exchange yet; stateless callbacks fall back to the nearest
/// preceding unconsumed request of the same session within
/// [`BY_ORDER_WINDOW_SECS`], preferring stateless requests.
pub fn reconstruct(items: &[Classified]) -> Reconstruction {
    let mut order: Vec<&Classified> = items.iter().collect();
    order.sort_by_key(|c| c.params.position());

    let mut out = Reconstruction::default();
    let mut lcs: Vec<Lifecycle> = Vec::new();
    // indices of lifecycles with an auth request and no callback, in creation order
    let mut open_auth: Vec<usize> = Vec::new();
    let mut auth_state_count: HashMap<String, usize> = HashMap::new();
    let mut callback_state_count: HashMap<String, usize> = HashMap::new();

    for item in order {
        let p = &item.params;
        match p.role {
            ParamRole::AuthorizationRequest => {
                if let Some(s) = &p.state {
                    *auth_state_count.entry(s.clone()).or_default() += 1;
                }
                let mut lc = Lifecycle::new(lcs.len(), item);
                lc.auth_request = Some(p.clone());
                open_auth.push(lcs.len());
                lcs.push(lc);
            }
            ParamRole::Callback => {
                if let Some(s) = &p.state {
                    *callback_state_count.entry(s.clone()).or_default() += 1;
                }
                let found = match &p.state {
                    Some(state) => open_auth
                        .iter()
                        .rposition(|&i| lcs[i].auth_request.as_ref().and_then(|a| a.state.as_ref()) == Some(state))
                        .map(|pos| (pos, Binding::ByState)),
                    None => by_order_parent(&lcs, &open_auth, p).map(|pos| (pos, Binding::ByOrder)),
                };
                match found {
                    Some((pos, binding)) => {
                        let idx = open_auth.remove(pos);
                        let lc = &mut lcs[idx];
                        lc.callback = Some(p.clone());
                        lc.binding = Some(binding);
                        if lc.layer == Layer::Unknown {
                            lc.layer = item.layer;
                        }
                    }
                    None => {
                        let mut lc = Lifecycle::new(lcs.len(), item);
                        lc.callback = Some(p.clone());
                        lcs.push(lc);
                    }
                }
            }
            ParamRole::TokenRequest => {
                let parent = p.code.as_ref().and_then(|code| {
                    lcs.iter().rposition(|lc| {
                        lc.token_exchange.is_none()
                            && lc.callback.as_ref().and_then(|c| c.code.as_ref()) == Some(code)
                    })
                });
                match parent {
                    Some(idx) => {
                        let lc = &mut lcs[idx];
                        lc.token_exchange = Some(p.clone());
                        if lc.binding.is_none() {
                            lc.binding = Some(Binding::ByCode);
                        }
                    }
                    None => {
                        let mut lc = Lifecycle::new(lcs.len(), item);
                        lc.token_exchange = Some(p.clone());
                        lcs.push(lc);
                    }
                }
            }
            ParamRole::Registration | ParamRole::Other => out.discarded += 1,
        }
    }

    for lc in &mut lcs {
        lc.refresh_coverage();
        let auth_dup = lc
            .auth_request
            .as_ref()
            .and_then(|a| a.state.as_ref())
            .is_some_and(|s| auth_state_count.get(s).copied().unwrap_or(0) > 1);
        let cb_dup = lc
            .callback
            .as_ref()
            .and_then(|c| c.state.as_ref())
            .is_some_and(|s| {
                callback_state_count.get(s).copied().unwrap_or(0) > 1
                    || auth_state_count.get(s).copied().unwrap_or(0) > 1
            });
        lc.duplicate_state = auth_dup || cb_dup;
    }
    lcs.sort_by_key(|lc| lc.first_position());
    for (i, lc) in lcs.iter_mut().enumerate() {
        lc.id = i;
    }
    out.lifecycles = lcs;
    out
}

fn by_order_parent(lcs: &[Lifecycle], open_auth: &[usize], cb: &OAuthParamSet) -> Option<usize> {
    let window = Duration::seconds(BY_ORDER_WINDOW_SECS);
    let eligible = |pos: &usize| {
        let a = lcs[open_auth[*pos]].auth_request.as_ref().expect("open lifecycles hold a request");
        a.session_tag == cb.session_tag
            && a.position() < cb.position()
            && cb.timestamp - a.timestamp <= window
    };
    let positions: Vec<usize> = (0..open_auth.len()).filter(eligible).collect();
    let stateless = positions.iter().rev().copied().find(|&pos| {
        lcs[open_auth[pos]]
            .auth_request
            .as_ref()
            .is_some_and(|a| a.state.is_none())
    });
    stateless.or_else(|| positions.last().copied())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkBasis {
    /// The upstream state decodes to context naming the first-layer flow.
    NestedState,
    /// The only first-layer flow open at the time of the upstream request.
    TemporalContainment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegatedChain {
    pub l1: Lifecycle,
    pub l2: Option<Lifecycle>,
    pub bridge: Option<NestedContext>,
    /// Several first-layer flows could own the same upstream flow; none was picked.
    pub ambiguous: bool,
    pub link_basis: Option<LinkBasis>,
}

fn contains(l1: &Lifecycle, l2_auth: &OAuthParamSet) -> bool {
    let Some(a1) = &l1.auth_request else { return false };
    if a1.session_tag != l2_auth.session_tag || a1.position() >= l2_auth.position() {
        return false;
    }
    match &l1.callback {
        Some(cb) => l2_auth.position() < cb.position(),
        None => true,
    }
}

fn nested_strength(l1: &Lifecycle, ctx: &NestedContext) -> u8 {
    if l1.state().is_some_and(|s| ctx.references(s)) {
        2
    } else if l1.redirect_uri().is_some_and(|r| {
        ctx.references(r) || ctx.nested_redirect_uri.as_deref() == Some(r)
    }) {
        1
    } else {
        0
    }
}

/// One chain per first-layer lifecycle, with the delegated upstream flow attached where linkable.
pub fn link_delegated(lifecycles: &[Lifecycle]) -> Vec<DelegatedChain> {
    let l1: Vec<&Lifecycle> = lifecycles.iter().filter(|l| l.layer == Layer::L1LocalClient).collect();
    let mut chains: Vec<DelegatedChain> = l1
        .iter()
        .map(|l| DelegatedChain {
            l1: (*l).clone(),
            l2: None,
            bridge: None,
            ambiguous: false,
            link_basis: None,
        })
        .collect();

    for l2 in lifecycles.iter().filter(|l| l.layer == Layer::L2UpstreamDelegated) {
        let Some(l2_auth) = &l2.auth_request else { continue };
        let candidates: Vec<usize> = (0..l1.len()).filter(|&i| contains(l1[i], l2_auth)).collect();
        if candidates.is_empty() {
            continue;
        }
        let bridge = l2_auth
            .state
            .as_deref()
            .and_then(|s| decode_nested_state(s).into_context());

        let (picked, basis) = match &bridge {
            Some(ctx) => {
                let best = candidates.iter().map(|&i| nested_strength(l1[i], ctx)).max().unwrap_or(0);
                if best > 0 {
                    let top: Vec<usize> = candidates
                        .iter()
                        .copied()
                        .filter(|&i| nested_strength(l1[i], ctx) == best)
                        .collect();
                    (top, LinkBasis::NestedState)
                } else {
                    (candidates, LinkBasis::TemporalContainment)
                }
            }
            None => (candidates, LinkBasis::TemporalContainment),
        };
        if let [only] = picked[..] {
            let chain = &mut chains[only];
            if chain.l2.is_none() {
                chain.l2 = Some(l2.clone());
                chain.bridge = bridge;
                chain.link_basis = Some(basis);
            } else {
                chain.ambiguous = true;
            }
        } else {
            for i in picked {
                chains[i].ambiguous = true;
            }
        }
    }
    chains
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn set(seq: u64, role: ParamRole, state: Option<&str>, code: Option<&str>, tag: &str) -> Classified {
        Classified {
            params: OAuthParamSet {
                exchange_ref: seq,
                origin: ParamOrigin::Request,
                role,
                session_tag: tag.into(),
                timestamp: Utc.timestamp_opt(1_700_000_000 + seq as i64, 0).unwrap(),
                endpoint: None,
                redirect_uri: Some("http://127.0.0.1:1/cb".into()),
                client_id: Some("c".into()),
                code_challenge: None,
                code_challenge_method: None,
                state: state.map(str::to_string),
                code: code.map(str::to_string),
                token_endpoint_hit: role == ParamRole::TokenRequest,
                grant_type: None,
                response_type: None,
                scope: None,
                resource: None,
                code_verifier: None,
                error: None,
                malformed: vec![],
            },
            layer: Layer::L1LocalClient,
        }
    }

    use ParamRole::*;

    #[test]
    fn exact_triple() {
        let r = reconstruct(&[
            set(1, AuthorizationRequest, Some("A"), None, "s"),
            set(2, Callback, Some("A"), Some("C"), "s"),
            set(3, TokenRequest, None, Some("C"), "s"),
        ]);
        assert_eq!(r.lifecycles.len(), 1);
        let lc = &r.lifecycles[0];
        assert_eq!(lc.binding, Some(Binding::ByState));
        assert_eq!(lc.phase_coverage, BTreeSet::from([Phase::P1, Phase::P2, Phase::P3]));
        assert!(!lc.duplicate_state);
    }

    #[test]
    fn interleaved_flows_do_not_cross() {
        let r = reconstruct(&[
            set(1, AuthorizationRequest, Some("A"), None, "s"),
            set(2, AuthorizationRequest, Some("B"), None, "s"),
            set(3, Callback, Some("A"), Some("CA"), "s"),
            set(4, Callback, Some("B"), Some("CB"), "s"),
            set(5, TokenRequest, None, Some("CB"), "s"),
            set(6, TokenRequest, None, Some("CA"), "s"),
        ]);
        assert_eq!(r.lifecycles.len(), 2);
        for lc in &r.lifecycles {
            let state = lc.state().unwrap();
            let code = lc.token_exchange.as_ref().unwrap().code.as_deref().unwrap();
            assert_eq!(code, format!("C{state}"));
        }
    }

    #[test]
    fn orphan_callback_and_stateless_fallback() {
        let r = reconstruct(&[set(1, Callback, Some("Z"), Some("C"), "s")]);
        assert_eq!(r.lifecycles.len(), 1);
        assert!(r.lifecycles[0].auth_request.is_none());
        assert_eq!(r.lifecycles[0].binding, None);

        let r = reconstruct(&[
            set(1, AuthorizationRequest, None, None, "s"),
            set(2, Callback, None, Some("C"), "s"),
        ]);
        assert_eq!(r.lifecycles[0].binding, Some(Binding::ByOrder));

        let r = reconstruct(&[
            set(1, AuthorizationRequest, None, None, "s"),
            set(2, Callback, None, Some("C"), "other"),
        ]);
        assert_eq!(r.lifecycles.len(), 2);
    }

    #[test]
    fn duplicate_states_are_flagged() {
        let r = reconstruct(&[
            set(1, AuthorizationRequest, Some("X"), None, "s"),
            set(2, AuthorizationRequest, Some("X"), None, "s"),
            set(3, Callback, Some("X"), Some("C1"), "s"),
            set(4, Callback, Some("X"), Some("C2"), "s"),
            set(5, AuthorizationRequest, Some("Y"), None, "s"),
        ]);
        let flagged: Vec<bool> = r.lifecycles.iter().map(|l| l.duplicate_state).collect();
        assert_eq!(flagged, vec![true, true, false]);
        // latest unconsumed request takes the first callback
        assert_eq!(r.lifecycles[1].callback.as_ref().unwrap().code.as_deref(), Some("C1"));
    }

    #[test]
    fn conservation_counts_discarded() {
        let items = [
            set(1, Registration, None, None, "s"),
            set(2, AuthorizationRequest, Some("A"), None, "s"),
            set(3, Other, None, None, "s"),
        ];
        let r = reconstruct(&items);
        let assigned: usize = r
            .lifecycles
            .iter()
            .map(|l| [&l.auth_request, &l.callback, &l.token_exchange].iter().filter(|x| x.is_some()).count())
            .sum();
        assert_eq!(assigned + r.discarded, items.len());
    }

    #[test]
    fn l2_inside_l1_is_linked() {
        let mut l2_auth = set(2, AuthorizationRequest, Some("opaque123"), None, "s");
        l2_auth.layer = Layer::L2UpstreamDelegated;
        let mut l2_cb = set(3, Callback, Some("opaque123"), Some("U"), "s");
        l2_cb.layer = Layer::L2UpstreamDelegated;
        let r = reconstruct(&[
            set(1, AuthorizationRequest, Some("A"), None, "s"),
            l2_auth,
            l2_cb,
            set(4, Callback, Some("A"), Some("C"), "s"),
        ]);
        let chains = link_delegated(&r.lifecycles);
        assert_eq!(chains.len(), 1);
        assert!(chains[0].l2.is_some());
        assert_eq!(chains[0].link_basis, Some(LinkBasis::TemporalContainment));
        assert!(chains[0].bridge.is_none());
    }
}
