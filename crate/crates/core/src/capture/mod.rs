//! Traffic identification: isolate OAuth exchanges and assign each callback a layer.

mod exchange;
mod extract;
mod ingest;
mod layer;
pub mod proxy;

use std::collections::HashSet;

pub use exchange::{to_native_jsonl, HttpExchange, Recorder};
pub use extract::{
    extract_oauth_params, identify_exchange, parse_query, OAuthParamSet, ParamOrigin, ParamRole,
    QueryPair,
};
pub use ingest::{ingest_flow_log, ingest_str, Ingested, MAX_SKIP_RATIO};
pub use layer::{classify_layer, Layer, LayerClassifier};
pub use proxy::{live_proxy, CertificateAuthority, InterceptConfig, LiveProxy, ProxyConfig};

pub(crate) use exchange::find_header;

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{skipped} of {total} flow-log records are unparseable")]
    TooManyCorrupt { skipped: usize, total: usize },
    #[error("proxy failed to start on {addr}: {source}")]
    ProxyBind {
        addr: std::net::SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("interception setup failed: {0}")]
    Intercept(String),
}

/// A parameter set paired with its authorization layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classified {
    pub params: OAuthParamSet,
    pub layer: Layer,
}

/// Output of stage one over a whole capture.
#[derive(Debug, Clone, Default)]
pub struct IdentifiedTraffic {
    pub items: Vec<Classified>,
    /// Exchanges carrying no OAuth parameters.
    pub non_oauth: usize,
    /// Requests that merely followed a `Location` already recorded as a parameter set.
    pub merged_redirects: usize,
}

/// Layer of a role-tagged parameter set: the callback destination decides.
pub fn layer_of(params: &OAuthParamSet, classifier: &LayerClassifier) -> Layer {
    let dest = match params.role {
        ParamRole::Callback => params.endpoint.as_deref(),
        _ => params.redirect_uri.as_deref(),
    };
    dest.map(|d| classifier.classify(d)).unwrap_or(Layer::Unknown)
}

/// Runs extraction and layer classification over an ordered capture.
///
/// A request whose URL equals a `Location` seen earlier in the same session is
/// the user agent following that redirect; it is folded into the earlier set.
pub fn identify_traffic(
    exchanges: &[HttpExchange],
    classifier: &LayerClassifier,
) -> IdentifiedTraffic {
    let mut out = IdentifiedTraffic::default();
    let mut seen_locations: HashSet<(String, String)> = HashSet::new();

    for ex in exchanges {
        let sets = identify_exchange(ex);
        if sets.is_empty() {
            out.non_oauth += 1;
        }
        for set in sets {
            if set.origin == ParamOrigin::Request
                && seen_locations.contains(&(ex.session_tag.clone(), ex.url.clone()))
            {
                out.merged_redirects += 1;
                continue;
            }
            let layer = layer_of(&set, classifier);
            out.items.push(Classified { params: set, layer });
        }
        if let Some(loc) = ex.response_header("location") {
            seen_locations.insert((ex.session_tag.clone(), loc.to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn ex(seq: u64, method: &str, url: &str, location: Option<&str>) -> HttpExchange {
        HttpExchange {
            sequence_no: seq,
            timestamp: Utc::now(),
            method: method.into(),
            url: url.into(),
            request_headers: vec![],
            request_body: vec![],
            status: Some(if location.is_some() { 302 } else { 200 }),
            response_headers: location
                .map(|l| vec![("Location".to_string(), l.to_string())])
                .unwrap_or_default(),
            response_body: vec![],
            session_tag: "s".into(),
        }
    }

    #[test]
    fn followed_redirect_is_not_double_counted() {
        let cb = "http://127.0.0.1:9/cb?code=C&state=S";
        let capture = vec![
            ex(
                1,
                "GET",
                "http://as.test/authorize?client_id=c&redirect_uri=http%3A%2F%2F127.0.0.1%3A9%2Fcb&state=S",
                Some(cb),
            ),
            ex(2, "GET", cb, None),
            ex(3, "GET", "http://as.test/favicon.ico", None),
        ];
        let got = identify_traffic(&capture, &LayerClassifier::unscoped());
        assert_eq!(got.items.len(), 2);
        assert_eq!(got.merged_redirects, 1);
        assert_eq!(got.non_oauth, 1);
        assert_eq!(got.items[0].params.role, ParamRole::AuthorizationRequest);
        assert_eq!(got.items[1].params.role, ParamRole::Callback);
        assert!(got.items.iter().all(|c| c.layer == Layer::L1LocalClient));
    }
}
