use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use url::{Host, Url};

/// Authorization layer a callback belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    /// Local MCP client: loopback or custom-scheme callbacks.
    #[serde(rename = "L1_local_client")]
    L1LocalClient,
    /// Upstream delegated flow: callbacks to a remote server.
    #[serde(rename = "L2_upstream_delegated")]
    L2UpstreamDelegated,
    #[serde(rename = "unknown")]
    Unknown,
}

/// Classifies a callback destination by its shape alone.
pub fn classify_layer(redirect_uri: &str) -> Layer {
    let Ok(url) = Url::parse(redirect_uri) else {
        return Layer::Unknown;
    };
    match url.scheme() {
        "http" | "https" => match url.host() {
            Some(host) if is_loopback(&host) => Layer::L1LocalClient,
            Some(_) => Layer::L2UpstreamDelegated,
            None => Layer::Unknown,
        },
        _ => Layer::L1LocalClient,
    }
}

fn is_loopback(host: &Host<&str>) -> bool {
    match host {
        Host::Domain(d) => d.eq_ignore_ascii_case("localhost"),
        Host::Ipv4(ip) => ip.is_loopback(),
        Host::Ipv6(ip) => ip.is_loopback(),
    }
}

/// Layer classification scoped to the MCP server under test.
///
/// A callback addressed to the target server itself (same origin for IP hosts,
/// same registrable domain for named hosts) is the server's own OAuth-client
/// callback and therefore L2, even when it is on loopback.
#[derive(Debug, Clone, Default)]
pub struct LayerClassifier {
    targets: Vec<Url>,
    scope_to_target: bool,
}

impl LayerClassifier {
    pub fn unscoped() -> Self {
        Self::default()
    }

    pub fn for_target(mcp_url: &Url) -> Self {
        Self {
            targets: vec![mcp_url.clone()],
            scope_to_target: true,
        }
    }

    pub fn with_target(mut self, url: Url) -> Self {
        self.targets.push(url);
        self.scope_to_target = true;
        self
    }

    pub fn scoping(mut self, enabled: bool) -> Self {
        self.scope_to_target = enabled;
        self
    }

    pub fn classify(&self, redirect_uri: &str) -> Layer {
        let base = classify_layer(redirect_uri);
        if !self.scope_to_target || base == Layer::Unknown {
            return base;
        }
        let Ok(url) = Url::parse(redirect_uri) else {
            return base;
        };
        if self.targets.iter().any(|t| same_site(t, &url)) {
            Layer::L2UpstreamDelegated
        } else {
            base
        }
    }
}

fn same_site(target: &Url, candidate: &Url) -> bool {
    if !matches!(candidate.scheme(), "http" | "https") {
        return false;
    }
    match (target.host(), candidate.host()) {
        (Some(Host::Domain(a)), Some(Host::Domain(b)))
            if !a.eq_ignore_ascii_case("localhost") && !b.eq_ignore_ascii_case("localhost") =>
        {
            registrable(a).eq_ignore_ascii_case(registrable(b))
        }
        (Some(a), Some(b)) => {
            host_ip(&a) == host_ip(&b)
                && a.to_string().eq_ignore_ascii_case(&b.to_string())
                && target.port_or_known_default() == candidate.port_or_known_default()
        }
        _ => false,
    }
}

fn host_ip(h: &Host<&str>) -> Option<IpAddr> {
    match h {
        Host::Ipv4(ip) => Some(IpAddr::V4(*ip)),
        Host::Ipv6(ip) => Some(IpAddr::V6(*ip)),
        Host::Domain(_) => None,
    }
}

// Last two labels; no public-suffix list.
fn registrable(domain: &str) -> &str {
    let labels: Vec<usize> = domain.match_indices('.').map(|(i, _)| i).collect();
    if labels.len() < 2 {
        domain
    } else {
        &domain[labels[labels.len() - 2] + 1..]
    }
}
