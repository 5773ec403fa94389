//! Metadata discovery: protected-resource metadata (RFC 9728), authorization
//! server metadata (RFC 8414) and OpenID Connect discovery.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::http::{HttpClient, HttpRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedResourceMetadata {
    pub resource: String,
    pub authorization_servers: Vec<String>,
    pub source_url: String,
    #[serde(skip)]
    pub raw: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthServerMetadata {
    pub issuer: String,
    pub authorization_endpoint: String,
    pub token_endpoint: String,
    pub registration_endpoint: Option<String>,
    pub code_challenge_methods_supported: Option<Vec<String>>,
    pub scopes_supported: Option<Vec<String>>,
    pub source_url: String,
    #[serde(skip)]
    pub raw: Vec<u8>,
}

impl AuthServerMetadata {
    /// A registration endpoint is taken as evidence of dynamic client registration.
    pub fn dcr_enabled(&self) -> bool {
        self.registration_endpoint.is_some()
    }

    /// Parses a metadata document. Requires authorization and token endpoints.
    pub fn from_document(raw: &[u8], source_url: &str) -> Option<Self> {
        let doc: serde_json::Value = serde_json::from_slice(raw).ok()?;
        let s = |k: &str| doc.get(k).and_then(|v| v.as_str()).map(str::to_string);
        let list = |k: &str| {
            doc.get(k).and_then(|v| v.as_array()).map(|a| {
                a.iter()
                    .filter_map(|x| x.as_str().map(str::to_string))
                    .collect::<Vec<_>>()
            })
        };
        let authorization_endpoint = s("authorization_endpoint")?;
        let token_endpoint = s("token_endpoint")?;
        let issuer = s("issuer").unwrap_or_else(|| {
            Url::parse(source_url)
                .map(|u| u.origin().ascii_serialization())
                .unwrap_or_default()
        });
        Some(Self {
            issuer,
            authorization_endpoint,
            token_endpoint,
            registration_endpoint: s("registration_endpoint"),
            code_challenge_methods_supported: list("code_challenge_methods_supported"),
            scopes_supported: list("scopes_supported"),
            source_url: source_url.to_string(),
            raw: raw.to_vec(),
        })
    }
}

impl ProtectedResourceMetadata {
    pub fn from_document(raw: &[u8], source_url: &str) -> Option<Self> {
        let doc: serde_json::Value = serde_json::from_slice(raw).ok()?;
        let servers: Vec<String> = doc
            .get("authorization_servers")?
            .as_array()?
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect();
        if servers.is_empty() {
            return None;
        }
        Some(Self {
            resource: doc
                .get("resource")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string(),
            authorization_servers: servers,
            source_url: source_url.to_string(),
            raw: raw.to_vec(),
        })
    }
}

/// Successful discovery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discovery {
    pub protected_resource: Option<ProtectedResourceMetadata>,
    pub auth_server: AuthServerMetadata,
    /// Every URL fetched, in order.
    pub attempted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiscoveryError {
    #[error("invalid MCP URL `{0}`")]
    InvalidUrl(String),
    #[error("no OAuth metadata resolvable; tried {}", attempted.join(", "))]
    NotFound { attempted: Vec<String> },
}

/// Extracts the `resource_metadata` parameter of a Bearer challenge.
pub fn resource_metadata_hint(www_authenticate: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r#"(?i)resource_metadata\s*=\s*"([^"]+)""#).expect("static regex")
    });
    re.captures(www_authenticate).map(|c| c[1].to_string())
}

/// `/.well-known/<name>` inserted before the path, plus the root form when a path exists.
fn well_known_variants(base: &Url, name: &str) -> Vec<String> {
    let origin = base.origin().ascii_serialization();
    let path = base.path().trim_end_matches('/');
    let mut out = Vec::new();
    if !path.is_empty() {
        out.push(format!("{origin}/.well-known/{name}{path}"));
    }
    out.push(format!("{origin}/.well-known/{name}"));
    out
}

fn auth_server_candidates(issuer: &Url) -> Vec<String> {
    let mut out = well_known_variants(issuer, "oauth-authorization-server");
    out.extend(well_known_variants(issuer, "openid-configuration"));
    let path = issuer.path().trim_end_matches('/');
    if !path.is_empty() {
        // OIDC appends rather than inserts
        out.push(format!(
            "{}{path}/.well-known/openid-configuration",
            issuer.origin().ascii_serialization()
        ));
    }
    out
}

/// Issues an unauthenticated GET to the MCP URL to read its challenge, then discovers.
pub async fn discover(http: &HttpClient, mcp_url: &str) -> Result<Discovery, DiscoveryError> {
    let hint = match http
        .send(HttpRequest::get(mcp_url).header("accept", "application/json, text/event-stream"))
        .await
    {
        Ok(r) if matches!(r.status, 401 | 403) => r.header("www-authenticate").map(str::to_string),
        _ => None,
    };
    discover_with_hint(http, mcp_url, hint.as_deref()).await
}

/// Discovery using an already-observed `WWW-Authenticate` header. Issues GETs only.
pub async fn discover_with_hint(
    http: &HttpClient,
    mcp_url: &str,
    www_authenticate: Option<&str>,
) -> Result<Discovery, DiscoveryError> {
    let base = Url::parse(mcp_url).map_err(|_| DiscoveryError::InvalidUrl(mcp_url.to_string()))?;
    let mut attempted = Vec::new();

    let mut prm_urls = Vec::new();
    if let Some(hint) = www_authenticate.and_then(resource_metadata_hint) {
        prm_urls.push(hint);
    }
    prm_urls.extend(well_known_variants(&base, "oauth-protected-resource"));
    prm_urls.dedup();

    let mut prm = None;
    for url in prm_urls {
        if attempted.contains(&url) {
            continue;
        }
        attempted.push(url.clone());
        if let Some(doc) = fetch_ok(http, &url).await {
            if let Some(meta) = ProtectedResourceMetadata::from_document(&doc, &url) {
                prm = Some(meta);
                break;
            }
        }
    }

    let mut as_urls = Vec::new();
    if let Some(p) = &prm {
        for server in &p.authorization_servers {
            if let Ok(issuer) = Url::parse(server) {
                as_urls.extend(auth_server_candidates(&issuer));
            }
        }
    }
    as_urls.extend(auth_server_candidates(
        &Url::parse(&base.origin().ascii_serialization()).expect("origin is a URL"),
    ));

    for url in as_urls {
        if attempted.contains(&url) {
            continue;
        }
        attempted.push(url.clone());
        if let Some(doc) = fetch_ok(http, &url).await {
            if let Some(meta) = AuthServerMetadata::from_document(&doc, &url) {
                return Ok(Discovery {
                    protected_resource: prm,
                    auth_server: meta,
                    attempted,
                });
            }
        }
    }
    Err(DiscoveryError::NotFound { attempted })
}

async fn fetch_ok(http: &HttpClient, url: &str) -> Option<Vec<u8>> {
    let resp = http
        .send(HttpRequest::get(url).header("accept", "application/json"))
        .await
        .ok()?;
    (resp.status == 200).then_some(resp.body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_resource_metadata_hint() {
        let h = r#"Bearer error="invalid_token", resource_metadata="https://mcp.example/.well-known/oauth-protected-resource""#;
        assert_eq!(
            resource_metadata_hint(h).as_deref(),
            Some("https://mcp.example/.well-known/oauth-protected-resource")
        );
        assert_eq!(resource_metadata_hint("Bearer realm=\"x\""), None);
    }

    #[test]
    fn well_known_urls_cover_inserted_and_root_forms() {
        let u = Url::parse("https://as.example/tenant1").unwrap();
        let c = auth_server_candidates(&u);
        assert_eq!(
            c,
            vec![
                "https://as.example/.well-known/oauth-authorization-server/tenant1",
                "https://as.example/.well-known/oauth-authorization-server",
                "https://as.example/.well-known/openid-configuration/tenant1",
                "https://as.example/.well-known/openid-configuration",
                "https://as.example/tenant1/.well-known/openid-configuration",
            ]
        );
        let root = Url::parse("https://as.example").unwrap();
        assert_eq!(auth_server_candidates(&root).len(), 2);
    }

    #[test]
    fn metadata_requires_endpoints() {
        let ok = br#"{"issuer":"https://as","authorization_endpoint":"https://as/a","token_endpoint":"https://as/t","registration_endpoint":"https://as/r"}"#;
        let m = AuthServerMetadata::from_document(ok, "https://as/.well-known/x").unwrap();
        assert!(m.dcr_enabled());
        let no_reg = br#"{"issuer":"https://as","authorization_endpoint":"https://as/a","token_endpoint":"https://as/t"}"#;
        assert!(!AuthServerMetadata::from_document(no_reg, "u").unwrap().dcr_enabled());
        assert!(AuthServerMetadata::from_document(br#"{"issuer":"x"}"#, "u").is_none());
        assert!(ProtectedResourceMetadata::from_document(
            br#"{"resource":"r","authorization_servers":[]}"#,
            "u"
        )
        .is_none());
    }
}
