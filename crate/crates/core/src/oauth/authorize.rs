//! Authorization request URLs.

use serde::{Deserialize, Serialize};
use url::form_urlencoded;

use crate::capture::parse_query;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuthorizationRequest {
    pub endpoint: String,
    pub response_type: Option<String>,
    pub client_id: String,
    pub redirect_uri: Option<String>,
    pub state: Option<String>,
    pub code_challenge: Option<String>,
    pub code_challenge_method: Option<String>,
    pub scope: Option<String>,
    pub resource: Option<String>,
    pub extra_params: Vec<(String, String)>,
}

const KNOWN: [&str; 8] = [
    "response_type",
    "client_id",
    "redirect_uri",
    "state",
    "code_challenge",
    "code_challenge_method",
    "scope",
    "resource",
];

impl AuthorizationRequest {
    /// `response_type=code` request for `client_id`.
    pub fn new(endpoint: impl Into<String>, client_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            response_type: Some("code".into()),
            client_id: client_id.into(),
            ..Self::default()
        }
    }

    pub fn with_redirect_uri(mut self, v: impl Into<String>) -> Self {
        self.redirect_uri = Some(v.into());
        self
    }

    pub fn with_state(mut self, v: impl Into<String>) -> Self {
        self.state = Some(v.into());
        self
    }

    pub fn with_pkce(mut self, challenge: impl Into<String>, method: impl Into<String>) -> Self {
        self.code_challenge = Some(challenge.into());
        self.code_challenge_method = Some(method.into());
        self
    }

    pub fn with_scope(mut self, v: impl Into<String>) -> Self {
        self.scope = Some(v.into());
        self
    }

    pub fn with_resource(mut self, v: impl Into<String>) -> Self {
        self.resource = Some(v.into());
        self
    }

    fn pairs(&self) -> Vec<(&str, &str)> {
        let fields = [
            self.response_type.as_deref(),
            Some(self.client_id.as_str()),
            self.redirect_uri.as_deref(),
            self.state.as_deref(),
            self.code_challenge.as_deref(),
            self.code_challenge_method.as_deref(),
            self.scope.as_deref(),
            self.resource.as_deref(),
        ];
        let mut out: Vec<(&str, &str)> = KNOWN
            .iter()
            .zip(fields)
            .filter_map(|(k, v)| v.map(|v| (*k, v)))
            .collect();
        for (k, v) in &self.extra_params {
            out.push((k.as_str(), v.as_str()));
        }
        out
    }

    /// Serializes to a GET URL carrying exactly the present fields.
    pub fn to_url(&self) -> String {
        let query = form_urlencoded::Serializer::new(String::new())
            .extend_pairs(self.pairs())
            .finish();
        let sep = if self.endpoint.contains('?') { '&' } else { '?' };
        format!("{}{sep}{query}", self.endpoint)
    }

    /// Inverse of [`to_url`](Self::to_url). Parameters already present on the
    /// endpoint before serialization come back as `extra_params`.
    pub fn parse(url: &str) -> Self {
        let (endpoint, query) = url.split_once('?').unwrap_or((url, ""));
        let query = query.split('#').next().unwrap_or("");
        let mut req = Self {
            endpoint: endpoint.to_string(),
            ..Self::default()
        };
        for p in parse_query(query) {
            let v = Some(p.value.clone());
            match p.key.as_str() {
                "response_type" => req.response_type = v,
                "client_id" => req.client_id = p.value,
                "redirect_uri" => req.redirect_uri = v,
                "state" => req.state = v,
                "code_challenge" => req.code_challenge = v,
                "code_challenge_method" => req.code_challenge_method = v,
                "scope" => req.scope = v,
                "resource" => req.resource = v,
                _ => req.extra_params.push((p.key, p.value)),
            }
        }
        req
    }

    /// Whether `name` is one of the standard fields rather than an extra.
    pub fn is_standard_param(name: &str) -> bool {
        KNOWN.contains(&name)
    }
}

/// Builds the GET URL for `req`.
pub fn build_authorization_url(req: &AuthorizationRequest) -> String {
    req.to_url()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_present_fields_only() {
        let req = AuthorizationRequest::new("https://as.example/authorize", "c1")
            .with_redirect_uri("http://127.0.0.1:33418/callback")
            .with_state("s t&=x")
            .with_pkce("abc", "S256");
        let url = req.to_url();
        assert!(url.starts_with("https://as.example/authorize?response_type=code&client_id=c1"));
        assert!(!url.contains("scope="));
        assert_eq!(AuthorizationRequest::parse(&url), req);
    }

    #[test]
    fn endpoint_with_query_appends() {
        let mut req = AuthorizationRequest::new("https://as.example/authorize?tenant=a", "c");
        req.response_type = None;
        assert_eq!(req.to_url(), "https://as.example/authorize?tenant=a&client_id=c");
    }
}
