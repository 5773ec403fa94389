//! Pulls OAuth parameters out of raw exchanges.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::exchange::HttpExchange;

/// Where inside an exchange a parameter set was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamOrigin {
    /// Request line, query, fragment or body.
    Request,
    /// The `Location` header of the response.
    Location,
}

/// What protocol step a parameter set represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    AuthorizationRequest,
    Callback,
    TokenRequest,
    Registration,
    Other,
}

/// Security-relevant OAuth parameters observed in one exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OAuthParamSet {
    pub exchange_ref: u64,
    pub origin: ParamOrigin,
    pub role: ParamRole,
    pub session_tag: String,
    pub timestamp: DateTime<Utc>,
    /// Scheme, authority and path the parameters were addressed to.
    pub endpoint: Option<String>,
    pub redirect_uri: Option<String>,
    pub client_id: Option<String>,
    pub code_challenge: Option<String>,
    pub code_challenge_method: Option<String>,
    pub state: Option<String>,
    pub code: Option<String>,
    pub token_endpoint_hit: bool,
    pub grant_type: Option<String>,
    pub response_type: Option<String>,
    pub scope: Option<String>,
    pub resource: Option<String>,
    pub code_verifier: Option<String>,
    pub error: Option<String>,
    /// Parameters whose percent-encoding was malformed; their values are kept raw.
    pub malformed: Vec<String>,
}

impl OAuthParamSet {
    fn empty(ex: &HttpExchange, origin: ParamOrigin) -> Self {
        Self {
            exchange_ref: ex.sequence_no,
            origin,
            role: ParamRole::Other,
            session_tag: ex.session_tag.clone(),
            timestamp: ex.timestamp,
            endpoint: None,
            redirect_uri: None,
            client_id: None,
            code_challenge: None,
            code_challenge_method: None,
            state: None,
            code: None,
            token_endpoint_hit: false,
            grant_type: None,
            response_type: None,
            scope: None,
            resource: None,
            code_verifier: None,
            error: None,
            malformed: Vec::new(),
        }
    }

    /// Capture-order key: exchange sequence, then request before `Location`.
    pub fn position(&self) -> (u64, ParamOrigin) {
        (self.exchange_ref, self.origin)
    }

    fn has_any_field(&self) -> bool {
        self.redirect_uri.is_some()
            || self.client_id.is_some()
            || self.code_challenge.is_some()
            || self.code_challenge_method.is_some()
            || self.state.is_some()
            || self.code.is_some()
            || self.grant_type.is_some()
            || self.code_verifier.is_some()
            || self.error.is_some()
            || self.token_endpoint_hit
    }

    fn slot(&mut self, name: &str) -> Option<&mut Option<String>> {
        Some(match name {
            "redirect_uri" => &mut self.redirect_uri,
            "client_id" => &mut self.client_id,
            "code_challenge" => &mut self.code_challenge,
            "code_challenge_method" => &mut self.code_challenge_method,
            "state" => &mut self.state,
            "code" => &mut self.code,
            "grant_type" => &mut self.grant_type,
            "response_type" => &mut self.response_type,
            "scope" => &mut self.scope,
            "resource" => &mut self.resource,
            "code_verifier" => &mut self.code_verifier,
            "error" => &mut self.error,
            _ => return None,
        })
    }

    fn absorb(&mut self, pair: QueryPair) {
        let malformed = pair.malformed;
        let key = pair.key.clone();
        if let Some(slot) = self.slot(&pair.key) {
            if slot.is_none() {
                *slot = Some(pair.value);
                if malformed {
                    self.malformed.push(key);
                }
            }
        }
    }

    fn fill_from(&mut self, other: &OAuthParamSet) {
        macro_rules! fill {
            ($($f:ident),*) => {$(
                if self.$f.is_none() {
                    self.$f = other.$f.clone();
                }
            )*};
        }
        fill!(
            redirect_uri,
            client_id,
            code_challenge,
            code_challenge_method,
            state,
            code,
            grant_type,
            response_type,
            scope,
            resource,
            code_verifier,
            error
        );
        for m in &other.malformed {
            if !self.malformed.contains(m) {
                self.malformed.push(m.clone());
            }
        }
    }
}

/// A decoded `key=value` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPair {
    pub key: String,
    pub value: String,
    /// True when percent-decoding failed and `value` is the raw text.
    pub malformed: bool,
}

/// Splits a form/query string, decoding `+` and percent escapes.
///
/// Invalid escapes or non-UTF-8 results leave the raw text in place and set `malformed`.
pub fn parse_query(input: &str) -> Vec<QueryPair> {
    input
        .split('&')
        .filter(|s| !s.is_empty())
        .map(|part| {
            let (k, v) = part.split_once('=').unwrap_or((part, ""));
            let (key, kbad) = decode_component(k);
            let (value, vbad) = decode_component(v);
            QueryPair {
                key,
                value,
                malformed: kbad || vbad,
            }
        })
        .collect()
}

fn decode_component(raw: &str) -> (String, bool) {
    let bytes = raw.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b'%' => {
                let hex = bytes.get(i + 1..i + 3).and_then(|h| {
                    std::str::from_utf8(h)
                        .ok()
                        .and_then(|h| u8::from_str_radix(h, 16).ok())
                });
                match hex {
                    Some(b) => {
                        out.push(b);
                        i += 3;
                    }
                    None => return (raw.to_string(), true),
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    match String::from_utf8(out) {
        Ok(s) => (s, false),
        Err(_) => (raw.to_string(), true),
    }
}

/// Splits a URL-ish string into (endpoint, query, fragment) without normalizing it.
fn split_url(raw: &str) -> (&str, Option<&str>, Option<&str>) {
    let (before_frag, frag) = match raw.split_once('#') {
        Some((a, b)) => (a, Some(b)),
        None => (raw, None),
    };
    let (endpoint, query) = match before_frag.split_once('?') {
        Some((a, b)) => (a, Some(b)),
        None => (before_frag, None),
    };
    (endpoint, query, frag)
}

fn path_of(endpoint: &str) -> &str {
    match endpoint.split_once("://") {
        Some((_, rest)) => rest.find('/').map(|i| &rest[i..]).unwrap_or("/"),
        None => endpoint,
    }
}

fn json_pairs(body: &[u8]) -> Option<(Vec<QueryPair>, bool)> {
    let value: serde_json::Value = serde_json::from_slice(body).ok()?;
    let obj = value.as_object()?;
    let mut pairs = Vec::new();
    let mut registration = false;
    for (k, v) in obj {
        match v {
            serde_json::Value::String(s) => pairs.push(QueryPair {
                key: k.clone(),
                value: s.clone(),
                malformed: false,
            }),
            serde_json::Value::Array(items) if k == "redirect_uris" => {
                registration = true;
                if let Some(first) = items.iter().find_map(|i| i.as_str()) {
                    pairs.push(QueryPair {
                        key: "redirect_uri".into(),
                        value: first.to_string(),
                        malformed: false,
                    });
                }
            }
            _ => {}
        }
    }
    Some((pairs, registration))
}

fn assign_role(set: &mut OAuthParamSet, registration: bool) {
    set.role = if set.origin == ParamOrigin::Request && set.token_endpoint_hit {
        ParamRole::TokenRequest
    } else if registration {
        ParamRole::Registration
    } else if set.client_id.is_some()
        && (set.response_type.is_some() || set.redirect_uri.is_some())
        && set.code.is_none()
    {
        ParamRole::AuthorizationRequest
    } else if set.code.is_some() || set.error.is_some() {
        ParamRole::Callback
    } else {
        ParamRole::Other
    };
}

fn request_side(ex: &HttpExchange) -> Option<OAuthParamSet> {
    let mut set = OAuthParamSet::empty(ex, ParamOrigin::Request);
    let (endpoint, query, frag) = split_url(&ex.url);
    set.endpoint = Some(endpoint.to_string());
    for part in [query, frag].into_iter().flatten() {
        for pair in parse_query(part) {
            set.absorb(pair);
        }
    }

    let mut registration = false;
    if !ex.request_body.is_empty() {
        let ctype = ex
            .request_header("content-type")
            .unwrap_or("")
            .to_ascii_lowercase();
        let looks_json = ctype.contains("json")
            || ex.request_body.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{');
        if looks_json {
            if let Some((pairs, reg)) = json_pairs(&ex.request_body) {
                registration = reg;
                for pair in pairs {
                    set.absorb(pair);
                }
            }
        } else if let Ok(text) = std::str::from_utf8(&ex.request_body) {
            if ctype.contains("x-www-form-urlencoded") || text.contains('=') {
                for pair in parse_query(text.trim()) {
                    set.absorb(pair);
                }
            }
        }
    }

    let is_post = ex.method.eq_ignore_ascii_case("POST");
    set.token_endpoint_hit =
        is_post && (set.grant_type.is_some() || path_of(endpoint).ends_with("/token"));
    assign_role(&mut set, registration);
    set.has_any_field().then_some(set)
}

fn location_side(ex: &HttpExchange) -> Option<OAuthParamSet> {
    let location = ex.response_header("location")?;
    let mut set = OAuthParamSet::empty(ex, ParamOrigin::Location);
    let (endpoint, query, frag) = split_url(location);
    set.endpoint = Some(endpoint.to_string());
    for part in [query, frag].into_iter().flatten() {
        for pair in parse_query(part) {
            set.absorb(pair);
        }
    }
    assign_role(&mut set, false);
    set.has_any_field().then_some(set)
}

/// Merged view of every OAuth parameter carried by `ex`.
///
/// Request-side values win; the `Location` header fills the gaps. Returns `None`
/// when the exchange carries none of the tracked parameters.
pub fn extract_oauth_params(ex: &HttpExchange) -> Option<OAuthParamSet> {
    match (request_side(ex), location_side(ex)) {
        (Some(mut req), Some(loc)) => {
            req.fill_from(&loc);
            Some(req)
        }
        (Some(req), None) => Some(req),
        (None, Some(loc)) => Some(loc),
        (None, None) => None,
    }
}

/// Role-separated parameter sets for one exchange: the request side and, if the
/// response redirects with OAuth parameters, the `Location` side.
pub fn identify_exchange(ex: &HttpExchange) -> Vec<OAuthParamSet> {
    request_side(ex)
        .into_iter()
        .chain(location_side(ex))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exchange(method: &str, url: &str) -> HttpExchange {
        HttpExchange {
            sequence_no: 7,
            timestamp: Utc::now(),
            method: method.into(),
            url: url.into(),
            request_headers: vec![],
            request_body: vec![],
            status: Some(200),
            response_headers: vec![],
            response_body: vec![],
            session_tag: "t".into(),
        }
    }

    #[test]
    fn authorize_query_populates_all_fields() {
        let ex = exchange(
            "GET",
            "https://as.example/authorize?client_id=abc&state=xyz&code_challenge=Q&code_challenge_method=S256&redirect_uri=http%3A%2F%2F127.0.0.1%3A7777%2Fcb",
        );
        let p = extract_oauth_params(&ex).unwrap();
        assert_eq!(p.client_id.as_deref(), Some("abc"));
        assert_eq!(p.state.as_deref(), Some("xyz"));
        assert_eq!(p.code_challenge.as_deref(), Some("Q"));
        assert_eq!(p.code_challenge_method.as_deref(), Some("S256"));
        assert_eq!(p.redirect_uri.as_deref(), Some("http://127.0.0.1:7777/cb"));
        assert_eq!(p.role, ParamRole::AuthorizationRequest);
        assert_eq!(p.endpoint.as_deref(), Some("https://as.example/authorize"));
        assert_eq!(p.exchange_ref, 7);
    }

    #[test]
    fn location_header_yields_code_and_state() {
        let mut ex = exchange("GET", "https://as.example/consent/done");
        ex.status = Some(302);
        ex.response_headers = vec![(
            "Location".into(),
            "http://127.0.0.1:7777/cb?code=C1&state=xyz".into(),
        )];
        let p = extract_oauth_params(&ex).unwrap();
        assert_eq!(p.code.as_deref(), Some("C1"));
        assert_eq!(p.state.as_deref(), Some("xyz"));
        assert_eq!(p.role, ParamRole::Callback);
        assert_eq!(p.origin, ParamOrigin::Location);
        assert_eq!(p.endpoint.as_deref(), Some("http://127.0.0.1:7777/cb"));
    }

    #[test]
    fn token_form_body_marks_token_hit() {
        let mut ex = exchange("POST", "https://as.example/token");
        ex.request_headers = vec![(
            "content-type".into(),
            "application/x-www-form-urlencoded".into(),
        )];
        ex.request_body = b"grant_type=authorization_code&code=C1".to_vec();
        let p = extract_oauth_params(&ex).unwrap();
        assert!(p.token_endpoint_hit);
        assert_eq!(p.code.as_deref(), Some("C1"));
        assert_eq!(p.grant_type.as_deref(), Some("authorization_code"));
        assert_eq!(p.role, ParamRole::TokenRequest);
    }

    #[test]
    fn fragment_parameters_are_parsed() {
        let ex = exchange("GET", "http://127.0.0.1:1/cb#code=F&state=S");
        let p = extract_oauth_params(&ex).unwrap();
        assert_eq!(p.code.as_deref(), Some("F"));
        assert_eq!(p.state.as_deref(), Some("S"));
    }

    #[test]
    fn malformed_percent_encoding_is_kept_raw_and_flagged() {
        let ex = exchange("GET", "https://as.example/cb?code=ab%zz&state=ok");
        let p = extract_oauth_params(&ex).unwrap();
        assert_eq!(p.code.as_deref(), Some("ab%zz"));
        assert_eq!(p.malformed, vec!["code".to_string()]);
        assert_eq!(p.state.as_deref(), Some("ok"));
    }

    #[test]
    fn non_oauth_exchange_is_filtered() {
        let ex = exchange("GET", "https://cdn.example/app.js?v=3");
        assert!(extract_oauth_params(&ex).is_none());
        assert!(identify_exchange(&ex).is_empty());
    }

    #[test]
    fn registration_json_body_is_tagged() {
        let mut ex = exchange("POST", "https://as.example/register");
        ex.request_headers = vec![("content-type".into(), "application/json".into())];
        ex.request_body =
            br#"{"redirect_uris":["https://evil.example/cb"],"client_name":"x"}"#.to_vec();
        let p = extract_oauth_params(&ex).unwrap();
        assert_eq!(p.role, ParamRole::Registration);
        assert_eq!(p.redirect_uri.as_deref(), Some("https://evil.example/cb"));
    }

    #[test]
    fn identify_splits_request_and_location() {
        let mut ex = exchange(
            "GET",
            "https://as.example/authorize?client_id=a&redirect_uri=http%3A%2F%2F127.0.0.1%2Fcb&state=s",
        );
        ex.status = Some(302);
        ex.response_headers = vec![(
            "location".into(),
            "https://up.example/authorize?client_id=mcp&redirect_uri=https%3A%2F%2Fmcp.example%2Fcb&state=t".into(),
        )];
        let sets = identify_exchange(&ex);
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].role, ParamRole::AuthorizationRequest);
        assert_eq!(sets[1].role, ParamRole::AuthorizationRequest);
        assert_eq!(sets[1].state.as_deref(), Some("t"));
        assert!(sets[0].position() < sets[1].position());
    }
}
