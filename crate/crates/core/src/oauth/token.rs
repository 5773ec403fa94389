//! Authorization code redemption.

use serde::{Deserialize, Serialize};

use super::metadata::AuthServerMetadata;
use super::registration::ClientRegistration;
use crate::http::{HttpClient, HttpRequest, HttpResponse, TransportError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    pub token_type: String,
    pub refresh_token: Option<String>,
    pub expires_in: Option<u64>,
    #[serde(skip)]
    pub raw: Vec<u8>,
}

/// An OAuth error body (`{"error": ...}`) or any other non-success response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OAuthErrorResponse {
    pub status: u16,
    pub error: String,
    pub error_description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TokenOutcome {
    Issued(TokenResponse),
    Rejected(OAuthErrorResponse),
}

impl TokenOutcome {
    pub fn is_issued(&self) -> bool {
        matches!(self, TokenOutcome::Issued(_))
    }

    /// Interprets a token endpoint response.
    pub fn from_response(resp: &HttpResponse) -> Self {
        let doc = resp.json();
        let field = |k: &str| {
            doc.as_ref()
                .and_then(|d| d.get(k))
                .and_then(|v| v.as_str())
                .map(str::to_string)
        };
        if resp.status == 200 {
            if let Some(access_token) = field("access_token") {
                return TokenOutcome::Issued(TokenResponse {
                    access_token,
                    token_type: field("token_type").unwrap_or_else(|| "Bearer".into()),
                    refresh_token: field("refresh_token"),
                    expires_in: doc
                        .as_ref()
                        .and_then(|d| d.get("expires_in"))
                        .and_then(|v| v.as_u64()),
                    raw: resp.body.clone(),
                });
            }
        }
        TokenOutcome::Rejected(OAuthErrorResponse {
            status: resp.status,
            error: field("error").unwrap_or_else(|| format!("http_{}", resp.status)),
            error_description: field("error_description"),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TokenError {
    #[error("authorization code is empty")]
    EmptyCode,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// The form a public or `client_secret_post` client sends.
pub fn token_request(
    token_endpoint: &str,
    code: &str,
    verifier: Option<&str>,
    client: &ClientRegistration,
    redirect_uri: &str,
) -> HttpRequest {
    let mut pairs = vec![
        ("grant_type", "authorization_code"),
        ("code", code),
        ("redirect_uri", redirect_uri),
        ("client_id", client.client_id.as_str()),
    ];
    if let Some(v) = verifier {
        pairs.push(("code_verifier", v));
    }
    if let Some(secret) = &client.client_secret {
        pairs.push(("client_secret", secret.as_str()));
    }
    HttpRequest::post_form(token_endpoint, &pairs).header("accept", "application/json")
}

pub async fn exchange_code(
    http: &HttpClient,
    meta: &AuthServerMetadata,
    code: &str,
    verifier: Option<&str>,
    client: &ClientRegistration,
    redirect_uri: &str,
) -> Result<TokenOutcome, TokenError> {
    if code.is_empty() {
        return Err(TokenError::EmptyCode);
    }
    let resp = http
        .send(token_request(&meta.token_endpoint, code, verifier, client, redirect_uri))
        .await?;
    Ok(TokenOutcome::from_response(&resp))
}
