//! Dynamic client registration (RFC 7591).

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metadata::AuthServerMetadata;
use crate::http::{HttpClient, HttpRequest, TransportError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientRegistration {
    pub client_id: String,
    pub client_secret: Option<String>,
    pub redirect_uris: Vec<String>,
    #[serde(skip)]
    pub registration_response_raw: Vec<u8>,
}

impl ClientRegistration {
    /// A pre-registered public client.
    pub fn preregistered(client_id: impl Into<String>, redirect_uris: Vec<String>) -> Self {
        Self {
            client_id: client_id.into(),
            client_secret: None,
            redirect_uris,
            registration_response_raw: vec![],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistrationError {
    #[error("authorization server does not advertise a registration endpoint")]
    NoEndpoint,
    #[error("at least one redirect URI is required")]
    EmptyRedirectUris,
    /// The server refused the registration.
    #[error("registration rejected with HTTP {status}")]
    Rejected { status: u16, body: String },
    #[error("registration response malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// The JSON document sent to the registration endpoint.
pub fn registration_document(redirect_uris: &[String], client_name: &str) -> serde_json::Value {
    json!({
        "redirect_uris": redirect_uris,
        "client_name": client_name,
        "grant_types": ["authorization_code"],
        "response_types": ["code"],
        "token_endpoint_auth_method": "none",
    })
}

pub async fn register_client(
    http: &HttpClient,
    meta: &AuthServerMetadata,
    redirect_uris: &[String],
    client_name: &str,
) -> Result<ClientRegistration, RegistrationError> {
    let endpoint = meta
        .registration_endpoint
        .as_deref()
        .ok_or(RegistrationError::NoEndpoint)?;
    if redirect_uris.is_empty() {
        return Err(RegistrationError::EmptyRedirectUris);
    }
    let resp = http
        .send(HttpRequest::post_json(
            endpoint,
            &registration_document(redirect_uris, client_name),
        ))
        .await?;
    if !matches!(resp.status, 200 | 201) {
        return Err(RegistrationError::Rejected {
            status: resp.status,
            body: resp.excerpt(2048),
        });
    }
    let doc = resp
        .json()
        .ok_or_else(|| RegistrationError::Malformed("body is not JSON".into()))?;
    let client_id = doc
        .get("client_id")
        .and_then(|v| v.as_str())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| RegistrationError::Malformed("missing client_id".into()))?;
    let issued_uris = doc
        .get("redirect_uris")
        .and_then(|v| v.as_array())
        .map(|a| {
            a.iter()
                .filter_map(|x| x.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_else(|| redirect_uris.to_vec());
    Ok(ClientRegistration {
        client_id: client_id.to_string(),
        client_secret: doc
            .get("client_secret")
            .and_then(|v| v.as_str())
            .map(str::to_string),
        redirect_uris: issued_uris,
        registration_response_raw: resp.body,
    })
}
