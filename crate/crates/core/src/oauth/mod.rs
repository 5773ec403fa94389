//! OAuth 2.1 client building blocks used by probes and scripted flows.

mod agent;
mod authorize;
mod metadata;
mod pkce;
mod registration;
mod token;

pub use agent::{
    endpoint_of, find_consent_form, AgentConfig, AgentOutcome, AgentRun, AgentStepper,
    BrowserAgent, FormSubmission, TranscriptStep,
};
pub use authorize::{build_authorization_url, AuthorizationRequest};
pub use metadata::{
    discover, discover_with_hint, resource_metadata_hint, AuthServerMetadata, Discovery,
    DiscoveryError, ProtectedResourceMetadata,
};
pub use pkce::{
    compute_s256, generate_pkce, generate_pkce_with, verify as verify_pkce, PkceError,
    PkceMethod, PkcePair,
};
pub use registration::{register_client, registration_document, ClientRegistration, RegistrationError};
pub use token::{
    exchange_code, token_request, OAuthErrorResponse, TokenError, TokenOutcome, TokenResponse,
};
