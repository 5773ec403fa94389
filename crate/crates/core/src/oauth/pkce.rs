//! Proof Key for Code Exchange (RFC 7636).

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PkceMethod {
    S256,
    #[serde(rename = "plain")]
    Plain,
}

impl PkceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PkceMethod::S256 => "S256",
            PkceMethod::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkcePair {
    pub verifier: String,
    pub challenge: String,
    pub method: PkceMethod,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PkceError {
    #[error("verifier length {0} outside 43..=128")]
    Length(usize),
    #[error("verifier contains a character outside the unreserved set")]
    Charset,
}

/// `base64url(SHA-256(verifier))` without padding.
pub fn compute_s256(verifier: &str) -> String {
    URL_SAFE_NO_PAD.encode(Sha256::digest(verifier.as_bytes()))
}

fn is_unreserved(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_' | '~')
}

impl PkcePair {
    /// Builds a pair from an existing verifier, validating its shape.
    pub fn from_verifier(verifier: &str, method: PkceMethod) -> Result<Self, PkceError> {
        if !(43..=128).contains(&verifier.len()) {
            return Err(PkceError::Length(verifier.len()));
        }
        if !verifier.chars().all(is_unreserved) {
            return Err(PkceError::Charset);
        }
        let challenge = match method {
            PkceMethod::S256 => compute_s256(verifier),
            PkceMethod::Plain => verifier.to_string(),
        };
        Ok(Self {
            verifier: verifier.to_string(),
            challenge,
            method,
        })
    }

    /// Whether `verifier` satisfies this pair's challenge.
    pub fn verifies(&self, verifier: &str) -> bool {
        verify(&self.challenge, self.method, verifier)
    }
}

/// Checks a presented verifier against a stored challenge.
pub fn verify(challenge: &str, method: PkceMethod, verifier: &str) -> bool {
    match method {
        PkceMethod::S256 => compute_s256(verifier) == challenge,
        PkceMethod::Plain => verifier == challenge,
    }
}

/// Fresh pair from the thread-local CSPRNG; the verifier is 43 characters.
pub fn generate_pkce(method: PkceMethod) -> PkcePair {
    generate_pkce_with(method, &mut rand::rng())
}

pub fn generate_pkce_with<R: RngCore + CryptoRng>(method: PkceMethod, rng: &mut R) -> PkcePair {
    let mut bytes = [0u8; 32];
    rng.fill_bytes(&mut bytes);
    let verifier = URL_SAFE_NO_PAD.encode(bytes);
    PkcePair::from_verifier(&verifier, method).expect("32 random bytes encode to 43 unreserved chars")
}
