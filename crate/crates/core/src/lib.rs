//! Scanner for OAuth-protected remote MCP servers.
//!
//! The crate validates candidate endpoints with the MCP `initialize` handshake,
//! reconstructs OAuth authorization lifecycles (including delegated second-hop
//! flows) from captured traffic, and detects nine authorization flaw types
//! through passive rules, bounded active probes and UI-assisted confirmation.
//! A bundled, flaw-toggleable mock deployment ([`flawlab`]) serves as ground truth.
//!
//! Pipeline, in order:
//!
//! 1. [`mcp_probe`]: handshake validation and authentication classification.
//! 2. [`oauth`]: discovery, registration, PKCE, authorization and token exchange.
//! 3. [`capture`]: OAuth parameter extraction and L1/L2 layer classification.
//! 4. [`lifecycle`]: correlation into lifecycles and delegated chains.
//! 5. [`detectors`]: passive checks, active probes and consent assistance.
//! 6. [`report`]: scan orchestration and rendering.

pub mod capture;
pub mod detectors;
pub mod flawlab;
pub mod http;
pub mod lifecycle;
pub mod mcp_probe;
pub mod oauth;
pub mod report;
pub mod taxonomy;

pub use taxonomy::{Category, EvidenceLevel, FlawId};
