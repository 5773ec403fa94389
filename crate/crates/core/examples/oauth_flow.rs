//! Runs one authorization code flow with PKCE against the flaw lab:
//! discovery, dynamic registration, consent, callback and token exchange.
//!
//!     cargo run --example oauth_flow

use mcp_authscan::flawlab::{spawn_lab, FlawLabConfig};
use mcp_authscan::http::{HttpClient, HttpConfig};
use mcp_authscan::oauth::{
    discover, exchange_code, generate_pkce, register_client, AgentConfig, AgentOutcome,
    AuthorizationRequest, BrowserAgent, PkceMethod,
};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lab = spawn_lab(FlawLabConfig::default()).await?;
    let http = HttpClient::new(HttpConfig::unthrottled());

    let discovery = discover(&http, &lab.mcp_url).await?;
    let meta = &discovery.auth_server;
    println!("issuer: {}", meta.issuer);
    for url in &discovery.attempted {
        println!("  fetched {url}");
    }

    let redirect = "http://127.0.0.1:8976/callback".to_string();
    let client = register_client(&http, meta, std::slice::from_ref(&redirect), "oauth_flow example").await?;
    println!("client_id: {}", client.client_id);

    let pkce = generate_pkce(PkceMethod::S256);
    let url = AuthorizationRequest::new(&meta.authorization_endpoint, &client.client_id)
        .with_redirect_uri(&redirect)
        .with_state("example-state-0123456789abcdef")
        .with_pkce(&pkce.challenge, pkce.method.as_str())
        .with_resource(&lab.mcp_url)
        .to_url();
    println!("authorize: {url}");

    let run = BrowserAgent::new(AgentConfig::default())
        .run(&http, &url, std::slice::from_ref(&redirect))
        .await?;
    for step in &run.transcript {
        println!("  {} {} -> {:?}", step.method, step.url, step.status);
    }
    let AgentOutcome::Callback { code: Some(code), state, .. } = &run.outcome else {
        return Err(format!("flow stopped early: {:?}", run.outcome).into());
    };
    println!("callback state: {state:?}");

    let token = exchange_code(&http, meta, code, Some(&pkce.verifier), &client, &redirect).await?;
    println!("token issued: {}", token.is_issued());
    lab.shutdown().await;
    Ok(())
}
