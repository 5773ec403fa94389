//! Relays requests through the recording proxy and prints what it captured.
//! Pass `--intercept` to write the interception CA to `ca.pem` and terminate
//! TLS for CONNECT tunnels as well.
//!
//!     cargo run --example live_proxy

use std::sync::Arc;

use mcp_authscan::capture::{live_proxy, to_native_jsonl, CertificateAuthority, InterceptConfig, ProxyConfig};
use mcp_authscan::flawlab::{spawn_lab, FlawLabConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let intercept = std::env::args().any(|a| a == "--intercept");
    let mut config = ProxyConfig::plain("127.0.0.1:0".parse()?);
    if intercept {
        let ca = Arc::new(CertificateAuthority::generate()?);
        std::fs::write("ca.pem", ca.cert_pem())?;
        config.intercept = Some(InterceptConfig { ca, upstream_roots: vec![] });
    }
    let mut proxy = live_proxy(config).await?;
    println!("proxy listening on {}", proxy.addr);

    let lab = spawn_lab(FlawLabConfig::default()).await?;
    let client = reqwest::Client::builder()
        .proxy(reqwest::Proxy::all(format!("http://{}", proxy.addr))?)
        .build()?;
    for path in ["/.well-known/oauth-protected-resource", "/mcp"] {
        let status = client.get(format!("{}{path}", lab.mcp_url.trim_end_matches("/mcp"))).send().await?.status();
        println!("GET {path} -> {status}");
    }

    let mut seen = Vec::new();
    while seen.len() < 2 {
        match proxy.recv().await {
            Some(ex) => seen.push(ex),
            None => break,
        }
    }
    print!("{}", to_native_jsonl(&seen));
    lab.shutdown().await;
    Ok(())
}
