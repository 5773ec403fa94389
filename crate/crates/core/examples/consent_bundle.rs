//! Scans a lab whose consent page is skipped and prints the manual test-link
//! bundle an operator would walk through.
//!
//!     cargo run --example consent_bundle

use mcp_authscan::detectors::ConsentMode;
use mcp_authscan::flawlab::{spawn_lab, FlawLabConfig};
use mcp_authscan::http::HttpConfig;
use mcp_authscan::mcp_probe::CandidateEndpoint;
use mcp_authscan::report::{scan, ScanConfig};
use mcp_authscan::FlawId;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lab = spawn_lab(FlawLabConfig::with_flaws([FlawId::F6])).await?;
    let mut config = ScanConfig::new(vec![CandidateEndpoint::new(&lab.mcp_url, "flawlab")?]);
    config.http = HttpConfig::unthrottled();
    config.consent = ConsentMode::BundleOnly;
    let report = scan(&config).await?;

    let target = &report.targets[0];
    if let Some(f6) = target.finding(FlawId::F6) {
        println!("F6: {:?} ({})\n", f6.verdict, f6.detail);
    }
    match &target.consent_bundle {
        Some(bundle) => print!("{}", bundle.to_markdown()),
        None => println!("no consent bundle produced"),
    }
    lab.shutdown().await;
    Ok(())
}
