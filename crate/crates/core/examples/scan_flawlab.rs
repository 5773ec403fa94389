//! Spins up a flaw lab with the given flaws and scans it in full mode.
//!
//!     cargo run --example scan_flawlab -- F1 F5 F7

use mcp_authscan::flawlab::{spawn_lab, FlawLabConfig};
use mcp_authscan::http::HttpConfig;
use mcp_authscan::mcp_probe::CandidateEndpoint;
use mcp_authscan::report::{render_report, scan, ReportFormat, ScanConfig};
use mcp_authscan::FlawId;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let flaws = std::env::args()
        .skip(1)
        .map(|a| a.parse::<FlawId>())
        .collect::<Result<Vec<_>, _>>()?;
    let lab = spawn_lab(FlawLabConfig::with_flaws(flaws)).await?;

    let mut config = ScanConfig::new(vec![CandidateEndpoint::new(&lab.mcp_url, "flawlab")?]);
    config.http = HttpConfig::unthrottled();
    let report = scan(&config).await?;
    print!("{}", String::from_utf8_lossy(&render_report(&report, ReportFormat::Markdown)));
    println!("\nexit status: {:?}", report.exit_status());
    lab.shutdown().await;
    Ok(())
}
