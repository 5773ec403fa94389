//! Validates candidate MCP endpoints and prints one JSON line per candidate.
//! Without arguments it probes the bundled look-alike fixtures.
//!
//!     cargo run --example probe_endpoints -- https://mcp.example.com/mcp

use mcp_authscan::flawlab::fixtures::{spawn_fixture, Fixture};
use mcp_authscan::http::{HttpClient, HttpConfig};
use mcp_authscan::mcp_probe::{validate_candidates, CandidateEndpoint, JsonLinesSink, ProbeOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut fixtures = Vec::new();
    let candidates = if args.is_empty() {
        for kind in Fixture::ALL {
            fixtures.push(spawn_fixture(kind).await?);
        }
        fixtures
            .iter()
            .map(|f| CandidateEndpoint::new(&f.url, format!("{:?}", f.kind)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        args.iter()
            .map(|u| CandidateEndpoint::new(u, "cli"))
            .collect::<Result<Vec<_>, _>>()?
    };

    let http = HttpClient::new(HttpConfig::unthrottled());
    let sink = JsonLinesSink::new(std::io::stdout());
    let v = validate_candidates(&http, &candidates, 4, &ProbeOptions::default(), &sink).await;
    eprintln!("{} of {} candidates are MCP endpoints", v.endpoints.len(), candidates.len());
    Ok(())
}
