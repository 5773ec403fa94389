//! Records two interleaved sessions against a delegated flaw lab, writes the
//! capture as a flow log, reads it back and reconstructs the OAuth lifecycles
//! and their delegated chains.
//!
//!     cargo run --example reconstruct_lifecycles

use mcp_authscan::capture::{identify_traffic, ingest_flow_log, LayerClassifier};
use mcp_authscan::flawlab::{scripted_session, spawn_lab, write_capture, FlawLabConfig, Script};
use mcp_authscan::lifecycle::{link_delegated, reconstruct};
use mcp_authscan::FlawId;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lab = spawn_lab(FlawLabConfig::with_flaws([FlawId::F4]).delegated(true)).await?;
    let session = scripted_session(&lab, Script::Interleaved, 11).await?;

    let dir = tempfile::tempdir()?;
    let log = dir.path().join("flows.jsonl");
    write_capture(&log, &session.exchanges)?;
    let ingested = ingest_flow_log(&log)?;
    println!("{} exchanges read from {}", ingested.exchanges.len(), log.display());

    let classifier = LayerClassifier::for_target(&url::Url::parse(&lab.mcp_url)?);
    let traffic = identify_traffic(&ingested.exchanges, &classifier);
    let r = reconstruct(&traffic.items);
    for l in &r.lifecycles {
        println!(
            "lifecycle {} [{:?}] session={} binding={:?} phases={:?} state={:?}",
            l.id, l.layer, l.session_tag, l.binding, l.phase_coverage, l.state()
        );
    }
    for chain in link_delegated(&r.lifecycles) {
        let bridge = chain.bridge.as_ref().map(|b| b.encoding_chain.clone());
        println!(
            "chain L1={} L2={:?} basis={:?} bridge={bridge:?}",
            chain.l1.id,
            chain.l2.as_ref().map(|l| l.id),
            chain.link_basis
        );
    }
    lab.shutdown().await;
    Ok(())
}
