use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcp_authscan::detectors::{ConsentAnswers, ConsentMode, ProbeBudget};
use mcp_authscan::flawlab::{
    scripted_session, spawn_lab, write_capture, AuthMode, BridgeEncoding, FlawLabConfig, Script,
};
use mcp_authscan::http::{HttpClient, HttpConfig};
use mcp_authscan::mcp_probe::{
    parse_target_file, validate_candidates, CandidateEndpoint, CandidateOutcome, JsonLinesSink,
    ProbeOptions,
};
use mcp_authscan::report::{scan, CaptureSource, ReportFormat, ScanConfig, ScanMode};
use mcp_authscan::FlawId;

#[derive(Parser)]
#[command(name = "mcp-authscan", version, about = "OAuth flaw scanner for remote MCP servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate endpoints, reconstruct their authorization flows and test for flaws.
    Scan(ScanArgs),
    /// Only validate endpoints and classify their authentication.
    Probe(ProbeArgs),
    /// Host the flaw lab mock deployment until interrupted.
    Flawlab(LabArgs),
}

#[derive(Args)]
struct TargetArgs {
    /// File with one `url[,label]` per line.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// A single target URL; may be repeated.
    #[arg(long = "target")]
    target: Vec<String>,
}

impl TargetArgs {
    fn load(&self) -> Result<Vec<CandidateEndpoint>, String> {
        let mut out = Vec::new();
        if let Some(path) = &self.targets {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            out.extend(parse_target_file(&text).map_err(|e| format!("{}: {e}", path.display()))?);
        }
        for t in &self.target {
            out.push(CandidateEndpoint::new(t, "cli").map_err(|e| e.to_string())?);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PassiveOnly,
    Active,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConsentArg {
    /// Check the consent page HTML for the redirect_uri.
    Html,
    /// Only emit test links; the verdict needs a human.
    Bundle,
    /// Ask the checklist questions on the terminal.
    Interactive,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    targets: TargetArgs,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    #[arg(long = "budget.max-hops", default_value_t = 5)]
    max_hops: u32,
    #[arg(long = "budget.max-probes", default_value_t = 4)]
    max_probes: u32,
    /// Report active probes as inconclusive without sending them.
    #[arg(long)]
    dry_run: bool,
    /// Analyse a recorded flow log (JSON lines or HAR) instead of driving a flow.
    #[arg(long, conflicts_with = "proxy")]
    flow_log: Option<PathBuf>,
    /// Capture an operator-driven flow through a proxy on this address.
    #[arg(long)]
    proxy: Option<SocketAddr>,
    #[arg(long, default_value_t = 60)]
    proxy_window_secs: u64,
    #[arg(long, default_value = "127.0.0.1:0")]
    catcher: SocketAddr,
    /// Non-loopback address the callback catcher may bind; may be repeated.
    #[arg(long = "allow-catcher-ip")]
    allow_catcher_ip: Vec<IpAddr>,
    #[arg(long, value_enum, default_value = "html")]
    consent: ConsentArg,
    /// JSON file with recorded consent answers; overrides --consent.
    #[arg(long)]
    consent_answers: Option<PathBuf>,
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to markdown for `.md` outputs and JSON otherwise.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Write the scanner's own recorded exchanges here.
    #[arg(long)]
    evidence_log: Option<PathBuf>,
    #[arg(long, env = "MCP_AUTHSCAN_CONCURRENCY", default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value = mcp_authscan::mcp_probe::DEFAULT_PROTOCOL_VERSION)]
    protocol_version: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Markdown,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    targets: TargetArgs,
    /// JSON lines output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "MCP_AUTHSCAN_CONCURRENCY", default_value_t = 8)]
    concurrency: usize,
    #[arg(long, default_value = mcp_authscan::mcp_probe::DEFAULT_PROTOCOL_VERSION)]
    protocol_version: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuthArg {
    None,
    Static,
    Oauth,
}

#[derive(Clone, Copy, ValueEnum)]
enum BridgeArg {
    Opaque,
    Signed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScriptArg {
    Single,
    Interleaved,
}

#[derive(Args)]
struct LabArgs {
    /// JSON configuration; flags given here are applied on top.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated flaw ids to switch on, e.g. F1,F5.
    #[arg(long, value_delimiter = ',')]
    flags: Vec<String>,
    /// Variant selector such as F5=plain; may be repeated.
    #[arg(long)]
    variant: Vec<String>,
    #[arg(long)]
    delegated: bool,
    #[arg(long, value_enum)]
    auth: Option<AuthArg>,
    #[arg(long, value_enum)]
    bridge: Option<BridgeArg>,
    /// Validate redirect_uri only after this many internal redirects.
    #[arg(long)]
    validation_hop: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mcp_port: Option<u16>,
    #[arg(long)]
    auth_port: Option<u16>,
    #[arg(long)]
    upstream_port: Option<u16>,
    /// Run a scripted client session and write its capture to --capture-out.
    #[arg(long, value_enum, requires = "capture_out")]
    script: Option<ScriptArg>,
    #[arg(long)]
    capture_out: Option<PathBuf>,
    /// Write the lab request log as JSON lines on shutdown.
    #[arg(long)]
    request_log: Option<PathBuf>,
}

fn http_config() -> HttpConfig {
    HttpConfig::default().with_env_overrides()
}

async fn run_scan(a: ScanArgs) -> Result<u8, String> {
    let targets = a.targets.load()?;
    let mut config = ScanConfig::new(targets);
    config.mode = match a.mode {
        ModeArg::PassiveOnly => ScanMode::PassiveOnly,
        ModeArg::Active => ScanMode::Active,
        ModeArg::Full => ScanMode::Full,
    };
    config.budget = ProbeBudget {
        max_redirect_hops: a.max_hops,
        max_probes_per_flaw: a.max_probes,
        dry_run: a.dry_run,
    };
    config.capture_source = match (a.flow_log, a.proxy) {
        (Some(p), _) => CaptureSource::FlowLog(p),
        (None, Some(listen)) => CaptureSource::LiveProxy {
            listen,
            window: Duration::from_secs(a.proxy_window_secs),
        },
        (None, None) => CaptureSource::Drive,
    };
    config.catcher_address = a.catcher;
    config.declared_catcher_ips = a.allow_catcher_ip.clone();
    config.consent = match (&a.consent_answers, a.consent) {
        (Some(p), _) => {
            let raw = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let answers: ConsentAnswers =
                serde_json::from_slice(&raw).map_err(|e| format!("{}: {e}", p.display()))?;
            ConsentMode::Recorded(answers)
        }
        (None, ConsentArg::Html) => ConsentMode::HtmlAssertions,
        (None, ConsentArg::Bundle) => ConsentMode::BundleOnly,
        (None, ConsentArg::Interactive) => ConsentMode::Interactive,
    };
    config.scope = a.scope;
    config.output = a.out.clone().map(|p| {
        let f = match a.format {
            Some(FormatArg::Json) => ReportFormat::Json,
            Some(FormatArg::Markdown) => ReportFormat::Markdown,
            None => ReportFormat::from_path(&p),
        };
        (p, f)
    });
    config.evidence_log = a.evidence_log;
    config.concurrency = a.concurrency;
    config.http = http_config();
    config.probe.protocol_version = a.protocol_version;
    config.probe.max_redirect_hops = a.max_hops;

    let report = scan(&config).await.map_err(|e| e.to_string())?;
    if a.out.is_none() {
        let f = match a.format {
            Some(FormatArg::Markdown) => ReportFormat::Markdown,
            _ => ReportFormat::Json,
        };
        print!("{}", String::from_utf8_lossy(&mcp_authscan::report::render_report(&report, f)));
    } else {
        let t = &report.totals;
        eprintln!(
            "{} target(s), {} reachable, {} with findings",
            t.targets, t.reachable, t.affected_targets
        );
    }
    Ok(report.exit_status().code() as u8)
}

async fn run_probe(a: ProbeArgs) -> Result<u8, String> {
    let targets = a.targets.load()?;
    if targets.is_empty() {
        return Err("no targets given".into());
    }
    let http = HttpClient::new(http_config());
    let opts = ProbeOptions {
        protocol_version: a.protocol_version,
        ..ProbeOptions::default()
    };
    let writer: Box<dyn std::io::Write + Send> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let sink = JsonLinesSink::new(writer);
    let v = validate_candidates(&http, &targets, a.concurrency, &opts, &sink).await;
    let reachable = v
        .records
        .iter()
        .any(|r| matches!(r.outcome, CandidateOutcome::ValidMcp | CandidateOutcome::AuthChallenge));
    Ok(if reachable { 0 } else { 2 })
}

fn lab_config(a: &LabArgs) -> Result<FlawLabConfig, String> {
    let mut c = match &a.config {
        Some(p) => {
            let raw = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_slice(&raw).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => FlawLabConfig::default(),
    };
    for f in a.flags.iter().filter(|f| !f.trim().is_empty()) {
        c.flags.insert(FlawId::from_str(f.trim()).map_err(|e| e.to_string())?, true);
    }
    for v in &a.variant {
        c.set_variant(v).map_err(|e| e.to_string())?;
    }
    if a.delegated || c.requires_delegation() {
        c.delegated_mode = true;
    }
    if let Some(m) = a.auth {
        c.auth_mode = match m {
            AuthArg::None => AuthMode::None,
            AuthArg::Static => AuthMode::StaticToken,
            AuthArg::Oauth => AuthMode::Oauth,
        };
    }
    if let Some(b) = a.bridge {
        c.bridge_encoding = match b {
            BridgeArg::Opaque => BridgeEncoding::OpaqueMap,
            BridgeArg::Signed => BridgeEncoding::SignedNested,
        };
    }
    if a.validation_hop.is_some() {
        c.redirect_validation_hop = a.validation_hop;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    c.ports.mcp = a.mcp_port.unwrap_or(c.ports.mcp);
    c.ports.auth = a.auth_port.unwrap_or(c.ports.auth);
    c.ports.upstream = a.upstream_port.unwrap_or(c.ports.upstream);
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

async fn run_lab(a: LabArgs) -> Result<u8, String> {
    let config = lab_config(&a)?;
    let seed = config.seed;
    let lab = spawn_lab(config).await.map_err(|e| e.to_string())?;
    println!("mcp       {}", lab.mcp_url);
    println!("auth      {}", lab.auth_server_url);
    if let Some(u) = &lab.upstream_url {
        println!("upstream  {u}");
    }
    let flaws: Vec<String> = lab.config().enabled().iter().map(|f| f.to_string()).collect();
    println!("flaws     {}", if flaws.is_empty() { "none".into() } else { flaws.join(",") });

    if let (Some(script), Some(path)) = (a.script, &a.capture_out) {
        let script = match script {
            ScriptArg::Single => Script::Single,
            ScriptArg::Interleaved => Script::Interleaved,
        };
        let session = scripted_session(&lab, script, seed).await.map_err(|e| e.to_string())?;
        write_capture(path, &session.exchanges).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("capture   {} ({} exchanges)", path.display(), session.exchanges.len());
    }
    tokio::signal::ctrl_c().await.map_err(|e| e.to_string())?;
    if let Some(p) = &a.request_log {
        let lines: String = lab
            .request_log()
            .iter()
            .map(|r| serde_json::to_string(r).expect("log entry serializes") + "\n")
            .collect();
        std::fs::write(p, lines).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    lab.shutdown().await;
    Ok(0)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scan(a) => run_scan(a).await,
        Command::Probe(a) => run_probe(a).await,
        Command::Flawlab(a) => run_lab(a).await,
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
