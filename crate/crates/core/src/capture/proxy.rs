//! In-process forward proxy that records every exchange it relays.
//!
//! Plain-HTTP requests are forwarded and emitted. `CONNECT` tunnels are passed
//! through untouched unless interception is configured, in which case the proxy
//! terminates TLS with a leaf certificate minted by its own CA and records the
//! decrypted exchanges. Interception is meant for scanner-owned sessions only.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use bytes::Bytes;
use chrono::Utc;
use http_body_util::{BodyExt, Full};
use hyper::body::Incoming;
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper::{Method, Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use rcgen::{BasicConstraints, CertificateParams, DnType, IsCa, KeyPair};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};

use super::exchange::HttpExchange;
use super::CaptureError;

const HOP_BY_HOP: &[&str] = &[
    "connection",
    "proxy-connection",
    "keep-alive",
    "transfer-encoding",
    "te",
    "trailer",
    "upgrade",
    "proxy-authorization",
    "host",
    "content-length",
];

/// Certificate authority used to mint per-host interception certificates.
pub struct CertificateAuthority {
    cert: rcgen::Certificate,
    key: KeyPair,
    leaves: Mutex<HashMap<String, Arc<rustls::ServerConfig>>>,
}

impl std::fmt::Debug for CertificateAuthority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CertificateAuthority").finish_non_exhaustive()
    }
}

impl CertificateAuthority {
    pub fn generate() -> Result<Self, CaptureError> {
        let key = KeyPair::generate().map_err(intercept_err)?;
        let mut params = CertificateParams::default();
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        params
            .distinguished_name
            .push(DnType::CommonName, "mcp-authscan interception CA");
        let cert = params.self_signed(&key).map_err(intercept_err)?;
        Ok(Self {
            cert,
            key,
            leaves: Mutex::new(HashMap::new()),
        })
    }

    /// PEM the operator installs in the client's trust store.
    pub fn cert_pem(&self) -> String {
        self.cert.pem()
    }

    pub fn cert_der(&self) -> CertificateDer<'static> {
        self.cert.der().clone()
    }

    fn server_config(&self, host: &str) -> Result<Arc<rustls::ServerConfig>, CaptureError> {
        if let Some(cfg) = self.leaves.lock().expect("ca poisoned").get(host) {
            return Ok(cfg.clone());
        }
        let key = KeyPair::generate().map_err(intercept_err)?;
        let params = CertificateParams::new(vec![host.to_string()]).map_err(intercept_err)?;
        let leaf = params
            .signed_by(&key, &self.cert, &self.key)
            .map_err(intercept_err)?;
        let chain = vec![leaf.der().clone(), self.cert.der().clone()];
        let der = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key.serialize_der()));
        let cfg = rustls::ServerConfig::builder_with_provider(Arc::new(
            rustls::crypto::ring::default_provider(),
        ))
        .with_safe_default_protocol_versions()
        .map_err(intercept_err)?
        .with_no_client_auth()
        .with_single_cert(chain, der)
        .map_err(intercept_err)?;
        let cfg = Arc::new(cfg);
        self.leaves
            .lock()
            .expect("ca poisoned")
            .insert(host.to_string(), cfg.clone());
        Ok(cfg)
    }
}

fn intercept_err(e: impl std::fmt::Display) -> CaptureError {
    CaptureError::Intercept(e.to_string())
}

/// TLS interception settings.
#[derive(Debug, Clone)]
pub struct InterceptConfig {
    pub ca: Arc<CertificateAuthority>,
    /// Extra roots trusted when the proxy connects upstream.
    pub upstream_roots: Vec<CertificateDer<'static>>,
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    pub intercept: Option<InterceptConfig>,
}

impl ProxyConfig {
    pub fn plain(listen: SocketAddr) -> Self {
        Self {
            listen,
            intercept: None,
        }
    }
}

/// Handle to a running proxy. Exchanges arrive on a single-consumer stream.
#[derive(Debug)]
pub struct LiveProxy {
    pub addr: SocketAddr,
    rx: mpsc::UnboundedReceiver<HttpExchange>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl LiveProxy {
    pub async fn recv(&mut self) -> Option<HttpExchange> {
        self.rx.recv().await
    }

    /// Everything emitted so far, without waiting.
    pub fn drain(&mut self) -> Vec<HttpExchange> {
        let mut out = Vec::new();
        while let Ok(ex) = self.rx.try_recv() {
            out.push(ex);
        }
        out
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

impl Drop for LiveProxy {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct ProxyState {
    tx: mpsc::UnboundedSender<HttpExchange>,
    seq: AtomicU64,
    client: reqwest::Client,
    intercept: Option<InterceptConfig>,
}

/// Binds the proxy and starts serving in the background.
pub async fn live_proxy(config: ProxyConfig) -> Result<LiveProxy, CaptureError> {
    let listener = TcpListener::bind(config.listen)
        .await
        .map_err(|source| CaptureError::ProxyBind {
            addr: config.listen,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| CaptureError::ProxyBind {
        addr: config.listen,
        source,
    })?;

    let mut builder = reqwest::Client::builder()
        .redirect(reqwest::redirect::Policy::none())
        .no_proxy();
    if let Some(ic) = &config.intercept {
        for root in &ic.upstream_roots {
            let cert = reqwest::Certificate::from_der(root).map_err(intercept_err)?;
            builder = builder.add_root_certificate(cert);
        }
    }
    let client = builder.build().map_err(intercept_err)?;

    let (tx, rx) = mpsc::unbounded_channel();
    let (stop_tx, mut stop_rx) = oneshot::channel();
    let state = Arc::new(ProxyState {
        tx,
        seq: AtomicU64::new(0),
        client,
        intercept: config.intercept,
    });

    tokio::spawn(async move {
        let mut conn_no = 0u64;
        loop {
            tokio::select! {
                _ = &mut stop_rx => break,
                accepted = listener.accept() => {
                    let Ok((stream, _)) = accepted else { continue };
                    conn_no += 1;
                    let tag = format!("conn-{conn_no}");
                    let state = state.clone();
                    tokio::spawn(async move {
                        let svc = service_fn(move |req| handle(req, state.clone(), tag.clone()));
                        let _ = http1::Builder::new()
                            .serve_connection(TokioIo::new(stream), svc)
                            .with_upgrades()
                            .await;
                    });
                }
            }
        }
    });

    Ok(LiveProxy {
        addr,
        rx,
        shutdown: Some(stop_tx),
    })
}

fn simple(status: StatusCode, msg: &str) -> Response<Full<Bytes>> {
    let mut resp = Response::new(Full::new(Bytes::from(msg.to_string())));
    *resp.status_mut() = status;
    resp
}

async fn handle(
    req: Request<Incoming>,
    state: Arc<ProxyState>,
    tag: String,
) -> Result<Response<Full<Bytes>>, Infallible> {
    if req.method() == Method::CONNECT {
        let Some(authority) = req.uri().authority().cloned() else {
            return Ok(simple(StatusCode::BAD_REQUEST, "CONNECT needs an authority"));
        };
        let state = state.clone();
        tokio::spawn(async move {
            let upgraded = match hyper::upgrade::on(req).await {
                Ok(u) => u,
                Err(e) => {
                    tracing::debug!(error = %e, "upgrade failed");
                    return;
                }
            };
            match state.intercept.clone() {
                None => {
                    if let Ok(mut upstream) = TcpStream::connect(authority.as_str()).await {
                        let mut io = TokioIo::new(upgraded);
                        let _ = tokio::io::copy_bidirectional(&mut io, &mut upstream).await;
                    }
                }
                Some(ic) => {
                    let Ok(cfg) = ic.ca.server_config(authority.host()) else {
                        return;
                    };
                    let acceptor = tokio_rustls::TlsAcceptor::from(cfg);
                    let Ok(tls) = acceptor.accept(TokioIo::new(upgraded)).await else {
                        return;
                    };
                    let base = format!("https://{authority}");
                    let svc = service_fn(move |r| {
                        let state = state.clone();
                        let tag = tag.clone();
                        let base = base.clone();
                        async move { Ok::<_, Infallible>(forward(r, Some(&base), &state, &tag).await) }
                    });
                    let _ = http1::Builder::new()
                        .serve_connection(TokioIo::new(tls), svc)
                        .await;
                }
            }
        });
        return Ok(Response::new(Full::new(Bytes::new())));
    }
    Ok(forward(req, None, &state, &tag).await)
}

async fn forward(
    req: Request<Incoming>,
    base: Option<&str>,
    state: &ProxyState,
    tag: &str,
) -> Response<Full<Bytes>> {
    let url = match base {
        Some(b) => format!(
            "{b}{}",
            req.uri().path_and_query().map(|p| p.as_str()).unwrap_or("/")
        ),
        None if req.uri().authority().is_some() => req.uri().to_string(),
        None => return simple(StatusCode::BAD_REQUEST, "absolute-form URI required"),
    };
    let method = req.method().clone();
    let request_headers: Vec<(String, String)> = req
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
        .collect();
    let timestamp = Utc::now();
    let body = match req.into_body().collect().await {
        Ok(b) => b.to_bytes(),
        Err(_) => return simple(StatusCode::BAD_REQUEST, "unreadable body"),
    };

    let Ok(rmethod) = reqwest::Method::from_bytes(method.as_str().as_bytes()) else {
        return simple(StatusCode::BAD_REQUEST, "bad method");
    };
    let mut upstream = state.client.request(rmethod, &url);
    for (k, v) in &request_headers {
        if !HOP_BY_HOP.contains(&k.to_ascii_lowercase().as_str()) {
            upstream = upstream.header(k, v);
        }
    }
    let result = upstream.body(body.to_vec()).send().await;

    let mut ex = HttpExchange {
        sequence_no: state.seq.fetch_add(1, Ordering::SeqCst) + 1,
        timestamp,
        method: method.to_string(),
        url,
        request_headers,
        request_body: body.to_vec(),
        status: None,
        response_headers: vec![],
        response_body: vec![],
        session_tag: tag.to_string(),
    };

    let resp = match result {
        Ok(r) => {
            let status = r.status();
            let headers: Vec<(String, String)> = r
                .headers()
                .iter()
                .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
                .collect();
            let bytes = r.bytes().await.unwrap_or_default();
            ex.status = Some(status.as_u16());
            ex.response_headers = headers.clone();
            ex.response_body = bytes.to_vec();
            let mut resp = Response::new(Full::new(bytes));
            *resp.status_mut() = StatusCode::from_u16(status.as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
            for (k, v) in headers {
                if HOP_BY_HOP.contains(&k.as_str()) {
                    continue;
                }
                if let (Ok(name), Ok(value)) = (
                    hyper::header::HeaderName::from_bytes(k.as_bytes()),
                    hyper::header::HeaderValue::from_str(&v),
                ) {
                    resp.headers_mut().append(name, value);
                }
            }
            resp
        }
        Err(e) => simple(StatusCode::BAD_GATEWAY, &format!("upstream error: {e}")),
    };
    let _ = state.tx.send(ex);
    resp
}
