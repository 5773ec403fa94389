//! Scanner-owned receiver standing in for an attacker's redirect endpoint.

use std::net::{IpAddr, SocketAddr};
use std::sync::{Arc, Mutex};

use axum::extract::{Request, State};
use axum::http::header;
use axum::response::{Html, IntoResponse, Response};
use axum::Router;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::capture::parse_query;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaughtRequest {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    /// Second path segment of `/cb/<probe_id>/...`.
    pub probe_id: Option<String>,
    pub method: String,
    pub url: String,
    pub path: String,
    pub query: String,
    pub headers: Vec<(String, String)>,
}

impl CaughtRequest {
    pub fn param(&self, name: &str) -> Option<String> {
        parse_query(&self.query)
            .into_iter()
            .find(|p| p.key == name)
            .map(|p| p.value)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatcherError {
    #[error("{0} is neither loopback nor an operator-declared address")]
    Undeclared(IpAddr),
    #[error("cannot bind callback catcher on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

type Log = Arc<Mutex<Vec<CaughtRequest>>>;

/// Records every request verbatim and answers with a neutral page.
#[derive(Debug)]
pub struct CallbackCatcher {
    addr: SocketAddr,
    log: Log,
    shutdown: Option<oneshot::Sender<()>>,
}

async fn catch(State(log): State<Log>, req: Request) -> Response {
    let host = req
        .headers()
        .get(header::HOST)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let path = req.uri().path().to_string();
    let probe_id = path
        .strip_prefix("/cb/")
        .and_then(|rest| rest.split('/').next())
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    let mut guard = log.lock().unwrap_or_else(|p| p.into_inner());
    let seq = guard.len() as u64 + 1;
    guard.push(CaughtRequest {
        seq,
        timestamp: Utc::now(),
        probe_id,
        method: req.method().to_string(),
        url: format!("http://{host}{}", req.uri()),
        query: req.uri().query().unwrap_or("").to_string(),
        path,
        headers: req
            .headers()
            .iter()
            .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect(),
    });
    Html("<!doctype html><title>Done</title><p>You can close this window.</p>").into_response()
}

/// Binds a catcher on `addr`. Non-loopback addresses must appear in `declared`.
pub async fn run_callback_catcher(
    addr: SocketAddr,
    declared: &[IpAddr],
) -> Result<CallbackCatcher, CatcherError> {
    let ip = addr.ip();
    if !ip.is_loopback() && !declared.contains(&ip) {
        return Err(CatcherError::Undeclared(ip));
    }
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| CatcherError::Bind { addr, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| CatcherError::Bind { addr, source })?;
    let log: Log = Arc::default();
    let app = Router::new().fallback(catch).with_state(log.clone());
    let (tx, rx) = oneshot::channel::<()>();
    tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(CallbackCatcher {
        addr,
        log,
        shutdown: Some(tx),
    })
}

impl CallbackCatcher {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Redirect URI that tags captures with `probe_id`.
    pub fn url_for(&self, probe_id: &str) -> String {
        format!("{}/cb/{probe_id}", self.base_url())
    }

    pub fn entries(&self) -> Vec<CaughtRequest> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn entries_for(&self, probe_id: &str) -> Vec<CaughtRequest> {
        self.entries()
            .into_iter()
            .filter(|e| e.probe_id.as_deref() == Some(probe_id))
            .collect()
    }

    /// The first captured request carrying `code`.
    pub fn find_code(&self, code: &str) -> Option<CaughtRequest> {
        self.entries()
            .into_iter()
            .find(|e| e.param("code").as_deref() == Some(code))
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

impl Drop for CallbackCatcher {
    fn drop(&mut self) {
        self.shutdown();
    }
}
