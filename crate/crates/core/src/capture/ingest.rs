//! Flow-log ingestion: native JSON lines and HAR 1.2.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::exchange::HttpExchange;
use super::CaptureError;

/// Result of reading a flow log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub exchanges: Vec<HttpExchange>,
    /// Records that could not be parsed and were dropped.
    pub skipped: usize,
}

/// Maximum share of unparseable records before ingestion fails outright.
pub const MAX_SKIP_RATIO: f64 = 0.10;

pub fn ingest_flow_log(path: &Path) -> Result<Ingested, CaptureError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaptureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let fallback_tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "capture".into());
    ingest_str(&text, &fallback_tag)
}

/// Parses flow-log text. `fallback_tag` names the session for HAR entries without a page ref.
pub fn ingest_str(text: &str, fallback_tag: &str) -> Result<Ingested, CaptureError> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Ingested {
            exchanges: vec![],
            skipped: 0,
        });
    }
    if let Ok(har) = serde_json::from_str::<Har>(trimmed) {
        return Ok(finish(har_exchanges(har, fallback_tag), 0));
    }

    let mut exchanges = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        total += 1;
        match serde_json::from_str::<HttpExchange>(line) {
            Ok(ex) => exchanges.push(ex),
            Err(_) => skipped += 1,
        }
    }
    if skipped as f64 > total as f64 * MAX_SKIP_RATIO {
        return Err(CaptureError::TooManyCorrupt { skipped, total });
    }
    if skipped > 0 {
        tracing::warn!(skipped, total, "skipped unparseable flow-log records");
    }
    Ok(finish(exchanges, skipped))
}

fn finish(mut exchanges: Vec<HttpExchange>, skipped: usize) -> Ingested {
    // stable: ties keep file order
    exchanges.sort_by_key(|e| e.timestamp);
    for (i, ex) in exchanges.iter_mut().enumerate() {
        ex.sequence_no = i as u64 + 1;
    }
    Ingested { exchanges, skipped }
}

#[derive(Deserialize)]
struct Har {
    log: HarLog,
}

#[derive(Deserialize)]
struct HarLog {
    #[serde(default)]
    entries: Vec<HarEntry>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarEntry {
    #[serde(default)]
    pageref: Option<String>,
    started_date_time: DateTime<Utc>,
    request: HarRequest,
    response: HarResponse,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarRequest {
    method: String,
    url: String,
    #[serde(default)]
    headers: Vec<HarHeader>,
    #[serde(default)]
    post_data: Option<HarPostData>,
}

#[derive(Deserialize)]
struct HarPostData {
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
struct HarResponse {
    status: i64,
    #[serde(default)]
    headers: Vec<HarHeader>,
    #[serde(default)]
    content: Option<HarContent>,
}

#[derive(Deserialize)]
struct HarContent {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    encoding: Option<String>,
}

#[derive(Deserialize)]
struct HarHeader {
    name: String,
    value: String,
}

fn har_exchanges(har: Har, fallback_tag: &str) -> Vec<HttpExchange> {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;

    har.log
        .entries
        .into_iter()
        .map(|e| {
            let body = e.response.content.and_then(|c| {
                let text = c.text?;
                Some(if c.encoding.as_deref() == Some("base64") {
                    STANDARD.decode(text.as_bytes()).unwrap_or_else(|_| text.into_bytes())
                } else {
                    text.into_bytes()
                })
            });
            HttpExchange {
                sequence_no: 0,
                timestamp: e.started_date_time,
                method: e.request.method,
                url: e.request.url,
                request_headers: e
                    .request
                    .headers
                    .into_iter()
                    .map(|h| (h.name, h.value))
                    .collect(),
                request_body: e
                    .request
                    .post_data
                    .and_then(|p| p.text)
                    .map(String::into_bytes)
                    .unwrap_or_default(),
                // HAR uses 0 (or negative) for "no response"
                status: u16::try_from(e.response.status).ok().filter(|s| *s > 0),
                response_headers: e
                    .response
                    .headers
                    .into_iter()
                    .map(|h| (h.name, h.value))
                    .collect(),
                response_body: body.unwrap_or_default(),
                session_tag: e.pageref.unwrap_or_else(|| fallback_tag.to_string()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::exchange::to_native_jsonl;

    const HAR: &str = r#"{"log":{"version":"1.2","creator":{"name":"t","version":"1"},
      "pages":[{"id":"page_1"}],
      "entries":[
        {"pageref":"page_1","startedDateTime":"2025-06-01T10:00:01.000Z",
         "request":{"method":"POST","url":"https://as.example/token","headers":[{"name":"Content-Type","value":"application/x-www-form-urlencoded"}],
           "postData":{"mimeType":"application/x-www-form-urlencoded","text":"grant_type=authorization_code&code=C1"}},
         "response":{"status":200,"headers":[],"content":{"mimeType":"application/json","text":"{\"access_token\":\"t\"}"}}},
        {"pageref":"page_1","startedDateTime":"2025-06-01T10:00:00.000Z",
         "request":{"method":"GET","url":"https://as.example/authorize?client_id=a&state=s&redirect_uri=http%3A%2F%2F127.0.0.1%2Fcb","headers":[]},
         "response":{"status":302,"headers":[{"name":"Location","value":"http://127.0.0.1/cb?code=C1&state=s"}],"content":{"size":0}}}
      ]}}"#;

    #[test]
    fn har_entries_become_ordered_exchanges() {
        let got = ingest_str(HAR, "file").unwrap();
        assert_eq!(got.exchanges.len(), 2);
        assert_eq!(got.skipped, 0);
        assert!(got.exchanges[0].url.contains("/authorize"));
        assert!(got.exchanges[1].url.ends_with("/token"));
        assert_eq!(got.exchanges[0].sequence_no, 1);
        assert_eq!(got.exchanges[1].session_tag, "page_1");
        assert_eq!(
            got.exchanges[1].request_body,
            b"grant_type=authorization_code&code=C1"
        );
    }

    #[test]
    fn empty_input_is_empty_capture() {
        let got = ingest_str("", "x").unwrap();
        assert!(got.exchanges.is_empty());
        let got = ingest_str("\n  \n", "x").unwrap();
        assert!(got.exchanges.is_empty());
    }

    fn sample(n: usize) -> Vec<HttpExchange> {
        let base: DateTime<Utc> = "2025-06-01T10:00:00Z".parse().unwrap();
        (0..n)
            .map(|i| HttpExchange {
                sequence_no: i as u64 + 1,
                timestamp: base + chrono::Duration::milliseconds(i as i64 * 10),
                method: "GET".into(),
                url: format!("https://h.example/p{i}?state=s{i}"),
                request_headers: vec![("accept".into(), "*/*".into())],
                request_body: vec![],
                status: Some(200),
                response_headers: vec![],
                response_body: vec![0, 159, 146, 150],
                session_tag: "s".into(),
            })
            .collect()
    }

    #[test]
    fn one_corrupt_line_in_twenty_is_tolerated() {
        let text = to_native_jsonl(&sample(19));
        let mut lines: Vec<&str> = text.lines().collect();
        lines.insert(5, "{not json");
        let got = ingest_str(&lines.join("\n"), "x").unwrap();
        assert_eq!(got.exchanges.len(), 19);
        assert_eq!(got.skipped, 1);
    }

    #[test]
    fn mostly_corrupt_log_is_rejected() {
        let text = to_native_jsonl(&sample(5));
        let text = format!("{text}garbage\nmore garbage\n");
        assert!(matches!(
            ingest_str(&text, "x"),
            Err(CaptureError::TooManyCorrupt {
                skipped: 2,
                total: 7
            })
        ));
    }

    #[test]
    fn native_export_reingests_equal() {
        let first = ingest_str(&to_native_jsonl(&sample(6)), "x").unwrap();
        let again = ingest_str(&to_native_jsonl(&first.exchanges), "x").unwrap();
        assert_eq!(first, again);
    }
}
