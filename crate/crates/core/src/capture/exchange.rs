use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// One recorded HTTP request/response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpExchange {
    pub sequence_no: u64,
    pub timestamp: DateTime<Utc>,
    pub method: String,
    pub url: String,
    pub request_headers: Vec<(String, String)>,
    #[serde(with = "b64")]
    pub request_body: Vec<u8>,
    /// Absent when the request never produced a response.
    pub status: Option<u16>,
    pub response_headers: Vec<(String, String)>,
    #[serde(with = "b64")]
    pub response_body: Vec<u8>,
    pub session_tag: String,
}

impl HttpExchange {
    pub fn request_header(&self, name: &str) -> Option<&str> {
        find_header(&self.request_headers, name)
    }

    pub fn response_header(&self, name: &str) -> Option<&str> {
        find_header(&self.response_headers, name)
    }
}

pub(crate) fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// Append-only sink for exchanges that can be shared across tasks.
///
/// Sequence numbers are assigned on record and are strictly increasing.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    inner: Arc<RecorderInner>,
}

#[derive(Debug, Default)]
struct RecorderInner {
    next_seq: AtomicU64,
    exchanges: Mutex<Vec<HttpExchange>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `ex`, overwriting its sequence number. Returns the assigned number.
    pub fn record(&self, mut ex: HttpExchange) -> u64 {
        let mut guard = self.inner.exchanges.lock().expect("recorder poisoned");
        let seq = self.inner.next_seq.fetch_add(1, Ordering::SeqCst) + 1;
        ex.sequence_no = seq;
        guard.push(ex);
        seq
    }

    pub fn snapshot(&self) -> Vec<HttpExchange> {
        self.inner.exchanges.lock().expect("recorder poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.inner.exchanges.lock().expect("recorder poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serializes exchanges in the native JSON-lines flow format.
pub fn to_native_jsonl(exchanges: &[HttpExchange]) -> String {
    let mut out = String::new();
    for ex in exchanges {
        out.push_str(&serde_json::to_string(ex).expect("exchange serializes"));
        out.push('\n');
    }
    out
}
