//! Decoding of routing context nested inside an OAuth `state` value.

use base64::engine::general_purpose::{URL_SAFE, URL_SAFE_NO_PAD};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Transform layers tried, outermost first, at most this many before the JSON terminal.
pub const MAX_DECODE_DEPTH: usize = 3;
pub const MAX_DECODED_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Urlencode,
    Base64url,
    Json,
}

/// Exact variant of one transform, kept so re-encoding is byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingStep {
    /// Everything outside `A-Z a-z 0-9 - . _ ~` escaped with uppercase hex.
    UrlencodeStrict,
    /// Like `encodeURIComponent`: additionally leaves `! ' ( ) *` alone.
    UrlencodeComponent,
    Base64url { padded: bool },
    Json,
}

impl EncodingStep {
    pub fn kind(self) -> Encoding {
        match self {
            EncodingStep::UrlencodeStrict | EncodingStep::UrlencodeComponent => Encoding::Urlencode,
            EncodingStep::Base64url { .. } => Encoding::Base64url,
            EncodingStep::Json => Encoding::Json,
        }
    }

    /// Applies this transform to `input`. `Json` is the identity on JSON text.
    pub fn apply(self, input: &str) -> String {
        match self {
            EncodingStep::UrlencodeStrict => percent_encode(input, b""),
            EncodingStep::UrlencodeComponent => percent_encode(input, b"!'()*"),
            EncodingStep::Base64url { padded: true } => URL_SAFE.encode(input),
            EncodingStep::Base64url { padded: false } => URL_SAFE_NO_PAD.encode(input),
            EncodingStep::Json => input.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrityMarker {
    None,
    /// A signature-like field is present; the scanner holds no key to check it.
    SignedUnverifiable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedContext {
    pub encoding_chain: Vec<Encoding>,
    pub steps: Vec<EncodingStep>,
    pub decoded_fields: Map<String, Value>,
    /// Innermost JSON text exactly as found.
    pub inner_json: String,
    pub nested_redirect_uri: Option<String>,
    /// Object keys leading to the redirect target.
    pub redirect_key_path: Option<Vec<String>>,
    pub integrity_marker: IntegrityMarker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateAnalysis {
    Nested(NestedContext),
    Opaque,
}

impl StateAnalysis {
    pub fn context(&self) -> Option<&NestedContext> {
        match self {
            StateAnalysis::Nested(c) => Some(c),
            StateAnalysis::Opaque => None,
        }
    }

    pub fn into_context(self) -> Option<NestedContext> {
        match self {
            StateAnalysis::Nested(c) => Some(c),
            StateAnalysis::Opaque => None,
        }
    }
}

fn percent_encode(input: &str, keep: &[u8]) -> String {
    let mut out = String::with_capacity(input.len() * 3);
    for &b in input.as_bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') || keep.contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn percent_decode(input: &str) -> Option<String> {
    let bytes = input.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = std::str::from_utf8(bytes.get(i + 1..i + 3)?).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn try_urldecode(s: &str) -> Option<(EncodingStep, String)> {
    if !s.contains('%') {
        return None;
    }
    let decoded = percent_decode(s)?;
    [EncodingStep::UrlencodeStrict, EncodingStep::UrlencodeComponent]
        .into_iter()
        .find(|step| step.apply(&decoded) == s)
        .map(|step| (step, decoded))
}

fn try_base64url(s: &str) -> Option<(EncodingStep, String)> {
    if s.is_empty()
        || !s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'='))
    {
        return None;
    }
    let padded = s.ends_with('=');
    let engine = if padded { &URL_SAFE } else { &URL_SAFE_NO_PAD };
    let bytes = engine.decode(s).ok()?;
    let text = String::from_utf8(bytes).ok()?;
    let step = EncodingStep::Base64url { padded };
    (step.apply(&text) == s).then_some((step, text))
}

fn decode_layers(s: &str, depth: usize) -> Option<(Vec<EncodingStep>, String)> {
    if s.len() > MAX_DECODED_BYTES {
        return None;
    }
    if let Ok(Value::Object(_)) = serde_json::from_str::<Value>(s) {
        return Some((vec![EncodingStep::Json], s.to_string()));
    }
    if depth == MAX_DECODE_DEPTH {
        return None;
    }
    for attempt in [try_urldecode as fn(&str) -> _, try_base64url] {
        if let Some((step, inner)) = attempt(s) {
            if let Some((mut rest, json)) = decode_layers(&inner, depth + 1) {
                rest.insert(0, step);
                return Some((rest, json));
            }
        }
    }
    None
}

fn looks_like_url(v: &str) -> bool {
    match url::Url::parse(v) {
        Ok(u) => u.has_host() || !matches!(u.scheme(), "data" | "javascript" | "urn"),
        Err(_) => false,
    }
}

fn is_redirect_key(k: &str) -> bool {
    let k = k.to_ascii_lowercase();
    ["redirect", "callback", "return"].iter().any(|w| k.contains(w))
}

/// Key-named redirect targets first, then any URL-valued field; depth-first.
fn find_redirect(map: &Map<String, Value>) -> Option<(Vec<String>, String)> {
    fn walk(
        map: &Map<String, Value>,
        path: &mut Vec<String>,
        by_key: bool,
    ) -> Option<(Vec<String>, String)> {
        for (k, v) in map {
            path.push(k.clone());
            match v {
                Value::String(s) if (by_key && is_redirect_key(k)) || (!by_key && looks_like_url(s)) => {
                    return Some((path.clone(), s.clone()));
                }
                Value::Object(inner) => {
                    if let Some(hit) = walk(inner, path, by_key) {
                        return Some(hit);
                    }
                }
                _ => {}
            }
            path.pop();
        }
        None
    }
    walk(map, &mut vec![], true).or_else(|| walk(map, &mut vec![], false))
}

/// Tries `urlencode`, `base64url` and `json` decodings up to three transform layers deep.
pub fn decode_nested_state(state: &str) -> StateAnalysis {
    let Some((steps, inner_json)) = decode_layers(state, 0) else {
        return StateAnalysis::Opaque;
    };
    let Ok(Value::Object(fields)) = serde_json::from_str::<Value>(&inner_json) else {
        return StateAnalysis::Opaque;
    };
    let redirect = find_redirect(&fields);
    let signed = fields.keys().any(|k| {
        let k = k.to_ascii_lowercase();
        ["sig", "signature", "mac", "hmac"].iter().any(|m| k == *m || k.ends_with(&format!("_{m}")))
    });
    StateAnalysis::Nested(NestedContext {
        encoding_chain: steps.iter().map(|s| s.kind()).collect(),
        steps,
        decoded_fields: fields,
        inner_json,
        nested_redirect_uri: redirect.as_ref().map(|(_, v)| v.clone()),
        redirect_key_path: redirect.map(|(p, _)| p),
        integrity_marker: if signed {
            IntegrityMarker::SignedUnverifiable
        } else {
            IntegrityMarker::None
        },
    })
}

/// Applies `steps` (outermost first) to JSON text.
pub fn encode_steps(steps: &[EncodingStep], json: &str) -> String {
    steps
        .iter()
        .rev()
        .fold(json.to_string(), |acc, step| step.apply(&acc))
}

impl NestedContext {
    /// Re-encodes the context as found.
    pub fn encode(&self) -> String {
        encode_steps(&self.steps, &self.inner_json)
    }

    /// Re-encodes arbitrary replacement fields through the same chain.
    pub fn encode_fields(&self, fields: &Map<String, Value>) -> String {
        let json = serde_json::to_string(fields).expect("json map serializes");
        encode_steps(&self.steps, &json)
    }

    /// A state value identical in structure but with the nested redirect target replaced.
    pub fn with_redirect(&self, new_target: &str) -> Option<String> {
        let path = self.redirect_key_path.as_ref()?;
        let mut fields = self.decoded_fields.clone();
        let mut cursor = &mut fields;
        for key in &path[..path.len() - 1] {
            cursor = cursor.get_mut(key)?.as_object_mut()?;
        }
        cursor.insert(path.last()?.clone(), Value::String(new_target.to_string()));
        Some(self.encode_fields(&fields))
    }

    /// Whether any string field equals `value`.
    pub fn references(&self, value: &str) -> bool {
        fn any(v: &Value, needle: &str) -> bool {
            match v {
                Value::String(s) => s == needle,
                Value::Object(m) => m.values().any(|x| any(x, needle)),
                Value::Array(a) => a.iter().any(|x| any(x, needle)),
                _ => false,
            }
        }
        self.decoded_fields.values().any(|v| any(v, value))
    }
}
