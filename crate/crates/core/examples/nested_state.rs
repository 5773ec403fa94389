//! Decodes a layered `state` value, shows the nested redirect target and
//! re-encodes it with a substituted target.
//!
//!     cargo run --example nested_state -- <state>

use mcp_authscan::lifecycle::{decode_nested_state, encode_steps, EncodingStep};

fn main() {
    let state = std::env::args().nth(1).unwrap_or_else(|| {
        let inner = r#"{"tx":"9f2c","ctx":{"redirect_uri":"http://127.0.0.1:33418/callback","client":"ide"}}"#;
        encode_steps(
            &[EncodingStep::UrlencodeStrict, EncodingStep::Base64url { padded: true }, EncodingStep::Json],
            inner,
        )
    });
    println!("state: {state}");
    let Some(ctx) = decode_nested_state(&state).into_context() else {
        println!("opaque: no nested context found");
        return;
    };
    println!("encodings: {:?}", ctx.encoding_chain);
    println!("inner json: {}", ctx.inner_json);
    println!("redirect: {:?} at {:?}", ctx.nested_redirect_uri, ctx.redirect_key_path);
    println!("integrity: {:?}", ctx.integrity_marker);
    assert_eq!(ctx.encode(), state);
    if let Some(polluted) = ctx.with_redirect("https://attacker.example/cb") {
        println!("polluted: {polluted}");
    }
}
