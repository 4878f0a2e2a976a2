//! Deterministic stand-in scorer for protocol conformance tests.
//!
//! The score of a pair is the least-significant 32 bits of
//! `SHA-256("q:" + query + "|p:" + passage)`, read as the big-endian integer
//! formed by the last four digest bytes, divided by 2^32.

use std::io::{self, BufRead, Write};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const STUB_NAME: &str = "stub-scorer";
pub const STUB_MAX_BATCH: usize = 64;

pub fn stub_score(query: &str, passage: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(b"q:");
    hasher.update(query.as_bytes());
    hasher.update(b"|p:");
    hasher.update(passage.as_bytes());
    let digest = hasher.finalize();
    let low = u32::from_be_bytes(digest[28..32].try_into().unwrap());
    low as f64 / 4_294_967_296.0
}

/// Serves the scoring protocol until `input` reaches EOF. Malformed requests
/// with a readable id get an error response; anything else is reported on
/// stderr and skipped.
pub fn serve_stub<R: BufRead, W: Write>(input: R, mut output: W) -> io::Result<()> {
    let hello = json!({
        "hello": STUB_NAME,
        "version": env!("CARGO_PKG_VERSION"),
        "max_batch": STUB_MAX_BATCH,
    });
    writeln!(output, "{hello}")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("stub-scorer: skipping unparseable line: {e}");
                continue;
            }
        };
        let Some(id) = value.get("id").and_then(Value::as_u64) else {
            eprintln!("stub-scorer: skipping request without id");
            continue;
        };
        let query = value.get("query").and_then(Value::as_str);
        let passage = value.get("passage").and_then(Value::as_str);
        let response = match (query, passage) {
            (Some(q), Some(p)) => json!({ "id": id, "score": stub_score(q, p) }),
            _ => json!({ "id": id, "error": "request needs string fields query and passage" }),
        };
        writeln!(output, "{response}")?;
        output.flush()?;
    }
    Ok(())
}
