//! Embedding server for the line protocol, backed by a seeded built-in
//! embedder. Stands in for an external face-recognition model.
//!
//! Usage: `mock-embedder [seed]`

use std::io::{self, BufRead, Write};

use anyhow::{Context, Result};

use advrelight::embedder::protocol::{decode_payload, format_hello, format_vector, parse_request_header};
use advrelight::embedder::{BuiltinEmbedder, Embedder};
use advrelight::FaceImage;

fn main() -> Result<()> {
    let seed: u64 = match std::env::args().nth(1) {
        Some(s) => s.parse().with_context(|| format!("bad seed `{s}`"))?,
        None => 1,
    };
    let embedder = BuiltinEmbedder::new(seed);
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    stdout.write_all(format_hello(&format!("mock-{seed}"), embedder.descriptor().dimension).as_bytes())?;
    stdout.flush()?;
    let mut lines = stdin.lock().lines();
    while let Some(header) = lines.next() {
        let header = header?;
        if header.is_empty() {
            continue;
        }
        let (w, h) = parse_request_header(&header)?;
        let payload = lines.next().context("missing payload line")??;
        let bytes = decode_payload(&payload, w, h)?;
        let lum: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        let v = embedder.embed(&FaceImage::from_luminance(w, h, &lum)?)?;
        stdout.write_all(format_vector(v.values()).as_bytes())?;
        stdout.flush()?;
    }
    Ok(())
}
