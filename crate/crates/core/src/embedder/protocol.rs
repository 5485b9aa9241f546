//! Newline-delimited embedding protocol spoken with external model processes.
//!
//! ```text
//! server: HELLO <name> <dimension>
//! client: EMBED <width> <height>
//! client: <base64 of row-major 8-bit luminance>
//! server: VEC <v1> <v2> ... <v_dimension>
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{Error, Result};

pub fn format_hello(name: &str, dimension: usize) -> String {
    format!("HELLO {name} {dimension}\n")
}

pub fn parse_hello(line: &str) -> Result<(String, usize)> {
    let mut parts = line.trim_end_matches(['\r', '\n']).split(' ');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some("HELLO"), Some(name), Some(dim), None) if !name.is_empty() => {
            let dim: usize = dim
                .parse()
                .map_err(|_| Error::Protocol(format!("bad dimension in handshake `{line}`")))?;
            if dim < 2 {
                return Err(Error::Protocol(format!("dimension {dim} < 2")));
            }
            Ok((name.to_string(), dim))
        }
        _ => Err(Error::Protocol(format!("expected `HELLO <name> <dimension>`, got `{line}`"))),
    }
}

/// Both request lines, each newline-terminated.
pub fn format_request(width: usize, height: usize, luminance: &[u8]) -> String {
    debug_assert_eq!(luminance.len(), width * height);
    format!("EMBED {width} {height}\n{}\n", STANDARD.encode(luminance))
}

pub fn parse_request_header(line: &str) -> Result<(usize, usize)> {
    let mut parts = line.trim_end_matches(['\r', '\n']).split(' ');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some("EMBED"), Some(w), Some(h), None) => {
            let w = w.parse().map_err(|_| Error::Protocol(format!("bad width `{w}`")))?;
            let h = h.parse().map_err(|_| Error::Protocol(format!("bad height `{h}`")))?;
            Ok((w, h))
        }
        _ => Err(Error::Protocol(format!("expected `EMBED <width> <height>`, got `{line}`"))),
    }
}

pub fn decode_payload(line: &str, width: usize, height: usize) -> Result<Vec<u8>> {
    let bytes = STANDARD
        .decode(line.trim_end_matches(['\r', '\n']))
        .map_err(|e| Error::Protocol(format!("payload is not base64: {e}")))?;
    if bytes.len() != width * height {
        return Err(Error::Protocol(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            width * height
        )));
    }
    Ok(bytes)
}

pub fn format_vector(values: &[f64]) -> String {
    let mut s = String::from("VEC");
    for v in values {
        s.push(' ');
        s.push_str(&format!("{v:e}"));
    }
    s.push('\n');
    s
}

pub fn parse_vector(line: &str, dimension: usize) -> Result<Vec<f64>> {
    let line = line.trim_end_matches(['\r', '\n']);
    let mut parts = line.split(' ').filter(|p| !p.is_empty());
    if parts.next() != Some("VEC") {
        return Err(Error::Protocol(format!("expected `VEC ...`, got `{}`", truncate(line))));
    }
    let values = parts
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Protocol(format!("bad number `{p}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != dimension {
        return Err(Error::Protocol(format!(
            "response has {} values, handshake advertised {dimension}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding response".into()));
    }
    Ok(values)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(60) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
