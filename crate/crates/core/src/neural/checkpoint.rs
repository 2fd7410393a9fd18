//! Plain-text parameter checkpoints.
//!
//! Layout (UTF-8, `\n` line endings):
//!
//! ```text
//! EDGESLICE-PARAMS v1
//! count <n>
//! <name> <rows> <cols>
//! <rows*cols values, space separated, row-major>
//! ... repeated n times
//! ```
//!
//! Values use the shortest decimal form that round-trips to the same `f64`,
//! so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &str = "EDGESLICE-PARAMS v1";

pub fn encode(params: &[(String, Matrix)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "count {}", params.len());
    for (name, m) in params {
        let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
        let values: Vec<String> = m.data().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out
}

pub fn decode(text: &str) -> Result<Vec<(String, Matrix)>> {
    let mut lines = text.lines();
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    match lines.next() {
        Some(MAGIC) => {}
        Some(other) => return Err(bad(&format!("unsupported header `{other}`"))),
        None => return Err(bad("empty checkpoint")),
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("count "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| bad("missing parameter count"))?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let header = lines.next().ok_or_else(|| bad("truncated checkpoint"))?;
        let mut parts = header.split_whitespace();
        let (Some(name), Some(rows), Some(cols), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(&format!("malformed header `{header}`")));
        };
        let rows: usize = rows.parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| bad("bad column count"))?;
        let body = lines.next().ok_or_else(|| bad("truncated checkpoint"))?;
        let values = body
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(&format!("bad value in `{name}`")))?;
        let m = Matrix::from_vec(rows, cols, values)
            .map_err(|_| bad(&format!("value count mismatch in `{name}`")))?;
        params.push((name.to_string(), m));
    }
    Ok(params)
}

pub fn save(path: &Path, params: &[(String, Matrix)]) -> Result<()> {
    crate::harness::write_atomic(path, encode(params).as_bytes())
}

pub fn load(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}
