//! `.echg` binary layout, all little-endian:
//!
//! ```text
//! "ECHG" | u32 version=1 | u32 rows | u32 cols | f64 depth_step_m | f64 depth_origin_m
//! rows*cols f32 Sv values, row-major
//! ```

use super::{Echogram, EchogramError, Result};

pub const ECHG_MAGIC: &[u8; 4] = b"ECHG";
pub const ECHG_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8;

pub(super) fn encode(e: &Echogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + e.sv.len() * 4);
    out.extend_from_slice(ECHG_MAGIC);
    out.extend_from_slice(&ECHG_VERSION.to_le_bytes());
    out.extend_from_slice(&(e.rows as u32).to_le_bytes());
    out.extend_from_slice(&(e.cols as u32).to_le_bytes());
    out.extend_from_slice(&e.depth_step_m.to_le_bytes());
    out.extend_from_slice(&e.depth_origin_m.to_le_bytes());
    for v in &e.sv {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub(super) fn decode(bytes: &[u8]) -> Result<Echogram> {
    if bytes.len() < 4 || &bytes[..4] != ECHG_MAGIC {
        return Err(EchogramError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(EchogramError::TruncatedPayload { expected: 0, found: 0 });
    }
    let version = u32_at(bytes, 4);
    if version != ECHG_VERSION {
        return Err(EchogramError::UnsupportedVersion(version));
    }
    let rows = u32_at(bytes, 8) as u64;
    let cols = u32_at(bytes, 12) as u64;
    let step = f64_at(bytes, 16);
    let origin = f64_at(bytes, 24);
    let n = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= isize::MAX as u64))
        .ok_or(EchogramError::DimensionOverflow { rows, cols })? as usize;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() / 4;
    if found < n {
        return Err(EchogramError::TruncatedPayload { expected: n, found });
    }
    if payload.len() != n * 4 {
        return Err(EchogramError::TrailingData);
    }
    let sv = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Echogram::new(rows as usize, cols as usize, origin, step, sv, "")
}
