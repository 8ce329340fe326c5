//! Echogram data model and formatting operations.
//!
//! An [`Echogram`] is a depth × ping matrix of volume backscattering strength
//! (Sv, dB), stored row-major: row `r` is the depth cell at
//! `depth_origin_m + r * depth_step_m`, column `c` is ping `c`.

mod codec;
mod records;

use std::path::Path;

use thiserror::Error;

pub use codec::{ECHG_MAGIC, ECHG_VERSION};
pub use records::{depth_series_from_csv, depth_series_to_csv, BottomRecord};

/// Default fill for unrecorded cells: the weakest value seen in real surveys.
pub const NAN_FILL_DB: f32 = -200.0;
/// Any cell above this level counts as a bottom signature.
pub const NO_BOTTOM_THRESHOLD_DB: f32 = -32.0;
pub const DEFAULT_DEPTH_STEP_M: f64 = 0.20;

#[derive(Debug, Error)]
pub enum EchogramError {
    #[error("bad magic: expected ECHG")]
    BadMagic,
    #[error("unsupported .echg version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload")]
    TrailingData,
    #[error("dimensions {rows}x{cols} overflow")]
    DimensionOverflow { rows: u64, cols: u64 },
    #[error("cannot trim {n_top} rows from an echogram with {rows} rows")]
    TrimTooLarge { n_top: usize, rows: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid depth axis: {0}")]
    InvalidAxis(String),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EchogramError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Echogram {
    rows: usize,
    cols: usize,
    depth_origin_m: f64,
    depth_step_m: f64,
    sv: Vec<f32>,
    survey_id: String,
}

/// Ping indices split by [`Echogram::filter_no_bottom`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BottomPresence {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl Echogram {
    pub fn new(
        rows: usize,
        cols: usize,
        depth_origin_m: f64,
        depth_step_m: f64,
        sv: Vec<f32>,
        survey_id: impl Into<String>,
    ) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or(EchogramError::DimensionOverflow { rows: rows as u64, cols: cols as u64 })?;
        if sv.len() != expected {
            return Err(EchogramError::DimensionMismatch { expected, got: sv.len() });
        }
        if !(depth_step_m.is_finite() && depth_step_m > 0.0) {
            return Err(EchogramError::InvalidAxis(format!("step {depth_step_m}")));
        }
        if !depth_origin_m.is_finite() {
            return Err(EchogramError::InvalidAxis(format!("origin {depth_origin_m}")));
        }
        Ok(Self { rows, cols, depth_origin_m, depth_step_m, sv, survey_id: survey_id.into() })
    }

    /// An echogram filled with `value`.
    pub fn filled(rows: usize, cols: usize, depth_step_m: f64, value: f32) -> Result<Self> {
        let n = rows
            .checked_mul(cols)
            .ok_or(EchogramError::DimensionOverflow { rows: rows as u64, cols: cols as u64 })?;
        Self::new(rows, cols, 0.0, depth_step_m, vec![value; n], "")
    }

    /// Builds an echogram from ping columns of equal length.
    pub fn from_pings(pings: &[Vec<f32>], depth_origin_m: f64, depth_step_m: f64) -> Result<Self> {
        let rows = pings.first().map_or(0, Vec::len);
        let cols = pings.len();
        let mut sv = vec![0.0f32; rows * cols];
        for (c, p) in pings.iter().enumerate() {
            if p.len() != rows {
                return Err(EchogramError::DimensionMismatch { expected: rows, got: p.len() });
            }
            for (r, &v) in p.iter().enumerate() {
                sv[r * cols + c] = v;
            }
        }
        Self::new(rows, cols, depth_origin_m, depth_step_m, sv, "")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let mut e = codec::decode(&bytes)?;
        if let Some(stem) = path.file_stem() {
            e.survey_id = stem.to_string_lossy().into_owned();
        }
        Ok(e)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        codec::decode(bytes)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn depth_origin_m(&self) -> f64 {
        self.depth_origin_m
    }

    pub fn depth_step_m(&self) -> f64 {
        self.depth_step_m
    }

    pub fn survey_id(&self) -> &str {
        &self.survey_id
    }

    pub fn with_survey_id(mut self, id: impl Into<String>) -> Self {
        self.survey_id = id.into();
        self
    }

    pub fn sv(&self) -> &[f32] {
        &self.sv
    }

    pub fn sv_mut(&mut self) -> &mut [f32] {
        &mut self.sv
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.sv[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.sv[row * self.cols + col] = value;
    }

    pub fn depth_of_row(&self, row: usize) -> f64 {
        self.depth_origin_m + row as f64 * self.depth_step_m
    }

    pub fn depth_axis(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.depth_of_row(r)).collect()
    }

    pub fn max_depth_m(&self) -> f64 {
        self.depth_of_row(self.rows.saturating_sub(1))
    }

    /// Nearest row for `depth_m`, clamped to the grid.
    pub fn depth_to_row(&self, depth_m: f64) -> usize {
        let r = ((depth_m - self.depth_origin_m) / self.depth_step_m).round();
        if r.is_nan() || r <= 0.0 {
            0
        } else {
            (r as usize).min(self.rows.saturating_sub(1))
        }
    }

    /// Copies one ping column out of the row-major matrix.
    pub fn ping(&self, col: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.sv[r * self.cols + col]).collect()
    }

    pub fn pings(&self) -> Vec<Vec<f32>> {
        let mut out = vec![Vec::with_capacity(self.rows); self.cols];
        for row in self.sv.chunks_exact(self.cols.max(1)) {
            for (c, &v) in row.iter().enumerate() {
                out[c].push(v);
            }
        }
        out
    }

    /// Sub-echogram with the given ping columns, in the given order.
    pub fn select_pings(&self, cols: &[usize]) -> Echogram {
        let mut sv = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = &self.sv[r * self.cols..(r + 1) * self.cols];
            sv.extend(cols.iter().map(|&c| row[c]));
        }
        Echogram { cols: cols.len(), sv, survey_id: self.survey_id.clone(), ..*self }
    }

    /// Contiguous ping range `[start, start+count)`.
    pub fn ping_range(&self, start: usize, count: usize) -> Echogram {
        let idx: Vec<usize> = (start..(start + count).min(self.cols)).collect();
        self.select_pings(&idx)
    }

    /// Drops the first `n_top` depth rows. Remaining rows keep their physical
    /// depth: the axis origin moves down by `n_top` cells.
    pub fn trim_rows(&self, n_top: usize) -> Result<Echogram> {
        if n_top >= self.rows {
            return Err(EchogramError::TrimTooLarge { n_top, rows: self.rows });
        }
        Ok(Echogram {
            rows: self.rows - n_top,
            cols: self.cols,
            depth_origin_m: self.depth_origin_m + n_top as f64 * self.depth_step_m,
            depth_step_m: self.depth_step_m,
            sv: self.sv[n_top * self.cols..].to_vec(),
            survey_id: self.survey_id.clone(),
        })
    }

    /// Splits pings into those with at least one cell above `threshold_db`
    /// (kept) and the rest (dropped). NaN never counts as a bottom signature.
    pub fn filter_no_bottom(&self, threshold_db: f32) -> BottomPresence {
        let mut has_bottom = vec![false; self.cols];
        for row in self.sv.chunks_exact(self.cols.max(1)) {
            for (flag, &v) in has_bottom.iter_mut().zip(row) {
                // NaN > x is false
                *flag |= v > threshold_db;
            }
        }
        let mut split = BottomPresence::default();
        for (c, present) in has_bottom.into_iter().enumerate() {
            if present {
                split.kept.push(c);
            } else {
                split.dropped.push(c);
            }
        }
        split
    }

    pub fn replace_nan(&self, fill_db: f32) -> Echogram {
        let mut out = self.clone();
        out.replace_nan_in_place(fill_db);
        out
    }

    pub fn replace_nan_in_place(&mut self, fill_db: f32) {
        for v in &mut self.sv {
            if v.is_nan() {
                *v = fill_db;
            }
        }
    }

    pub fn has_nan(&self) -> bool {
        self.sv.iter().any(|v| v.is_nan())
    }

    pub fn min_value(&self) -> f32 {
        self.sv.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// Per-depth-row z-score statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Population mean and standard deviation per row over `pings`.
    /// Rows with zero variance get `std = 1`.
    pub fn fit<'a, I>(pings: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
        I::IntoIter: Clone,
    {
        let iter = pings.into_iter();
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        for p in iter.clone() {
            if n == 0 {
                sum = vec![0.0; p.len()];
            } else if p.len() != sum.len() {
                return Err(EchogramError::DimensionMismatch { expected: sum.len(), got: p.len() });
            }
            for (s, &v) in sum.iter_mut().zip(p) {
                *s += f64::from(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(EchogramError::EmptyInput);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut ss = vec![0.0f64; mean.len()];
        for p in iter {
            for ((acc, &v), &m) in ss.iter_mut().zip(p).zip(&mean) {
                let d = f64::from(v) - m;
                *acc += d * d;
            }
        }
        let std = ss
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply_into(&self, ping: &[f32], out: &mut [f64]) -> Result<()> {
        if ping.len() != self.len() {
            return Err(EchogramError::DimensionMismatch { expected: self.len(), got: ping.len() });
        }
        for (((o, &v), &m), &s) in out.iter_mut().zip(ping).zip(&self.mean).zip(&self.std) {
            *o = (f64::from(v) - m) / s;
        }
        Ok(())
    }

    pub fn apply(&self, ping: &[f32]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; ping.len()];
        self.apply_into(ping, &mut out)?;
        Ok(out)
    }
}

/// Standardizes pings row-wise. With `stats = None` the statistics are
/// computed from `pings` themselves; otherwise the given ones are applied
/// unchanged (validation and test sets reuse training statistics).
pub fn standardize(
    pings: &[Vec<f32>],
    stats: Option<&StandardizationStats>,
) -> Result<(Vec<Vec<f64>>, StandardizationStats)> {
    if pings.is_empty() {
        return Err(EchogramError::EmptyInput);
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => StandardizationStats::fit(pings.iter().map(Vec::as_slice))?,
    };
    let out = pings.iter().map(|p| stats.apply(p)).collect::<Result<Vec<_>>>()?;
    Ok((out, stats))
}
