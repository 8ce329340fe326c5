use std::fmt::Write as _;
use std::path::Path;

use super::{EchogramError, Result};

/// Per-ping automatic and expert bottom depths (meters). NaN means unset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BottomRecord {
    pub bottom_m: Vec<f64>,
    pub clean_bottom_m: Vec<f64>,
}

const HEADER: &str = "ping_index,bottom_m,clean_bottom_m";

impl BottomRecord {
    pub fn new(bottom_m: Vec<f64>, clean_bottom_m: Vec<f64>) -> Result<Self> {
        if bottom_m.len() != clean_bottom_m.len() {
            return Err(EchogramError::DimensionMismatch {
                expected: bottom_m.len(),
                got: clean_bottom_m.len(),
            });
        }
        Ok(Self { bottom_m, clean_bottom_m })
    }

    pub fn len(&self) -> usize {
        self.bottom_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bottom_m.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * (self.len() + 1));
        s.push_str(HEADER);
        s.push('\n');
        for (i, (b, c)) in self.bottom_m.iter().zip(&self.clean_bottom_m).enumerate() {
            let _ = writeln!(s, "{i},{b:.6},{c:.6}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(malformed(1, "missing header")),
        }
        let mut rec = BottomRecord::default();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(malformed(n + 1, "expected 3 fields"));
            }
            let idx: usize = fields[0].parse().map_err(|_| malformed(n + 1, "bad ping_index"))?;
            if idx != rec.len() {
                return Err(malformed(n + 1, "ping_index out of sequence"));
            }
            let b: f64 = fields[1].parse().map_err(|_| malformed(n + 1, "bad bottom_m"))?;
            let c: f64 = fields[2].parse().map_err(|_| malformed(n + 1, "bad clean_bottom_m"))?;
            rec.bottom_m.push(b);
            rec.clean_bottom_m.push(c);
        }
        Ok(rec)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// One depth per ping as `ping_index,<column>`, written losslessly
/// (shortest round-trip decimal, `NaN` for unset).
pub fn depth_series_to_csv(column: &str, values: &[f64]) -> String {
    let mut s = String::with_capacity(24 * (values.len() + 1));
    let _ = writeln!(s, "ping_index,{column}");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}

/// Reads a two-column depth series; the column name is returned with it.
pub fn depth_series_from_csv(text: &str) -> Result<(String, Vec<f64>)> {
    let mut lines = text.lines().enumerate();
    let column = match lines.next().map(|(_, h)| h.trim().split(',').map(str::trim).collect::<Vec<_>>()) {
        Some(h) if h.len() == 2 && h[0] == "ping_index" && !h[1].is_empty() => h[1].to_string(),
        _ => return Err(malformed(1, "expected header ping_index,<column>")),
    };
    let mut values = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, v) = line.split_once(',').ok_or_else(|| malformed(n + 1, "expected 2 fields"))?;
        let idx: usize = idx.trim().parse().map_err(|_| malformed(n + 1, "bad ping_index"))?;
        if idx != values.len() {
            return Err(malformed(n + 1, "ping_index out of sequence"));
        }
        values.push(v.trim().parse().map_err(|_| malformed(n + 1, "bad depth"))?);
    }
    Ok((column, values))
}

fn malformed(line: usize, reason: &str) -> EchogramError {
    EchogramError::MalformedRecord { line, reason: reason.to_string() }
}
