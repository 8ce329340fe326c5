//! Max-gradient bottom detection and weak/strong correction labels.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::echogram::{BottomRecord, Echogram, NAN_FILL_DB};
use crate::learn::{self, Dataset, LearnError, ModelSpec, TrainConfig};

pub const DEFAULT_THRESHOLD_M: f64 = 3.31;

#[derive(Debug, Error)]
pub enum BottomlineError {
    #[error("bottom and clean bottom records are misaligned ({bottom} vs {clean})")]
    MisalignedRecords { bottom: usize, clean: usize },
    #[error("threshold sweep is empty")]
    EmptySweep,
    #[error("malformed labels csv at line {line}: {reason}")]
    MalformedLabels { line: usize, reason: String },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BottomlineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PingLabel {
    NoBottom,
    #[serde(rename = "weak")]
    WeakCorrection,
    #[serde(rename = "strong")]
    StrongCorrection,
}

impl PingLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PingLabel::NoBottom => "no_bottom",
            PingLabel::WeakCorrection => "weak",
            PingLabel::StrongCorrection => "strong",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no_bottom" => Some(PingLabel::NoBottom),
            "weak" => Some(PingLabel::WeakCorrection),
            "strong" => Some(PingLabel::StrongCorrection),
            _ => None,
        }
    }

    /// Binary learning target: strong = 1, weak = 0, no-bottom has none.
    pub fn target(self) -> Option<u8> {
        match self {
            PingLabel::NoBottom => None,
            PingLabel::WeakCorrection => Some(0),
            PingLabel::StrongCorrection => Some(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        Self { lo: 1.00, hi: 5.00, step: 0.01 }
    }
}

impl ThresholdSweep {
    /// Candidate thresholds `lo, lo+step, ..., <= hi`, rounded to 1e-9 m.
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.lo <= self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(BottomlineError::EmptySweep);
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| ((self.lo + i as f64 * self.step) * 1e9).round() / 1e9).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    pub threshold_m: f64,
    pub sweep: ThresholdSweep,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { threshold_m: DEFAULT_THRESHOLD_M, sweep: ThresholdSweep::default() }
    }
}

impl LabelingConfig {
    pub fn with_threshold(threshold_m: f64) -> Self {
        Self { threshold_m, ..Self::default() }
    }
}

/// Per ping, the depth of the largest downward increase `sv[r] - sv[r-1]`
/// over `r >= 1`. NaN cells count as [`NAN_FILL_DB`]; ties resolve to the
/// shallowest row.
pub fn detect_bottom(e: &Echogram) -> Vec<f64> {
    detect_bottom_rows(e).into_iter().map(|r| e.depth_of_row(r)).collect()
}

pub fn detect_bottom_rows(e: &Echogram) -> Vec<usize> {
    let (rows, cols) = (e.rows(), e.cols());
    let mut best_row = vec![0usize; cols];
    if rows < 2 {
        return best_row;
    }
    let sv = e.sv();
    let val = |v: f32| f64::from(if v.is_nan() { NAN_FILL_DB } else { v });
    let mut best = vec![f64::NEG_INFINITY; cols];
    for r in 1..rows {
        let above = &sv[(r - 1) * cols..r * cols];
        let here = &sv[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let g = val(here[c]) - val(above[c]);
            if g > best[c] {
                best[c] = g;
                best_row[c] = r;
            }
        }
    }
    best_row
}

/// Labels each ping from `|clean - bottom|`: strong at or above the
/// threshold, weak below. Pings in `no_bottom`, or with an unset depth, are
/// [`PingLabel::NoBottom`].
pub fn label_pings(record: &BottomRecord, cfg: &LabelingConfig, no_bottom: &[usize]) -> Result<Vec<PingLabel>> {
    if record.bottom_m.len() != record.clean_bottom_m.len() {
        return Err(BottomlineError::MisalignedRecords {
            bottom: record.bottom_m.len(),
            clean: record.clean_bottom_m.len(),
        });
    }
    let mut labels: Vec<PingLabel> = record
        .bottom_m
        .iter()
        .zip(&record.clean_bottom_m)
        .map(|(&b, &c)| classify_distance(b, c, cfg.threshold_m))
        .collect();
    for &i in no_bottom {
        if let Some(l) = labels.get_mut(i) {
            *l = PingLabel::NoBottom;
        }
    }
    Ok(labels)
}

pub fn classify_distance(bottom_m: f64, clean_m: f64, threshold_m: f64) -> PingLabel {
    let d = (clean_m - bottom_m).abs();
    if d.is_nan() {
        PingLabel::NoBottom
    } else if d >= threshold_m {
        PingLabel::StrongCorrection
    } else {
        PingLabel::WeakCorrection
    }
}

pub fn labels_to_csv(labels: &[PingLabel]) -> String {
    let mut s = String::from("ping_index,label\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", l.as_str());
    }
    s
}

/// Parses a labels CSV. Indices may be sparse; the result is `(index, label)`.
pub fn labels_from_csv(text: &str) -> Result<Vec<(usize, PingLabel)>> {
    let bad = |line: usize, reason: &str| BottomlineError::MalformedLabels { line, reason: reason.into() };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "ping_index,label" => {}
        _ => return Err(bad(1, "missing header")),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (i, l) = line.split_once(',').ok_or_else(|| bad(n + 1, "expected 2 fields"))?;
        let i = i.trim().parse().map_err(|_| bad(n + 1, "bad ping_index"))?;
        let l = PingLabel::parse(l.trim()).ok_or_else(|| bad(n + 1, "unknown label"))?;
        out.push((i, l));
    }
    Ok(out)
}

pub fn save_labels(labels: &[PingLabel], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, labels_to_csv(labels))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// `(threshold, validation accuracy)` in grid order.
    pub table: Vec<(f64, f64)>,
    pub best_threshold_m: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,accuracy\n");
        for (t, a) in &self.table {
            let _ = writeln!(s, "{t:.6},{a:.6}");
        }
        s
    }
}

/// Picks the label threshold by one-epoch validation accuracy.
///
/// For each grid threshold, `relabel` builds `(train, validation)` datasets,
/// `spec` is trained for exactly one epoch from `cfg.seed` (the same seed for
/// every candidate) and validation accuracy is recorded. The first threshold
/// reaching the maximum wins.
pub fn select_threshold<F>(
    mut relabel: F,
    spec: &ModelSpec,
    sweep: &ThresholdSweep,
    cfg: &TrainConfig,
) -> Result<SweepReport>
where
    F: FnMut(f64) -> Result<(Dataset, Dataset)>,
{
    let grid = sweep.grid()?;
    let one_epoch = TrainConfig { epochs: 1, ..cfg.clone() };
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for t in grid {
        let (train, val) = relabel(t)?;
        let model = learn::train(spec, &train, None, &one_epoch)?;
        let acc = model.accuracy(&val)?;
        table.push((t, acc));
        if best.is_none_or(|(_, a)| acc > a) {
            best = Some((t, acc));
        }
    }
    let (best_threshold_m, _) = best.ok_or(BottomlineError::EmptySweep)?;
    Ok(SweepReport { table, best_threshold_m })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_edge() {
        let e = Echogram::new(4, 1, 0.0, 0.2, vec![-200.0, -200.0, -20.0, -20.0], "").unwrap();
        assert_eq!(detect_bottom_rows(&e), vec![2]);
        assert!((detect_bottom(&e)[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ties_go_shallow_and_nan_is_fill() {
        let e = Echogram::new(5, 1, 0.0, 0.2, vec![-100.0, -50.0, -100.0, -50.0, -60.0], "").unwrap();
        assert_eq!(detect_bottom_rows(&e), vec![1]);
        let e = Echogram::new(3, 1, 0.0, 0.2, vec![f32::NAN, -190.0, -180.0], "").unwrap();
        // NaN -> -200, so the first step is the larger rise
        assert_eq!(detect_bottom_rows(&e), vec![1]);
    }

    #[test]
    fn plankton_layer_steals_detection() {
        // layer top at row 10 with a 100 dB rise, bottom at row 30 rising 50 dB
        let mut col = vec![-150.0f32; 50];
        for v in &mut col[10..28] {
            *v = -50.0;
        }
        for v in &mut col[28..30] {
            *v = -65.0;
        }
        for v in &mut col[30..34] {
            *v = -15.0;
        }
        let e = Echogram::from_pings(&[col], 0.0, 0.2).unwrap();
        assert_eq!(detect_bottom_rows(&e), vec![10]);
    }

    #[test]
    fn label_boundaries() {
        let cfg = LabelingConfig::default();
        let rec = BottomRecord::new(vec![100.0, 100.0, 100.0, 100.0], vec![100.0, 103.31, 96.70, 90.0]).unwrap();
        let labels = label_pings(&rec, &cfg, &[3]).unwrap();
        assert_eq!(
            labels,
            vec![
                PingLabel::WeakCorrection,
                PingLabel::StrongCorrection,
                PingLabel::WeakCorrection,
                PingLabel::NoBottom
            ]
        );
    }

    #[test]
    fn misaligned_records() {
        let rec = BottomRecord { bottom_m: vec![1.0], clean_bottom_m: vec![] };
        assert!(matches!(
            label_pings(&rec, &LabelingConfig::default(), &[]),
            Err(BottomlineError::MisalignedRecords { .. })
        ));
    }

    #[test]
    fn sweep_grid() {
        let g = ThresholdSweep::default().grid().unwrap();
        assert_eq!(g.len(), 401);
        assert_eq!(g[231], 3.31);
        assert_eq!(*g.last().unwrap(), 5.0);
        let single = ThresholdSweep { lo: 3.31, hi: 3.31, step: 0.01 }.grid().unwrap();
        assert_eq!(single, vec![3.31]);
        assert!(ThresholdSweep { lo: 2.0, hi: 1.0, step: 0.1 }.grid().is_err());
        assert!(ThresholdSweep { lo: 1.0, hi: 2.0, step: 0.0 }.grid().is_err());
    }

    #[test]
    fn labels_csv_round_trip() {
        let labels = vec![PingLabel::NoBottom, PingLabel::WeakCorrection, PingLabel::StrongCorrection];
        let text = labels_to_csv(&labels);
        assert_eq!(text, "ping_index,label\n0,no_bottom\n1,weak\n2,strong\n");
        let back: Vec<PingLabel> = labels_from_csv(&text).unwrap().into_iter().map(|(_, l)| l).collect();
        assert_eq!(back, labels);
    }
}
