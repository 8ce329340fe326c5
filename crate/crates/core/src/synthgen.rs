//! Deterministic synthetic surveys.
//!
//! A survey is rendered ping by ping. Survey-level structure (bottom walk,
//! bottom shading, which pings lose the bottom, which pings carry an
//! artifact and its per-run parameters) comes from one stream; each ping's
//! noise comes from its own stream keyed by the ping index, so rendering
//! order does not matter.
//!
//! Artifacts are injected so that the max-gradient detector goes wrong by
//! more than the label threshold:
//!
//! - plankton: a bright layer just above the bottom whose top edge is
//!   steeper than the bottom onset,
//! - offset: the whole ping shifted down by a constant number of cells over
//!   a run,
//! - soft: a diffuse, slowly rising bottom over a sharp sub-bottom reflector.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::echogram::{BottomRecord, Echogram, DEFAULT_DEPTH_STEP_M};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid survey config: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Standard deviation of the water-column noise, dB.
pub const NOISE_SD_DB: f64 = 3.0;
/// Bottom band decay below the onset, in cells.
pub const BOTTOM_SIGMA_CELLS: f64 = 2.0;
/// Expert safety cut above the true bottom on artifact pings, m.
pub const SAFETY_CUT_M: f64 = 1.0;
/// Minimum gap between the deepest bottom band and the NaN region, m.
pub const NAN_CLEARANCE_M: f64 = 2.0;

const SURFACE_PEAK_DB: f64 = -40.0;
const SURFACE_DECAY_DB_PER_M: f64 = 20.0;
const TAIL_DROP_DB: f64 = 25.0;
const TAIL_SLOPE_DB_PER_CELL: f64 = 1.2;
const SCHOOL_PROB: f64 = 0.25;
/// Cells over which a school's edges fade in and out.
const SCHOOL_EDGE_CELLS: usize = 4;
/// Fish schools stay this many cells above the bottom.
const SCHOOL_CLEARANCE_CELLS: usize = 20;
const MIN_BOTTOM_M: f64 = 13.0;
const BOTTOM_HEADROOM_M: f64 = 12.0;
const MAX_RUN: usize = 20;
const MIN_RUN: usize = 3;

/// Where NaN padding begins, relative to the bottom the sounder tracked.
///
/// The recording window follows the sounder's own bottom track. With
/// `style_A` it keeps a 20–30 m margin, except on pings where the track is
/// disturbed by an artifact, where it collapses to a short margin. With
/// `style_B` the short margin applies to every ping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NanStyle {
    StyleA,
    StyleB,
}

/// Margin of the wide recording window, m.
pub const WIDE_WINDOW_M: (f64, f64) = (20.0, 30.0);
/// Chance that an undisturbed `style_A` ping still gets the short window.
pub const SPONTANEOUS_SHORT_WINDOW: f64 = 0.01;
/// Margin of the short recording window, m.
pub const SHORT_WINDOW_M: (f64, f64) = (3.0, 8.0);

impl NanStyle {
    /// Range in meters below the tracked bottom where NaN starts.
    pub fn offset_range_m(self, disturbed: bool) -> (f64, f64) {
        match (self, disturbed) {
            (NanStyle::StyleA, false) => WIDE_WINDOW_M,
            _ => SHORT_WINDOW_M,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NanStyle::StyleA => "style_A",
            NanStyle::StyleB => "style_B",
        }
    }
}

impl FromStr for NanStyle {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "style_a" | "a" => Ok(NanStyle::StyleA),
            "style_b" | "b" => Ok(NanStyle::StyleB),
            other => Err(format!("unknown nan_style {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BottomProfile {
    pub mean_depth_m: f64,
    pub roughness_m: f64,
    pub correlation_pings: f64,
}

/// Relative weights of the three artifact kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMix {
    pub plankton: f64,
    pub offset: f64,
    pub soft: f64,
}

impl ArtifactMix {
    pub fn total(&self) -> f64 {
        self.plankton + self.offset + self.soft
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub rows: usize,
    pub cols: usize,
    pub depth_step_m: f64,
    pub seed: u64,
    pub bottom_profile: BottomProfile,
    pub noise_floor_db: f64,
    pub bottom_peak_db: f64,
    pub strong_correction_rate: f64,
    pub no_bottom_rate: f64,
    pub artifact_mix: ArtifactMix,
    pub nan_style: NanStyle,
    pub survey_id: String,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            rows: 256,
            cols: 1000,
            depth_step_m: DEFAULT_DEPTH_STEP_M,
            seed: 0,
            bottom_profile: BottomProfile { mean_depth_m: 24.0, roughness_m: 7.0, correlation_pings: 50.0 },
            noise_floor_db: -150.0,
            bottom_peak_db: -15.0,
            strong_correction_rate: 0.13,
            no_bottom_rate: 0.02,
            artifact_mix: ArtifactMix { plankton: 1.0, offset: 1.0, soft: 1.0 },
            nan_style: NanStyle::StyleA,
            survey_id: "synthetic".into(),
        }
    }
}

impl SurveyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        if self.rows < 16 {
            return bad(format!("rows={} < 16", self.rows));
        }
        if self.cols < 1 {
            return bad("cols must be >= 1".into());
        }
        if !(self.depth_step_m > 0.0 && self.depth_step_m.is_finite()) {
            return bad("depth_step_m must be positive".into());
        }
        if !rate(self.strong_correction_rate) || !rate(self.no_bottom_rate) {
            return bad("rates must lie in [0, 1]".into());
        }
        if self.strong_correction_rate + self.no_bottom_rate > 1.0 {
            return bad("no_bottom_rate + strong_correction_rate > 1".into());
        }
        let m = self.artifact_mix;
        if [m.plankton, m.offset, m.soft].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("artifact weights must be finite and >= 0".into());
        }
        if self.strong_correction_rate > 0.0 && m.total() <= 0.0 {
            return bad("strong_correction_rate > 0 needs a nonzero artifact_mix".into());
        }
        let p = self.bottom_profile;
        if !(p.roughness_m >= 0.0 && p.correlation_pings > 0.0) {
            return bad("bottom roughness must be >= 0 and correlation > 0".into());
        }
        let max_depth = self.rows as f64 * self.depth_step_m;
        if max_depth < MIN_BOTTOM_M + BOTTOM_HEADROOM_M {
            return bad(format!("depth range {max_depth} m too shallow for a bottom"));
        }
        if !(self.bottom_peak_db > -32.0) {
            return bad("bottom_peak_db must exceed the -32 dB bottom threshold".into());
        }
        if !(self.noise_floor_db < SURFACE_PEAK_DB) {
            return bad("noise_floor_db must be below the surface band".into());
        }
        Ok(())
    }

    /// Parses a flat `key = value` file; `#` starts a comment, unknown keys
    /// are errors, missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| SynthError::Parse { line: i + 1, reason };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (k, v) = (k.trim(), v.trim());
            fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
                v.parse().map_err(|_| format!("bad number {v:?}"))
            }
            let r: std::result::Result<(), String> = (|| {
                match k {
                    "rows" => c.rows = num(v)?,
                    "cols" => c.cols = num(v)?,
                    "depth_step_m" => c.depth_step_m = num(v)?,
                    "seed" => c.seed = num(v)?,
                    "mean_depth_m" => c.bottom_profile.mean_depth_m = num(v)?,
                    "roughness_m" => c.bottom_profile.roughness_m = num(v)?,
                    "correlation_pings" => c.bottom_profile.correlation_pings = num(v)?,
                    "noise_floor_db" => c.noise_floor_db = num(v)?,
                    "bottom_peak_db" => c.bottom_peak_db = num(v)?,
                    "strong_correction_rate" => c.strong_correction_rate = num(v)?,
                    "no_bottom_rate" => c.no_bottom_rate = num(v)?,
                    "plankton_weight" => c.artifact_mix.plankton = num(v)?,
                    "offset_weight" => c.artifact_mix.offset = num(v)?,
                    "soft_weight" => c.artifact_mix.soft = num(v)?,
                    "nan_style" => c.nan_style = v.parse()?,
                    "survey_id" => c.survey_id = v.to_string(),
                    _ => return Err(format!("unknown key {k:?}")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let p = self.bottom_profile;
        let m = self.artifact_mix;
        let _ = writeln!(s, "rows = {}", self.rows);
        let _ = writeln!(s, "cols = {}", self.cols);
        let _ = writeln!(s, "depth_step_m = {}", self.depth_step_m);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mean_depth_m = {}", p.mean_depth_m);
        let _ = writeln!(s, "roughness_m = {}", p.roughness_m);
        let _ = writeln!(s, "correlation_pings = {}", p.correlation_pings);
        let _ = writeln!(s, "noise_floor_db = {}", self.noise_floor_db);
        let _ = writeln!(s, "bottom_peak_db = {}", self.bottom_peak_db);
        let _ = writeln!(s, "strong_correction_rate = {}", self.strong_correction_rate);
        let _ = writeln!(s, "no_bottom_rate = {}", self.no_bottom_rate);
        let _ = writeln!(s, "plankton_weight = {}", m.plankton);
        let _ = writeln!(s, "offset_weight = {}", m.offset);
        let _ = writeln!(s, "soft_weight = {}", m.soft);
        let _ = writeln!(s, "nan_style = {}", self.nan_style.as_str());
        let _ = writeln!(s, "survey_id = {}", self.survey_id);
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactTag {
    None,
    Plankton,
    Offset,
    Soft,
}

impl ArtifactTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactTag::None => "none",
            ArtifactTag::Plankton => "plankton",
            ArtifactTag::Offset => "offset",
            ArtifactTag::Soft => "soft",
        }
    }
}

/// Ground truth per ping.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyTruth {
    pub true_bottom_m: Vec<f64>,
    pub bottom_present: Vec<bool>,
    pub artifact_tag: Vec<ArtifactTag>,
    /// Depth of the deepest rendered bottom-like band (the displaced bottom
    /// for offset pings, the sub-reflector for soft ones). NaN when absent.
    pub rendered_bottom_m: Vec<f64>,
    /// Downward shift of offset pings, 0 elsewhere.
    pub offset_m: Vec<f64>,
    /// Depth of the first NaN cell; NaN when the ping has none.
    pub nan_start_m: Vec<f64>,
    /// NaN start minus the bottom the sounder tracked; NaN when absent.
    pub nan_offset_m: Vec<f64>,
    /// Plankton layer `(top, bottom)` depths, NaN elsewhere.
    pub layer_m: Vec<(f64, f64)>,
}

impl SurveyTruth {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ping_index,bottom_present,true_bottom_m,artifact,rendered_bottom_m,offset_m,nan_start_m\n");
        let f = |v: f64| if v.is_nan() { "NaN".to_string() } else { format!("{v:.6}") };
        for i in 0..self.true_bottom_m.len() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{}",
                u8::from(self.bottom_present[i]),
                f(self.true_bottom_m[i]),
                self.artifact_tag[i].as_str(),
                f(self.rendered_bottom_m[i]),
                f(self.offset_m[i]),
                f(self.nan_start_m[i])
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Survey {
    pub echogram: Echogram,
    pub record: BottomRecord,
    pub truth: SurveyTruth,
}

/// Per-run artifact parameters.
#[derive(Debug, Clone, Copy)]
enum Artifact {
    None,
    Plankton { level_db: f64, thickness_m: f64, gap_m: f64 },
    Offset { cells: usize },
    Soft { sub_depth_m: f64 },
}

/// Picks exactly `k` of `n` slots as runs of `MIN_RUN..=MAX_RUN`, separated
/// by at least one free slot. Returns run `(start, len)` pairs in order.
fn allocate_runs(n: usize, k: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    if k == 0 {
        return Vec::new();
    }
    let free = n - k;
    let mut lens = Vec::new();
    let mut left = k;
    while left > 0 {
        let l = rng.random_range(MIN_RUN..=MAX_RUN).min(left);
        lens.push(l);
        left -= l;
    }
    // each run sits in its own gap between free slots; merge when too many
    while lens.len() > free + 1 {
        let l = lens.pop().expect("nonempty");
        *lens.last_mut().expect("nonempty") += l;
    }
    let mut slots: Vec<usize> = sample(rng, free + 1, lens.len()).into_vec();
    slots.sort_unstable();
    let mut out = Vec::with_capacity(lens.len());
    let mut taken = 0;
    for (slot, len) in slots.into_iter().zip(lens) {
        out.push((slot + taken, len));
        taken += len;
    }
    out
}

fn weighted_kind(mix: &ArtifactMix, rng: &mut Rng) -> usize {
    let u = rng.random::<f64>() * mix.total();
    if u < mix.plankton {
        0
    } else if u < mix.plankton + mix.offset {
        1
    } else {
        2
    }
}

struct PingPlan {
    present: bool,
    true_bottom_m: f64,
    peak_db: f64,
    artifact: Artifact,
    nan_u: f64,
    window_u: f64,
}

fn normal(rng: &mut Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

/// Generates a survey. A pure function of `cfg`.
pub fn generate(cfg: &SurveyConfig) -> Result<Survey> {
    cfg.validate()?;
    let plans = plan_survey(cfg);
    let rows = cfg.rows;
    let mut sv = vec![0f32; rows * cfg.cols];
    let mut truth = SurveyTruth {
        true_bottom_m: Vec::with_capacity(cfg.cols),
        bottom_present: Vec::with_capacity(cfg.cols),
        artifact_tag: Vec::with_capacity(cfg.cols),
        rendered_bottom_m: Vec::with_capacity(cfg.cols),
        offset_m: Vec::with_capacity(cfg.cols),
        nan_start_m: Vec::with_capacity(cfg.cols),
        nan_offset_m: Vec::with_capacity(cfg.cols),
        layer_m: Vec::with_capacity(cfg.cols),
    };
    let mut clean = Vec::with_capacity(cfg.cols);
    for (col, plan) in plans.iter().enumerate() {
        let mut rng = rng::stream(cfg.seed, &[rng::tag("ping"), col as u64]);
        let p = render_ping(cfg, plan, &mut rng);
        for (r, v) in p.column.iter().enumerate() {
            sv[r * cfg.cols + col] = *v as f32;
        }
        let tag = match plan.artifact {
            Artifact::None => ArtifactTag::None,
            Artifact::Plankton { .. } => ArtifactTag::Plankton,
            Artifact::Offset { .. } => ArtifactTag::Offset,
            Artifact::Soft { .. } => ArtifactTag::Soft,
        };
        let tb = if plan.present { plan.true_bottom_m } else { f64::NAN };
        truth.true_bottom_m.push(tb);
        truth.bottom_present.push(plan.present);
        truth.artifact_tag.push(tag);
        truth.rendered_bottom_m.push(p.rendered_bottom_m);
        truth.offset_m.push(p.offset_m);
        truth.nan_start_m.push(p.nan_start_m);
        truth.nan_offset_m.push(p.nan_offset_m);
        truth.layer_m.push(p.layer_m);
        clean.push(if tag == ArtifactTag::None { tb } else { tb - SAFETY_CUT_M });
    }
    let echogram = Echogram::new(rows, cfg.cols, 0.0, cfg.depth_step_m, sv, &cfg.survey_id)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let record = BottomRecord::new(vec![f64::NAN; cfg.cols], clean)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    Ok(Survey { echogram, record, truth })
}

fn plan_survey(cfg: &SurveyConfig) -> Vec<PingPlan> {
    let mut rng = rng::stream(cfg.seed, &[rng::tag("survey")]);
    let n = cfg.cols;
    let max_depth = cfg.rows as f64 * cfg.depth_step_m;
    let prof = cfg.bottom_profile;
    let phi = (-1.0 / prof.correlation_pings).exp();
    let innov = (1.0 - phi * phi).sqrt();
    let (lo, hi) = (MIN_BOTTOM_M, max_depth - BOTTOM_HEADROOM_M);
    let mut walk = normal(&mut rng, 1.0);
    let mut shade = normal(&mut rng, 1.0);
    let shade_phi: f64 = (-1.0f64 / 50.0).exp();
    let mut plans: Vec<PingPlan> = (0..n)
        .map(|_| {
            walk = phi * walk + innov * normal(&mut rng, 1.0);
            shade = shade_phi * shade + (1.0 - shade_phi * shade_phi).sqrt() * normal(&mut rng, 1.0);
            PingPlan {
                present: true,
                true_bottom_m: (prof.mean_depth_m + prof.roughness_m * walk).clamp(lo, hi),
                peak_db: cfg.bottom_peak_db + 2.0 * shade,
                artifact: Artifact::None,
                nan_u: rng.random(),
                window_u: rng.random(),
            }
        })
        .collect();

    let k_none = (cfg.no_bottom_rate * n as f64).round() as usize;
    for (s, l) in allocate_runs(n, k_none, &mut rng) {
        plans[s..s + l].iter_mut().for_each(|p| p.present = false);
    }
    let present: Vec<usize> = (0..n).filter(|&i| plans[i].present).collect();
    let k_art = (cfg.strong_correction_rate * present.len() as f64).round() as usize;
    for (s, l) in allocate_runs(present.len(), k_art, &mut rng) {
        let a = match weighted_kind(&cfg.artifact_mix, &mut rng) {
            0 => Artifact::Plankton {
                level_db: rng.random_range(-45.0..-30.0),
                thickness_m: rng.random_range(4.5..9.0),
                gap_m: rng.random_range(0.4..1.8),
            },
            1 => Artifact::Offset { cells: (rng.random_range(3.5..8.0) / cfg.depth_step_m).round() as usize },
            _ => Artifact::Soft { sub_depth_m: rng.random_range(4.0..8.0) },
        };
        for &i in &present[s..s + l] {
            plans[i].artifact = a;
        }
    }
    plans
}

struct RenderedPing {
    column: Vec<f64>,
    rendered_bottom_m: f64,
    offset_m: f64,
    nan_start_m: f64,
    nan_offset_m: f64,
    layer_m: (f64, f64),
}

fn render_ping(cfg: &SurveyConfig, plan: &PingPlan, rng: &mut Rng) -> RenderedPing {
    let rows = cfg.rows;
    let step = cfg.depth_step_m;
    let row_of = |d: f64| (d / step).round() as usize;
    let mut col: Vec<f64> = (0..rows)
        .map(|r| {
            let d = r as f64 * step;
            let bg = cfg.noise_floor_db + normal(rng, NOISE_SD_DB);
            let surf = SURFACE_PEAK_DB - SURFACE_DECAY_DB_PER_M * d + normal(rng, 1.5);
            bg.max(surf)
        })
        .collect();
    let mut out = RenderedPing {
        column: Vec::new(),
        rendered_bottom_m: f64::NAN,
        offset_m: 0.0,
        nan_start_m: f64::NAN,
        nan_offset_m: f64::NAN,
        layer_m: (f64::NAN, f64::NAN),
    };
    if !plan.present {
        out.column = col;
        return out;
    }
    let rb = row_of(plan.true_bottom_m).min(rows - 1);

    // fish schools: soft-edged, so they never beat the bottom onset
    if matches!(plan.artifact, Artifact::None) && rng.random::<f64>() < SCHOOL_PROB {
        let len = rng.random_range(10..45);
        let top_lo = (3.0 / step).round() as usize;
        if let Some(top_hi) = rb.checked_sub(SCHOOL_CLEARANCE_CELLS + len).filter(|&h| h > top_lo) {
            let top = rng.random_range(top_lo..top_hi);
            let level = rng.random_range(-55.0..-35.0);
            let floor = cfg.noise_floor_db;
            for k in 0..len {
                let edge = (k.min(len - 1 - k) + 1).min(SCHOOL_EDGE_CELLS + 1) as f64 / (SCHOOL_EDGE_CELLS + 1) as f64;
                let v = &mut col[top + k];
                *v = v.max(floor + (level - floor) * edge + normal(rng, 1.5));
            }
        }
    }

    // bottom (or diffuse soft bottom) and its reverberation tail
    let peak = plan.peak_db;
    let band = |r: usize, onset: usize, peak: f64| -> f64 {
        let k = (r - onset) as f64;
        let gauss = peak - 10.0 * std::f64::consts::LOG10_E * k * k / (2.0 * BOTTOM_SIGMA_CELLS * BOTTOM_SIGMA_CELLS);
        gauss.max(peak - TAIL_DROP_DB - TAIL_SLOPE_DB_PER_CELL * k)
    };
    let mut tracked_row = rb;
    let mut deepest_row = rb;
    match plan.artifact {
        Artifact::Soft { sub_depth_m } => {
            let rs = (rb + row_of(sub_depth_m)).min(rows - 1);
            let floor = cfg.noise_floor_db;
            for (r, v) in col.iter_mut().enumerate().skip(rb.saturating_sub(16)) {
                let z = (r as f64 - rb as f64) / 4.0;
                let ramp = floor + (-45.0 - floor) * statrs::function::erf::erf(z / std::f64::consts::SQRT_2).mul_add(0.5, 0.5);
                let diffuse = if r > rb + 8 { -45.0 - 0.5 * (r - rb - 8) as f64 } else { ramp };
                let x = if r >= rs { band(r, rs, -20.0 + peak - cfg.bottom_peak_db) } else { diffuse };
                *v = v.max(x + normal(rng, 1.0));
            }
            tracked_row = rs;
            deepest_row = rs;
        }
        _ => {
            for (r, v) in col.iter_mut().enumerate().skip(rb) {
                *v = v.max(band(r, rb, peak) + normal(rng, 0.5));
            }
        }
    }

    if let Artifact::Plankton { level_db, thickness_m, gap_m } = plan.artifact {
        let thickness = thickness_m.min(plan.true_bottom_m - gap_m - 6.0);
        let lb = rb - row_of(gap_m);
        let lt = rb - row_of(gap_m + thickness);
        for v in &mut col[lt..lb] {
            *v = level_db + normal(rng, 1.5);
        }
        for v in &mut col[lb..rb] {
            *v = -65.0 + normal(rng, 2.0);
        }
        tracked_row = lt;
        out.layer_m = (lt as f64 * step, lb as f64 * step);
    }

    if let Artifact::Offset { cells } = plan.artifact {
        let shifted: Vec<f64> = (0..rows)
            .map(|r| if r >= cells { col[r - cells] } else { cfg.noise_floor_db + normal(rng, NOISE_SD_DB) })
            .collect();
        col = shifted;
        tracked_row = rb + cells;
        deepest_row = rb + cells;
        out.offset_m = cells as f64 * step;
    }
    out.rendered_bottom_m = deepest_row as f64 * step;

    // NaN padding below the recording limit
    let disturbed = !matches!(plan.artifact, Artifact::None) || plan.window_u < SPONTANEOUS_SHORT_WINDOW;
    let (lo, hi) = cfg.nan_style.offset_range_m(disturbed);
    let tracked_m = tracked_row as f64 * step;
    let wanted = tracked_m + lo + (hi - lo) * plan.nan_u;
    let start_m = wanted.max(out.rendered_bottom_m + NAN_CLEARANCE_M);
    let start = row_of(start_m);
    if start < rows {
        col[start..].iter_mut().for_each(|v| *v = f64::NAN);
        out.nan_start_m = start as f64 * step;
        out.nan_offset_m = out.nan_start_m - tracked_m;
    }
    out.column = col;
    out
}

/// Default pair of surveys: domain A with many strong corrections and
/// `style_A` NaN padding, domain B with few and `style_B`.
pub fn domain_configs(seed_a: u64, seed_b: u64, size_a: usize, size_b: usize) -> (SurveyConfig, SurveyConfig) {
    let a = SurveyConfig {
        cols: size_a,
        seed: seed_a,
        strong_correction_rate: 0.13,
        nan_style: NanStyle::StyleA,
        survey_id: "domain_a".into(),
        ..SurveyConfig::default()
    };
    let b = SurveyConfig {
        cols: size_b,
        seed: seed_b,
        strong_correction_rate: 0.01,
        nan_style: NanStyle::StyleB,
        survey_id: "domain_b".into(),
        ..SurveyConfig::default()
    };
    (a, b)
}

pub fn make_domain_pair(seed_a: u64, seed_b: u64, size_a: usize, size_b: usize) -> Result<(Survey, Survey)> {
    if size_a < 1000 || size_b < 1000 {
        return Err(SynthError::InvalidConfig("domain surveys need at least 1000 pings".into()));
    }
    let (a, b) = domain_configs(seed_a, seed_b, size_a, size_b);
    Ok((generate(&a)?, generate(&b)?))
}
