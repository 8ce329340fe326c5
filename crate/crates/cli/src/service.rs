//! Review service: echogram tiles, flags and bottom lines over HTTP, plus the
//! correction log.
//!
//! Reads never mutate state. Correction posts are appended and synced to
//! the survey's log before the response is sent; a per-survey mutex
//! serializes writers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::Engine as _;
use bottomflag::bottomline::detect_bottom;
use bottomflag::echogram::depth_series_from_csv;
use bottomflag::harness::{flag_pings, PingFlag};
use bottomflag::{Echogram, TrainedModel};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corrections::{CorrectionError, CorrectionEvent, CorrectionLog, CorrectionRequest};

/// Environment variable holding the listening port.
pub const PORT_ENV: &str = "BOTTOMFLAG_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("survey {id}: {reason}")]
    Survey { id: String, reason: String },
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyEntry {
    pub id: String,
    /// Formatted `.echg` served as tiles and scored for flags.
    pub echogram: PathBuf,
    /// Automatic bottom as a depth-series CSV; detected on load if absent.
    #[serde(default)]
    pub bottom: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Correction log; defaults to `<id>.corrections.ndjson` next to the config.
    #[serde(default)]
    pub corrections: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    pub surveys: Vec<SurveyEntry>,
    #[serde(default = "default_threshold")]
    pub flag_threshold: f64,
    #[serde(default = "default_passes")]
    pub mc_passes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_passes() -> usize {
    50
}

impl ServeConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ServeConfig = serde_json::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.surveys {
            let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
            s.echogram = resolve(&s.echogram);
            s.bottom = s.bottom.as_ref().map(resolve);
            s.model = s.model.as_ref().map(resolve);
            s.corrections = Some(s.corrections.as_ref().map_or_else(|| base.join(format!("{}.corrections.ndjson", s.id)), resolve));
        }
        Ok(cfg)
    }
}

/// One served survey.
pub struct Survey {
    pub id: String,
    pub echogram: Echogram,
    pub auto_bottom_m: Vec<f64>,
    pub model: Option<TrainedModel>,
    flags: OnceLock<Vec<PingFlag>>,
    log: Mutex<CorrectionLog>,
}

impl Survey {
    pub fn new(
        id: &str,
        echogram: Echogram,
        auto_bottom_m: Option<Vec<f64>>,
        model: Option<TrainedModel>,
        log_path: &Path,
    ) -> Result<Self, ServiceError> {
        let bad = |reason: String| ServiceError::Survey { id: id.to_string(), reason };
        let auto_bottom_m = auto_bottom_m.unwrap_or_else(|| detect_bottom(&echogram));
        if auto_bottom_m.len() != echogram.cols() {
            return Err(bad(format!("{} bottom values for {} pings", auto_bottom_m.len(), echogram.cols())));
        }
        if let Some(m) = &model {
            if m.input_len != echogram.rows() {
                return Err(bad(format!("model expects {} rows, echogram has {}", m.input_len, echogram.rows())));
            }
        }
        let log = CorrectionLog::open(log_path, id, echogram.cols())?;
        Ok(Survey { id: id.to_string(), echogram, auto_bottom_m, model, flags: OnceLock::new(), log: Mutex::new(log) })
    }

    fn load(entry: &SurveyEntry) -> Result<Self, ServiceError> {
        let bad = |reason: String| ServiceError::Survey { id: entry.id.clone(), reason };
        let echogram = Echogram::load(&entry.echogram).map_err(|e| bad(e.to_string()))?;
        let bottom = match &entry.bottom {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Some(depth_series_from_csv(&text).map_err(|e| bad(e.to_string()))?.1)
            }
            None => None,
        };
        let model = match &entry.model {
            Some(p) => Some(TrainedModel::load(p).map_err(|e| bad(e.to_string()))?),
            None => None,
        };
        let log_path = entry.corrections.clone().unwrap_or_else(|| PathBuf::from(format!("{}.corrections.ndjson", entry.id)));
        Survey::new(&entry.id, echogram, bottom, model, &log_path)
    }
}

pub struct AppState {
    pub surveys: BTreeMap<String, Survey>,
    pub flag_threshold: f64,
    pub mc_passes: usize,
    pub seed: u64,
}

impl AppState {
    pub fn new(surveys: Vec<Survey>, flag_threshold: f64, mc_passes: usize, seed: u64) -> Self {
        AppState { surveys: surveys.into_iter().map(|s| (s.id.clone(), s)).collect(), flag_threshold, mc_passes, seed }
    }

    pub fn from_config(cfg: &ServeConfig) -> Result<Self, ServiceError> {
        let surveys = cfg.surveys.iter().map(Survey::load).collect::<Result<Vec<_>, _>>()?;
        Ok(AppState::new(surveys, cfg.flag_threshold, cfg.mc_passes, cfg.seed))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/surveys", get(list_surveys))
        .route("/surveys/{id}/meta", get(meta))
        .route("/surveys/{id}/tiles", get(tiles))
        .route("/surveys/{id}/flags", get(flags))
        .route("/surveys/{id}/bottom", get(bottom))
        .route("/surveys/{id}/corrections", get(list_corrections).post(post_correction))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let kind = match self.0 {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::CONFLICT => "stale_sequence",
            StatusCode::UNPROCESSABLE_ENTITY => "unprocessable",
            _ => "internal",
        };
        (self.0, Json(json!({ "error": kind, "message": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn survey<'a>(state: &'a AppState, id: &str) -> ApiResult<&'a Survey> {
    state.surveys.get(id).ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown survey {id}")))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SurveyMeta {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub depth_origin_m: f64,
    pub depth_step_m: f64,
    pub has_model: bool,
    pub last_seq: u64,
}

fn meta_of(s: &Survey) -> SurveyMeta {
    SurveyMeta {
        id: s.id.clone(),
        rows: s.echogram.rows(),
        cols: s.echogram.cols(),
        depth_origin_m: s.echogram.depth_origin_m(),
        depth_step_m: s.echogram.depth_step_m(),
        has_model: s.model.is_some(),
        last_seq: s.log.lock().map_or(0, |l| l.last_seq()),
    }
}

async fn list_surveys(State(state): State<Arc<AppState>>) -> Json<Vec<SurveyMeta>> {
    Json(state.surveys.values().map(meta_of).collect())
}

async fn meta(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SurveyMeta>> {
    Ok(Json(meta_of(survey(&state, &id)?)))
}

#[derive(Debug, Deserialize)]
struct TileQuery {
    start: Option<usize>,
    count: Option<usize>,
    width: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Tile {
    pub survey_id: String,
    pub start: usize,
    pub count: usize,
    /// Columns in the payload, `min(width, count)`.
    pub width: usize,
    pub rows: usize,
    pub depth_origin_m: f64,
    pub depth_step_m: f64,
    /// Base64 of little-endian f32, row-major `rows × width`.
    pub sv: String,
}

/// Max-pools pings `[start, start + count)` into `width` columns. Column `j`
/// covers pings `start + ⌊j·count/width⌋ .. start + ⌊(j+1)·count/width⌋`;
/// NaN cells are ignored unless a whole bin is NaN.
pub fn max_pool(e: &Echogram, start: usize, count: usize, width: usize) -> Vec<f32> {
    let width = width.clamp(1, count.max(1));
    let mut out = vec![f32::NAN; e.rows() * width];
    let sv = e.sv();
    for r in 0..e.rows() {
        let row = &sv[r * e.cols()..(r + 1) * e.cols()];
        for j in 0..width {
            let (a, b) = (start + j * count / width, start + (j + 1) * count / width);
            let m = row[a..b].iter().copied().filter(|v| !v.is_nan()).fold(f32::NEG_INFINITY, f32::max);
            out[r * width + j] = if m == f32::NEG_INFINITY { f32::NAN } else { m };
        }
    }
    out
}

async fn tiles(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TileQuery>,
) -> ApiResult<Json<Tile>> {
    let s = survey(&state, &id)?;
    let cols = s.echogram.cols();
    let start = q.start.unwrap_or(0);
    let count = q.count.unwrap_or(cols.saturating_sub(start));
    if count == 0 || start.checked_add(count).is_none_or(|end| end > cols) {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("ping window [{start}, +{count}) outside 0..{cols}")));
    }
    let width = q.width.unwrap_or(count).clamp(1, count);
    if q.width == Some(0) {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "width must be positive".into()));
    }
    let values = max_pool(&s.echogram, start, count, width);
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok(Json(Tile {
        survey_id: s.id.clone(),
        start,
        count,
        width,
        rows: s.echogram.rows(),
        depth_origin_m: s.echogram.depth_origin_m(),
        depth_step_m: s.echogram.depth_step_m(),
        sv: base64::engine::general_purpose::STANDARD.encode(bytes),
    }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FlagsResponse {
    pub survey_id: String,
    pub threshold: f64,
    pub probabilities: Vec<f64>,
    pub flags: Vec<bool>,
}

async fn flags(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<FlagsResponse>> {
    let s = survey(&state, &id)?;
    if s.model.is_none() {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("no model attached to survey {id}")));
    }
    let computed = match s.flags.get() {
        Some(f) => f.clone(),
        None => {
            let st = state.clone();
            let id2 = id.clone();
            let result = tokio::task::spawn_blocking(move || {
                let s = &st.surveys[&id2];
                flag_pings(s.model.as_ref().expect("checked above"), &s.echogram, st.flag_threshold, st.mc_passes, st.seed)
                    .map(|f| s.flags.get_or_init(|| f).clone())
            })
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            result.map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        }
    };
    Ok(Json(FlagsResponse {
        survey_id: id,
        threshold: state.flag_threshold,
        probabilities: computed.iter().map(|f| f.probability_strong).collect(),
        flags: computed.iter().map(|f| f.flag).collect(),
    }))
}

fn nullable(v: &[f64]) -> Vec<Option<f64>> {
    v.iter().map(|x| x.is_finite().then_some(*x)).collect()
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct BottomResponse {
    pub survey_id: String,
    pub last_seq: u64,
    pub auto_bottom_m: Vec<Option<f64>>,
    pub corrected_bottom_m: Vec<Option<f64>>,
}

async fn bottom(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<BottomResponse>> {
    let s = survey(&state, &id)?;
    let log = s.log.lock().map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(BottomResponse {
        survey_id: id,
        last_seq: log.last_seq(),
        auto_bottom_m: nullable(&s.auto_bottom_m),
        corrected_bottom_m: nullable(&log.corrected(&s.auto_bottom_m)),
    }))
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    since: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CorrectionsResponse {
    pub survey_id: String,
    pub last_seq: u64,
    pub events: Vec<CorrectionEvent>,
}

async fn list_corrections(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SinceQuery>,
) -> ApiResult<Json<CorrectionsResponse>> {
    let s = survey(&state, &id)?;
    let log = s.log.lock().map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(CorrectionsResponse { survey_id: id, last_seq: log.last_seq(), events: log.since(q.since.unwrap_or(0)) }))
}

async fn post_correction(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<CorrectionEvent>)> {
    let s = survey(&state, &id)?;
    let req: CorrectionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let mut log = s.log.lock().map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match log.append(req) {
        Ok(ev) => Ok((StatusCode::CREATED, Json(ev))),
        Err(e @ CorrectionError::StaleSequence { .. }) => Err(ApiError(StatusCode::CONFLICT, e.to_string())),
        Err(e @ CorrectionError::Malformed(_)) => Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

/// Port from [`PORT_ENV`], else [`DEFAULT_PORT`].
pub fn port_from_env() -> Result<u16, ServiceError> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| ServiceError::Config(format!("{PORT_ENV}={v} is not a port"))),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

pub async fn serve(state: AppState, host: &str, port: u16) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
