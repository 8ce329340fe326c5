use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use bottomflag::harness::{self, FormatConfig};
use bottomflag::learn::Algorithm;
use bottomflag::synthgen::{self, SurveyConfig};
use bottomflag::{Echogram, ModelSpec, TrainConfig, TrainedModel};
use bottomflag_cli::corrections::CorrectionLog;
use bottomflag_cli::service::{
    max_pool, router, AppState, BottomResponse, CorrectionsResponse, FlagsResponse, ServeConfig, Survey, SurveyMeta, Tile,
};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const PINGS: usize = 10_000;

struct Fixture {
    formatted: Echogram,
    model: TrainedModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = FormatConfig::default();
        let big = synthgen::generate(&SurveyConfig { cols: PINGS, seed: 3, survey_id: "big".into(), ..SurveyConfig::default() }).unwrap();
        let formatted = harness::format_echogram(&big.echogram, &cfg, false).unwrap();
        let small = synthgen::generate(&SurveyConfig { cols: 1500, seed: 4, ..SurveyConfig::default() }).unwrap();
        let prepared = harness::prepare(&small.echogram, &small.record.clean_bottom_m, &cfg).unwrap();
        let spec = ModelSpec::tuned(Algorithm::Svm);
        let model = harness::train_on_pool(&prepared.pool, &spec, &TrainConfig { epochs: 5, ..TrainConfig::default() }, 0.1).unwrap();
        Fixture { formatted, model }
    })
}

fn app(dir: &Path) -> Router {
    let f = fixture();
    let with_model = Survey::new("s1", f.formatted.clone(), None, Some(f.model.clone()), &dir.join("s1.ndjson")).unwrap();
    let bare = Survey::new("s2", f.formatted.ping_range(0, 500), None, None, &dir.join("s2.ndjson")).unwrap();
    router(Arc::new(AppState::new(vec![with_model, bare], 0.5, 20, 0)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn decode(sv: &str) -> Vec<f32> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(sv).unwrap();
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

#[tokio::test]
async fn lists_surveys_with_meta() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, v) = call(&app, "GET", "/surveys", None).await;
    assert_eq!(status, StatusCode::OK);
    let list: Vec<SurveyMeta> = serde_json::from_value(v).unwrap();
    assert_eq!(list.iter().map(|m| m.id.as_str()).collect::<Vec<_>>(), ["s1", "s2"]);
    assert_eq!((list[0].cols, list[0].has_model, list[1].has_model), (PINGS, true, false));
    let (_, v) = call(&app, "GET", "/surveys/s2/meta", None).await;
    assert_eq!(serde_json::from_value::<SurveyMeta>(v).unwrap(), list[1]);
}

#[tokio::test]
async fn first_chunk_echoes_header() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let e = &fixture().formatted;
    let (status, v) = call(&app, "GET", "/surveys/s1/tiles?start=0&count=256", None).await;
    assert_eq!(status, StatusCode::OK);
    let tile: Tile = serde_json::from_value(v).unwrap();
    assert_eq!((tile.start, tile.count, tile.width), (0, 256, 256));
    assert_eq!(tile.rows, e.rows());
    assert_eq!(tile.depth_step_m, e.depth_step_m());
    assert_eq!(tile.depth_origin_m, e.depth_origin_m());
    let sv = decode(&tile.sv);
    assert_eq!(sv.len(), e.rows() * 256);
    // full width is lossless
    let chunk = e.ping_range(0, 256);
    assert_eq!(sv, chunk.sv());
}

#[tokio::test]
async fn narrow_tiles_are_max_pooled() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let e = &fixture().formatted;
    let (_, v) = call(&app, "GET", "/surveys/s1/tiles?start=1000&count=1000&width=100", None).await;
    let tile: Tile = serde_json::from_value(v).unwrap();
    assert_eq!(tile.width, 100);
    let sv = decode(&tile.sv);
    assert_eq!(sv, max_pool(e, 1000, 1000, 100));
    // each pooled cell is the max of its 10-ping bin
    for r in [0, e.rows() / 2, e.rows() - 1] {
        let want = (1000..1010).map(|c| e.get(r, c)).fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(sv[r * 100], want);
    }
}

#[tokio::test]
async fn flags_cover_every_ping() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, v) = call(&app, "GET", "/surveys/s1/flags", None).await;
    assert_eq!(status, StatusCode::OK);
    let flags: FlagsResponse = serde_json::from_value(v).unwrap();
    assert_eq!(flags.probabilities.len(), PINGS);
    assert_eq!(flags.flags.len(), PINGS);
    assert!(flags.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(flags.flags.iter().zip(&flags.probabilities).all(|(&f, &p)| f == (p >= 0.5)));
    let (_, again) = call(&app, "GET", "/surveys/s1/flags", None).await;
    assert_eq!(serde_json::from_value::<FlagsResponse>(again).unwrap(), flags);
}

#[tokio::test]
async fn correction_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let values = [31.123456789, 31.2000001, 30.987654321];
    let body = json!({ "seq": 1, "start": 40, "end": 43, "bottom_m": values, "author": "expert" });
    let (status, posted) = call(&app, "POST", "/surveys/s1/corrections", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{posted}");
    assert_eq!(posted["seq"], 1);

    let (status, v) = call(&app, "GET", "/surveys/s1/corrections", None).await;
    assert_eq!(status, StatusCode::OK);
    let log: CorrectionsResponse = serde_json::from_value(v).unwrap();
    assert_eq!(log.last_seq, 1);
    for (got, want) in log.events[0].bottom_m.iter().zip(values) {
        assert!((got - want).abs() <= 1e-6);
    }
    let (_, v) = call(&app, "GET", "/surveys/s1/corrections?since=1", None).await;
    assert!(serde_json::from_value::<CorrectionsResponse>(v).unwrap().events.is_empty());

    let (_, v) = call(&app, "GET", "/surveys/s1/bottom", None).await;
    let b: BottomResponse = serde_json::from_value(v).unwrap();
    for (i, want) in values.iter().enumerate() {
        assert!((b.corrected_bottom_m[40 + i].unwrap() - want).abs() <= 1e-6);
    }
    assert_eq!(b.corrected_bottom_m[39], b.auto_bottom_m[39]);

    // acknowledged means on disk
    let reopened = CorrectionLog::open(dir.path().join("s1.ndjson"), "s1", PINGS).unwrap();
    assert_eq!(reopened.events(), log.events.as_slice());
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let ok = json!({ "seq": 1, "start": 0, "end": 1, "bottom_m": [20.0], "author": "a" });
    for uri in ["/surveys/nope/meta", "/surveys/nope/tiles", "/surveys/nope/bottom", "/surveys/nope/corrections", "/surveys/s2/flags"] {
        assert_eq!(call(&app, "GET", uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(call(&app, "POST", "/surveys/nope/corrections", Some(ok.clone())).await.0, StatusCode::NOT_FOUND);

    let stale = json!({ "seq": 2, "start": 0, "end": 1, "bottom_m": [20.0], "author": "a" });
    let (status, v) = call(&app, "POST", "/surveys/s2/corrections", Some(stale)).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("stale_sequence")));

    let malformed = [
        json!({ "seq": 1, "start": 3, "end": 3, "bottom_m": [], "author": "a" }),
        json!({ "seq": 1, "start": 0, "end": 2, "bottom_m": [20.0], "author": "a" }),
        json!({ "seq": 1, "start": 499, "end": 501, "bottom_m": [1.0, 2.0], "author": "a" }),
        json!({ "seq": 1, "start": 0, "end": 1, "bottom_m": [-1.0], "author": "a" }),
        json!({ "seq": 1, "start": 0, "bottom_m": [1.0] }),
        json!("not an object"),
    ];
    for body in malformed {
        assert_eq!(call(&app, "POST", "/surveys/s2/corrections", Some(body.clone())).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
    for uri in ["/surveys/s2/tiles?start=400&count=200", "/surveys/s2/tiles?count=0", "/surveys/s2/tiles?width=0"] {
        assert_eq!(call(&app, "GET", uri, None).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{uri}");
    }

    // rejected posts leave no trace; a good one then gets seq 1
    let (status, _) = call(&app, "POST", "/surveys/s2/corrections", Some(ok.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(call(&app, "POST", "/surveys/s2/corrections", Some(ok)).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn reads_do_not_touch_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let body = json!({ "seq": 1, "start": 5, "end": 7, "bottom_m": [10.5, 11.0], "author": "a" });
    call(&app, "POST", "/surveys/s2/corrections", Some(body)).await;
    let path = dir.path().join("s2.ndjson");
    let before = std::fs::read(&path).unwrap();
    let first = call(&app, "GET", "/surveys/s2/bottom", None).await;
    for uri in ["/surveys", "/surveys/s2/meta", "/surveys/s2/tiles?width=7", "/surveys/s2/corrections?since=0"] {
        call(&app, "GET", uri, None).await;
    }
    assert_eq!(call(&app, "GET", "/surveys/s2/bottom", None).await, first);
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn config_paths_resolve_next_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture();
    f.formatted.ping_range(0, 300).save(dir.path().join("a.echg")).unwrap();
    f.model.save(dir.path().join("m.bfm")).unwrap();
    let cfg = json!({ "surveys": [{ "id": "a", "echogram": "a.echg", "model": "m.bfm" }], "mc_passes": 5 });
    std::fs::write(dir.path().join("serve.json"), cfg.to_string()).unwrap();
    let loaded = ServeConfig::load(dir.path().join("serve.json")).unwrap();
    assert_eq!(loaded.surveys[0].corrections.as_deref(), Some(dir.path().join("a.corrections.ndjson").as_path()));
    assert_eq!((loaded.flag_threshold, loaded.mc_passes), (0.5, 5));
    let state = AppState::from_config(&loaded).unwrap();
    assert_eq!(state.surveys["a"].echogram.cols(), 300);
    assert!(dir.path().join("a.corrections.ndjson").exists());
}
