//! HTTP+JSON service over a live engine.
//!
//! Writes (`POST /v1/observations`) go through one write lock, so they are
//! applied in arrival order. Reads share the lock and always see a state
//! between two observations. Every snapshot emitted by an accepted
//! observation is pushed to `GET /v1/events` subscribers.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use erimap_core::bn::Distribution;
use erimap_core::bundle::{DisplaySpec, ScenarioBundle};
use erimap_core::export::geojson_text;
use erimap_core::observation::Observation;
use erimap_core::pipeline::{BeliefSnapshot, EngineState, PipelineError};
use erimap_core::spatial::{beliefs_to_geojson, SpatialError};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex, RwLock};

const EVENT_BUFFER: usize = 1024;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    bundle: ScenarioBundle,
    engine: RwLock<EngineState>,
    events: broadcast::Sender<BeliefSnapshot>,
    audit: Option<Mutex<File>>,
}

impl AppState {
    pub fn new(bundle: ScenarioBundle, engine: EngineState) -> Self {
        Self::build(bundle, engine, None)
    }

    /// Also append every accepted observation to `path` as NDJSON, so the
    /// file can be replayed as a script.
    pub fn with_audit_log(
        bundle: ScenarioBundle,
        engine: EngineState,
        path: &Path,
    ) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self::build(bundle, engine, Some(Mutex::new(file))))
    }

    fn build(bundle: ScenarioBundle, engine: EngineState, audit: Option<Mutex<File>>) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Self {
            inner: Arc::new(Shared {
                bundle,
                engine: RwLock::new(engine),
                events,
                audit,
            }),
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<BeliefSnapshot> {
        self.inner.events.subscribe()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/metadata", get(metadata))
        .route("/v1/observations", post(observations))
        .route("/v1/areas", get(areas))
        .route("/v1/areas/{id}/beliefs", get(beliefs))
        .route("/v1/areas/{id}/timeline", get(timeline))
        .route("/v1/snapshots", get(snapshots))
        .route("/v1/events", get(events))
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

/// 409 for contradicting hard evidence, 410 once halted, 400 otherwise.
pub fn status_for_code(code: &str) -> StatusCode {
    match code {
        "HardEvidenceConflict" => StatusCode::CONFLICT,
        "EngineHalted" => StatusCode::GONE,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        Self::new(status_for_code(e.code()), e.code(), &e)
    }
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    let engine = app.inner.engine.read().await;
    Json(serde_json::json!({
        "status": "ok",
        "halted": engine.is_halted(),
        "last_seq": engine.last_seq(),
    }))
}

#[derive(Serialize)]
struct NodeInfo<'a> {
    id: &'a str,
    states: &'a [String],
    critical_states: Vec<&'a str>,
    parents: Vec<&'a str>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    name: &'a str,
    nodes: Vec<NodeInfo<'a>>,
    key_nodes: Vec<&'a str>,
    tracked_nodes: Vec<&'a str>,
    areas: Vec<&'a str>,
    display: &'a DisplaySpec,
    reliability: BTreeMap<erimap_core::observation::Tier, f64>,
    theta: f64,
}

async fn metadata(State(app): State<AppState>) -> Response {
    let b = &app.inner.bundle;
    let net = &b.network;
    let engine = app.inner.engine.read().await;
    let meta = Metadata {
        name: &b.name,
        nodes: net
            .nodes()
            .iter()
            .map(|n| NodeInfo {
                id: n.id(),
                states: n.states(),
                critical_states: n
                    .critical_states()
                    .iter()
                    .map(|&i| n.states()[i].as_str())
                    .collect(),
                parents: n.parents().iter().map(|&p| net.node_at(p).id()).collect(),
            })
            .collect(),
        key_nodes: net.key_nodes().collect(),
        tracked_nodes: engine.tracked_nodes().iter().map(String::as_str).collect(),
        areas: b.area_ids().collect(),
        display: &b.display,
        reliability: b.reliability.likelihoods(),
        theta: b.policy.theta,
    };
    Json(meta).into_response()
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IngestResult {
    Accepted {
        id: String,
        snapshots: Vec<u64>,
    },
    Rejected {
        id: Option<String>,
        code: String,
        message: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestResponse {
    pub results: Vec<IngestResult>,
}

/// Single observation object or an array of them. Items are applied in
/// order; a rejected item does not stop the rest. The response status is
/// 200 when everything was accepted, otherwise that of the first rejection.
async fn observations(State(app): State<AppState>, body: String) -> Response {
    let value: serde_json::Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(e) => return ApiError::new(StatusCode::BAD_REQUEST, "InvalidJson", e).into_response(),
    };
    let items = match value {
        serde_json::Value::Array(items) => items,
        single => vec![single],
    };

    let mut engine = app.inner.engine.write().await;
    let mut results = Vec::with_capacity(items.len());
    let mut status = StatusCode::OK;
    let mut accepted = Vec::new();
    for item in items {
        let id = item.get("id").and_then(|v| v.as_str()).map(str::to_string);
        let obs: Observation = match serde_json::from_value(item) {
            Ok(o) => o,
            Err(e) => {
                if status == StatusCode::OK {
                    status = StatusCode::BAD_REQUEST;
                }
                results.push(IngestResult::Rejected {
                    id,
                    code: "InvalidObservation".into(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        match engine.ingest_or_reject(&obs) {
            Ok(snaps) => {
                results.push(IngestResult::Accepted {
                    id: obs.id.clone(),
                    snapshots: snaps.iter().map(|s| s.seq).collect(),
                });
                for s in snaps {
                    // no subscribers is fine
                    let _ = app.inner.events.send(s);
                }
                accepted.push(obs);
            }
            Err(r) => {
                if status == StatusCode::OK {
                    status = status_for_code(&r.code);
                }
                results.push(IngestResult::Rejected {
                    id: Some(r.observation_id),
                    code: r.code,
                    message: r.message,
                });
            }
        }
    }
    drop(engine);

    if let Some(audit) = &app.inner.audit {
        let mut f = audit.lock().await;
        for obs in &accepted {
            let line = serde_json::to_string(obs).expect("observations serialize");
            if let Err(e) = writeln!(f, "{line}") {
                log::error!("cannot append to audit log: {e}");
            }
        }
    }
    (status, Json(IngestResponse { results })).into_response()
}

#[derive(Deserialize)]
struct AreasQuery {
    node: Option<String>,
    state: Option<String>,
}

async fn areas(
    State(app): State<AppState>,
    Query(q): Query<AreasQuery>,
) -> Result<Response, ApiError> {
    let b = &app.inner.bundle;
    let node = q.node.unwrap_or_else(|| b.display.node.clone());
    let state = match q.state {
        Some(s) => s,
        None if node == b.display.node => b.display.state.clone(),
        None => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "MissingState",
                "`state` is required when `node` is not the display node",
            ))
        }
    };
    let engine = app.inner.engine.read().await;
    let fc = beliefs_to_geojson(&b.areas, engine.areas(), &b.network, &node, &state).map_err(
        |e| match e {
            SpatialError::Inference(erimap_core::bn::BnError::UnknownNode(_)) => {
                ApiError::new(StatusCode::BAD_REQUEST, "UnknownNode", &e)
            }
            SpatialError::Inference(erimap_core::bn::BnError::InvalidState { .. }) => {
                ApiError::new(StatusCode::BAD_REQUEST, "UnknownState", &e)
            }
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InferenceError", other),
        },
    )?;
    drop(engine);
    let body = geojson_text(&fc)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e))?;
    Ok(([(header::CONTENT_TYPE, "application/geo+json")], body).into_response())
}

#[derive(Serialize)]
struct Beliefs {
    area_id: String,
    marginals: BTreeMap<String, Distribution>,
    confirmed: Vec<String>,
}

fn not_found(e: PipelineError) -> ApiError {
    match e {
        PipelineError::UnknownArea(_) => ApiError::new(StatusCode::NOT_FOUND, e.code(), &e),
        other => other.into(),
    }
}

async fn beliefs(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Beliefs>, ApiError> {
    let engine = app.inner.engine.read().await;
    let marginals = engine.current_beliefs(&id).map_err(not_found)?;
    let confirmed = engine
        .area(&id)
        .map_err(not_found)?
        .confirmed()
        .iter()
        .cloned()
        .collect();
    Ok(Json(Beliefs {
        area_id: id,
        marginals,
        confirmed,
    }))
}

async fn timeline(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Vec<BeliefSnapshot>>, ApiError> {
    let engine = app.inner.engine.read().await;
    let snaps = engine.area_timeline(&id).map_err(not_found)?;
    Ok(Json(snaps.into_iter().cloned().collect()))
}

#[derive(Deserialize)]
struct SnapshotQuery {
    seq: Option<u64>,
}

#[derive(Serialize, Deserialize)]
pub struct SnapshotsAt {
    pub seq: u64,
    pub snapshots: Vec<BeliefSnapshot>,
}

/// Latest snapshot of every area as of `seq` (default: now).
async fn snapshots(
    State(app): State<AppState>,
    Query(q): Query<SnapshotQuery>,
) -> Result<Json<SnapshotsAt>, ApiError> {
    let engine = app.inner.engine.read().await;
    let last = engine.last_seq().unwrap_or(0);
    let seq = q.seq.unwrap_or(last);
    if engine.last_seq().is_none() || seq > last {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "UnknownSeq",
            format!("seq {seq} is beyond the last snapshot {last}"),
        ));
    }
    Ok(Json(SnapshotsAt {
        seq,
        snapshots: engine.snapshots_at(seq).into_iter().cloned().collect(),
    }))
}

fn snapshot_stream(
    rx: broadcast::Receiver<BeliefSnapshot>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(snap) => {
                    let event = Event::default()
                        .event("snapshot")
                        .id(snap.seq.to_string())
                        .json_data(&snap)
                        .expect("snapshots serialize");
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("event subscriber lagged, {n} snapshots dropped");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

async fn events(State(app): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    Sse::new(snapshot_stream(app.subscribe())).keep_alive(KeepAlive::default())
}
