//! HTTP/JSON service over a running simulation.
//!
//! One engine thread owns the [`Simulation`] and is its only writer. Handlers
//! read snapshots under a short lock and send mutations to the engine over a
//! channel, so every accepted submission becomes a scheduled event.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::io::Write;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use qnet_core::controlplane::{validate_request, EntanglementRequest, Simulation};
use qnet_core::simkernel::{ns_to_secs, secs_to_ns};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "schema_error", message)
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("`{what}` not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"schema_version": SCHEMA_VERSION, "error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

/// How virtual time follows the wall clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// Virtual seconds per wall second.
    Scaled(f64),
    /// Run to quiescence after every command.
    Instant,
}

#[derive(Debug)]
pub struct Submitted {
    pub id: String,
    pub state: String,
    pub replayed: bool,
}

enum Command {
    Submit {
        id: Option<String>,
        key: Option<String>,
        request: EntanglementRequest,
        reply: oneshot::Sender<Result<Submitted, ApiError>>,
    },
    Shutdown,
}

/// The engine thread and a handle for the HTTP layer.
pub struct Engine {
    tx: mpsc::Sender<Command>,
    thread: Option<JoinHandle<()>>,
    sim: Arc<Mutex<Simulation>>,
}

fn lock(sim: &Mutex<Simulation>) -> MutexGuard<'_, Simulation> {
    sim.lock().unwrap_or_else(|p| p.into_inner())
}

impl Engine {
    pub fn spawn(mut sim: Simulation, pacing: Pacing) -> Self {
        // Settle discovery before the first request can look.
        match pacing {
            Pacing::Instant => sim.run_until(None),
            Pacing::Scaled(_) => sim.run_until(Some(sim.now())),
        };
        let sim = Arc::new(Mutex::new(sim));
        let (tx, rx) = mpsc::channel::<Command>();
        let shared = sim.clone();
        let thread = std::thread::spawn(move || {
            let tick = Duration::from_millis(20);
            let wall0 = Instant::now();
            let virt0 = lock(&shared).now();
            let mut keys: BTreeMap<String, String> = BTreeMap::new();
            loop {
                let cmd = match rx.recv_timeout(tick) {
                    Ok(c) => Some(c),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                };
                let mut sim = lock(&shared);
                match cmd {
                    Some(Command::Shutdown) => break,
                    Some(Command::Submit { id, key, request, reply }) => {
                        let out = submit(&mut sim, &mut keys, id, key, request);
                        if pacing == Pacing::Instant {
                            sim.run_until(None);
                        }
                        let _ = reply.send(out);
                    }
                    None => {}
                }
                match pacing {
                    Pacing::Scaled(speed) => {
                        let target = virt0 + secs_to_ns(wall0.elapsed().as_secs_f64() * speed);
                        if target > sim.now() {
                            sim.run_until(Some(target));
                        }
                    }
                    Pacing::Instant => {
                        sim.run_until(None);
                    }
                }
            }
        });
        Engine { tx, thread: Some(thread), sim }
    }

    pub fn simulation(&self) -> Arc<Mutex<Simulation>> {
        self.sim.clone()
    }

    fn sender(&self) -> mpsc::Sender<Command> {
        self.tx.clone()
    }

    pub fn shutdown(mut self) {
        let _ = self.tx.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        let _ = self.tx.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn submit(
    sim: &mut Simulation,
    keys: &mut BTreeMap<String, String>,
    id: Option<String>,
    key: Option<String>,
    request: EntanglementRequest,
) -> Result<Submitted, ApiError> {
    if let Some(id) = key.as_ref().and_then(|k| keys.get(k)) {
        let state = sim.record(id).map_or("Submitted", |r| r.state.name()).to_string();
        return Ok(Submitted { id: id.clone(), state, replayed: true });
    }
    validate_request(sim.graph(), &request).map_err(ApiError::schema)?;
    let id = sim.submit(id, request).map_err(ApiError::schema)?;
    // Deliver the submission now so the record exists on return.
    let now = sim.now();
    sim.run_until(Some(now));
    if let Some(k) = key {
        keys.insert(k, id.clone());
    }
    let state = sim.record(&id).map_or("Submitted", |r| r.state.name()).to_string();
    Ok(Submitted { id, state, replayed: false })
}

/// Where audit lines go.
pub type AuditSink = Arc<Mutex<Box<dyn Write + Send>>>;

#[derive(Clone)]
pub struct AppState {
    sim: Arc<Mutex<Simulation>>,
    tx: Arc<Mutex<mpsc::Sender<Command>>>,
    token: Arc<str>,
    audit: AuditSink,
}

impl AppState {
    pub fn new(engine: &Engine, token: &str, audit: AuditSink) -> Self {
        AppState { sim: engine.simulation(), tx: Arc::new(Mutex::new(engine.sender())), token: token.into(), audit }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/requests", post(post_request))
        .route("/api/v1/requests/{id}", get(get_request))
        .route("/api/v1/requests/{id}/events", get(get_events))
        .route("/api/v1/topology", get(get_topology))
        .route("/api/v1/status", get(get_status))
        .route("/api/v1/results", get(list_results))
        .route("/api/v1/results/{id}", get(get_result))
        .layer(middleware::from_fn_with_state(state.clone(), auth_and_audit))
        .with_state(state)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get("authorization")?.to_str().ok()?.strip_prefix("Bearer ")
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn auth_and_audit(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let method = req.method().to_string();
    let path = req.uri().path().to_string();
    let authorized = bearer(req.headers()).is_some_and(|t| constant_time_eq(t.as_bytes(), state.token.as_bytes()));
    let response = if authorized {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response()
    };
    let wall = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let line = json!({
        "wall_unix_s": wall,
        "method": method,
        "path": path,
        "status": response.status().as_u16(),
        "authorized": authorized,
    });
    if let Ok(mut sink) = state.audit.lock() {
        let _ = writeln!(sink, "{line}");
        let _ = sink.flush();
    }
    response
}

#[derive(Deserialize)]
struct SubmitBody {
    #[serde(default)]
    schema_version: Option<u32>,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    idempotency_key: Option<String>,
    #[serde(flatten)]
    request: EntanglementRequest,
}

async fn post_request(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let body: SubmitBody = serde_json::from_slice(&body).map_err(|e| ApiError::schema(e.to_string()))?;
    if let Some(v) = body.schema_version.filter(|&v| v != SCHEMA_VERSION) {
        return Err(ApiError::schema(format!("unsupported schema_version {v}")));
    }
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(body.idempotency_key);
    let (reply, rx) = oneshot::channel();
    let cmd = Command::Submit { id: body.id, key, request: body.request, reply };
    state
        .tx
        .lock()
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "engine_stopped", "engine unavailable"))?
        .send(cmd)
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "engine_stopped", "engine unavailable"))?;
    let done = rx.await.map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "engine_stopped", "engine unavailable"))??;
    let status = if done.replayed { StatusCode::OK } else { StatusCode::ACCEPTED };
    let body = json!({"schema_version": SCHEMA_VERSION, "id": done.id, "state": done.state});
    Ok((status, Json(body)).into_response())
}

fn envelope(key: &str, value: Value) -> Json<Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert(key.into(), value);
    Json(Value::Object(m))
}

async fn get_request(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let sim = lock(&state.sim);
    match sim.record(&id) {
        Some(r) => Ok(envelope("record", serde_json::to_value(r).expect("record serializes"))),
        None if sim.submitted_ids().contains(&id) => Ok(envelope("record", json!({"id": id, "state": "Submitted"}))),
        None => Err(ApiError::not_found(&id)),
    }
}

async fn get_result(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let sim = lock(&state.sim);
    let r = sim.results().iter().find(|r| r.request_id == id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(envelope("result", serde_json::to_value(r).expect("result serializes")))
}

#[derive(Deserialize)]
struct ResultsQuery {
    requester: Option<String>,
}

async fn list_results(State(state): State<AppState>, Query(q): Query<ResultsQuery>) -> Json<Value> {
    let sim = lock(&state.sim);
    let items: Vec<Value> = sim
        .results()
        .iter()
        .filter(|r| q.requester.as_ref().is_none_or(|who| &r.requester == who))
        .map(|r| serde_json::to_value(r).expect("result serializes"))
        .collect();
    envelope("results", Value::Array(items))
}

/// Topology snapshot with live occupancy and each node's schedulability.
pub fn topology_snapshot(sim: &Simulation) -> Value {
    let topo = sim.topology();
    let nodes: Vec<Value> = topo
        .graph
        .nodes()
        .map(|n| {
            json!({
                "id": n.id,
                "schedulable": topo.is_schedulable(&n.id),
                "quarantined": topo.quarantined.get(&n.id),
            })
        })
        .collect();
    json!({
        "schema_version": SCHEMA_VERSION,
        "virtual_time_s": ns_to_secs(sim.now()),
        "occupied_channels": topo.graph.total_occupied(),
        "nodes": nodes,
        "topology": topo.graph.to_document(),
    })
}

async fn get_topology(State(state): State<AppState>) -> Json<Value> {
    Json(topology_snapshot(&lock(&state.sim)))
}

pub fn status_snapshot(sim: &Simulation) -> Value {
    let mut by_state: BTreeMap<&str, usize> = BTreeMap::new();
    for r in sim.records() {
        *by_state.entry(r.state.name()).or_default() += 1;
    }
    let topo = sim.topology();
    json!({
        "schema_version": SCHEMA_VERSION,
        "virtual_time_s": ns_to_secs(sim.now()),
        "submitted": sim.submitted_ids().len(),
        "live": sim.live_requests(),
        "requests_by_state": by_state,
        "schedulable_nodes": topo.schedulable.len(),
        "quarantined_nodes": topo.quarantined.keys().collect::<Vec<_>>(),
        "occupied_channels": topo.graph.total_occupied(),
        "switch_rules": sim.agent().total_rules(),
        "protocol_errors": sim.errors().len(),
    })
}

async fn get_status(State(state): State<AppState>) -> Json<Value> {
    Json(status_snapshot(&lock(&state.sim)))
}

/// New trace lines for `id` after position `cursor`, and whether the
/// record is finished.
fn feed_slice(sim: &Simulation, id: &str, cursor: usize, after_seq: Option<u64>) -> (Vec<Event>, usize, bool) {
    let Some(rec) = sim.record(id) else { return (Vec::new(), cursor, false) };
    let trace = sim.trace();
    let events = rec.trace[cursor..]
        .iter()
        .filter(|&&s| after_seq.is_none_or(|a| s > a))
        .map(|&s| {
            let t = &trace[s as usize];
            Event::default()
                .id(s.to_string())
                .event(t.payload.kind())
                .data(serde_json::to_string(t).expect("trace serializes"))
        })
        .collect();
    (events, rec.trace.len(), rec.state.is_terminal())
}

async fn get_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    if !lock(&state.sim).submitted_ids().contains(&id) {
        return Err(ApiError::not_found(&id));
    }
    let after: Option<u64> = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok());
    let init = (state.sim.clone(), id, 0usize, false);
    let stream = futures::stream::unfold(init, move |(sim, id, cursor, finished)| async move {
        if finished {
            return None;
        }
        loop {
            let (events, next, terminal) = feed_slice(&lock(&sim), &id, cursor, after);
            if !events.is_empty() || terminal {
                let batch = futures::stream::iter(events.into_iter().map(Ok));
                return Some((batch, (sim, id, next, terminal)));
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    });
    use futures::StreamExt;
    Ok(Sse::new(stream.flatten()).keep_alive(KeepAlive::default()))
}
