//! Operator gateway: a paced engine thread behind `/ws`, `GET /state` and `POST /command`.
//!
//! All mutations go through one request channel into the engine thread, which owns the
//! simulation. Stream events fan out over a broadcast channel; a subscriber's snapshot and
//! its receiver are taken between two ticks, so nothing is missed or repeated.

use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use quietlink::center::OperatorCommand;
use quietlink::sim::{write_run, ConfigError, Engine, MetricsReport, OperatorMode, SimConfig, Snapshot, SubmitError};
use quietlink::trace::{Source, TraceEvent, TraceRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

const STREAM_CAPACITY: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Snapshot,
    Checkpoint,
    PriorityAlert,
    CommandIssued,
    PhaseChange,
    Tick,
    Ack,
    Done,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub t: f64,
    pub body: Value,
}

impl StreamEvent {
    fn new(kind: EventKind, t: f64, body: Value) -> Self {
        Self { kind, t, body }
    }

    fn to_message(&self) -> Message {
        Message::Text(serde_json::to_string(self).expect("event serializes").into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandAck {
    pub seq: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

enum Request {
    Submit(OperatorCommand, oneshot::Sender<Result<u16, SubmitError>>),
    Snapshot(oneshot::Sender<Snapshot>),
    Subscribe(oneshot::Sender<(Snapshot, broadcast::Receiver<StreamEvent>)>),
}

/// How a finished or never-started run answers requests.
#[derive(Clone)]
enum Ended {
    Idle,
    Finished { snapshot: Box<Snapshot>, done: StreamEvent },
}

struct Shared {
    requests: Mutex<Option<mpsc::Sender<Request>>>,
    ended: Mutex<Ended>,
}

/// Result of a finished gateway run.
pub struct RunResult {
    pub metrics: MetricsReport,
    pub trace: Vec<TraceRecord>,
}

#[derive(Clone)]
pub struct Gateway {
    shared: Arc<Shared>,
}

impl Gateway {
    /// A gateway with no run; every request reports the conflict.
    pub fn idle() -> Self {
        Self { shared: Arc::new(Shared { requests: Mutex::new(None), ended: Mutex::new(Ended::Idle) }) }
    }

    /// Starts a paced run on its own thread. The trace and metrics are written to `out_dir`
    /// when the run ends.
    pub fn start(mut cfg: SimConfig, out_dir: Option<PathBuf>) -> Result<(Self, JoinHandle<RunResult>), ConfigError> {
        cfg.operator = OperatorMode::Gateway;
        let period = Duration::from_secs_f64(cfg.dt / cfg.pacing.speedup);
        let engine = Engine::new(cfg)?;
        let (tx, rx) = mpsc::channel();
        let gateway = Self { shared: Arc::new(Shared { requests: Mutex::new(Some(tx)), ended: Mutex::new(Ended::Idle) }) };
        let shared = gateway.shared.clone();
        let handle = std::thread::spawn(move || engine_thread(engine, rx, period, shared, out_dir));
        Ok((gateway, handle))
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/ws", get(ws_handler))
            .route("/state", get(state_handler))
            .route("/command", post(command_handler))
            .with_state(self.clone())
    }

    fn sender(&self) -> Option<mpsc::Sender<Request>> {
        self.shared.requests.lock().expect("lock").clone()
    }

    fn ended(&self) -> Ended {
        self.shared.ended.lock().expect("lock").clone()
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Request) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        self.sender()?.send(make(tx)).ok()?;
        rx.await.ok()
    }

    pub async fn snapshot(&self) -> Option<Snapshot> {
        match self.ask(Request::Snapshot).await {
            Some(s) => Some(s),
            None => match self.ended() {
                Ended::Finished { snapshot, .. } => Some(*snapshot),
                Ended::Idle => None,
            },
        }
    }

    pub async fn submit(&self, cmd: OperatorCommand) -> Result<u16, SubmitError> {
        self.ask(|tx| Request::Submit(cmd, tx)).await.unwrap_or(Err(SubmitError::NoActiveRun))
    }
}

fn stream_events(records: &[TraceRecord], engine: &Engine, out: &mut Vec<StreamEvent>) {
    let mut last_delivered: Option<&str> = None;
    for r in records {
        let body = || serde_json::to_value(r).expect("record serializes");
        match &r.event {
            TraceEvent::Delivered { .. } => last_delivered = r.packet_hex.as_deref(),
            TraceEvent::UplinkRx { priority: 0, duplicate: false, .. } if r.source == Source::Center => {
                let cp = engine.center().last_checkpoint();
                let mirror = engine.center().mirror_estimate().map(|(_, p)| p);
                let body = json!({ "checkpoint": cp, "mirror": mirror, "packet_hex": last_delivered });
                out.push(StreamEvent::new(EventKind::Checkpoint, r.t, body));
            }
            TraceEvent::Alert { .. } => {
                let mut b = body();
                b["packet_hex"] = json!(last_delivered);
                out.push(StreamEvent::new(EventKind::PriorityAlert, r.t, b));
            }
            TraceEvent::CommandIssued { .. } => out.push(StreamEvent::new(EventKind::CommandIssued, r.t, body())),
            TraceEvent::PhaseChange { .. } if r.source == Source::Vehicle => {
                out.push(StreamEvent::new(EventKind::PhaseChange, r.t, body()))
            }
            _ => {}
        }
    }
}

fn tick_event(engine: &Engine) -> StreamEvent {
    let s = engine.snapshot();
    let body = json!({
        "tick": s.tick,
        "phase": s.phase,
        "mirror": s.mirror,
        "pending_events": s.pending_events.len(),
        "uplink_queue": s.uplink_queue,
        "downlink_queue": s.downlink_queue,
    });
    StreamEvent::new(EventKind::Tick, s.t, body)
}

fn engine_thread(
    mut engine: Engine,
    rx: mpsc::Receiver<Request>,
    period: Duration,
    shared: Arc<Shared>,
    out_dir: Option<PathBuf>,
) -> RunResult {
    let (events, _) = broadcast::channel(STREAM_CAPACITY);
    let per_second = (1.0 / engine.config().dt).round().max(1.0) as u64;
    let mut trace = Vec::new();
    let mut next = Instant::now();
    let serve = |engine: &mut Engine, req: Request| match req {
        Request::Submit(cmd, reply) => {
            let _ = reply.send(engine.submit_operator(&cmd));
        }
        Request::Snapshot(reply) => {
            let _ = reply.send(engine.snapshot());
        }
        Request::Subscribe(reply) => {
            let _ = reply.send((engine.snapshot(), events.subscribe()));
        }
    };
    while !engine.is_finished() {
        loop {
            let wait = next.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(req) => serve(&mut engine, req),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => {
                    std::thread::sleep(wait);
                    break;
                }
            }
        }
        next += period;
        let tick = engine.tick_index();
        let records = engine.step();
        let mut out = Vec::new();
        stream_events(&records, &engine, &mut out);
        if tick.is_multiple_of(per_second) {
            out.push(tick_event(&engine));
        }
        for e in out {
            let _ = events.send(e);
        }
        trace.extend(records);
    }
    let metrics = engine.metrics();
    let reason = engine.snapshot().finished.unwrap_or_default();
    let done = StreamEvent::new(EventKind::Done, engine.now(), json!({ "reason": reason, "metrics": metrics }));
    *shared.ended.lock().expect("lock") = Ended::Finished { snapshot: Box::new(engine.snapshot()), done: done.clone() };
    shared.requests.lock().expect("lock").take();
    let _ = events.send(done);
    // late subscribers are answered from the final state instead
    while let Ok(req) = rx.try_recv() {
        if !matches!(req, Request::Subscribe(_)) {
            serve(&mut engine, req);
        }
    }
    if let Some(dir) = out_dir {
        if let Err(e) = write_run(&dir, &trace, &metrics) {
            eprintln!("{e}");
        }
    }
    RunResult { metrics, trace }
}

fn error_response(status: StatusCode, error: impl Into<String>, field: Option<&str>) -> Response {
    (status, Json(ErrorBody { error: error.into(), field: field.map(str::to_owned) })).into_response()
}

async fn state_handler(State(gw): State<Gateway>) -> Response {
    match gw.snapshot().await {
        Some(s) => Json(s).into_response(),
        None => error_response(StatusCode::CONFLICT, "no active run", None),
    }
}

fn parse_command(body: Value) -> Result<OperatorCommand, Response> {
    serde_path_to_error::deserialize(body).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_owned() } else { path };
        let msg = e.into_inner().to_string();
        (StatusCode::UNPROCESSABLE_ENTITY, Json(ErrorBody { error: msg, field: Some(field) })).into_response()
    })
}

fn submit_error(e: SubmitError) -> Response {
    match e {
        SubmitError::NoActiveRun => error_response(StatusCode::CONFLICT, "no active run", None),
        SubmitError::Field(f) => error_response(StatusCode::UNPROCESSABLE_ENTITY, f.reason, Some(f.field)),
    }
}

async fn command_handler(State(gw): State<Gateway>, body: Result<Json<Value>, axum::extract::rejection::JsonRejection>) -> Response {
    let Ok(Json(body)) = body else {
        return error_response(StatusCode::UNPROCESSABLE_ENTITY, "body must be a JSON object", Some("body"));
    };
    let cmd = match parse_command(body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    match gw.submit(cmd).await {
        Ok(seq) => Json(CommandAck { seq }).into_response(),
        Err(e) => submit_error(e),
    }
}

async fn ws_handler(State(gw): State<Gateway>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| session(gw, socket))
}

async fn handle_client_message(gw: &Gateway, text: &str) -> StreamEvent {
    let reply = |kind, body| StreamEvent::new(kind, 0.0, body);
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return reply(EventKind::Error, json!({ "error": e.to_string(), "field": "body" })),
    };
    match parse_command(value) {
        Err(_) => reply(EventKind::Error, json!({ "error": "not a command", "field": "body" })),
        Ok(cmd) => match gw.submit(cmd).await {
            Ok(seq) => reply(EventKind::Ack, json!({ "seq": seq })),
            Err(SubmitError::NoActiveRun) => reply(EventKind::Error, json!({ "error": "no active run" })),
            Err(SubmitError::Field(f)) => reply(EventKind::Error, json!({ "error": f.reason, "field": f.field })),
        },
    }
}

async fn session(gw: Gateway, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let sub = gw.ask(Request::Subscribe).await;
    let Some((snapshot, mut events)) = sub else {
        let frames = match gw.ended() {
            Ended::Finished { snapshot, done } => {
                vec![StreamEvent::new(EventKind::Snapshot, snapshot.t, json!(snapshot)), done]
            }
            Ended::Idle => vec![StreamEvent::new(EventKind::Error, 0.0, json!({ "error": "no active run" }))],
        };
        for f in frames {
            let _ = sink.send(f.to_message()).await;
        }
        let _ = sink.send(Message::Close(None)).await;
        return;
    };
    let first = StreamEvent::new(EventKind::Snapshot, snapshot.t, json!(snapshot));
    if sink.send(first.to_message()).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            ev = events.recv() => match ev {
                Ok(ev) => {
                    let done = ev.kind == EventKind::Done;
                    if sink.send(ev.to_message()).await.is_err() {
                        return;
                    }
                    if done {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let err = StreamEvent::new(EventKind::Error, 0.0, json!({ "error": format!("subscriber lagged by {n} events") }));
                    let _ = sink.send(err.to_message()).await;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = handle_client_message(&gw, &text).await;
                    if sink.send(reply.to_message()).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = sink.send(Message::Close(None)).await;
}

/// Serves the gateway until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, gateway: Gateway) -> std::io::Result<()> {
    axum::serve(listener, gateway.router()).await
}
