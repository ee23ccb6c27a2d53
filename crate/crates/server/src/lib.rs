//! Streaming inference service.
//!
//! Each websocket connection owns one [`Session`]: the client says hello,
//! streams pose frames and receives a prediction with the running risk
//! assessment whenever the session emits one. `GET /health` reports service
//! and model metadata.

pub mod protocol;

use std::future::Future;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{close_code, CloseFrame, Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;

use liftguard_core::lstm::ModelParams;
use liftguard_core::pose::{PoseFrame, WINDOW_LEN};
use liftguard_core::risk::{Prediction, RiskAssessment, Session, SessionConfig};
use liftguard_core::Error as CoreError;

pub use protocol::{parse_client_message, ClientMessage, ErrorCode, ParseError, ServerMessage, PROTOCOL_VERSION};

/// Close code sent when a session expires for lack of frames.
pub const CLOSE_IDLE: u16 = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceOptions {
    pub session: SessionConfig,
    /// Sessions receiving no frame for this long are closed.
    pub idle_timeout: Duration,
    /// Larger websocket messages are refused and the connection dropped.
    pub max_message_bytes: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            idle_timeout: Duration::from_secs(60),
            max_message_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug)]
pub struct Service {
    model: Arc<ModelParams>,
    opts: ServiceOptions,
    model_source: Option<String>,
    next_id: AtomicU64,
    active: AtomicUsize,
    started: Instant,
}

impl Service {
    /// Fails if the options are invalid or the model cannot back a session.
    pub fn new(model: ModelParams, opts: ServiceOptions) -> liftguard_core::Result<Self> {
        let model = Arc::new(model);
        Session::new("probe", model.clone(), opts.session)?;
        Ok(Self {
            model,
            opts,
            model_source: None,
            next_id: AtomicU64::new(1),
            active: AtomicUsize::new(0),
            started: Instant::now(),
        })
    }

    /// Records where the model came from, for the health report.
    pub fn with_model_source(mut self, source: impl Into<String>) -> Self {
        self.model_source = Some(source.into());
        self
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.opts
    }

    pub fn active_sessions(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    pub fn health(&self) -> serde_json::Value {
        let d = &self.model.descriptor;
        json!({
            "status": "ok",
            "service": "liftguard",
            "version": env!("CARGO_PKG_VERSION"),
            "protocol": PROTOCOL_VERSION,
            "uptime_s": self.started.elapsed().as_secs_f64(),
            "active_sessions": self.active_sessions(),
            "session": {
                "warmup": WINDOW_LEN,
                "stride": self.opts.session.stride,
                "idle_timeout_s": self.opts.idle_timeout.as_secs_f64(),
                "risk": self.opts.session.risk,
            },
            "model": {
                "source": self.model_source,
                "input_width": d.input_width,
                "lstm_hidden": d.lstm_hidden,
                "dense_widths": d.dense_widths,
                "num_classes": d.num_classes,
                "features": d.features,
                "seed": d.seed,
                "num_params": self.model.num_params(),
            },
        })
    }

    fn new_session(&self) -> liftguard_core::Result<Session> {
        let id = format!("s-{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        Session::new(id, self.model.clone(), self.opts.session)
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ws", get(upgrade))
        .with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn health(State(service): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(service.health())
}

async fn upgrade(ws: WebSocketUpgrade, State(service): State<Arc<Service>>) -> impl IntoResponse {
    let limit = service.opts.max_message_bytes;
    ws.max_message_size(limit)
        .max_frame_size(limit)
        .on_upgrade(move |socket| connection(socket, service))
}

struct ActiveGuard<'a>(&'a AtomicUsize);

impl Drop for ActiveGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

enum Outcome {
    Continue,
    Close(u16, &'static str),
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn close(socket: &mut WebSocket, code: u16, reason: &'static str) {
    let frame = CloseFrame {
        code,
        reason: Utf8Bytes::from_static(reason),
    };
    let _ = socket.send(Message::Close(Some(frame))).await;
}

async fn connection(mut socket: WebSocket, service: Arc<Service>) {
    service.active.fetch_add(1, Ordering::SeqCst);
    let _guard = ActiveGuard(&service.active);
    let idle = service.opts.idle_timeout;
    let mut session: Option<Session> = None;
    let mut deadline = tokio::time::Instant::now() + idle;

    loop {
        let msg = match tokio::time::timeout_at(deadline, socket.recv()).await {
            Err(_) => {
                log::info!("session idle for {idle:?}, closing");
                close(&mut socket, CLOSE_IDLE, "idle timeout").await;
                return;
            }
            Ok(None) => return,
            Ok(Some(Err(e))) => {
                log::info!("websocket receive failed: {e}");
                return;
            }
            Ok(Some(Ok(msg))) => msg,
        };
        let outcome = match msg {
            Message::Text(text) => {
                let outcome = handle_text(&mut socket, &service, &mut session, text.as_str()).await;
                if matches!(outcome, Some(true)) {
                    deadline = tokio::time::Instant::now() + idle;
                }
                match outcome {
                    Some(_) => Outcome::Continue,
                    None => Outcome::Close(close_code::POLICY, "protocol violation"),
                }
            }
            Message::Binary(_) => {
                let err = ServerMessage::error(ErrorCode::Proto, "binary messages are not supported");
                send(&mut socket, &err).await;
                Outcome::Close(close_code::UNSUPPORTED, "binary messages are not supported")
            }
            Message::Close(_) => return,
            Message::Ping(_) | Message::Pong(_) => Outcome::Continue,
        };
        if let Outcome::Close(code, reason) = outcome {
            close(&mut socket, code, reason).await;
            return;
        }
    }
}

/// `None` ends the connection; `Some(true)` means a frame was accepted.
async fn handle_text(
    socket: &mut WebSocket,
    service: &Service,
    session: &mut Option<Session>,
    text: &str,
) -> Option<bool> {
    let parsed = parse_client_message(text);
    match (parsed, session.is_some()) {
        (Ok(ClientMessage::Hello { proto }), false) => {
            if proto != PROTOCOL_VERSION {
                let detail = format!("unsupported protocol {proto}, expected {PROTOCOL_VERSION}");
                send(socket, &ServerMessage::error(ErrorCode::Proto, detail)).await;
                return None;
            }
            match service.new_session() {
                Ok(s) => {
                    log::info!("session {} opened", s.id());
                    let ok = send(socket, &ServerMessage::ready(s.id())).await;
                    *session = Some(s);
                    ok.then_some(false)
                }
                Err(e) => {
                    send(socket, &ServerMessage::error(ErrorCode::Internal, e.to_string())).await;
                    None
                }
            }
        }
        (Ok(ClientMessage::Hello { .. }), true) => {
            send(socket, &ServerMessage::error(ErrorCode::Proto, "duplicate hello")).await;
            None
        }
        (Ok(ClientMessage::Frame(_)) | Err(ParseError::BadFrame(_)), false) => {
            send(socket, &ServerMessage::error(ErrorCode::Proto, "frame before hello")).await;
            None
        }
        (Err(e @ ParseError::Proto(_)), _) => {
            send(socket, &ServerMessage::error(e.code(), e.detail())).await;
            None
        }
        (Err(e @ ParseError::BadFrame(_)), true) => send(socket, &ServerMessage::error(e.code(), e.detail()))
            .await
            .then_some(false),
        (Ok(ClientMessage::Frame(frame)), true) => {
            let s = session.take().expect("session present");
            let (s, result) = match infer(s, frame).await {
                Ok(v) => v,
                Err(detail) => {
                    send(socket, &ServerMessage::error(ErrorCode::Internal, detail)).await;
                    return None;
                }
            };
            *session = Some(s);
            let reply = match result {
                Ok(None) => return Some(true),
                Ok(Some((p, r))) => ServerMessage::prediction(&p, &r),
                Err(e) if is_frame_error(&e) => ServerMessage::error(ErrorCode::BadFrame, e.to_string()),
                Err(e) => {
                    send(socket, &ServerMessage::error(ErrorCode::Internal, e.to_string())).await;
                    return None;
                }
            };
            send(socket, &reply).await.then_some(true)
        }
    }
}

type PushResult = liftguard_core::Result<Option<(Prediction, RiskAssessment)>>;

async fn infer(mut session: Session, frame: PoseFrame) -> Result<(Session, PushResult), String> {
    tokio::task::spawn_blocking(move || {
        let r = session.push_frame(&frame);
        (session, r)
    })
    .await
    .map_err(|e| format!("inference task failed: {e}"))
}

fn is_frame_error(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::InvalidFrame { .. } | CoreError::LandmarkCount { .. } | CoreError::Degenerate(_)
    )
}
