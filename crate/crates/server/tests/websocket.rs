use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use liftguard_core::dataset::{generate_synthetic, LiftStyle, SyntheticConfig};
use liftguard_core::lstm::{init_model, ArchitectureConfig, ModelParams};
use liftguard_core::pose::PoseFrame;
use liftguard_core::risk::{Session, SessionConfig};
use liftguard_server::{serve, ErrorCode, ServerMessage, Service, ServiceOptions, CLOSE_IDLE};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn model() -> ModelParams {
    let arch = ArchitectureConfig {
        lstm_hidden: vec![8, 8],
        dense_widths: vec![6, 2],
        ..Default::default()
    };
    init_model(&arch, 11).unwrap()
}

fn clips() -> (Vec<PoseFrame>, Vec<PoseFrame>) {
    let cfg = SyntheticConfig {
        n_sequences: 2,
        seed: 4,
        ..Default::default()
    };
    let clips = generate_synthetic(&cfg).unwrap();
    let squat = clips.iter().find(|c| c.style == LiftStyle::Squat).unwrap();
    let stoop = clips.iter().find(|c| c.style == LiftStyle::Stoop).unwrap();
    (squat.frames.clone(), stoop.frames.clone())
}

async fn start(opts: ServiceOptions) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let service = Arc::new(Service::new(model(), opts).unwrap().with_model_source("test"));
    tokio::spawn(serve(listener, service, std::future::pending()));
    addr
}

async fn connect(addr: SocketAddr) -> Ws {
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Ws, text: String) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("timed out waiting for a message")
            .expect("stream ended")
            .unwrap();
        match msg {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("unexpected message {other:?}"),
        }
    }
}

/// Waits for the server to close; returns the close code if one was sent.
async fn closed(ws: &mut Ws) -> Option<CloseCode> {
    loop {
        match tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("no close")
        {
            Some(Ok(Message::Close(frame))) => return frame.map(|f| f.code),
            Some(Ok(_)) => continue,
            Some(Err(_)) | None => return None,
        }
    }
}

fn frame_msg(f: &PoseFrame) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&f.to_json_line()).unwrap();
    v["type"] = "frame".into();
    v.to_string()
}

async fn hello(ws: &mut Ws) -> String {
    send(ws, r#"{"type":"hello","proto":1}"#.into()).await;
    match recv(ws).await {
        ServerMessage::Ready { session, warmup } => {
            assert_eq!(warmup, 30);
            session
        }
        other => panic!("expected ready, got {other:?}"),
    }
}

fn offline_probs(frames: &[PoseFrame]) -> Vec<[f64; 2]> {
    let mut s = Session::new("offline", Arc::new(model()), SessionConfig::default()).unwrap();
    frames
        .iter()
        .filter_map(|f| s.push_frame(f).unwrap().map(|(p, _)| p.probs))
        .collect()
}

#[tokio::test]
async fn warm_up_then_prediction_per_frame() {
    let addr = start(ServiceOptions::default()).await;
    let (squat, _) = clips();
    let mut ws = connect(addr).await;
    hello(&mut ws).await;
    for f in &squat[..29] {
        send(&mut ws, frame_msg(f)).await;
    }
    // A malformed frame as a sentinel: its error must be the first reply,
    // so nothing was emitted during warm-up.
    let mut bad: serde_json::Value = serde_json::from_str(&frame_msg(&squat[0])).unwrap();
    bad["lm"].as_array_mut().unwrap().truncate(32);
    send(&mut ws, bad.to_string()).await;
    match recv(&mut ws).await {
        ServerMessage::Error { code, .. } => assert_eq!(code, ErrorCode::BadFrame),
        other => panic!("expected bad_frame, got {other:?}"),
    }
    send(&mut ws, frame_msg(&squat[29])).await;
    match recv(&mut ws).await {
        ServerMessage::Prediction {
            t,
            probs,
            confidence,
            risk,
            ..
        } => {
            assert_eq!(t, squat[29].timestamp_ms());
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
            assert_eq!(confidence, probs[0].max(probs[1]));
            assert!((0.0..=1.0).contains(&risk.score));
        }
        other => panic!("expected prediction, got {other:?}"),
    }
    let mut extra = squat[29].clone();
    for _ in 0..2 {
        extra = PoseFrame::new(extra.timestamp_ms() + 33, extra.landmarks().to_vec()).unwrap();
        send(&mut ws, frame_msg(&extra)).await;
        assert!(matches!(recv(&mut ws).await, ServerMessage::Prediction { .. }));
    }
}

#[tokio::test]
async fn concurrent_sessions_are_isolated() {
    let addr = start(ServiceOptions::default()).await;
    let (squat, stoop) = clips();
    let mut clip_a = squat.clone();
    clip_a.extend(stoop.iter().cloned());
    let mut clip_b = stoop.clone();
    clip_b.extend(squat.iter().cloned());
    let expected_a = offline_probs(&clip_a);
    let expected_b = offline_probs(&clip_b);
    assert_ne!(expected_a, expected_b);

    async fn stream(addr: SocketAddr, clip: Vec<PoseFrame>) -> (String, Vec<[f64; 2]>) {
        let mut ws = connect(addr).await;
        let id = hello(&mut ws).await;
        let mut got = Vec::new();
        for (i, f) in clip.iter().enumerate() {
            send(&mut ws, frame_msg(f)).await;
            if i + 1 >= 30 {
                match recv(&mut ws).await {
                    ServerMessage::Prediction { probs, .. } => got.push(probs),
                    other => panic!("{other:?}"),
                }
            }
            tokio::task::yield_now().await;
        }
        (id, got)
    }
    let (a, b) = tokio::join!(tokio::spawn(stream(addr, clip_a)), tokio::spawn(stream(addr, clip_b)));
    let (id_a, got_a) = a.unwrap();
    let (id_b, got_b) = b.unwrap();
    assert_ne!(id_a, id_b);
    assert_eq!(got_a, expected_a);
    assert_eq!(got_b, expected_b);
}

#[tokio::test]
async fn frame_before_hello_is_a_protocol_error() {
    let addr = start(ServiceOptions::default()).await;
    let (squat, _) = clips();
    let mut ws = connect(addr).await;
    send(&mut ws, frame_msg(&squat[0])).await;
    match recv(&mut ws).await {
        ServerMessage::Error { code, .. } => assert_eq!(code, ErrorCode::Proto),
        other => panic!("{other:?}"),
    }
    assert_eq!(closed(&mut ws).await, Some(CloseCode::Policy));
}

#[tokio::test]
async fn unknown_type_and_bad_version_close_the_session() {
    let addr = start(ServiceOptions::default()).await;
    let mut ws = connect(addr).await;
    send(&mut ws, r#"{"type":"hello","proto":7}"#.into()).await;
    assert!(matches!(
        recv(&mut ws).await,
        ServerMessage::Error {
            code: ErrorCode::Proto,
            ..
        }
    ));
    assert_eq!(closed(&mut ws).await, Some(CloseCode::Policy));

    let mut ws = connect(addr).await;
    hello(&mut ws).await;
    send(&mut ws, r#"{"type":"subscribe"}"#.into()).await;
    assert!(matches!(
        recv(&mut ws).await,
        ServerMessage::Error {
            code: ErrorCode::Proto,
            ..
        }
    ));
    assert_eq!(closed(&mut ws).await, Some(CloseCode::Policy));
}

#[tokio::test]
async fn oversized_message_drops_the_connection() {
    let opts = ServiceOptions {
        max_message_bytes: 4096,
        ..Default::default()
    };
    let addr = start(opts).await;
    let mut ws = connect(addr).await;
    hello(&mut ws).await;
    let big = format!(r#"{{"type":"frame","t":0,"pad":"{}"}}"#, "x".repeat(10_000));
    let _ = ws.send(Message::Text(big.into())).await;
    let code = closed(&mut ws).await;
    assert!(code.is_none() || code == Some(CloseCode::Size), "{code:?}");
}

#[tokio::test]
async fn idle_sessions_expire() {
    let opts = ServiceOptions {
        idle_timeout: Duration::from_millis(200),
        ..Default::default()
    };
    let addr = start(opts).await;
    let mut ws = connect(addr).await;
    hello(&mut ws).await;
    assert_eq!(closed(&mut ws).await, Some(CloseCode::from(CLOSE_IDLE)));
}

#[tokio::test]
async fn health_reports_model_metadata() {
    let addr = start(ServiceOptions::default()).await;
    let mut tcp = TcpStream::connect(addr).await.unwrap();
    tcp.write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut raw = String::new();
    tcp.read_to_string(&mut raw).await.unwrap();
    assert!(raw.starts_with("HTTP/1.1 200"), "{raw}");
    let body = raw.split("\r\n\r\n").nth(1).unwrap();
    let v: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["protocol"], 1);
    assert_eq!(v["session"]["warmup"], 30);
    assert_eq!(v["model"]["input_width"], 88);
    assert_eq!(v["model"]["lstm_hidden"], serde_json::json!([8, 8]));
    assert_eq!(v["model"]["source"], "test");
    assert_eq!(v["model"]["num_params"], model().num_params());
}
