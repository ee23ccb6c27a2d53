//! Wire messages. Every websocket text frame carries one JSON object tagged
//! by `type`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use liftguard_core::pose::{Label, PoseFrame, WINDOW_LEN};
use liftguard_core::risk::{Prediction, RiskAssessment, RiskLevel};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadFrame,
    Proto,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub level: RiskLevel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Ready {
        session: String,
        warmup: usize,
    },
    Prediction {
        t: i64,
        label: Label,
        probs: [f64; 2],
        confidence: f64,
        risk: RiskSummary,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

impl ServerMessage {
    pub fn ready(session: impl Into<String>) -> Self {
        ServerMessage::Ready {
            session: session.into(),
            warmup: WINDOW_LEN,
        }
    }

    pub fn prediction(p: &Prediction, r: &RiskAssessment) -> Self {
        ServerMessage::Prediction {
            t: p.window_end_ms,
            label: p.label,
            probs: p.probs,
            confidence: p.confidence,
            risk: RiskSummary {
                level: r.level,
                score: r.score,
            },
        }
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serialization is infallible")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello { proto: u32 },
    Frame(PoseFrame),
}

/// Why a client message was refused. `BadFrame` is recoverable; the
/// connection stays open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    BadFrame(String),
    Proto(String),
}

impl ParseError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ParseError::BadFrame(_) => ErrorCode::BadFrame,
            ParseError::Proto(_) => ErrorCode::Proto,
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            ParseError::BadFrame(d) | ParseError::Proto(d) => d,
        }
    }
}

pub fn parse_client_message(text: &str) -> Result<ClientMessage, ParseError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ParseError::Proto(format!("invalid JSON: {e}")))?;
    let kind = value
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::Proto("message has no string \"type\" field".into()))?;
    match kind {
        "hello" => {
            let proto = value
                .get("proto")
                .and_then(Value::as_u64)
                .and_then(|p| u32::try_from(p).ok())
                .ok_or_else(|| ParseError::Proto("hello needs an integer \"proto\"".into()))?;
            Ok(ClientMessage::Hello { proto })
        }
        "frame" => serde_json::from_value::<PoseFrame>(value)
            .map(ClientMessage::Frame)
            .map_err(|e| ParseError::BadFrame(e.to_string())),
        other => Err(ParseError::Proto(format!("unknown message type {other:?}"))),
    }
}
