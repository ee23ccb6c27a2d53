//! Streaming inference sessions and risk scoring.
//!
//! A session keeps the most recent 30 feature vectors. Once the buffer is
//! full it classifies the current window every `stride` frames and folds the
//! last `log_len` predictions into a confidence-weighted risk score.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{forward_sequence, predicted_label, ClassProbs, ModelParams};
use crate::pose::{FeatureVector, Label, PoseFrame, WINDOW_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Scores below this are Low.
    pub low_below: f64,
    /// Scores above this are High.
    pub high_above: f64,
    /// Number of recent predictions considered.
    pub log_len: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            low_below: 0.3,
            high_above: 0.7,
            log_len: 10,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low_below && self.low_below <= self.high_above && self.high_above <= 1.0) {
            return Err(Error::Config(format!(
                "risk thresholds must satisfy 0 <= {} <= {} <= 1",
                self.low_below, self.high_above
            )));
        }
        if self.log_len == 0 {
            return Err(Error::Config("risk log length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn level(&self, score: f64) -> RiskLevel {
        if score < self.low_below {
            RiskLevel::Low
        } else if score > self.high_above {
            RiskLevel::High
        } else {
            RiskLevel::Medium
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub probs: ClassProbs,
    pub window_end_ms: i64,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_probs(probs: ClassProbs, window_end_ms: i64) -> Self {
        Self {
            label: predicted_label(&probs),
            probs,
            window_end_ms,
            confidence: probs[0].max(probs[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub level: RiskLevel,
    pub score: f64,
    /// Number of predictions the score is based on.
    pub basis: usize,
}

/// Confidence-weighted share of Bad predictions; `None` for an empty log.
pub fn assess_risk<'a>(log: impl IntoIterator<Item = &'a Prediction>, cfg: &RiskConfig) -> Option<RiskAssessment> {
    let mut bad = 0.0;
    let mut total = 0.0;
    let mut basis = 0;
    for p in log {
        total += p.confidence;
        if p.label == Label::Bad {
            bad += p.confidence;
        }
        basis += 1;
    }
    if basis == 0 {
        return None;
    }
    let score = if total > 0.0 { bad / total } else { 0.0 };
    Some(RiskAssessment {
        level: cfg.level(score),
        score,
        basis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Emit a prediction every `stride` frames once warm.
    pub stride: usize,
    pub risk: RiskConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            risk: RiskConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        self.risk.validate()
    }
}

#[derive(Debug)]
pub struct Session {
    id: String,
    model: Arc<ModelParams>,
    cfg: SessionConfig,
    buffer: VecDeque<FeatureVector>,
    log: VecDeque<Prediction>,
    frames_seen: u64,
}

impl Session {
    pub fn new(id: impl Into<String>, model: Arc<ModelParams>, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let width = model.descriptor.features.width();
        if width != model.input_width() {
            return Err(Error::Session(format!(
                "model expects {} features but its feature settings produce {width}",
                model.input_width()
            )));
        }
        Ok(Self {
            id: id.into(),
            model,
            cfg,
            buffer: VecDeque::with_capacity(WINDOW_LEN),
            log: VecDeque::with_capacity(cfg.risk.log_len),
            frames_seen: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn log(&self) -> impl Iterator<Item = &Prediction> {
        self.log.iter()
    }

    pub fn risk(&self) -> Option<RiskAssessment> {
        assess_risk(&self.log, &self.cfg.risk)
    }

    /// Adds a frame; returns a prediction and updated risk when one is due.
    pub fn push_frame(&mut self, frame: &PoseFrame) -> Result<Option<(Prediction, RiskAssessment)>> {
        let features = self.model.descriptor.features.features(frame)?;
        if features.len() != self.model.input_width() {
            return Err(Error::Session(format!(
                "feature width {} does not match model input {}",
                features.len(),
                self.model.input_width()
            )));
        }
        if self.buffer.len() == WINDOW_LEN {
            self.buffer.pop_front();
        }
        self.buffer.push_back(features);
        self.frames_seen += 1;

        let warm = self.frames_seen >= WINDOW_LEN as u64;
        if !warm || (self.frames_seen - WINDOW_LEN as u64) % self.cfg.stride as u64 != 0 {
            return Ok(None);
        }
        let window: Vec<&[f64]> = self.buffer.iter().map(|f| f.as_slice()).collect();
        let probs = forward_sequence(&self.model, &window)?;
        let prediction = Prediction::from_probs(probs, frame.timestamp_ms());
        if self.log.len() == self.cfg.risk.log_len {
            self.log.pop_front();
        }
        self.log.push_back(prediction.clone());
        let risk = self.risk().expect("log is non-empty");
        Ok(Some((prediction, risk)))
    }
}
