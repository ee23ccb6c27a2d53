//! Pose frames, feature extraction and fixed-length windowing.
//!
//! A frame carries the 33 body landmarks of the full-body pose topology, each
//! as `(x, y, z, visibility)`. Model input is a landmark-major flattening of
//! those quadruples, optionally dropping the 11 head landmarks (indices 0-10).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 33;
pub const HEAD_LANDMARKS: usize = 11;
pub const VALUES_PER_LANDMARK: usize = 4;
pub const FULL_WIDTH: usize = NUM_LANDMARKS * VALUES_PER_LANDMARK;
pub const FILTERED_WIDTH: usize = (NUM_LANDMARKS - HEAD_LANDMARKS) * VALUES_PER_LANDMARK;
pub const WINDOW_LEN: usize = 30;

/// Landmark indices of the 33-point body topology.
pub mod idx {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE_INNER: usize = 1;
    pub const LEFT_EYE: usize = 2;
    pub const LEFT_EYE_OUTER: usize = 3;
    pub const RIGHT_EYE_INNER: usize = 4;
    pub const RIGHT_EYE: usize = 5;
    pub const RIGHT_EYE_OUTER: usize = 6;
    pub const LEFT_EAR: usize = 7;
    pub const RIGHT_EAR: usize = 8;
    pub const MOUTH_LEFT: usize = 9;
    pub const MOUTH_RIGHT: usize = 10;
    pub const LEFT_SHOULDER: usize = 11;
    pub const RIGHT_SHOULDER: usize = 12;
    pub const LEFT_ELBOW: usize = 13;
    pub const RIGHT_ELBOW: usize = 14;
    pub const LEFT_WRIST: usize = 15;
    pub const RIGHT_WRIST: usize = 16;
    pub const LEFT_PINKY: usize = 17;
    pub const RIGHT_PINKY: usize = 18;
    pub const LEFT_INDEX: usize = 19;
    pub const RIGHT_INDEX: usize = 20;
    pub const LEFT_THUMB: usize = 21;
    pub const RIGHT_THUMB: usize = 22;
    pub const LEFT_HIP: usize = 23;
    pub const RIGHT_HIP: usize = 24;
    pub const LEFT_KNEE: usize = 25;
    pub const RIGHT_KNEE: usize = 26;
    pub const LEFT_ANKLE: usize = 27;
    pub const RIGHT_ANKLE: usize = 28;
    pub const LEFT_HEEL: usize = 29;
    pub const RIGHT_HEEL: usize = 30;
    pub const LEFT_FOOT_INDEX: usize = 31;
    pub const RIGHT_FOOT_INDEX: usize = 32;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub visibility: f64,
}

impl Landmark {
    pub const MISSING: Landmark = Landmark {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        visibility: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64, visibility: f64) -> Self {
        Self { x, y, z, visibility }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.visibility]
    }

    pub fn position(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    fn check(&self, index: usize) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(Error::InvalidFrame {
                index,
                reason: "non-finite coordinate".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::InvalidFrame {
                index,
                reason: format!("visibility {} outside [0, 1]", self.visibility),
            });
        }
        Ok(())
    }
}

/// One timestamped frame of exactly 33 body landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrameLine", into = "FrameLine")]
pub struct PoseFrame {
    timestamp_ms: i64,
    landmarks: Vec<Landmark>,
}

impl PoseFrame {
    pub fn new(timestamp_ms: i64, landmarks: Vec<Landmark>) -> Result<Self> {
        if landmarks.len() != NUM_LANDMARKS {
            return Err(Error::LandmarkCount { found: landmarks.len() });
        }
        for (i, lm) in landmarks.iter().enumerate() {
            lm.check(i)?;
        }
        Ok(Self {
            timestamp_ms,
            landmarks,
        })
    }

    pub fn timestamp_ms(&self) -> i64 {
        self.timestamp_ms
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn landmark(&self, index: usize) -> Landmark {
        self.landmarks[index]
    }

    /// Parses one line of the frame file format.
    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: FrameLine = serde_json::from_str(line)?;
        raw.try_into()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("frame serialization is infallible")
    }
}

/// Wire/file shape of a frame: `{"t": <ms>, "lm": [[x, y, z, v] x 33]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameLine {
    pub t: i64,
    pub lm: Vec<[f64; 4]>,
}

impl TryFrom<FrameLine> for PoseFrame {
    type Error = Error;

    fn try_from(raw: FrameLine) -> Result<Self> {
        let landmarks = raw
            .lm
            .into_iter()
            .map(|[x, y, z, v]| Landmark::new(x, y, z, v))
            .collect();
        PoseFrame::new(raw.t, landmarks)
    }
}

impl From<PoseFrame> for FrameLine {
    fn from(frame: PoseFrame) -> Self {
        FrameLine {
            t: frame.timestamp_ms,
            lm: frame.landmarks.iter().map(|l| l.to_array()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Bad,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Good, Label::Bad];

    pub fn index(self) -> usize {
        match self {
            Label::Good => 0,
            Label::Bad => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Good),
            1 => Some(Label::Bad),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Bad => "bad",
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        let mut v = [0.0; 2];
        v[self.index()] = 1.0;
        v
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flattened per-frame model input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("empty feature vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame {
                index: i / VALUES_PER_LANDMARK,
                reason: format!("non-finite feature value at position {i}"),
            });
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-frame preprocessing applied before the model sees a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub filter_head: bool,
    pub canonicalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            filter_head: true,
            canonicalize: false,
        }
    }
}

impl FeatureConfig {
    pub fn width(&self) -> usize {
        feature_width(self.filter_head)
    }

    pub fn features(&self, frame: &PoseFrame) -> Result<FeatureVector> {
        if self.canonicalize {
            extract_features(&canonicalize(frame)?, self.filter_head)
        } else {
            extract_features(frame, self.filter_head)
        }
    }
}

pub fn feature_width(filter_head: bool) -> usize {
    if filter_head {
        FILTERED_WIDTH
    } else {
        FULL_WIDTH
    }
}

/// Flattens a frame landmark-major as `(x, y, z, visibility)` quadruples.
/// With `filter_head` the head landmarks 0-10 are dropped (88 values),
/// otherwise all 33 are kept (132 values).
pub fn extract_features(frame: &PoseFrame, filter_head: bool) -> Result<FeatureVector> {
    if frame.landmarks.len() != NUM_LANDMARKS {
        return Err(Error::LandmarkCount {
            found: frame.landmarks.len(),
        });
    }
    let first = if filter_head { HEAD_LANDMARKS } else { 0 };
    let mut values = Vec::with_capacity(feature_width(filter_head));
    for (i, lm) in frame.landmarks.iter().enumerate().skip(first) {
        lm.check(i)?;
        values.extend_from_slice(&lm.to_array());
    }
    Ok(FeatureVector(values))
}

/// Inverse of [`extract_features`]: rebuilds the landmarks a vector covers.
/// Returns `(first_landmark_index, landmarks)`.
pub fn landmarks_from_features(features: &FeatureVector) -> Result<(usize, Vec<Landmark>)> {
    let first = match features.len() {
        FULL_WIDTH => 0,
        FILTERED_WIDTH => HEAD_LANDMARKS,
        n => {
            return Err(Error::Dimension {
                context: "feature vector",
                expected: FILTERED_WIDTH,
                found: n,
            })
        }
    };
    let lms = features
        .0
        .chunks_exact(VALUES_PER_LANDMARK)
        .map(|c| Landmark::new(c[0], c[1], c[2], c[3]))
        .collect();
    Ok((first, lms))
}

/// A fixed-length run of equal-width feature vectors cut from one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    frames: Vec<FeatureVector>,
    source_id: String,
    start_index: usize,
}

impl SequenceWindow {
    pub fn new(frames: Vec<FeatureVector>, source_id: impl Into<String>, start_index: usize) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Config("empty sequence window".into()));
        };
        let width = first.len();
        if let Some(bad) = frames.iter().find(|f| f.len() != width) {
            return Err(Error::Dimension {
                context: "sequence window",
                expected: width,
                found: bad.len(),
            });
        }
        Ok(Self {
            frames,
            source_id: source_id.into(),
            start_index,
        })
    }

    pub fn frames(&self) -> &[FeatureVector] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].len()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub window: SequenceWindow,
    pub label: Label,
}

impl LabeledSequence {
    pub fn new(window: SequenceWindow, label: Label) -> Self {
        Self { window, label }
    }
}

/// Cuts complete windows starting at `0, stride, 2*stride, ...`.
pub fn build_windows(
    frames: &[FeatureVector],
    window_len: usize,
    stride: usize,
    source_id: &str,
) -> Result<Vec<SequenceWindow>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window_len ({window_len}) and stride ({stride}) must be >= 1"
        )));
    }
    if let Some(first) = frames.first() {
        if let Some(bad) = frames.iter().find(|f| f.len() != first.len()) {
            return Err(Error::Dimension {
                context: "build_windows",
                expected: first.len(),
                found: bad.len(),
            });
        }
    }
    if frames.len() < window_len {
        return Ok(Vec::new());
    }
    (0..=frames.len() - window_len)
        .step_by(stride)
        .map(|start| SequenceWindow::new(frames[start..start + window_len].to_vec(), source_id, start))
        .collect()
}

fn midpoint(a: Landmark, b: Landmark) -> [f64; 3] {
    [(a.x + b.x) / 2.0, (a.y + b.y) / 2.0, (a.z + b.z) / 2.0]
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Centers the frame on the hip midpoint and rescales positions by the
/// shoulder-midpoint to hip-midpoint distance. Visibility is left untouched.
pub fn canonicalize(frame: &PoseFrame) -> Result<PoseFrame> {
    let hip = midpoint(frame.landmark(idx::LEFT_HIP), frame.landmark(idx::RIGHT_HIP));
    let shoulder = midpoint(frame.landmark(idx::LEFT_SHOULDER), frame.landmark(idx::RIGHT_SHOULDER));
    let torso = distance(hip, shoulder);
    if !(torso >= 1e-6) {
        return Err(Error::Degenerate(format!("hip-shoulder distance {torso:e} below 1e-6")));
    }
    let landmarks = frame
        .landmarks
        .iter()
        .map(|lm| {
            Landmark::new(
                (lm.x - hip[0]) / torso,
                (lm.y - hip[1]) / torso,
                (lm.z - hip[2]) / torso,
                lm.visibility,
            )
        })
        .collect();
    PoseFrame::new(frame.timestamp_ms, landmarks)
}
