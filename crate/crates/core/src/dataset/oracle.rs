//! Rule-based ground truth for lifting clips: a frame is a stoop when the
//! trunk is flexed past a threshold while the knees stay nearly straight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{distance, idx, PoseFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleThresholds {
    pub trunk_deg: f64,
    pub knee_deg: f64,
}

impl Default for OracleThresholds {
    fn default() -> Self {
        Self {
            trunk_deg: 45.0,
            knee_deg: 30.0,
        }
    }
}

const MIN_SEGMENT: f64 = 1e-9;

fn pos(frame: &PoseFrame, i: usize) -> [f64; 3] {
    frame.landmark(i).position()
}

fn mid(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = distance(a, [0.0; 3]);
    let nb = distance(b, [0.0; 3]);
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn segment(from: [f64; 3], to: [f64; 3], what: &str) -> Result<[f64; 3]> {
    let v = sub(to, from);
    if distance(v, [0.0; 3]) < MIN_SEGMENT {
        return Err(Error::Degenerate(format!("zero-length {what} segment")));
    }
    Ok(v)
}

/// Angle between the hip-midpoint to shoulder-midpoint segment and image
/// vertical (image y grows downward).
pub fn trunk_flexion_deg(frame: &PoseFrame) -> Result<f64> {
    let hip = mid(pos(frame, idx::LEFT_HIP), pos(frame, idx::RIGHT_HIP));
    let shoulder = mid(pos(frame, idx::LEFT_SHOULDER), pos(frame, idx::RIGHT_SHOULDER));
    let trunk = segment(hip, shoulder, "trunk")?;
    Ok(angle_deg(trunk, [0.0, -1.0, 0.0]))
}

/// Mean of the left and right knee flexion (0 = straight leg).
pub fn knee_flexion_deg(frame: &PoseFrame) -> Result<f64> {
    let side = |hip: usize, knee: usize, ankle: usize| -> Result<f64> {
        let thigh = segment(pos(frame, hip), pos(frame, knee), "thigh")?;
        let shank = segment(pos(frame, knee), pos(frame, ankle), "shank")?;
        Ok(angle_deg(thigh, shank))
    };
    let left = side(idx::LEFT_HIP, idx::LEFT_KNEE, idx::LEFT_ANKLE)?;
    let right = side(idx::RIGHT_HIP, idx::RIGHT_KNEE, idx::RIGHT_ANKLE)?;
    Ok((left + right) / 2.0)
}

/// Bad iff some frame has trunk flexion above `trunk_deg` while knee flexion
/// is below `knee_deg`.
pub fn oracle_label(clip: &[PoseFrame], thresholds: &OracleThresholds) -> Result<crate::pose::Label> {
    use crate::pose::Label;
    if clip.is_empty() {
        return Err(Error::Degenerate("empty clip".into()));
    }
    for frame in clip {
        let trunk = trunk_flexion_deg(frame)?;
        let knee = knee_flexion_deg(frame)?;
        if trunk > thresholds.trunk_deg && knee < thresholds.knee_deg {
            return Ok(Label::Bad);
        }
    }
    Ok(Label::Good)
}
