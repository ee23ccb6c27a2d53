//! Synthetic lifting clips from a 2.5-D sagittal skeleton.
//!
//! The body moves in a vertical plane (forward `u`, up `v`, lateral `w`),
//! then each clip is yaw-rotated about the vertical axis, scaled and
//! projected to normalized image coordinates with Gaussian landmark noise.
//! A squat lift bends the knees with a near-vertical trunk; a stoop lift
//! keeps the knees almost straight and flexes the trunk.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{idx, Landmark, PoseFrame, NUM_LANDMARKS};

pub const CLIP_FRAMES: usize = 30;
const FRAME_MS: f64 = 1000.0 / 30.0;
/// Image-space body height at unit subject scale.
const BASE_HEIGHT: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftStyle {
    Squat,
    Stoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_sequences: usize,
    /// Fraction of clips using the squat style.
    pub style_mix: f64,
    /// Yaw is drawn uniformly from `[-range, range]` degrees.
    pub camera_yaw_range: f64,
    pub subject_scale_range: (f64, f64),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sequences: 62,
            style_mix: 0.5,
            camera_yaw_range: 30.0,
            subject_scale_range: (0.85, 1.15),
            noise_std: 0.005,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.style_mix) {
            return Err(Error::Config(format!("style mix {} outside [0, 1]", self.style_mix)));
        }
        if !(0.0..=90.0).contains(&self.camera_yaw_range) {
            return Err(Error::Config(format!(
                "camera yaw range {} outside [0, 90] degrees",
                self.camera_yaw_range
            )));
        }
        let (lo, hi) = self.subject_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "subject scale range ({lo}, {hi}) is not well ordered"
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std {} must be >= 0", self.noise_std)));
        }
        Ok(())
    }
}

/// Per-clip kinematic parameters drawn by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftParams {
    pub peak_trunk_deg: f64,
    pub peak_knee_deg: f64,
    pub yaw_deg: f64,
    pub scale: f64,
    /// Timing offset of the lift cycle, in frames.
    pub phase_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub frames: Vec<PoseFrame>,
    pub style: LiftStyle,
    pub params: LiftParams,
}

/// Lift depth in [0, 1]: stand, descend, hold (grasp), ascend, stand.
fn lift_depth(frame: f64) -> f64 {
    use std::f64::consts::PI;
    match frame {
        p if p < 3.0 => 0.0,
        p if p < 12.0 => 0.5 * (1.0 - (PI * (p - 3.0) / 9.0).cos()),
        p if p < 17.0 => 1.0,
        p if p < 26.0 => 0.5 * (1.0 + (PI * (p - 17.0) / 9.0).cos()),
        _ => 0.0,
    }
}

struct Proportions {
    shank: f64,
    thigh: f64,
    trunk: f64,
    neck: f64,
    upper_arm: f64,
    forearm: f64,
}

/// Sagittal-frame position `(u, v, w)`.
type P3 = [f64; 3];

fn add(a: P3, b: P3) -> P3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Point at `len` along a direction `angle` from vertical, leaning forward.
fn along(from: P3, len: f64, angle: f64) -> P3 {
    [from[0] + len * angle.sin(), from[1] + len * angle.cos(), from[2]]
}

fn lateral(p: P3, w: f64) -> P3 {
    [p[0], p[1], p[2] + w]
}

/// Sagittal skeleton for one frame. Left landmarks sit at +w.
fn skeleton(body: &Proportions, knee_deg: f64, trunk_deg: f64, style: LiftStyle, depth: f64) -> [P3; NUM_LANDMARKS] {
    let (shank_share, arm_reach) = match style {
        LiftStyle::Squat => (0.4, 25.0),
        LiftStyle::Stoop => (0.5, 15.0),
    };
    let knee = knee_deg.to_radians();
    let shank_angle = shank_share * knee;
    let thigh_angle = -(1.0 - shank_share) * knee;
    let trunk = trunk_deg.to_radians();

    let ankle = [0.0, 0.04, 0.0];
    let knee_c = along(ankle, body.shank, shank_angle);
    let hip_c = along(knee_c, body.thigh, thigh_angle);
    let shoulder_c = along(hip_c, body.trunk, trunk);
    let head = along(shoulder_c, body.neck, 0.8 * trunk);

    let arm = (depth * arm_reach).to_radians();
    // arms hang downward: angle measured from straight down, reaching forward
    let down = |from: P3, len: f64, a: f64| [from[0] + len * a.sin(), from[1] - len * a.cos(), from[2]];
    let elbow_c = down(shoulder_c, body.upper_arm, arm);
    let wrist_c = down(elbow_c, body.forearm, arm + (depth * 10.0).to_radians());

    let mut p = [[0.0; 3]; NUM_LANDMARKS];
    let face = |du: f64, dv: f64, dw: f64| add(head, [du, dv, dw]);
    p[idx::NOSE] = face(0.06, -0.01, 0.0);
    p[idx::LEFT_EYE_INNER] = face(0.05, 0.02, 0.015);
    p[idx::LEFT_EYE] = face(0.05, 0.02, 0.03);
    p[idx::LEFT_EYE_OUTER] = face(0.045, 0.02, 0.045);
    p[idx::RIGHT_EYE_INNER] = face(0.05, 0.02, -0.015);
    p[idx::RIGHT_EYE] = face(0.05, 0.02, -0.03);
    p[idx::RIGHT_EYE_OUTER] = face(0.045, 0.02, -0.045);
    p[idx::LEFT_EAR] = face(0.0, 0.01, 0.07);
    p[idx::RIGHT_EAR] = face(0.0, 0.01, -0.07);
    p[idx::MOUTH_LEFT] = face(0.05, -0.04, 0.02);
    p[idx::MOUTH_RIGHT] = face(0.05, -0.04, -0.02);

    for (sign, side) in [(1.0, 0usize), (-1.0, 1usize)] {
        let pick = |left: usize, right: usize| if side == 0 { left } else { right };
        let sh = lateral(shoulder_c, sign * 0.11);
        let el = lateral(elbow_c, sign * 0.12);
        let wr = lateral(wrist_c, sign * 0.12);
        p[pick(idx::LEFT_SHOULDER, idx::RIGHT_SHOULDER)] = sh;
        p[pick(idx::LEFT_ELBOW, idx::RIGHT_ELBOW)] = el;
        p[pick(idx::LEFT_WRIST, idx::RIGHT_WRIST)] = wr;
        p[pick(idx::LEFT_PINKY, idx::RIGHT_PINKY)] = add(wr, [0.02, -0.06, sign * 0.015]);
        p[pick(idx::LEFT_INDEX, idx::RIGHT_INDEX)] = add(wr, [0.035, -0.065, 0.0]);
        p[pick(idx::LEFT_THUMB, idx::RIGHT_THUMB)] = add(wr, [0.035, -0.03, -sign * 0.01]);
        p[pick(idx::LEFT_HIP, idx::RIGHT_HIP)] = lateral(hip_c, sign * 0.08);
        p[pick(idx::LEFT_KNEE, idx::RIGHT_KNEE)] = lateral(knee_c, sign * 0.08);
        p[pick(idx::LEFT_ANKLE, idx::RIGHT_ANKLE)] = lateral(ankle, sign * 0.08);
        p[pick(idx::LEFT_HEEL, idx::RIGHT_HEEL)] = lateral([-0.05, 0.01, 0.0], sign * 0.08);
        p[pick(idx::LEFT_FOOT_INDEX, idx::RIGHT_FOOT_INDEX)] = lateral([0.13, 0.0, 0.0], sign * 0.085);
    }
    p
}

fn visibility(i: usize) -> f64 {
    match i {
        0..=10 => 0.99,
        i if i % 2 == 1 => 0.98,
        _ => 0.92,
    }
}

fn generate_clip(style: LiftStyle, cfg: &SyntheticConfig, clip_seed: u64) -> SyntheticClip {
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
    let (peak_trunk_deg, peak_knee_deg) = match style {
        LiftStyle::Squat => (rng.gen_range(8.0..20.0), rng.gen_range(85.0..110.0)),
        LiftStyle::Stoop => (rng.gen_range(65.0..85.0), rng.gen_range(3.0..15.0)),
    };
    let yaw_deg = if cfg.camera_yaw_range > 0.0 {
        rng.gen_range(-cfg.camera_yaw_range..=cfg.camera_yaw_range)
    } else {
        0.0
    };
    let (lo, hi) = cfg.subject_scale_range;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let phase_shift = rng.gen_range(-1.5..1.5);
    let mut jitter = || rng.gen_range(0.97..1.03);
    let body = Proportions {
        shank: 0.25 * jitter(),
        thigh: 0.245 * jitter(),
        trunk: 0.30 * jitter(),
        neck: 0.10 * jitter(),
        upper_arm: 0.17 * jitter(),
        forearm: 0.15 * jitter(),
    };
    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).expect("valid std"));

    let s = BASE_HEIGHT * scale;
    let (sin_y, cos_y) = yaw_deg.to_radians().sin_cos();
    let cx = 0.5 - s * 0.04;
    let ground = 0.5 + s / 2.0;

    let frames = (0..CLIP_FRAMES)
        .map(|t| {
            let depth = lift_depth(t as f64 - phase_shift);
            let pts = skeleton(&body, depth * peak_knee_deg, depth * peak_trunk_deg, style, depth);
            let landmarks = pts
                .iter()
                .enumerate()
                .map(|(i, &[u, v, w])| {
                    let ur = u * cos_y - w * sin_y;
                    let wr = u * sin_y + w * cos_y;
                    let mut lm = Landmark::new(cx + s * ur, ground - s * v, s * wr, visibility(i));
                    if let Some(n) = &noise {
                        lm.x += n.sample(&mut rng);
                        lm.y += n.sample(&mut rng);
                        lm.z += n.sample(&mut rng);
                    }
                    lm
                })
                .collect();
            let ts = (t as f64 * FRAME_MS).round() as i64;
            PoseFrame::new(ts, landmarks).expect("generated frames are valid")
        })
        .collect();

    SyntheticClip {
        frames,
        style,
        params: LiftParams {
            peak_trunk_deg,
            peak_knee_deg,
            yaw_deg,
            scale,
            phase_shift,
        },
    }
}

/// Generates `n_sequences` clips of 30 frames. Exactly
/// `round(n * style_mix)` clips are squats, in seeded random order; clip `i`
/// draws from its own stream seeded with `seed + i`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<SyntheticClip>> {
    cfg.validate()?;
    let n = cfg.n_sequences;
    let n_squat = (n as f64 * cfg.style_mix).round() as usize;
    let mut styles: Vec<LiftStyle> = (0..n)
        .map(|i| {
            if i < n_squat {
                LiftStyle::Squat
            } else {
                LiftStyle::Stoop
            }
        })
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    styles.shuffle(&mut order_rng);
    Ok(styles
        .into_par_iter()
        .enumerate()
        .map(|(i, style)| generate_clip(style, cfg, cfg.seed.wrapping_add(i as u64)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_profile() {
        assert_eq!(lift_depth(0.0), 0.0);
        assert_eq!(lift_depth(14.0), 1.0);
        assert_eq!(lift_depth(29.0), 0.0);
        assert!((lift_depth(7.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn style_counts_follow_mix() {
        let cfg = SyntheticConfig {
            n_sequences: 62,
            ..Default::default()
        };
        let clips = generate_synthetic(&cfg).unwrap();
        assert_eq!(clips.len(), 62);
        assert_eq!(clips.iter().filter(|c| c.style == LiftStyle::Squat).count(), 31);
        assert!(clips.iter().all(|c| c.frames.len() == CLIP_FRAMES));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig {
            n_sequences: 6,
            seed: 12,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig {
            seed: 13,
            ..cfg.clone()
        };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SyntheticConfig {
                style_mix: 1.5,
                ..Default::default()
            },
            SyntheticConfig {
                noise_std: -0.1,
                ..Default::default()
            },
            SyntheticConfig {
                subject_scale_range: (1.2, 0.8),
                ..Default::default()
            },
            SyntheticConfig {
                camera_yaw_range: -5.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn frames_are_valid_and_in_view() {
        let cfg = SyntheticConfig {
            n_sequences: 20,
            noise_std: 0.01,
            camera_yaw_range: 45.0,
            ..Default::default()
        };
        for clip in generate_synthetic(&cfg).unwrap() {
            for f in &clip.frames {
                assert_eq!(f.landmarks().len(), 33);
                for lm in f.landmarks() {
                    assert!((0.0..=1.0).contains(&lm.visibility));
                    assert!(lm.x > -0.2 && lm.x < 1.2 && lm.y > -0.2 && lm.y < 1.2);
                }
            }
        }
    }
}
