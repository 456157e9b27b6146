//! Procedural finger-curl and wrist-wave motions.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{mirror_x, Rotation, RotationAA};
use crate::handmodel::{HandState, MotionSequence, PoseFrame, NUM_ARTICULATED, NUM_SHAPE};
use crate::priortrain::{Handedness, RawSequence};

/// Random parameters of one procedural sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CurlWave {
    base_curl: f64,
    curl_amp: f64,
    curl_freq: f64,
    curl_phase: f64,
    finger_lag: f64,
    spread: f64,
    thumb_amp: f64,
    thumb_phase: f64,
    wave_amp: f64,
    wave_freq: f64,
    wave_phase: f64,
    tilt_amp: f64,
    drift: [f64; 3],
    drift_freq: f64,
}

fn rot(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle)
        .to_rotation_matrix()
        .into_inner()
}

impl CurlWave {
    pub fn sample(rng: &mut impl Rng) -> Self {
        CurlWave {
            base_curl: rng.random_range(0.0..0.3),
            curl_amp: rng.random_range(0.3..1.2),
            curl_freq: rng.random_range(0.3..1.2),
            curl_phase: rng.random_range(0.0..TAU),
            finger_lag: rng.random_range(0.0..0.8),
            spread: rng.random_range(0.0..0.15),
            thumb_amp: rng.random_range(0.2..0.8),
            thumb_phase: rng.random_range(0.0..TAU),
            wave_amp: rng.random_range(0.0..0.4),
            wave_freq: rng.random_range(0.2..0.8),
            wave_phase: rng.random_range(0.0..TAU),
            tilt_amp: rng.random_range(0.0..0.2),
            drift: [
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
            ],
            drift_freq: rng.random_range(0.1..0.5),
        }
    }

    /// Local articulation at time `t` seconds.
    pub fn pose(&self, t: f64) -> PoseFrame {
        let mut out = [Matrix3::identity(); NUM_ARTICULATED];
        let th = self.thumb_amp * (0.5 - 0.5 * (TAU * self.curl_freq * t + self.thumb_phase).cos());
        out[0] = rot([0.4, 0.3, 0.87], 0.6 * th + 0.1);
        out[1] = rot([1.0, 0.0, 0.3], 0.5 * th);
        out[2] = rot([1.0, 0.0, 0.3], 0.6 * th);
        for f in 0..4 {
            let phase = TAU * self.curl_freq * t + self.curl_phase - f as f64 * self.finger_lag;
            let c = self.base_curl + self.curl_amp * (0.5 - 0.5 * phase.cos());
            let side = f as f64 - 1.5;
            let abd = self.spread * side * (1.0 - 0.5 * c.min(1.0));
            out[3 + 3 * f] = rot([0.0, 0.0, 1.0], abd) * rot([1.0, 0.0, 0.0], 0.8 * c);
            out[4 + 3 * f] = rot([1.0, 0.0, 0.0], 1.1 * c);
            out[5 + 3 * f] = rot([1.0, 0.0, 0.0], 0.7 * c);
        }
        out
    }

    /// Global orientation and translation at time `t` seconds.
    pub fn global(&self, t: f64) -> (Matrix3<f64>, [f64; 3]) {
        let w = self.wave_amp * (TAU * self.wave_freq * t + self.wave_phase).sin();
        let tilt = self.tilt_amp * (TAU * 0.5 * self.wave_freq * t).sin();
        // Fingers point up in the image, palm toward the camera.
        let base = rot([1.0, 0.0, 0.0], PI);
        let r = base * rot([0.0, 0.0, 1.0], w) * rot([1.0, 0.0, 0.0], tilt);
        let s = (TAU * self.drift_freq * t).sin();
        let tr = [
            self.drift[0] * s,
            0.04 + self.drift[1] * s,
            0.5 + self.drift[2] * s,
        ];
        (r, tr)
    }
}

/// One procedural sequence with zero shape.
pub fn curl_wave_motion(frames: usize, fps: f64, rng: &mut impl Rng) -> Result<MotionSequence> {
    let p = CurlWave::sample(rng);
    let states = (0..frames)
        .map(|i| {
            let t = i as f64 / fps;
            let (r, transl) = p.global(t);
            HandState {
                global_orient: RotationAA::from_matrix(&r),
                transl,
                pose: p.pose(t).iter().map(RotationAA::from_matrix).collect(),
                shape: [0.0; NUM_SHAPE],
            }
        })
        .collect();
    MotionSequence::new(states, fps, [0.0; NUM_SHAPE])
}

/// Training corpus of procedural sequences. Every second sequence is stored
/// as a left-hand recording (local rotations mirrored).
pub fn training_sequences(
    count: usize,
    frames: usize,
    fps: f64,
    seed: u64,
) -> Result<Vec<RawSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut motion = curl_wave_motion(frames, fps, &mut rng)?;
            let handedness = if i % 2 == 1 {
                for f in &mut motion.frames {
                    for r in &mut f.pose {
                        *r = RotationAA::from_matrix(&mirror_x(&r.to_matrix()?));
                    }
                }
                Handedness::Left
            } else {
                Handedness::Right
            };
            Ok(RawSequence { motion, handedness })
        })
        .collect()
}
