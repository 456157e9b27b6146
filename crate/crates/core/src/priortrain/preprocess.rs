use std::str::FromStr;

use nalgebra::Matrix3;
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_velocities, from_nalgebra, identity, mirror_x, Rot6D, Rotation};
use crate::handmodel::{fk_generic, MotionSequence, PoseFrame, SkeletonSpec, NUM_ARTICULATED};
use crate::prior::POSE_DIM;

pub const CLIP_LEN: usize = 128;
pub const CHANNELS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Right,
    Left,
}

impl FromStr for Handedness {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "right" | "r" => Ok(Handedness::Right),
            "left" | "l" => Ok(Handedness::Left),
            _ => Err(Error::BadHandedness(s.to_string())),
        }
    }
}

/// A capture sequence tagged with the hand it was recorded on.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub motion: MotionSequence,
    pub handedness: Handedness,
}

/// `T × J × 15` per-joint features: position, velocity, 6D rotation,
/// angular velocity. `J` covers the articulated joints.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedClip {
    pub x: Array3<f64>,
    pub fps: f64,
}

impl ProcessedClip {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> Array3<f64> {
        self.x.slice(s![.., .., 0..3]).to_owned()
    }

    pub fn velocities(&self) -> Array3<f64> {
        self.x.slice(s![.., .., 3..6]).to_owned()
    }

    pub fn angular_velocities(&self) -> Array3<f64> {
        self.x.slice(s![.., .., 12..15]).to_owned()
    }

    /// Rotation channels flattened per frame, `T × 90`.
    pub fn six_d(&self) -> Array2<f64> {
        let t = self.len();
        let mut out = Array2::zeros((t, POSE_DIM));
        for i in 0..t {
            for j in 0..NUM_ARTICULATED {
                for k in 0..6 {
                    out[(i, j * 6 + k)] = self.x[(i, j, 6 + k)];
                }
            }
        }
        out
    }

    /// Local pose matrices recovered from the rotation channels.
    pub fn poses(&self) -> Result<Vec<PoseFrame>> {
        (0..self.len())
            .map(|i| {
                let mut f = [Matrix3::identity(); NUM_ARTICULATED];
                for (j, r) in f.iter_mut().enumerate() {
                    let mut d = [0.0; 6];
                    for (k, v) in d.iter_mut().enumerate() {
                        *v = self.x[(i, j, 6 + k)];
                    }
                    *r = Rot6D(d).to_matrix()?;
                }
                Ok(f)
            })
            .collect()
    }
}

fn local_poses(seq: &RawSequence) -> Result<Vec<PoseFrame>> {
    seq.motion
        .frames
        .iter()
        .map(|f| {
            let mut out = [Matrix3::identity(); NUM_ARTICULATED];
            for (o, r) in out.iter_mut().zip(&f.pose) {
                let m = r.to_matrix()?;
                *o = match seq.handedness {
                    Handedness::Right => m,
                    Handedness::Left => mirror_x(&m),
                };
            }
            Ok(out)
        })
        .collect()
}

/// Central differences inside, one-sided at the ends, scaled by `fps`.
fn differentiate(v: &[[f64; 3]], fps: f64) -> Vec<[f64; 3]> {
    let n = v.len();
    (0..n)
        .map(|t| {
            let (a, b, h) = match n {
                0 | 1 => return [0.0; 3],
                _ if t == 0 => (0, 1, 1.0),
                _ if t == n - 1 => (n - 2, n - 1, 1.0),
                _ => (t - 1, t + 1, 2.0),
            };
            [0, 1, 2].map(|k| (v[b][k] - v[a][k]) * fps / h)
        })
        .collect()
}

fn clip_features(
    spec: &SkeletonSpec,
    poses: &[PoseFrame],
    shape: &[f64],
    fps: f64,
) -> ProcessedClip {
    let t = poses.len();
    let mut x = Array3::zeros((t, NUM_ARTICULATED, CHANNELS));
    let arts = spec.articulated();
    let mut pos = vec![vec![[0.0; 3]; t]; NUM_ARTICULATED];
    for (i, f) in poses.iter().enumerate() {
        let local: Vec<_> = f.iter().map(from_nalgebra::<f64>).collect();
        let js = fk_generic(spec, &identity(), &[0.0; 3], &local, shape);
        for (j, &a) in arts.iter().enumerate() {
            pos[j][i] = js[a];
        }
    }
    for j in 0..NUM_ARTICULATED {
        let vel = differentiate(&pos[j], fps);
        let track: Vec<Matrix3<f64>> = poses.iter().map(|f| f[j]).collect();
        let ang = angular_velocities(&track, fps);
        for i in 0..t {
            let six = Rot6D::from_matrix(&track[i]).0;
            for k in 0..3 {
                x[(i, j, k)] = pos[j][i][k];
                x[(i, j, 3 + k)] = vel[i][k];
                x[(i, j, 12 + k)] = ang[i][k];
            }
            for k in 0..6 {
                x[(i, j, 6 + k)] = six[k];
            }
        }
    }
    ProcessedClip { x, fps }
}

/// Reflect left hands into the right-hand convention, cut non-overlapping
/// clips of [`CLIP_LEN`] frames (dropping the remainder) and compute the
/// per-joint feature channels.
pub fn preprocess(spec: &SkeletonSpec, raw: &[RawSequence]) -> Result<Vec<ProcessedClip>> {
    let mut out = Vec::new();
    for seq in raw {
        let n = seq.motion.len();
        if n < CLIP_LEN {
            return Err(Error::TooShort(format!(
                "sequence of {n} frames is shorter than one {CLIP_LEN}-frame clip"
            )));
        }
        let poses = local_poses(seq)?;
        for c in 0..n / CLIP_LEN {
            let range = c * CLIP_LEN..(c + 1) * CLIP_LEN;
            out.push(clip_features(
                spec,
                &poses[range],
                &seq.motion.shape,
                seq.motion.fps,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationAA;
    use crate::handmodel::{default_skeleton, HandState, NUM_SHAPE};

    fn sequence(n: usize, fps: f64, f: impl Fn(f64) -> Vec<RotationAA>) -> MotionSequence {
        let frames = (0..n)
            .map(|i| HandState {
                pose: f(i as f64 / fps),
                ..HandState::rest()
            })
            .collect();
        MotionSequence::new(frames, fps, [0.0; NUM_SHAPE]).unwrap()
    }

    fn right(m: MotionSequence) -> RawSequence {
        RawSequence {
            motion: m,
            handedness: Handedness::Right,
        }
    }

    #[test]
    fn slices_into_full_clips() {
        let spec = default_skeleton();
        let m = sequence(300, 30.0, |_| vec![RotationAA::IDENTITY; NUM_ARTICULATED]);
        let clips = preprocess(&spec, &[right(m)]).unwrap();
        assert_eq!(clips.len(), 2);
        assert_eq!(clips[0].x.shape(), &[128, 15, 15]);
        let short = sequence(100, 30.0, |_| vec![RotationAA::IDENTITY; NUM_ARTICULATED]);
        assert!(matches!(
            preprocess(&spec, &[right(short)]),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn constant_pose_has_zero_velocity() {
        let spec = default_skeleton();
        let m = sequence(128, 30.0, |_| {
            vec![RotationAA([0.2, -0.1, 0.3]); NUM_ARTICULATED]
        });
        let c = &preprocess(&spec, &[right(m)]).unwrap()[0];
        assert!(c.velocities().iter().all(|v| v.abs() < 1e-12));
        assert!(c.angular_velocities().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn reflecting_twice_is_identity() {
        let spec = default_skeleton();
        let m = sequence(128, 30.0, |t| {
            (0..NUM_ARTICULATED)
                .map(|j| RotationAA([0.3 * (t + j as f64).sin(), 0.2 * t.cos(), -0.1 * j as f64]))
                .collect()
        });
        let mut mirrored = m.clone();
        for f in &mut mirrored.frames {
            for r in &mut f.pose {
                *r = RotationAA::from_matrix(&mirror_x(&r.to_matrix().unwrap()));
            }
        }
        let a = preprocess(&spec, &[right(m)]).unwrap();
        let b = preprocess(
            &spec,
            &[RawSequence {
                motion: mirrored,
                handedness: Handedness::Left,
            }],
        )
        .unwrap();
        for (x, y) in a[0].x.iter().zip(b[0].x.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert!(matches!(
            "both".parse::<Handedness>(),
            Err(Error::BadHandedness(_))
        ));
    }

    #[test]
    fn velocities_match_analytic_derivative() {
        // Index MCP flexes as 0.5 sin(ω t); its child's position moves on a circle.
        let spec = default_skeleton();
        let fps = 120.0;
        let w = 2.0;
        let m = sequence(128, fps, |t| {
            let mut p = vec![RotationAA::IDENTITY; NUM_ARTICULATED];
            p[3] = RotationAA([0.5 * (w * t).sin(), 0.0, 0.0]);
            p
        });
        let c = &preprocess(&spec, &[right(m)]).unwrap()[0];
        for i in 1..127 {
            let t = i as f64 / fps;
            let rate = 0.5 * w * (w * t).cos();
            assert!((c.x[(i, 3, 12)] - rate).abs() < 1e-3, "angular rate at {i}");
            // Index PIP sits at offset (0, 0.04, 0) from the MCP.
            let a = 0.5 * (w * t).sin();
            let vy = -0.04 * a.sin() * rate;
            let vz = 0.04 * a.cos() * rate;
            assert!((c.x[(i, 4, 4)] - vy).abs() < 1e-4);
            assert!((c.x[(i, 4, 5)] - vz).abs() < 1e-4);
        }
        let poses = c.poses().unwrap();
        assert!(
            (poses[10][3]
                - RotationAA([0.5 * (w * 10.0 / fps).sin(), 0.0, 0.0])
                    .to_matrix()
                    .unwrap())
            .norm()
                < 1e-12
        );
    }
}
