//! Synthetic detections and regressor-like initializations from a
//! ground-truth motion.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::motion::CurlWave;
use crate::error::{Error, Result};
use crate::geometry::{project, Camera, Rotation, RotationAA};
use crate::handmodel::{HandState, MotionSequence, SkeletonSpec, NUM_JOINTS, NUM_SHAPE};
use crate::ingest::{DetectionFrame, Detections, InitFrame, Initialization};
use crate::prior::PriorModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    /// Procedural finger curls with a waving wrist.
    CurlWave,
    /// Local poses sampled from a trained prior, global motion procedural.
    PriorSample,
}

/// Per-frame noise of the synthetic initialization: standard deviations per
/// axis-angle component (rad) and per translation axis (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitNoise {
    pub orient: f64,
    pub transl: f64,
    pub pose: f64,
}

impl Default for InitNoise {
    fn default() -> Self {
        InitNoise {
            orient: 0.1,
            transl: 0.005,
            pose: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub motion: MotionFamily,
    pub frames: usize,
    pub fps: f64,
    /// Keypoint noise std, pixels.
    pub noise_px: f64,
    /// Probability that a single keypoint is dropped.
    pub dropout: f64,
    /// Half-open frame ranges with no detections.
    pub occlusion: Vec<[usize; 2]>,
    pub camera: Camera,
    pub init_noise: InitNoise,
    pub visible_bbox_conf: f64,
    pub occluded_bbox_conf: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            motion: MotionFamily::CurlWave,
            frames: 64,
            fps: 30.0,
            noise_px: 0.0,
            dropout: 0.0,
            occlusion: Vec::new(),
            camera: Camera::default(),
            init_noise: InitNoise::default(),
            visible_bbox_conf: 0.9,
            occluded_bbox_conf: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1]".into()));
        }
        for c in [self.visible_bbox_conf, self.occluded_bbox_conf] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Config("bbox confidences must lie in [0, 1]".into()));
            }
        }
        let n = self.init_noise;
        if !(self.noise_px >= 0.0 && n.orient >= 0.0 && n.transl >= 0.0 && n.pose >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        for w in &self.occlusion {
            if w[0] > w[1] || w[1] > self.frames {
                return Err(Error::Config(format!(
                    "occlusion window {w:?} outside 0..{}",
                    self.frames
                )));
            }
        }
        if self.frames < 2 {
            return Err(Error::TooShort(format!("{} frames", self.frames)));
        }
        self.camera.intrinsics.validate()
    }

    pub fn occluded(&self, t: usize) -> bool {
        self.occlusion.iter().any(|w| (w[0]..w[1]).contains(&t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub ground_truth: MotionSequence,
    pub detections: Detections,
    pub initialization: Initialization,
}

fn ground_truth(
    spec: &SyntheticSpec,
    prior: Option<&PriorModel>,
    rng: &mut ChaCha8Rng,
) -> Result<MotionSequence> {
    let p = CurlWave::sample(rng);
    let sampled = match spec.motion {
        MotionFamily::CurlWave => None,
        MotionFamily::PriorSample => {
            let prior = prior.ok_or(Error::ModelNotTrained)?;
            if prior.sample_len() < spec.frames {
                return Err(Error::LengthMismatch(format!(
                    "prior samples {} frames, {} requested",
                    prior.sample_len(),
                    spec.frames
                )));
            }
            Some(prior.sample(1, rng.random())?.remove(0))
        }
    };
    let frames = (0..spec.frames)
        .map(|i| {
            let t = i as f64 / spec.fps;
            let (r, transl) = p.global(t);
            let local = match &sampled {
                Some(s) => s[i],
                None => p.pose(t),
            };
            HandState {
                global_orient: RotationAA::from_matrix(&r),
                transl,
                pose: local.iter().map(RotationAA::from_matrix).collect(),
                shape: [0.0; NUM_SHAPE],
            }
        })
        .collect();
    MotionSequence::new(frames, spec.fps, [0.0; NUM_SHAPE])
}

fn jitter(
    r: &RotationAA,
    std: f64,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<RotationAA> {
    if std == 0.0 {
        return Ok(*r);
    }
    let e = Vector3::from_fn(|_, _| noise.sample(rng) * std);
    let m = r.to_matrix()? * Rotation3::from_scaled_axis(e).into_inner();
    Ok(RotationAA::from_matrix(&m))
}

/// Ground truth, its noisy projections and a perturbed initialization.
/// Random draws happen in a fixed order, so equal specs give equal data.
pub fn synthesize(
    skeleton: &SkeletonSpec,
    spec: &SyntheticSpec,
    prior: Option<&PriorModel>,
) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gt = ground_truth(spec, prior, &mut rng)?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let k = &spec.camera.intrinsics;
    let ext = &spec.camera.extrinsics;

    let mut frames = Vec::with_capacity(gt.len());
    for (t, joints) in gt.joints(skeleton)?.iter().enumerate() {
        let mut kp = [[0.0; 2]; NUM_JOINTS];
        let mut conf = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let noise = [unit.sample(&mut rng), unit.sample(&mut rng)];
            let dropped = rng.random::<f64>() < spec.dropout;
            if let (Ok(uv), false) = (project(joints[j], k, ext), dropped) {
                kp[j] = [
                    uv[0] + spec.noise_px * noise[0],
                    uv[1] + spec.noise_px * noise[1],
                ];
                conf[j] = 1.0;
            }
        }
        let visible = !spec.occluded(t) && conf.iter().any(|&c| c > 0.0);
        frames.push(visible.then(|| DetectionFrame {
            frame: t,
            source: "synthetic".into(),
            keypoints: kp,
            conf: Some(conf),
            bbox_conf: Some(spec.visible_bbox_conf),
        }));
    }

    let n = spec.init_noise;
    let init_frames = gt
        .frames
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let state = HandState {
                global_orient: jitter(&s.global_orient, n.orient, &unit, &mut rng)?,
                transl: s.transl.map(|v| v + n.transl * unit.sample(&mut rng)),
                pose: s
                    .pose
                    .iter()
                    .map(|r| jitter(r, n.pose, &unit, &mut rng))
                    .collect::<Result<_>>()?,
                shape: s.shape,
            };
            let bbox_conf = if spec.occluded(t) {
                spec.occluded_bbox_conf
            } else {
                spec.visible_bbox_conf
            };
            Ok(InitFrame { state, bbox_conf })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticData {
        detections: Detections {
            frames,
            conf_defaulted: false,
        },
        initialization: Initialization {
            fps: spec.fps,
            shape: gt.shape,
            frames: init_frames,
        },
        ground_truth: gt,
    })
}
