//! Two-stage fitting of a sequence: ingest, global trajectory and shape,
//! then local pose through the motion prior.

use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_nalgebra, project, Camera, Rotation, RotationAA};
use crate::handmodel::{
    fk_generic, HandState, MotionSequence, PoseFrame, SkeletonSpec, NUM_ARTICULATED, NUM_JOINTS,
    NUM_SHAPE,
};
use crate::ingest::{
    blend_keypoints, slerp_fill, Detections, Initialization, Keypoints, DEFAULT_BBOX_THRESHOLD,
    DEFAULT_FALLBACK_CONF,
};
use crate::objective::{
    flatten_poses, initial_variables, orientations, shape, translations, LossWeights, Observation,
    PoseSource, Problem, Stage, StageObjective, DEFAULT_GM_SCALE,
};
use crate::optim::{
    minimize, AdamConfig, BlockKind, BlockLrScale, LossTrace, MinimizeOptions, VariableSet,
};
use crate::prior::{PriorKind, PriorModel};

/// Longest segment fitted as one problem when the prior sets no limit.
pub const DEFAULT_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageSelect {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "both")]
    Both,
}

impl FromStr for StageSelect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(StageSelect::One),
            "2" => Ok(StageSelect::Two),
            "both" => Ok(StageSelect::Both),
            _ => Err(Error::Config(format!(
                "stage must be 1, 2 or both, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub stage: StageSelect,
    pub stage1: LossWeights,
    pub stage2: LossWeights,
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    /// Early stop when the loss changes by less than this, relatively, over
    /// `patience` iterations.
    pub rel_tol: f64,
    pub patience: usize,
    /// Per-block learning-rate multipliers. Translation steps of 0.01 × lr
    /// amount to optimizing translation in centimeters.
    pub block_lr: BlockLrScale,
    pub gm_scale: f64,
    pub bbox_threshold: f64,
    pub fallback_conf: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            stage: StageSelect::Both,
            stage1: LossWeights::stage1(),
            stage2: LossWeights::stage2(),
            iters_stage1: 300,
            iters_stage2: 400,
            rel_tol: 1e-6,
            patience: 20,
            block_lr: BlockLrScale {
                transl: 0.01,
                ..BlockLrScale::default()
            },
            gm_scale: DEFAULT_GM_SCALE,
            bbox_threshold: DEFAULT_BBOX_THRESHOLD,
            fallback_conf: DEFAULT_FALLBACK_CONF,
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        let b = self.block_lr;
        if [b.orient, b.transl, b.shape, b.latent, b.pose]
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::Config(
                "block_lr multipliers must be positive".into(),
            ));
        }
        if !(self.gm_scale > 0.0 && self.gm_scale.is_finite()) {
            return Err(Error::Config("gm_scale must be positive".into()));
        }
        for (v, what) in [
            (self.bbox_threshold, "bbox_threshold"),
            (self.fallback_conf, "fallback_conf"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{what} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    fn options(&self, iters: usize, w: &LossWeights) -> MinimizeOptions {
        MinimizeOptions {
            iters,
            adam: AdamConfig {
                lr: w.lr,
                ..AdamConfig::default()
            },
            rel_tol: self.rel_tol,
            patience: self.patience,
            block_lr: self.block_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub iterations: usize,
    pub converged_early: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_terms: Vec<(String, f64)>,
}

impl StageSummary {
    fn from_trace(t: &LossTrace) -> Self {
        StageSummary {
            iterations: t.totals.len(),
            converged_early: t.converged_early,
            initial_loss: t.totals.first().copied().unwrap_or(f64::NAN),
            final_loss: t.totals.last().copied().unwrap_or(f64::NAN),
            final_terms: t.terms.last().cloned().unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub start: usize,
    pub len: usize,
    pub stage1: Option<StageSummary>,
    pub stage2: Option<StageSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub prior: PriorKind,
    pub frames: usize,
    /// Frames without any keypoints; their poses come from the prior alone.
    pub masked_frames: Vec<usize>,
    /// Frames whose keypoints were projected from the initialization.
    pub fallback_frames: Vec<usize>,
    pub confidences_defaulted: bool,
    pub chunks: Vec<ChunkReport>,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub motion: MotionSequence,
    pub stage1: MotionSequence,
    /// Initialization after gap filling.
    pub initial: MotionSequence,
    pub observation: Observation,
    pub report: FitReport,
}

/// Split `n` frames into the fewest near-equal segments of at most `max`.
pub fn chunks(n: usize, max: usize) -> Vec<(usize, usize)> {
    let k = n.div_ceil(max.max(1)).max(1);
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push((start, len));
        start += len;
    }
    out
}

fn pose_frame(s: &HandState) -> Result<PoseFrame> {
    let mut out = [Matrix3::identity(); NUM_ARTICULATED];
    for (o, r) in out.iter_mut().zip(&s.pose) {
        *o = r.to_matrix()?;
    }
    Ok(out)
}

/// Projected initialization joints for confident frames.
fn fallback_keypoints(
    skeleton: &SkeletonSpec,
    camera: &Camera,
    init: &Initialization,
    threshold: f64,
) -> Result<Vec<Option<Keypoints>>> {
    init.frames
        .iter()
        .map(|f| {
            if f.bbox_conf < threshold {
                return Ok(None);
            }
            let s = &f.state;
            let orient = from_nalgebra(&s.global_orient.to_matrix()?);
            let pose: Vec<_> = pose_frame(s)?.iter().map(from_nalgebra).collect();
            let js = fk_generic(skeleton, &orient, &s.transl, &pose, &init.shape);
            let mut kp = [[0.0; 2]; NUM_JOINTS];
            for (k, p) in kp.iter_mut().zip(js) {
                match project(p, &camera.intrinsics, &camera.extrinsics) {
                    Ok(uv) => *k = uv,
                    Err(Error::BehindCamera(_)) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(kp))
        })
        .collect()
}

fn assemble(
    orient: &[Matrix3<f64>],
    transl: &[[f64; 3]],
    poses: &[PoseFrame],
    shape: [f64; NUM_SHAPE],
    fps: f64,
) -> Result<MotionSequence> {
    let frames = orient
        .iter()
        .zip(transl)
        .zip(poses)
        .map(|((r, t), p)| HandState {
            global_orient: RotationAA::from_matrix(r),
            transl: *t,
            pose: p.iter().map(RotationAA::from_matrix).collect(),
            shape,
        })
        .collect();
    MotionSequence::new(frames, fps, shape)
}

struct Segment {
    orient: Vec<Matrix3<f64>>,
    transl: Vec<[f64; 3]>,
    poses: Vec<PoseFrame>,
    shape: [f64; NUM_SHAPE],
}

impl Segment {
    fn from_vars(vars: &VariableSet, poses: Vec<PoseFrame>) -> Result<Self> {
        Ok(Segment {
            orient: orientations(vars)?,
            transl: translations(vars)?,
            poses,
            shape: shape(vars)?,
        })
    }
}

fn run_stage(
    obj: &StageObjective<'_>,
    vars: &mut VariableSet,
    opts: &MinimizeOptions,
) -> Result<StageSummary> {
    let label = match obj.stage {
        Stage::One => "stage 1",
        Stage::Two => "stage 2",
    };
    let trace = minimize(obj, vars, opts, |it, e| {
        if it % 50 == 0 {
            log::debug!("{label} iter {it}: loss {:.6}", e.total);
        }
    })?;
    let s = StageSummary::from_trace(&trace);
    log::info!(
        "{label}: {} iterations, loss {:.6} -> {:.6}",
        s.iterations,
        s.initial_loss,
        s.final_loss
    );
    Ok(s)
}

/// Fit one sequence. Sequences longer than the prior's clip length are cut
/// into independent segments.
pub fn fit(
    skeleton: &SkeletonSpec,
    camera: &Camera,
    detections: &Detections,
    init: &Initialization,
    prior: &PriorModel,
    settings: &FitSettings,
) -> Result<FitOutput> {
    settings.validate()?;
    camera.intrinsics.validate()?;
    let initial = slerp_fill(init, settings.bbox_threshold)?;
    let n = initial.len();
    if detections.frames.len() > n {
        return Err(Error::LengthMismatch(format!(
            "{} detection frames for a {n}-frame initialization",
            detections.frames.len()
        )));
    }
    let fallback = fallback_keypoints(skeleton, camera, init, settings.bbox_threshold)?;
    let obs = blend_keypoints(&detections.frames, &fallback, settings.fallback_conf);
    obs.validate()?;

    let init_orient: Vec<Matrix3<f64>> = initial
        .frames
        .iter()
        .map(|f| f.global_orient.to_matrix())
        .collect::<Result<_>>()?;
    let init_transl: Vec<[f64; 3]> = initial.frames.iter().map(|f| f.transl).collect();
    let init_poses: Vec<PoseFrame> = initial
        .frames
        .iter()
        .map(pose_frame)
        .collect::<Result<_>>()?;

    let max_len = match prior {
        PriorModel::Latent(l) => l.config.clip_len,
        _ => DEFAULT_CHUNK,
    };
    let run1 = settings.stage != StageSelect::Two;
    let run2 = settings.stage != StageSelect::One;

    let mut stage1_segments = Vec::new();
    let mut final_segments = Vec::new();
    let mut reports = Vec::new();
    for (start, len) in chunks(n, max_len) {
        let range = start..start + len;
        let problem = Problem {
            spec: skeleton.clone(),
            camera: *camera,
            obs: Observation {
                frames: obs.frames[range.clone()].to_vec(),
            },
            init_orient: init_orient[range.clone()].to_vec(),
            init_transl: init_transl[range.clone()].to_vec(),
            gm_scale: settings.gm_scale,
        };
        let poses = init_poses[range.clone()].to_vec();
        let mut vars = initial_variables(
            &problem.init_orient,
            &problem.init_transl,
            &initial.shape,
            None,
        );

        let mut report = ChunkReport {
            start,
            len,
            stage1: None,
            stage2: None,
        };
        if run1 {
            let obj = StageObjective {
                problem: &problem,
                stage: Stage::One,
                weights: settings.stage1,
                source: PoseSource::Fixed(poses.clone()),
            };
            let opts = settings.options(settings.iters_stage1, &settings.stage1);
            report.stage1 = Some(run_stage(&obj, &mut vars, &opts)?);
        }
        let stage1 = Segment::from_vars(&vars, poses.clone())?;

        let last = if run2 {
            let source = match prior {
                PriorModel::Latent(l) => {
                    let anchor = l.encode(&poses)?;
                    vars.insert(BlockKind::Latent, anchor.mu.clone());
                    PoseSource::Latent {
                        prior: l,
                        anchor,
                        times: l.frame_times(len)?,
                    }
                }
                other => {
                    vars.insert(BlockKind::Pose, flatten_poses(&poses));
                    PoseSource::Direct(other)
                }
            };
            let obj = StageObjective {
                problem: &problem,
                stage: Stage::Two,
                weights: settings.stage2,
                source,
            };
            let opts = settings.options(settings.iters_stage2, &settings.stage2);
            report.stage2 = Some(run_stage(&obj, &mut vars, &opts)?);
            Segment::from_vars(&vars, obj.poses(&vars)?)?
        } else {
            Segment::from_vars(&vars, poses)?
        };
        stage1_segments.push(stage1);
        final_segments.push(last);
        reports.push(report);
    }

    let join = |segs: &[Segment]| -> Result<MotionSequence> {
        let mut shape = [0.0; NUM_SHAPE];
        for s in segs {
            for (a, b) in shape.iter_mut().zip(&s.shape) {
                *a += b * s.orient.len() as f64 / n as f64;
            }
        }
        let orient: Vec<_> = segs.iter().flat_map(|s| s.orient.clone()).collect();
        let transl: Vec<_> = segs.iter().flat_map(|s| s.transl.clone()).collect();
        let poses: Vec<_> = segs.iter().flat_map(|s| s.poses.clone()).collect();
        assemble(&orient, &transl, &poses, shape, initial.fps)
    };
    let motion = join(&final_segments)?;
    let stage1 = join(&stage1_segments)?;
    let report = FitReport {
        prior: prior.kind(),
        frames: n,
        masked_frames: (0..n).filter(|&t| obs.frames[t].is_none()).collect(),
        fallback_frames: (0..n)
            .filter(|&t| {
                detections.frames.get(t).is_none_or(|d| d.is_none()) && obs.frames[t].is_some()
            })
            .collect(),
        confidences_defaulted: detections.conf_defaulted,
        chunks: reports,
    };
    Ok(FitOutput {
        motion,
        stage1,
        initial,
        observation: obs,
        report,
    })
}
