//! Loss terms of the two fitting stages, their weighted total and the
//! optimizer-facing objective over global trajectory, shape and pose
//! variables.

use nalgebra::Matrix3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    add3, from_nalgebra, geodesic_sq, mat_vec, rot6d_to_mat, Camera, Mat3, Rot6D, Rotation, Vec3,
};
use crate::handmodel::{
    fk_generic, MotionSequence, PoseFrame, SkeletonSpec, NUM_ARTICULATED, NUM_JOINTS, NUM_SHAPE,
};
use crate::optim::{BlockKind, Evaluation, Objective, Real, Tape, Var, VariableSet};
use crate::prior::{GaussianPosterior, LatentFieldPrior, PriorInput, PriorModel, POSE_DIM};

/// Robust-loss scale in pixels.
pub const DEFAULT_GM_SCALE: f64 = 100.0;
/// Camera-space depth below which projections are clamped and penalized.
pub const DEPTH_EPS: f64 = 1e-2;
const BEHIND_WEIGHT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub orient: f64,
    pub transl: f64,
    pub shape: f64,
    pub orient_smooth: f64,
    pub transl_smooth: f64,
    pub keypoints_2d: f64,
    pub motion_prior: f64,
    /// Local-pose smoothness used in place of a prior by the prior-free variant.
    pub pose_smooth: f64,
    pub lr: f64,
}

impl LossWeights {
    pub fn stage1() -> Self {
        LossWeights {
            orient: 3.0,
            transl: 1.0,
            shape: 3.0,
            orient_smooth: 1.0,
            transl_smooth: 5.0,
            keypoints_2d: 0.05,
            motion_prior: 0.0,
            pose_smooth: 0.0,
            lr: 0.05,
        }
    }

    pub fn stage2() -> Self {
        LossWeights {
            orient: 2.0,
            transl: 1.0,
            shape: 10.0,
            orient_smooth: 1.0,
            transl_smooth: 0.0,
            keypoints_2d: 0.05,
            motion_prior: 300.0,
            pose_smooth: 300.0,
            lr: 0.05,
        }
    }

    pub fn preset(stage: Stage) -> Self {
        match stage {
            Stage::One => Self::stage1(),
            Stage::Two => Self::stage2(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.orient,
            self.transl,
            self.shape,
            self.orient_smooth,
            self.transl_smooth,
            self.keypoints_2d,
            self.motion_prior,
            self.pose_smooth,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// 2D keypoints of one detected frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedFrame {
    pub keypoints: [[f64; 2]; NUM_JOINTS],
    pub conf: [f64; NUM_JOINTS],
    #[serde(default)]
    pub source: String,
}

/// Per-frame detections; `None` marks a frame outside the detected set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frames: Vec<Option<ObservedFrame>>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Indices of frames carrying detections.
    pub fn detected(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&t| self.frames[t].is_some())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for f in self.frames.iter().flatten() {
            if f.keypoints.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("keypoints"));
            }
            if f.conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Schema("confidences must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// `Σ_t geodesic(Φ_t, Φ̂_t)²`.
pub fn loss_orient<T: Real>(phi: &[Mat3<T>], phi_hat: &[Mat3<f64>]) -> Result<T> {
    same_len(phi.len(), phi_hat.len(), "orientations")?;
    let mut acc = T::zero();
    for (a, b) in phi.iter().zip(phi_hat) {
        let b: Mat3<T> = b.map(|r| r.map(T::cst));
        acc += geodesic_sq(a, &b);
    }
    Ok(acc)
}

/// `Σ_t ‖τ_t − τ̂_t‖²`.
pub fn loss_transl<T: Real>(tau: &[Vec3<T>], tau_hat: &[[f64; 3]]) -> Result<T> {
    same_len(tau.len(), tau_hat.len(), "translations")?;
    let mut acc = T::zero();
    for (a, b) in tau.iter().zip(tau_hat) {
        for k in 0..3 {
            acc += (a[k] - b[k]).square();
        }
    }
    Ok(acc)
}

/// `‖β‖²`.
pub fn loss_shape<T: Real>(beta: &[T]) -> T {
    let mut acc = T::zero();
    for &b in beta {
        acc += b.square();
    }
    acc
}

fn too_short(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooShort(format!(
            "smoothness needs at least 2 frames, got {n}"
        )));
    }
    Ok(())
}

/// `Σ_t geodesic(Φ_{t+1}, Φ_t)²`.
pub fn loss_smooth_orient<T: Real>(phi: &[Mat3<T>]) -> Result<T> {
    too_short(phi.len())?;
    let mut acc = T::zero();
    for w in phi.windows(2) {
        acc += geodesic_sq(&w[1], &w[0]);
    }
    Ok(acc)
}

/// `Σ_t ‖τ_{t+1} − τ_t‖²`.
pub fn loss_smooth_transl<T: Real>(tau: &[Vec3<T>]) -> Result<T> {
    too_short(tau.len())?;
    let mut acc = T::zero();
    for w in tau.windows(2) {
        for k in 0..3 {
            acc += (w[1][k] - w[0][k]).square();
        }
    }
    Ok(acc)
}

/// Squared geodesic steps of every local joint rotation.
pub fn loss_smooth_pose<T: Real>(poses: &[Vec<Mat3<T>>]) -> Result<T> {
    too_short(poses.len())?;
    let mut acc = T::zero();
    for w in poses.windows(2) {
        for (a, b) in w[1].iter().zip(&w[0]) {
            acc += geodesic_sq(a, b);
        }
    }
    Ok(acc)
}

/// Geman–McClure penalty of a squared residual norm.
pub fn geman_mcclure<T: Real>(r2: T, scale: f64) -> T {
    let s2 = scale * scale;
    r2 * s2 / (r2 + s2)
}

/// Confidence-weighted robust reprojection error summed over detected frames.
/// Points closer to the camera than [`DEPTH_EPS`] are projected at that depth
/// and charged a quadratic penalty pushing them forward.
pub fn loss_2d_joints<T: Real>(
    joints: &[[Vec3<T>; NUM_JOINTS]],
    obs: &Observation,
    camera: &Camera,
    gm_scale: f64,
) -> Result<T> {
    if obs.len() > joints.len() {
        return Err(Error::LengthMismatch(format!(
            "{} observed frames for {} posed frames",
            obs.len(),
            joints.len()
        )));
    }
    let r: Mat3<T> = camera.rotation()?.map(|row| row.map(T::cst));
    let tc = camera.extrinsics.translation.map(T::cst);
    let k = &camera.intrinsics;
    let mut acc = T::zero();
    for (js, f) in joints.iter().zip(&obs.frames) {
        let Some(f) = f else { continue };
        for (j, p) in js.iter().enumerate() {
            let pc = add3(mat_vec(&r, p), tc);
            let z = if pc[2].value() < DEPTH_EPS {
                acc += (T::cst(DEPTH_EPS) - pc[2]).square() * BEHIND_WEIGHT;
                T::cst(DEPTH_EPS)
            } else {
                pc[2]
            };
            let du = pc[0] / z * k.fx + (k.cx - f.keypoints[j][0]);
            let dv = pc[1] / z * k.fy + (k.cy - f.keypoints[j][1]);
            acc += geman_mcclure(du * du + dv * dv, gm_scale) * f.conf[j];
        }
    }
    Ok(acc)
}

/// Reprojection loss of a motion sequence.
pub fn loss_2d(
    motion: &MotionSequence,
    obs: &Observation,
    spec: &SkeletonSpec,
    camera: &Camera,
    gm_scale: f64,
) -> Result<f64> {
    camera.intrinsics.validate()?;
    let joints = motion.joints(spec)?;
    loss_2d_joints(&joints, obs, camera, gm_scale)
}

/// `−log N(z; mu, diag(sigma²))` over any scalar type.
pub fn latent_nll<T: Real>(z: &[T], anchor: &GaussianPosterior) -> Result<T> {
    same_len(z.len(), anchor.mu.len(), "latent code")?;
    let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut acc = T::zero();
    for ((&z, &m), &s) in z.iter().zip(&anchor.mu).zip(&anchor.sigma) {
        acc += ((z - m) / s).square() * 0.5 + (s.ln() + ln_sqrt_2pi);
    }
    Ok(acc)
}

/// Motion-prior term of any variant.
pub fn loss_mp(prior: &PriorModel, input: PriorInput<'_>) -> Result<f64> {
    if let PriorInput::Latent { anchor, .. } = &input {
        anchor.validate()?;
    }
    prior.nll(input)
}

/// Unweighted values of every loss term.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<T> {
    pub orient: T,
    pub transl: T,
    pub shape: T,
    pub orient_smooth: T,
    pub transl_smooth: T,
    pub keypoints_2d: T,
    pub motion_prior: T,
    pub pose_smooth: T,
}

impl<T: Real> LossTerms<T> {
    pub fn zero() -> Self {
        LossTerms {
            orient: T::zero(),
            transl: T::zero(),
            shape: T::zero(),
            orient_smooth: T::zero(),
            transl_smooth: T::zero(),
            keypoints_2d: T::zero(),
            motion_prior: T::zero(),
            pose_smooth: T::zero(),
        }
    }
}

/// Weighted stage total and its named breakdown. Stage 1 has no prior terms;
/// stage 2 drops translation smoothness.
pub fn total<T: Real>(
    stage: Stage,
    w: &LossWeights,
    terms: &LossTerms<T>,
) -> (T, Vec<(String, f64)>) {
    let mut parts = vec![
        ("orient", terms.orient * w.orient),
        ("transl", terms.transl * w.transl),
        ("shape", terms.shape * w.shape),
        ("orient_smooth", terms.orient_smooth * w.orient_smooth),
    ];
    match stage {
        Stage::One => {
            parts.push(("transl_smooth", terms.transl_smooth * w.transl_smooth));
            parts.push(("keypoints_2d", terms.keypoints_2d * w.keypoints_2d));
        }
        Stage::Two => {
            parts.push(("keypoints_2d", terms.keypoints_2d * w.keypoints_2d));
            parts.push(("motion_prior", terms.motion_prior * w.motion_prior));
            parts.push(("pose_smooth", terms.pose_smooth * w.pose_smooth));
        }
    }
    let mut acc = T::zero();
    for (_, v) in &parts {
        acc += *v;
    }
    let named = parts
        .into_iter()
        .map(|(n, v)| (n.to_string(), v.value()))
        .collect();
    (acc, named)
}

/// Fixed inputs of a fitting problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: SkeletonSpec,
    pub camera: Camera,
    pub obs: Observation,
    /// Initial global orientations the orientation term anchors to.
    pub init_orient: Vec<Matrix3<f64>>,
    pub init_transl: Vec<[f64; 3]>,
    pub gm_scale: f64,
}

impl Problem {
    pub fn len(&self) -> usize {
        self.init_orient.len()
    }

    pub fn is_empty(&self) -> bool {
        self.init_orient.is_empty()
    }

    fn init_orient_arrays(&self) -> Vec<Mat3<f64>> {
        self.init_orient.iter().map(from_nalgebra).collect()
    }
}

/// Where the local poses come from during a stage.
#[derive(Clone, Debug)]
pub enum PoseSource<'a> {
    /// Held constant.
    Fixed(Vec<PoseFrame>),
    /// Decoded from the latent block, scored against a frozen anchor.
    Latent {
        prior: &'a LatentFieldPrior,
        anchor: GaussianPosterior,
        times: Vec<f64>,
    },
    /// Optimized directly in the pose block and scored by a window prior, or
    /// by pose smoothness when the prior is [`PriorModel::None`].
    Direct(&'a PriorModel),
}

/// Initial variables for a sequence: 6D orientations, translations and shape,
/// plus a pose block when `poses` is given.
pub fn initial_variables(
    orient: &[Matrix3<f64>],
    transl: &[[f64; 3]],
    shape: &[f64; NUM_SHAPE],
    poses: Option<&[PoseFrame]>,
) -> VariableSet {
    let mut vars = VariableSet::new()
        .with(
            BlockKind::Orient,
            orient
                .iter()
                .flat_map(|m| Rot6D::from_matrix(m).0)
                .collect(),
        )
        .with(
            BlockKind::Transl,
            transl.iter().flatten().copied().collect(),
        )
        .with(BlockKind::Shape, shape.to_vec());
    if let Some(p) = poses {
        vars.insert(BlockKind::Pose, flatten_poses(p));
    }
    vars
}

pub fn flatten_poses(poses: &[PoseFrame]) -> Vec<f64> {
    poses
        .iter()
        .flat_map(|f| f.iter().flat_map(|m| Rot6D::from_matrix(m).0))
        .collect()
}

/// Orthonormalized orientations of an orientation block.
pub fn orientations(vars: &VariableSet) -> Result<Vec<Matrix3<f64>>> {
    block(vars, BlockKind::Orient)?
        .chunks(6)
        .map(|c| Rot6D([c[0], c[1], c[2], c[3], c[4], c[5]]).to_matrix())
        .collect()
}

pub fn translations(vars: &VariableSet) -> Result<Vec<[f64; 3]>> {
    Ok(block(vars, BlockKind::Transl)?
        .chunks(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}

pub fn shape(vars: &VariableSet) -> Result<[f64; NUM_SHAPE]> {
    block(vars, BlockKind::Shape)?
        .try_into()
        .map_err(|_| Error::ShapeMismatch("shape block".into()))
}

fn block(vars: &VariableSet, kind: BlockKind) -> Result<&[f64]> {
    vars.get(kind)
        .ok_or_else(|| Error::ShapeMismatch(format!("missing {} block", kind.name())))
}

/// Differentiable objective of one stage.
pub struct StageObjective<'a> {
    pub problem: &'a Problem,
    pub stage: Stage,
    pub weights: LossWeights,
    pub source: PoseSource<'a>,
}

impl StageObjective<'_> {
    /// Local poses implied by `vars`.
    pub fn poses(&self, vars: &VariableSet) -> Result<Vec<PoseFrame>> {
        match &self.source {
            PoseSource::Fixed(p) => Ok(p.clone()),
            PoseSource::Latent { prior, times, .. } => {
                prior.decode(block(vars, BlockKind::Latent)?, times)
            }
            PoseSource::Direct(_) => block(vars, BlockKind::Pose)?
                .chunks(POSE_DIM)
                .map(|f| {
                    let mut out = [Matrix3::identity(); NUM_ARTICULATED];
                    for (o, c) in out.iter_mut().zip(f.chunks(6)) {
                        *o = Rot6D([c[0], c[1], c[2], c[3], c[4], c[5]]).to_matrix()?;
                    }
                    Ok(out)
                })
                .collect(),
        }
    }

    fn check_shapes(&self, vars: &VariableSet) -> Result<usize> {
        let n = self.problem.len();
        same_len(self.problem.init_transl.len(), n, "initial translations")?;
        same_len(self.problem.obs.len(), n, "observations")?;
        too_short(n)?;
        same_len(
            block(vars, BlockKind::Orient)?.len(),
            6 * n,
            "orientation block",
        )?;
        same_len(
            block(vars, BlockKind::Transl)?.len(),
            3 * n,
            "translation block",
        )?;
        same_len(
            block(vars, BlockKind::Shape)?.len(),
            NUM_SHAPE,
            "shape block",
        )?;
        match &self.source {
            PoseSource::Fixed(p) => same_len(p.len(), n, "fixed poses")?,
            PoseSource::Latent { times, .. } => same_len(times.len(), n, "decode times")?,
            PoseSource::Direct(_) => same_len(
                block(vars, BlockKind::Pose)?.len(),
                POSE_DIM * n,
                "pose block",
            )?,
        }
        Ok(n)
    }
}

impl Objective for StageObjective<'_> {
    fn evaluate(&self, vars: &VariableSet) -> Result<Evaluation> {
        let n = self.check_shapes(vars)?;
        let p = self.problem;
        let tape = Tape::new();
        let leaves: Vec<Vec<Var<'_>>> =
            vars.blocks().iter().map(|b| tape.vars(&b.values)).collect();
        let leaf = |kind: BlockKind| &leaves[vars.index_of(kind).expect("checked")];

        let orient: Vec<Mat3<Var<'_>>> = leaf(BlockKind::Orient)
            .chunks(6)
            .map(rot6d_to_mat)
            .collect();
        let transl: Vec<Vec3<Var<'_>>> = leaf(BlockKind::Transl)
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let beta = leaf(BlockKind::Shape);

        let mut decoded = None;
        let mut raw_leaves = Vec::new();
        let pose_vars: Vec<Var<'_>> = match &self.source {
            PoseSource::Fixed(_) => Vec::new(),
            PoseSource::Latent { prior, times, .. } => {
                let cache = prior.decode_forward(block(vars, BlockKind::Latent)?, times)?;
                raw_leaves = tape.vars(cache.raw().as_slice().expect("contiguous"));
                decoded = Some(cache);
                raw_leaves.clone()
            }
            PoseSource::Direct(_) => leaf(BlockKind::Pose).clone(),
        };
        let poses: Vec<Vec<Mat3<Var<'_>>>> = match &self.source {
            PoseSource::Fixed(fixed) => fixed
                .iter()
                .map(|f| f.iter().map(from_nalgebra).collect())
                .collect(),
            _ => pose_vars
                .chunks(POSE_DIM)
                .map(|f| f.chunks(6).map(rot6d_to_mat).collect())
                .collect(),
        };

        let joints: Vec<[Vec3<Var<'_>>; NUM_JOINTS]> = (0..n)
            .map(|t| fk_generic(&p.spec, &orient[t], &transl[t], &poses[t], beta))
            .collect();

        let mut terms = LossTerms::zero();
        terms.orient = loss_orient(&orient, &p.init_orient_arrays())?;
        terms.transl = loss_transl(&transl, &p.init_transl)?;
        terms.shape = loss_shape(beta);
        terms.orient_smooth = loss_smooth_orient(&orient)?;
        if self.stage == Stage::One {
            terms.transl_smooth = loss_smooth_transl(&transl)?;
        }
        terms.keypoints_2d = loss_2d_joints(&joints, &p.obs, &p.camera, p.gm_scale)?;
        if self.stage == Stage::Two {
            match &self.source {
                PoseSource::Fixed(_) => {}
                PoseSource::Latent { anchor, .. } => {
                    terms.motion_prior = latent_nll(leaf(BlockKind::Latent), anchor)?;
                }
                PoseSource::Direct(PriorModel::None) => {
                    terms.pose_smooth = loss_smooth_pose(&poses)?;
                }
                PoseSource::Direct(prior) => {
                    terms.motion_prior = window_prior_node(&tape, prior, &poses)?;
                }
            }
        }

        let (out, named) = total(self.stage, &self.weights, &terms);
        let g = tape.gradient(out);
        let mut grads: Vec<Vec<f64>> = leaves.iter().map(|l| g.wrt_all(l)).collect();
        if let (Some(cache), PoseSource::Latent { prior, .. }) = (&decoded, &self.source) {
            let d_raw = Array2::from_shape_vec((n, POSE_DIM), g.wrt_all(&raw_leaves))
                .expect("decoded shape");
            let dz = prior.decode_backward(cache, &d_raw);
            let zi = vars.index_of(BlockKind::Latent).expect("checked");
            for (a, b) in grads[zi].iter_mut().zip(dz) {
                *a += b;
            }
        }
        Ok(Evaluation {
            total: out.val(),
            terms: named,
            grads,
        })
    }
}

/// Window-prior nll of the orthonormalized poses, injected as one tape node.
fn window_prior_node<'t>(
    tape: &'t Tape,
    prior: &PriorModel,
    poses: &[Vec<Mat3<Var<'t>>>],
) -> Result<Var<'t>> {
    if matches!(prior, PriorModel::Latent(_)) {
        return Err(Error::Config(
            "the latent prior scores latent codes, not pose blocks".into(),
        ));
    }
    let inputs: Vec<Var<'t>> = poses
        .iter()
        .flatten()
        .flat_map(|m| [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
        .collect();
    let six = Array2::from_shape_vec(
        (poses.len(), POSE_DIM),
        inputs.iter().map(|v| v.val()).collect(),
    )
    .expect("pose shape");
    let (value, grad) = prior.sequence_nll_and_grad(&six)?;
    Ok(tape.custom(&inputs, value, grad.as_slice().expect("contiguous")))
}
