//! Skeleton-only parametric hand: a linear shape basis over bone offsets and
//! forward kinematics producing 21 joints per frame.
//!
//! Joint order is wrist first, then each finger (thumb, index, middle, ring,
//! pinky) from proximal joint to tip. The wrist carries the global
//! orientation, the 15 intermediate joints carry local rotations and the five
//! tips inherit their parent's frame.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add3, from_nalgebra, mat_mul, mat_vec, Mat3, Rotation, RotationAA, Vec3};
use crate::optim::Real;

pub const NUM_JOINTS: usize = 21;
pub const NUM_ARTICULATED: usize = 15;
pub const NUM_TIPS: usize = 5;
pub const NUM_SHAPE: usize = 10;

/// Joint positions of one frame, meters.
pub type Joints = [[f64; 3]; NUM_JOINTS];
/// Local rotations of one frame in articulated-set order.
pub type PoseFrame = [Matrix3<f64>; NUM_ARTICULATED];
pub type PoseSequence = Vec<PoseFrame>;

const DEFAULT_SKELETON: &str = include_str!("../assets/default_skeleton.json");

#[derive(Debug, Deserialize, Serialize)]
struct SkeletonFile {
    #[serde(default)]
    joint_order: Option<String>,
    #[serde(default)]
    joint_names: Vec<String>,
    parents: Vec<i64>,
    rest_offsets: Vec<Vec<f64>>,
    shape_basis: Vec<Vec<Vec<f64>>>,
    articulated: Vec<usize>,
    tips: Vec<usize>,
}

/// Validated skeleton. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSpec {
    parents: [Option<usize>; NUM_JOINTS],
    rest_offsets: [[f64; 3]; NUM_JOINTS],
    shape_basis: [[[f64; NUM_SHAPE]; 3]; NUM_JOINTS],
    articulated: [usize; NUM_ARTICULATED],
    tips: [usize; NUM_TIPS],
    /// Topological order, root first.
    order: [usize; NUM_JOINTS],
    /// For each joint, its index into the articulated set.
    pose_slot: [Option<usize>; NUM_JOINTS],
    pub joint_names: Vec<String>,
}

impl SkeletonSpec {
    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn articulated(&self) -> &[usize; NUM_ARTICULATED] {
        &self.articulated
    }

    pub fn tips(&self) -> &[usize; NUM_TIPS] {
        &self.tips
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    /// Bone offset of joint `j` from its parent under shape `beta`.
    pub fn offset<T: Real>(&self, j: usize, beta: &[T]) -> Vec3<T> {
        let mut o = [T::zero(); 3];
        for (a, oa) in o.iter_mut().enumerate() {
            let mut v = T::cst(self.rest_offsets[j][a]);
            for (k, b) in beta.iter().enumerate().take(NUM_SHAPE) {
                let c = self.shape_basis[j][a][k];
                if c != 0.0 {
                    v += *b * c;
                }
            }
            *oa = v;
        }
        o
    }

    fn from_file(f: SkeletonFile) -> Result<Self> {
        let topo = |m: String| Error::InvalidTopology(m);
        if f.parents.len() != NUM_JOINTS {
            return Err(topo(format!(
                "expected {NUM_JOINTS} joints, got {}",
                f.parents.len()
            )));
        }
        if f.rest_offsets.len() != NUM_JOINTS || f.shape_basis.len() != NUM_JOINTS {
            return Err(topo(
                "rest_offsets/shape_basis must have one entry per joint".into(),
            ));
        }
        if f.articulated.len() != NUM_ARTICULATED || f.tips.len() != NUM_TIPS {
            return Err(topo(format!(
                "need {NUM_ARTICULATED} articulated joints and {NUM_TIPS} tips, got {} and {}",
                f.articulated.len(),
                f.tips.len()
            )));
        }

        let mut parents = [None; NUM_JOINTS];
        for (j, &p) in f.parents.iter().enumerate() {
            parents[j] = match p {
                -1 => None,
                p if p >= 0 && (p as usize) < NUM_JOINTS && p as usize != j => Some(p as usize),
                p => return Err(topo(format!("joint {j} has invalid parent {p}"))),
            };
        }
        let roots: Vec<usize> = (0..NUM_JOINTS).filter(|&j| parents[j].is_none()).collect();
        if roots != [0] {
            return Err(topo(format!(
                "expected a single root at the wrist (joint 0), got {roots:?}"
            )));
        }
        // every chain must reach the root within NUM_JOINTS steps
        let mut depth = [0usize; NUM_JOINTS];
        for (j, d) in depth.iter_mut().enumerate() {
            let mut cur = j;
            while let Some(p) = parents[cur] {
                *d += 1;
                if *d > NUM_JOINTS {
                    return Err(topo(format!("parent cycle through joint {j}")));
                }
                cur = p;
            }
        }
        let mut order: [usize; NUM_JOINTS] = std::array::from_fn(|i| i);
        order.sort_by_key(|&j| (depth[j], j));

        let mut rest_offsets = [[0.0; 3]; NUM_JOINTS];
        for (j, o) in f.rest_offsets.iter().enumerate() {
            if o.len() != 3 || o.iter().any(|x| !x.is_finite()) {
                return Err(topo(format!(
                    "rest offset of joint {j} must be 3 finite numbers"
                )));
            }
            rest_offsets[j].copy_from_slice(o);
        }
        let mut shape_basis = [[[0.0; NUM_SHAPE]; 3]; NUM_JOINTS];
        for (j, b) in f.shape_basis.iter().enumerate() {
            if b.len() != 3 || b.iter().any(|row| row.len() != NUM_SHAPE) {
                return Err(topo(format!(
                    "shape basis of joint {j} must be 3×{NUM_SHAPE}"
                )));
            }
            for a in 0..3 {
                if b[a].iter().any(|x| !x.is_finite()) {
                    return Err(topo(format!("non-finite shape basis at joint {j}")));
                }
                shape_basis[j][a].copy_from_slice(&b[a]);
            }
        }

        let mut role = [0u8; NUM_JOINTS];
        role[0] = 1;
        let mut articulated = [0; NUM_ARTICULATED];
        let mut pose_slot = [None; NUM_JOINTS];
        for (k, &j) in f.articulated.iter().enumerate() {
            if j >= NUM_JOINTS || role[j] != 0 {
                return Err(topo(format!(
                    "articulated joint {j} is out of range or repeated"
                )));
            }
            role[j] = 2;
            articulated[k] = j;
            pose_slot[j] = Some(k);
        }
        let mut tips = [0; NUM_TIPS];
        for (k, &j) in f.tips.iter().enumerate() {
            if j >= NUM_JOINTS || role[j] != 0 {
                return Err(topo(format!(
                    "tip {j} is out of range, the root, or also articulated"
                )));
            }
            if parents.iter().any(|p| *p == Some(j)) {
                return Err(topo(format!("tip {j} has children")));
            }
            role[j] = 3;
            tips[k] = j;
        }

        Ok(SkeletonSpec {
            parents,
            rest_offsets,
            shape_basis,
            articulated,
            tips,
            order,
            pose_slot,
            joint_names: f.joint_names,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: SkeletonFile = serde_json::from_str(s).map_err(|e| Error::parse("<skeleton>", e))?;
        Self::from_file(f)
    }
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        default_skeleton()
    }
}

/// The bundled synthetic skeleton.
pub fn default_skeleton() -> SkeletonSpec {
    SkeletonSpec::from_json_str(DEFAULT_SKELETON).expect("bundled skeleton is valid")
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<SkeletonSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: SkeletonFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    SkeletonSpec::from_file(f)
}

/// Per-frame hand parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub global_orient: RotationAA,
    pub transl: [f64; 3],
    /// Local rotations in articulated-set order.
    pub pose: Vec<RotationAA>,
    pub shape: [f64; NUM_SHAPE],
}

impl HandState {
    pub fn rest() -> Self {
        HandState {
            global_orient: RotationAA::IDENTITY,
            transl: [0.0; 3],
            pose: vec![RotationAA::IDENTITY; NUM_ARTICULATED],
            shape: [0.0; NUM_SHAPE],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pose.len() != NUM_ARTICULATED {
            return Err(Error::Schema(format!(
                "pose must have {NUM_ARTICULATED} rotations, got {}",
                self.pose.len()
            )));
        }
        let finite = self.global_orient.0.iter().all(|x| x.is_finite())
            && self.transl.iter().all(|x| x.is_finite())
            && self.shape.iter().all(|x| x.is_finite())
            && self.pose.iter().all(|r| r.0.iter().all(|x| x.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("hand state"))
        }
    }

    pub fn pose_matrices(&self) -> Result<Vec<Mat3<f64>>> {
        self.pose
            .iter()
            .map(|r| Ok(from_nalgebra(&r.to_matrix()?)))
            .collect()
    }
}

/// Time-indexed hand states sharing one shape vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<HandState>,
    pub fps: f64,
    pub shape: [f64; NUM_SHAPE],
}

impl MotionSequence {
    /// Builds a sequence, overwriting per-frame shapes with the shared one.
    pub fn new(mut frames: Vec<HandState>, fps: f64, shape: [f64; NUM_SHAPE]) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Schema(format!("fps must be positive, got {fps}")));
        }
        for f in &mut frames {
            f.shape = shape;
            f.validate()?;
        }
        Ok(MotionSequence { frames, fps, shape })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Joint positions for every frame.
    pub fn joints(&self, spec: &SkeletonSpec) -> Result<Vec<[[f64; 3]; NUM_JOINTS]>> {
        self.frames
            .iter()
            .map(|f| forward_kinematics(spec, f))
            .collect()
    }
}

/// Rest joint positions under `shape` with identity pose.
pub fn rest_joints(spec: &SkeletonSpec, shape: &[f64; NUM_SHAPE]) -> [[f64; 3]; NUM_JOINTS] {
    let mut out = [[0.0; 3]; NUM_JOINTS];
    for &j in &spec.order {
        let o = spec.offset(j, shape);
        out[j] = match spec.parents[j] {
            Some(p) => add3(out[p], o),
            None => o,
        };
    }
    out
}

/// Forward kinematics over any scalar type: world joint positions from a
/// global rotation, translation, 15 local rotations and shape.
pub fn fk_generic<T: Real>(
    spec: &SkeletonSpec,
    orient: &Mat3<T>,
    transl: &Vec3<T>,
    pose: &[Mat3<T>],
    shape: &[T],
) -> [Vec3<T>; NUM_JOINTS] {
    debug_assert_eq!(pose.len(), NUM_ARTICULATED);
    let mut pos = [[T::zero(); 3]; NUM_JOINTS];
    let mut frame: [Option<Mat3<T>>; NUM_JOINTS] = [None; NUM_JOINTS];
    for &j in &spec.order {
        let o = spec.offset(j, shape);
        match spec.parents[j] {
            None => {
                pos[j] = add3(mat_vec(orient, &o), *transl);
                frame[j] = Some(*orient);
            }
            Some(p) => {
                let g = frame[p].expect("parents precede children");
                pos[j] = add3(pos[p], mat_vec(&g, &o));
                frame[j] = Some(match spec.pose_slot[j] {
                    Some(k) => mat_mul(&g, &pose[k]),
                    None => g,
                });
            }
        }
    }
    pos
}

pub fn forward_kinematics(
    spec: &SkeletonSpec,
    state: &HandState,
) -> Result<[[f64; 3]; NUM_JOINTS]> {
    state.validate()?;
    let orient: Mat3<f64> = from_nalgebra(&state.global_orient.to_matrix()?);
    let pose = state.pose_matrices()?;
    Ok(fk_generic(
        spec,
        &orient,
        &state.transl,
        &pose,
        &state.shape,
    ))
}
