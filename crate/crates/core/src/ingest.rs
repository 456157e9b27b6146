//! Detection and initialization inputs: file loading with joint-order
//! remapping, view-consistency confidences, keypoint blending and SLERP gap
//! filling of the initialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{slerp, Quaternion, RotationAA};
use crate::handmodel::{HandState, MotionSequence, NUM_ARTICULATED, NUM_JOINTS, NUM_SHAPE};
use crate::objective::{Observation, ObservedFrame};

pub const DEFAULT_VIEWS: usize = 11;
pub const DEFAULT_GAMMA: f64 = 4.0;
pub const DEFAULT_BBOX_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FALLBACK_CONF: f64 = 0.5;

pub type Keypoints = [[f64; 2]; NUM_JOINTS];

/// Detections of one image and of its augmented copies, all in original
/// image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedDetectionSet {
    pub original: Keypoints,
    pub views: Vec<Keypoints>,
}

/// Per-joint confidence from the spread of augmented-view detections around
/// the original: `α = 1 − min(σ, γ)/γ` with `σ² = mean ‖P_n − P_0‖²`.
pub fn confidence_from_views(set: &AugmentedDetectionSet, gamma: f64) -> Result<[f64; NUM_JOINTS]> {
    if set.views.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let n = set.views.len() as f64;
    let mut out = [0.0; NUM_JOINTS];
    for (j, a) in out.iter_mut().enumerate() {
        let p0 = set.original[j];
        let var = set
            .views
            .iter()
            .map(|v| (v[j][0] - p0[0]).powi(2) + (v[j][1] - p0[1]).powi(2))
            .sum::<f64>()
            / n;
        if !var.is_finite() {
            return Err(Error::NonFinite("augmented detections"));
        }
        *a = 1.0 - var.sqrt().min(gamma) / gamma;
    }
    Ok(out)
}

/// One detector record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame: usize,
    pub source: String,
    pub keypoints: Keypoints,
    pub conf: Option<[f64; NUM_JOINTS]>,
    pub bbox_conf: Option<f64>,
}

/// Validated detections indexed by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Detections {
    pub frames: Vec<Option<DetectionFrame>>,
    /// Some record lacked confidences and was given 1.0.
    pub conf_defaulted: bool,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DetectionFileRecord {
    frame: usize,
    #[serde(default)]
    source: String,
    keypoints: Vec<[f64; 2]>,
    #[serde(default)]
    conf: Option<Vec<f64>>,
    #[serde(default)]
    bbox_conf: Option<f64>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DetectionFile {
    joint_order: String,
    #[serde(default)]
    num_frames: Option<usize>,
    frames: Vec<DetectionFileRecord>,
}

/// Supported keypoint orderings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointOrder {
    /// Wrist, then thumb, index, middle, ring, pinky, proximal to tip.
    WristFirst,
    /// Wrist, index, middle, pinky, ring, thumb (three joints each), then
    /// the five tips thumb to pinky.
    Mano,
}

impl JointOrder {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "wrist_first" | "mediapipe" | "openpose" => Ok(JointOrder::WristFirst),
            "mano" => Ok(JointOrder::Mano),
            _ => Err(Error::UnknownJointOrder(tag.to_string())),
        }
    }

    /// For each wrist-first joint, its index in this ordering.
    pub fn keypoint_map(self) -> [usize; NUM_JOINTS] {
        match self {
            JointOrder::WristFirst => std::array::from_fn(|i| i),
            JointOrder::Mano => [
                0, 13, 14, 15, 16, 1, 2, 3, 17, 4, 5, 6, 18, 10, 11, 12, 19, 7, 8, 9, 20,
            ],
        }
    }

    /// For each articulated slot in wrist-first order, its slot here.
    pub fn pose_map(self) -> [usize; NUM_ARTICULATED] {
        match self {
            JointOrder::WristFirst => std::array::from_fn(|i| i),
            JointOrder::Mano => [12, 13, 14, 0, 1, 2, 3, 4, 5, 9, 10, 11, 6, 7, 8],
        }
    }
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn unit_interval(v: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(schema(format!("{what} {v} outside [0, 1]")));
    }
    Ok(())
}

pub fn parse_detections(text: &str) -> Result<Detections> {
    let file: DetectionFile =
        serde_json::from_str(text).map_err(|e| Error::parse("<detections>", e))?;
    let map = JointOrder::parse(&file.joint_order)?.keypoint_map();
    let last = file.frames.iter().map(|r| r.frame + 1).max().unwrap_or(0);
    let n = file.num_frames.unwrap_or(last);
    if last > n {
        return Err(schema(format!("frame {} beyond num_frames {n}", last - 1)));
    }
    let mut frames = vec![None; n];
    let mut conf_defaulted = false;
    for r in file.frames {
        if r.keypoints.len() != NUM_JOINTS {
            return Err(schema(format!(
                "frame {}: expected {NUM_JOINTS} keypoints, got {}",
                r.frame,
                r.keypoints.len()
            )));
        }
        if r.keypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(schema(format!("frame {}: non-finite keypoint", r.frame)));
        }
        let conf = match &r.conf {
            Some(c) if c.len() != NUM_JOINTS => {
                return Err(schema(format!(
                    "frame {}: expected {NUM_JOINTS} confidences, got {}",
                    r.frame,
                    c.len()
                )))
            }
            Some(c) => {
                for &v in c {
                    unit_interval(v, "confidence")?;
                }
                Some(std::array::from_fn(|j| c[map[j]]))
            }
            None => {
                conf_defaulted = true;
                None
            }
        };
        if let Some(b) = r.bbox_conf {
            unit_interval(b, "bbox confidence")?;
        }
        if frames[r.frame].is_some() {
            return Err(schema(format!("frame {} listed twice", r.frame)));
        }
        frames[r.frame] = Some(DetectionFrame {
            frame: r.frame,
            source: r.source,
            keypoints: std::array::from_fn(|j| r.keypoints[map[j]]),
            conf,
            bbox_conf: r.bbox_conf,
        });
    }
    if conf_defaulted {
        log::warn!("detections without confidences default to 1.0");
    }
    Ok(Detections {
        frames,
        conf_defaulted,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn with_path<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path, msg),
        e => e,
    })
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Detections> {
    let path = path.as_ref();
    with_path(parse_detections(&read(path)?), path)
}

/// Regressor output for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct InitFrame {
    pub state: HandState,
    pub bbox_conf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Initialization {
    pub fps: f64,
    pub shape: [f64; NUM_SHAPE],
    pub frames: Vec<InitFrame>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct InitFileFrame {
    global_orient: [f64; 3],
    transl: [f64; 3],
    pose: Vec<[f64; 3]>,
    #[serde(default)]
    bbox_conf: Option<f64>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct InitFile {
    joint_order: String,
    fps: f64,
    shape: Vec<f64>,
    frames: Vec<InitFileFrame>,
}

pub fn parse_initialization(text: &str) -> Result<Initialization> {
    let file: InitFile =
        serde_json::from_str(text).map_err(|e| Error::parse("<initialization>", e))?;
    let map = JointOrder::parse(&file.joint_order)?.pose_map();
    let shape: [f64; NUM_SHAPE] = file.shape.as_slice().try_into().map_err(|_| {
        schema(format!(
            "expected {NUM_SHAPE} shape coefficients, got {}",
            file.shape.len()
        ))
    })?;
    if !(file.fps > 0.0 && file.fps.is_finite()) {
        return Err(schema("fps must be positive"));
    }
    let frames = file
        .frames
        .into_iter()
        .enumerate()
        .map(|(t, f)| {
            if f.pose.len() != NUM_ARTICULATED {
                return Err(schema(format!(
                    "frame {t}: expected {NUM_ARTICULATED} joint rotations, got {}",
                    f.pose.len()
                )));
            }
            let bbox_conf = f.bbox_conf.unwrap_or(1.0);
            unit_interval(bbox_conf, "bbox confidence")?;
            let state = HandState {
                global_orient: RotationAA(f.global_orient),
                transl: f.transl,
                pose: map.iter().map(|&k| RotationAA(f.pose[k])).collect(),
                shape,
            };
            state.validate()?;
            Ok(InitFrame { state, bbox_conf })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Initialization {
        fps: file.fps,
        shape,
        frames,
    })
}

pub fn load_initialization(path: impl AsRef<Path>) -> Result<Initialization> {
    let path = path.as_ref();
    with_path(parse_initialization(&read(path)?), path)
}

/// Detection file text in wrist-first order.
pub fn detections_to_json(dets: &Detections) -> String {
    let file = DetectionFile {
        joint_order: "wrist_first".into(),
        num_frames: Some(dets.frames.len()),
        frames: dets
            .frames
            .iter()
            .flatten()
            .map(|d| DetectionFileRecord {
                frame: d.frame,
                source: d.source.clone(),
                keypoints: d.keypoints.to_vec(),
                conf: d.conf.map(|c| c.to_vec()),
                bbox_conf: d.bbox_conf,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("serializable")
}

/// Initialization file text in wrist-first order.
pub fn initialization_to_json(init: &Initialization) -> String {
    let file = InitFile {
        joint_order: "wrist_first".into(),
        fps: init.fps,
        shape: init.shape.to_vec(),
        frames: init
            .frames
            .iter()
            .map(|f| InitFileFrame {
                global_orient: f.state.global_orient.0,
                transl: f.state.transl,
                pose: f.state.pose.iter().map(|r| r.0).collect(),
                bbox_conf: Some(f.bbox_conf),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("serializable")
}

/// Per frame: the primary detection when present, else the fallback
/// keypoints with `fallback_conf`; frames with neither stay undetected.
pub fn blend_keypoints(
    primary: &[Option<DetectionFrame>],
    fallback: &[Option<Keypoints>],
    fallback_conf: f64,
) -> Observation {
    let n = primary.len().max(fallback.len());
    let frames = (0..n)
        .map(|t| {
            match (
                primary.get(t).cloned().flatten(),
                fallback.get(t).copied().flatten(),
            ) {
                (Some(d), _) => Some(ObservedFrame {
                    keypoints: d.keypoints,
                    conf: d.conf.unwrap_or([1.0; NUM_JOINTS]),
                    source: d.source,
                }),
                (None, Some(k)) => Some(ObservedFrame {
                    keypoints: k,
                    conf: [fallback_conf; NUM_JOINTS],
                    source: "fallback".into(),
                }),
                (None, None) => None,
            }
        })
        .collect();
    Observation { frames }
}

fn slerp_aa(a: &RotationAA, b: &RotationAA, s: f64) -> Result<RotationAA> {
    slerp(&Quaternion::from_aa(a)?, &Quaternion::from_aa(b)?, s)?.to_aa()
}

fn interpolate(a: &HandState, b: &HandState, s: f64) -> Result<HandState> {
    Ok(HandState {
        global_orient: slerp_aa(&a.global_orient, &b.global_orient, s)?,
        transl: std::array::from_fn(|k| a.transl[k] + s * (b.transl[k] - a.transl[k])),
        pose: a
            .pose
            .iter()
            .zip(&b.pose)
            .map(|(p, q)| slerp_aa(p, q, s))
            .collect::<Result<_>>()?,
        shape: a.shape,
    })
}

/// Replace frames whose bounding-box confidence is below `threshold` by
/// interpolation between the bracketing confident frames; leading and
/// trailing runs copy the nearest confident frame.
pub fn slerp_fill(init: &Initialization, threshold: f64) -> Result<MotionSequence> {
    let good: Vec<usize> = (0..init.frames.len())
        .filter(|&t| init.frames[t].bbox_conf >= threshold)
        .collect();
    if good.is_empty() {
        return Err(Error::NoConfidentFrames);
    }
    let mut out = Vec::with_capacity(init.frames.len());
    let mut next = 0;
    for t in 0..init.frames.len() {
        while next < good.len() && good[next] < t {
            next += 1;
        }
        let state = if good.get(next) == Some(&t) {
            init.frames[t].state.clone()
        } else {
            let after = good.get(next).copied();
            let before = next.checked_sub(1).map(|i| good[i]);
            match (before, after) {
                (Some(a), Some(b)) => {
                    let s = (t - a) as f64 / (b - a) as f64;
                    interpolate(&init.frames[a].state, &init.frames[b].state, s)?
                }
                (Some(a), None) => init.frames[a].state.clone(),
                (None, Some(b)) => init.frames[b].state.clone(),
                (None, None) => unreachable!("at least one confident frame"),
            }
        };
        out.push(state);
    }
    MotionSequence::new(out, init.fps, init.shape)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use proptest::prelude::*;

    use super::*;
    use crate::geometry::geodesic;

    fn set(views: Vec<Keypoints>) -> AugmentedDetectionSet {
        AugmentedDetectionSet {
            original: [[100.0, 200.0]; NUM_JOINTS],
            views,
        }
    }

    #[test]
    fn confidence_examples() {
        let s = set(vec![[[100.0, 200.0]; NUM_JOINTS]; DEFAULT_VIEWS]);
        assert_eq!(
            confidence_from_views(&s, DEFAULT_GAMMA).unwrap(),
            [1.0; NUM_JOINTS]
        );

        let mut views = vec![[[100.0, 200.0]; NUM_JOINTS]; 2];
        views[0][4] = [101.0, 200.0];
        views[1][4] = [100.0, 203.0];
        views[0][7] = [110.0, 200.0];
        let a = confidence_from_views(&set(views), 4.0).unwrap();
        assert!((a[4] - (1.0 - 5f64.sqrt() / 4.0)).abs() < 1e-12);
        assert_eq!(a[7], 0.0);
        assert_eq!(a[0], 1.0);
        assert!(matches!(
            confidence_from_views(&set(vec![]), 4.0),
            Err(Error::EmptySet)
        ));
    }

    proptest! {
        #[test]
        fn confidence_is_in_unit_interval_and_monotone(
            d in prop::collection::vec(0.0f64..10.0, 1..12),
            extra in 0.0f64..5.0,
        ) {
            let views: Vec<Keypoints> = d
                .iter()
                .map(|&x| [[100.0 + x, 200.0]; NUM_JOINTS])
                .collect();
            let a = confidence_from_views(&set(views.clone()), 4.0).unwrap();
            let wider: Vec<Keypoints> = d
                .iter()
                .map(|&x| [[100.0 + x + extra, 200.0]; NUM_JOINTS])
                .collect();
            let b = confidence_from_views(&set(wider), 4.0).unwrap();
            for j in 0..NUM_JOINTS {
                prop_assert!((0.0..=1.0).contains(&a[j]));
                prop_assert!(b[j] <= a[j] + 1e-12);
            }
        }
    }

    fn det(frame: usize, x: f64) -> DetectionFrame {
        DetectionFrame {
            frame,
            source: "mediapipe".into(),
            keypoints: [[x, x]; NUM_JOINTS],
            conf: Some([0.9; NUM_JOINTS]),
            bbox_conf: None,
        }
    }

    #[test]
    fn blending_selects_per_frame() {
        let n = 6;
        let fallback: Vec<Option<Keypoints>> =
            (0..n).map(|t| Some([[t as f64; 2]; NUM_JOINTS])).collect();
        let all: Vec<_> = (0..n).map(|t| Some(det(t, 50.0))).collect();
        let o = blend_keypoints(&all, &fallback, 0.5);
        assert!(o
            .frames
            .iter()
            .flatten()
            .all(|f| f.keypoints[0] == [50.0, 50.0] && f.conf[0] == 0.9));

        let none = vec![None; n];
        let o = blend_keypoints(&none, &fallback, 0.5);
        for (t, f) in o.frames.iter().enumerate() {
            let f = f.as_ref().unwrap();
            assert_eq!(f.keypoints[3], [t as f64; 2]);
            assert_eq!(f.conf, [0.5; NUM_JOINTS]);
        }

        let alt: Vec<_> = (0..n).map(|t| (t % 2 == 0).then(|| det(t, 50.0))).collect();
        let o = blend_keypoints(&alt, &fallback, 0.5);
        let tags: Vec<_> = o
            .frames
            .iter()
            .map(|f| f.as_ref().unwrap().source.as_str())
            .collect();
        assert_eq!(
            tags,
            [
                "mediapipe",
                "fallback",
                "mediapipe",
                "fallback",
                "mediapipe",
                "fallback"
            ]
        );

        let mut gaps = fallback.clone();
        gaps[1] = None;
        let o = blend_keypoints(&alt, &gaps, 0.5);
        assert_eq!(o.detected(), vec![0, 2, 3, 4, 5]);
    }

    fn init(orients: &[RotationAA], conf: &[f64]) -> Initialization {
        Initialization {
            fps: 30.0,
            shape: [0.0; NUM_SHAPE],
            frames: orients
                .iter()
                .zip(conf)
                .enumerate()
                .map(|(t, (r, &c))| InitFrame {
                    state: HandState {
                        global_orient: *r,
                        transl: [t as f64, 0.0, 1.0],
                        pose: vec![*r; NUM_ARTICULATED],
                        shape: [0.0; NUM_SHAPE],
                    },
                    bbox_conf: c,
                })
                .collect(),
        }
    }

    #[test]
    fn slerp_fill_examples() {
        let rs = [
            RotationAA([0.1, 0.2, 0.3]),
            RotationAA([0.0, -0.4, 0.2]),
            RotationAA([0.3, 0.0, 0.0]),
        ];
        let all = init(&rs, &[1.0; 3]);
        let m = slerp_fill(&all, 0.5).unwrap();
        for (a, b) in m.frames.iter().zip(&all.frames) {
            assert_eq!(a, &b.state);
        }

        let same = init(&[rs[0], rs[2], rs[0]], &[0.9, 0.1, 0.9]);
        let m = slerp_fill(&same, 0.5).unwrap();
        assert!(geodesic(&m.frames[1].global_orient, &rs[0]).unwrap() < 1e-9);
        assert!((m.frames[1].transl[0] - 1.0).abs() < 1e-12);

        let quarter = RotationAA([0.0, 0.0, FRAC_PI_2]);
        let half = init(&[RotationAA::IDENTITY, rs[1], quarter], &[1.0, 0.0, 1.0]);
        let m = slerp_fill(&half, 0.5).unwrap();
        let want = RotationAA([0.0, 0.0, FRAC_PI_2 / 2.0]);
        assert!(geodesic(&m.frames[1].global_orient, &want).unwrap() < 1e-9);
        assert!(geodesic(&m.frames[1].pose[7], &want).unwrap() < 1e-9);

        let edges = init(&rs, &[0.0, 1.0, 0.2]);
        let m = slerp_fill(&edges, 0.5).unwrap();
        assert_eq!(m.frames[0], edges.frames[1].state);
        assert_eq!(m.frames[2], edges.frames[1].state);

        assert!(matches!(
            slerp_fill(&init(&rs, &[0.1; 3]), 0.5),
            Err(Error::NoConfidentFrames)
        ));
    }

    #[test]
    fn slerp_fill_is_idempotent() {
        let rs: Vec<_> = (0..9)
            .map(|t| RotationAA([0.2 * t as f64, -0.1, 0.05 * t as f64]))
            .collect();
        let conf = [0.1, 1.0, 0.2, 0.3, 1.0, 0.0, 0.0, 0.9, 0.1];
        let a = init(&rs, &conf);
        let once = slerp_fill(&a, 0.5).unwrap();
        let again = Initialization {
            frames: once
                .frames
                .iter()
                .zip(&conf)
                .map(|(s, &c)| InitFrame {
                    state: s.clone(),
                    bbox_conf: c,
                })
                .collect(),
            ..a.clone()
        };
        let twice = slerp_fill(&again, 0.5).unwrap();
        assert_eq!(once, twice);
    }

    fn det_json(conf: bool, count: usize, order: &str) -> String {
        let kp: Vec<[f64; 2]> = (0..count).map(|j| [j as f64, 2.0 * j as f64]).collect();
        let mut rec = serde_json::json!({"frame": 1, "source": "mediapipe", "keypoints": kp, "bbox_conf": 0.8});
        if conf {
            rec["conf"] =
                serde_json::json!((0..count).map(|j| j as f64 / 20.0).collect::<Vec<_>>());
        }
        serde_json::json!({"joint_order": order, "num_frames": 3, "frames": [rec]}).to_string()
    }

    #[test]
    fn detection_files() {
        let d = parse_detections(&det_json(true, 21, "wrist_first")).unwrap();
        assert_eq!(d.frames.len(), 3);
        assert!(d.frames[0].is_none() && d.frames[2].is_none());
        assert!(!d.conf_defaulted);
        assert_eq!(d.frames[1].as_ref().unwrap().keypoints[5], [5.0, 10.0]);

        let d = parse_detections(&det_json(false, 21, "mediapipe")).unwrap();
        assert!(d.conf_defaulted);
        let o = blend_keypoints(&d.frames, &[], 0.5);
        assert_eq!(o.frames[1].as_ref().unwrap().conf, [1.0; NUM_JOINTS]);

        // MANO order puts the thumb after the other fingers.
        let d = parse_detections(&det_json(true, 21, "mano")).unwrap();
        let f = d.frames[1].as_ref().unwrap();
        assert_eq!(f.keypoints[1], [13.0, 26.0]);
        assert_eq!(f.keypoints[4], [16.0, 32.0]);
        assert_eq!(f.keypoints[20], [20.0, 40.0]);
        assert_eq!(f.conf.unwrap()[5], 0.05);

        assert!(matches!(
            parse_detections(&det_json(true, 20, "wrist_first")),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            parse_detections(&det_json(true, 21, "coco")),
            Err(Error::UnknownJointOrder(_))
        ));
        assert!(matches!(
            parse_detections("{not json"),
            Err(Error::Parse { .. })
        ));

        let d = parse_detections(&det_json(true, 21, "mano")).unwrap();
        assert_eq!(parse_detections(&detections_to_json(&d)).unwrap(), d);
    }

    #[test]
    fn joint_maps_are_permutations() {
        for order in [JointOrder::WristFirst, JointOrder::Mano] {
            let mut k = order.keypoint_map().to_vec();
            k.sort();
            assert_eq!(k, (0..NUM_JOINTS).collect::<Vec<_>>());
            let mut p = order.pose_map().to_vec();
            p.sort();
            assert_eq!(p, (0..NUM_ARTICULATED).collect::<Vec<_>>());
        }
    }

    #[test]
    fn initialization_round_trip() {
        let rs: Vec<_> = (0..4)
            .map(|t| RotationAA([0.1 * t as f64, 0.2, -0.3]))
            .collect();
        let a = init(&rs, &[1.0, 0.3, 0.7, 0.0]);
        let text = initialization_to_json(&a);
        assert_eq!(parse_initialization(&text).unwrap(), a);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["frames"][0]["pose"] = serde_json::json!(vec![[0.0, 0.0, 0.0]; 14]);
        assert!(matches!(
            parse_initialization(&v.to_string()),
            Err(Error::Schema(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.json");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(load_initialization(&path).unwrap(), a);
        assert!(matches!(
            load_initialization(dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }
}
