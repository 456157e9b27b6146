//! Motion and camera files.
//!
//! A motion file is JSON:
//! `{"fps": 30, "shape": [10], "handedness": "right", "frames": [{"global_orient": [3],
//! "transl": [3], "pose": [[3] × 15]}]}` with rotations in axis-angle, wrist-first
//! articulated order and translations in meters. `handedness` is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, RotationAA};
use crate::handmodel::{HandState, MotionSequence, NUM_ARTICULATED, NUM_SHAPE};
use crate::priortrain::{Handedness, RawSequence};

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct MotionFileFrame {
    global_orient: [f64; 3],
    transl: [f64; 3],
    pose: Vec<[f64; 3]>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct MotionFile {
    fps: f64,
    shape: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    handedness: Option<Handedness>,
    frames: Vec<MotionFileFrame>,
}

pub fn motion_to_json(m: &MotionSequence) -> String {
    let file = MotionFile {
        fps: m.fps,
        shape: m.shape.to_vec(),
        handedness: None,
        frames: m
            .frames
            .iter()
            .map(|f| MotionFileFrame {
                global_orient: f.global_orient.0,
                transl: f.transl,
                pose: f.pose.iter().map(|r| r.0).collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("serializable")
}

pub fn parse_motion(text: &str) -> Result<RawSequence> {
    let file: MotionFile = serde_json::from_str(text).map_err(|e| Error::parse("<motion>", e))?;
    let shape: [f64; NUM_SHAPE] = file.shape.as_slice().try_into().map_err(|_| {
        Error::Schema(format!(
            "expected {NUM_SHAPE} shape coefficients, got {}",
            file.shape.len()
        ))
    })?;
    let frames = file
        .frames
        .into_iter()
        .enumerate()
        .map(|(t, f)| {
            if f.pose.len() != NUM_ARTICULATED {
                return Err(Error::Schema(format!(
                    "frame {t}: expected {NUM_ARTICULATED} joint rotations, got {}",
                    f.pose.len()
                )));
            }
            Ok(HandState {
                global_orient: RotationAA(f.global_orient),
                transl: f.transl,
                pose: f.pose.into_iter().map(RotationAA).collect(),
                shape,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawSequence {
        motion: MotionSequence::new(frames, file.fps, shape)?,
        handedness: file.handedness.unwrap_or(Handedness::Right),
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn reparse<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path, msg),
        e => e,
    })
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<RawSequence> {
    let path = path.as_ref();
    reparse(parse_motion(&read(path)?), path)
}

pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let path = path.as_ref();
    let cam: Camera = serde_json::from_str(&read(path)?).map_err(|e| Error::parse(path, e))?;
    cam.intrinsics.validate()?;
    Ok(cam)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    write_text(
        path,
        &serde_json::to_string_pretty(value).expect("serializable"),
    )
}
