//! Desk-scale synthetic data: procedural motions, their detections and
//! perturbed initializations.

pub mod motion;
pub mod observe;

pub use motion::{curl_wave_motion, training_sequences, CurlWave};
pub use observe::{synthesize, InitNoise, MotionFamily, SyntheticData, SyntheticSpec};
