//! Latent motion field: an MLP decoder `(t, z) → 15 × 6D` with a
//! sequence encoder producing a diagonal Gaussian over `z`.

use nalgebra::Matrix3;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::geometry::{angular_velocities, rot6d_to_mat, to_nalgebra, Rot6D, Rotation};
use crate::handmodel::{PoseFrame, PoseSequence, NUM_ARTICULATED};

pub const POSE_DIM: usize = NUM_ARTICULATED * 6;
const ANGVEL_DIM: usize = NUM_ARTICULATED * 3;
const LOGVAR_RANGE: (f64, f64) = (-12.0, 4.0);
const INIT_LOGVAR: f64 = -4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentFieldConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub frequencies: usize,
    pub clip_len: usize,
}

impl Default for LatentFieldConfig {
    fn default() -> Self {
        LatentFieldConfig {
            latent_dim: 128,
            hidden: 512,
            layers: 4,
            encoder_hidden: 256,
            encoder_layers: 2,
            frequencies: 8,
            clip_len: 128,
        }
    }
}

impl LatentFieldConfig {
    pub fn pe_dim(&self) -> usize {
        1 + 2 * self.frequencies
    }

    /// Width of the per-frame encoder input.
    pub fn encoder_input_dim(&self) -> usize {
        POSE_DIM * (1 + 2 * self.frequencies) + ANGVEL_DIM + self.pe_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0
            || self.hidden == 0
            || self.layers == 0
            || self.encoder_hidden == 0
            || self.encoder_layers == 0
            || self.clip_len < 2
        {
            return Err(Error::Config(format!(
                "invalid latent field config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over the latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(Error::LengthMismatch(format!(
                "posterior mu {} vs sigma {}",
                self.mu.len(),
                self.sigma.len()
            )));
        }
        if self.mu.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior"));
        }
        if self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("posterior sigma must be positive".into()));
        }
        Ok(())
    }

    /// `−log N(z; mu, diag(sigma²))`.
    pub fn nll(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.mu.len() {
            return Err(Error::LengthMismatch(format!(
                "latent {} vs posterior {}",
                z.len(),
                self.mu.len()
            )));
        }
        let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        Ok(z.iter()
            .zip(&self.mu)
            .zip(&self.sigma)
            .map(|((&z, &m), &s)| {
                let u = (z - m) / s;
                0.5 * u * u + s.ln() + ln_sqrt_2pi
            })
            .sum())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentFieldPrior {
    pub config: LatentFieldConfig,
    /// Per-frame features → hidden, tanh on every layer.
    pub encoder: Mlp,
    /// Pooled hidden → `[mu ‖ logvar]`.
    pub encoder_head: Mlp,
    /// `[PE(t) ‖ z]` → raw 6D offsets from identity.
    pub decoder: Mlp,
}

pub fn positional_encoding(t: f64, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(1 + 2 * frequencies);
    out.push(t);
    for k in 0..frequencies {
        let w = (1u64 << k) as f64 * std::f64::consts::PI * t;
        out.push(w.sin());
        out.push(w.cos());
    }
    out
}

/// Flattened 6D of every articulated joint, `T × 90`.
pub fn poses_to_6d(poses: &[PoseFrame]) -> Array2<f64> {
    let mut out = Array2::zeros((poses.len(), POSE_DIM));
    for (t, frame) in poses.iter().enumerate() {
        for (j, r) in frame.iter().enumerate() {
            let d = Rot6D::from_matrix(r).0;
            for k in 0..6 {
                out[(t, j * 6 + k)] = d[k];
            }
        }
    }
    out
}

/// Orthonormalize raw 6D rows into rotation matrices.
pub fn raw_to_poses(raw: &Array2<f64>) -> Result<PoseSequence> {
    let mut out = Vec::with_capacity(raw.nrows());
    for row in raw.rows() {
        let mut frame = [Matrix3::identity(); NUM_ARTICULATED];
        for (j, f) in frame.iter_mut().enumerate() {
            let v: Vec<f64> = (0..6).map(|k| row[j * 6 + k]).collect();
            *f = to_nalgebra(&rot6d_to_mat(&v));
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("decoded pose"));
            }
        }
        out.push(frame);
    }
    Ok(out)
}

/// Intermediate values kept for the backward pass of `decode`.
pub struct DecodeCache {
    cache: MlpCache,
    latent_dim: usize,
}

impl DecodeCache {
    /// Raw (pre-orthonormalization) 6D output, `T × 90`.
    pub fn raw(&self) -> &Array2<f64> {
        self.cache.output()
    }

    pub fn mlp_cache(&self) -> &MlpCache {
        &self.cache
    }
}

impl LatentFieldPrior {
    pub fn new(config: LatentFieldConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let pe = config.pe_dim();
        let mut enc = vec![config.encoder_input_dim()];
        enc.extend(std::iter::repeat_n(
            config.encoder_hidden,
            config.encoder_layers,
        ));
        let mut dec = vec![pe + config.latent_dim];
        dec.extend(std::iter::repeat_n(config.hidden, config.layers));
        dec.push(POSE_DIM);
        let encoder = Mlp::new(&enc, true, rng);
        let mut encoder_head =
            Mlp::new(&[config.encoder_hidden, 2 * config.latent_dim], false, rng);
        // Start with a narrow, input-independent posterior variance.
        encoder_head.layers[0]
            .w
            .slice_mut(s![.., config.latent_dim..])
            .fill(0.0);
        encoder_head.layers[0]
            .b
            .slice_mut(s![config.latent_dim..])
            .fill(INIT_LOGVAR);
        let mut decoder = Mlp::new(&dec, false, rng);
        decoder.layers.last_mut().expect("output layer").w *= 0.1;
        Ok(LatentFieldPrior {
            config,
            encoder,
            encoder_head,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Normalized times of the first `n` frames of a trained clip.
    pub fn frame_times(&self, n: usize) -> Result<Vec<f64>> {
        if n > self.config.clip_len {
            return Err(Error::LengthMismatch(format!(
                "{n} frames exceed the trained clip length {}",
                self.config.clip_len
            )));
        }
        let d = (self.config.clip_len - 1) as f64;
        Ok((0..n).map(|i| i as f64 / d).collect())
    }

    fn decoder_input(&self, z: &[f64], times: &[f64]) -> Result<Array2<f64>> {
        let d = self.latent_dim();
        if z.len() != d {
            return Err(Error::LengthMismatch(format!("latent {} vs {d}", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code"));
        }
        let pe = self.config.pe_dim();
        let mut x = Array2::zeros((times.len(), pe + d));
        for (i, &t) in times.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("time {t} outside [0, 1]")));
            }
            for (k, v) in positional_encoding(t, self.config.frequencies)
                .into_iter()
                .enumerate()
            {
                x[(i, k)] = v;
            }
            for k in 0..d {
                x[(i, pe + k)] = z[k];
            }
        }
        Ok(x)
    }

    fn add_identity(raw: &mut Array2<f64>) {
        for mut row in raw.rows_mut() {
            for j in 0..NUM_ARTICULATED {
                row[j * 6] += 1.0;
                row[j * 6 + 4] += 1.0;
            }
        }
    }

    /// Raw 6D output at each time, `T × 90`.
    pub fn decode_raw(&self, z: &[f64], times: &[f64]) -> Result<Array2<f64>> {
        let mut raw = self.decoder.predict(&self.decoder_input(z, times)?);
        Self::add_identity(&mut raw);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder output"));
        }
        Ok(raw)
    }

    pub fn decode(&self, z: &[f64], times: &[f64]) -> Result<PoseSequence> {
        raw_to_poses(&self.decode_raw(z, times)?)
    }

    /// Forward pass that keeps activations for [`Self::decode_backward`].
    pub fn decode_forward(&self, z: &[f64], times: &[f64]) -> Result<DecodeCache> {
        let mut cache = self.decoder.forward(&self.decoder_input(z, times)?);
        let out = cache.output_mut();
        Self::add_identity(out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder output"));
        }
        Ok(DecodeCache {
            cache,
            latent_dim: self.latent_dim(),
        })
    }

    /// Gradient with respect to `z` given `∂L/∂raw`.
    pub fn decode_backward(&self, cache: &DecodeCache, d_raw: &Array2<f64>) -> Vec<f64> {
        let dx = self.decoder.input_gradient(&cache.cache, d_raw);
        let pe = dx.ncols() - cache.latent_dim;
        dx.slice(s![.., pe..]).sum_axis(Axis(0)).to_vec()
    }

    /// Encoder input, a single row: the time mean of per-frame 6D pose,
    /// angular velocity per frame, PE(t), and the pose modulated by each
    /// sin/cos term of PE(t). The modulated block holds Fourier coefficients
    /// of the pose trajectory, which carry its phase.
    pub fn encoder_features(&self, poses: &[PoseFrame]) -> Result<Array2<f64>> {
        let n = poses.len();
        if n == 0 {
            return Err(Error::TooShort("cannot encode an empty sequence".into()));
        }
        let times = self.frame_times(n)?;
        let six = poses_to_6d(poses);
        let pe_off = POSE_DIM + ANGVEL_DIM;
        let mod_off = pe_off + self.config.pe_dim();
        let mut x = Array2::zeros((n, self.config.encoder_input_dim()));
        x.slice_mut(s![.., ..POSE_DIM]).assign(&six);
        for j in 0..NUM_ARTICULATED {
            let track: Vec<Matrix3<f64>> = poses.iter().map(|f| f[j]).collect();
            for (t, w) in angular_velocities(&track, 1.0).into_iter().enumerate() {
                for k in 0..3 {
                    x[(t, POSE_DIM + j * 3 + k)] = w[k];
                }
            }
        }
        for (t, &tt) in times.iter().enumerate() {
            let pe = positional_encoding(tt, self.config.frequencies);
            for (k, v) in pe.iter().enumerate() {
                x[(t, pe_off + k)] = *v;
            }
            for (k, v) in pe[1..].iter().enumerate() {
                for d in 0..POSE_DIM {
                    x[(t, mod_off + k * POSE_DIM + d)] = v * six[(t, d)];
                }
            }
        }
        let x = x
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input"));
        }
        Ok(x)
    }

    /// `[mu ‖ logvar]` from features, with logvar clamped.
    pub fn encode_features(&self, x: &Array2<f64>) -> Array1<f64> {
        let h = self.encoder.predict(x);
        let pooled = h
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let mut out = self.encoder_head.predict(&pooled).row(0).to_owned();
        let d = self.latent_dim();
        for v in out.slice_mut(s![d..]).iter_mut() {
            *v = v.clamp(LOGVAR_RANGE.0, LOGVAR_RANGE.1);
        }
        out
    }

    pub fn encode(&self, poses: &[PoseFrame]) -> Result<GaussianPosterior> {
        let out = self.encode_features(&self.encoder_features(poses)?);
        let d = self.latent_dim();
        let post = GaussianPosterior {
            mu: out.slice(s![..d]).to_vec(),
            sigma: out
                .slice(s![d..])
                .iter()
                .map(|lv| (0.5 * lv).exp())
                .collect(),
        };
        if post.mu.iter().chain(&post.sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output"));
        }
        Ok(post)
    }

    pub fn logvar_range() -> (f64, f64) {
        LOGVAR_RANGE
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::RotationAA;

    fn small() -> LatentFieldPrior {
        let cfg = LatentFieldConfig {
            latent_dim: 8,
            hidden: 32,
            layers: 2,
            encoder_hidden: 16,
            encoder_layers: 1,
            frequencies: 4,
            clip_len: 32,
        };
        LatentFieldPrior::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn wave(n: usize, phase: f64) -> PoseSequence {
        (0..n)
            .map(|t| {
                let a = 0.4 * (0.2 * t as f64 + phase).sin();
                let r = RotationAA([a, 0.1, -a]).to_matrix().unwrap();
                [r; NUM_ARTICULATED]
            })
            .collect()
    }

    #[test]
    fn decode_is_pointwise() {
        let p = small();
        let z: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let times = p.frame_times(32).unwrap();
        let full = p.decode_raw(&z, &times).unwrap();
        let sub: Vec<f64> = [3, 17, 5, 30].iter().map(|&i| times[i]).collect();
        let part = p.decode_raw(&z, &sub).unwrap();
        for (r, &i) in [3, 17, 5, 30].iter().enumerate() {
            for k in 0..POSE_DIM {
                assert!((part[(r, k)] - full[(i, k)]).abs() < 1e-12);
            }
        }
        let twice = p.decode_raw(&z, &[times[4], times[4]]).unwrap();
        assert_eq!(twice.row(0), twice.row(1));
    }

    #[test]
    fn decode_rejects_out_of_range_time() {
        let p = small();
        assert!(p.decode(&[0.0; 8], &[1.5]).is_err());
        assert!(matches!(
            p.decode(&[0.0; 7], &[0.5]),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            p.decode(&[f64::NAN; 8], &[0.5]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn decoded_frames_are_rotations() {
        let p = small();
        let poses = p.decode(&[0.3; 8], &p.frame_times(10).unwrap()).unwrap();
        for f in &poses {
            for r in f {
                assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
                assert!((r.determinant() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn encode_is_pure_and_valid() {
        let p = small();
        let a = p.encode(&wave(20, 0.0)).unwrap();
        let b = p.encode(&wave(20, 0.0)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let c = p.encode(&wave(20, 1.3)).unwrap();
        let diff: f64 = a.mu.iter().zip(&c.mu).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(diff > 0.0);
        assert!(p.encode(&wave(33, 0.0)).is_err());
        assert!(p.encode(&[]).is_err());
    }

    #[test]
    fn nll_at_mode_and_unit_offset() {
        let post = GaussianPosterior {
            mu: vec![0.5, -1.0, 2.0],
            sigma: vec![0.5, 1.0, 2.0],
        };
        let mode: f64 = post
            .sigma
            .iter()
            .map(|s| (s * (2.0 * std::f64::consts::PI).sqrt()).ln())
            .sum();
        assert!((post.nll(&post.mu).unwrap() - mode).abs() < 1e-12);
        let z = vec![0.5, 0.0, 2.0];
        assert!((post.nll(&z).unwrap() - (mode + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = small();
        let times = p.frame_times(6).unwrap();
        let z: Vec<f64> = (0..8).map(|i| 0.3 * (i as f64).cos()).collect();
        let w = Array2::from_shape_fn((6, POSE_DIM), |(i, j)| ((i * 7 + j) as f64 * 0.11).sin());
        let f = |z: &[f64]| (p.decode_raw(z, &times).unwrap() * &w).sum();
        let cache = p.decode_forward(&z, &times).unwrap();
        assert_eq!(cache.raw(), &p.decode_raw(&z, &times).unwrap());
        let g = p.decode_backward(&cache, &w);
        for k in 0..8 {
            let mut zp = z.clone();
            zp[k] += 1e-6;
            let mut zm = z.clone();
            zm[k] -= 1e-6;
            let fd = (f(&zp) - f(&zm)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
        }
    }
}
