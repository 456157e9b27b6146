//! Variational training of the latent motion field.

use nalgebra::{Rotation3, Vector3};
use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ProcessedClip;
use crate::error::{Error, Result};
use crate::geometry::{from_nalgebra, rot6d_to_mat, Mat3};
use crate::handmodel::{PoseFrame, NUM_ARTICULATED};
use crate::optim::adam::{Adam, AdamConfig};
use crate::optim::tape::{acos_sq_deriv, acos_sq_value};
use crate::prior::mlp::MlpGrads;
use crate::prior::{LatentFieldConfig, LatentFieldPrior};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentTrainConfig {
    pub model: LatentFieldConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final KL weight; ramps linearly from zero over `kl_anneal_epochs`.
    pub kl_weight: f64,
    pub kl_anneal_epochs: usize,
    /// Shortest random crop; crops start anywhere in the clip and are
    /// re-timed to start at t = 0.
    pub min_crop: usize,
    /// Learning rate of the last epoch relative to `lr`; decays
    /// geometrically per epoch.
    pub final_lr_ratio: f64,
    /// Std (rad, per axis-angle component) of rotation noise applied to the
    /// encoder input only; the decoder still reconstructs the clean clip.
    pub input_noise: f64,
    /// Weight of the latent cycle term: a prior sample z is decoded,
    /// perturbed with `input_noise` and encoded, and the encoder mean is
    /// pulled toward z. Trains the encoder only.
    pub cycle_weight: f64,
}

impl Default for LatentTrainConfig {
    fn default() -> Self {
        LatentTrainConfig {
            model: LatentFieldConfig::default(),
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            kl_weight: 1e-3,
            kl_anneal_epochs: 50,
            min_crop: 32,
            final_lr_ratio: 1.0,
            input_noise: 0.0,
            cycle_weight: 0.0,
        }
    }
}

impl LatentTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let rates_ok = [
            self.lr,
            self.kl_weight,
            self.final_lr_ratio,
            self.input_noise,
            self.cycle_weight,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !rates_ok || self.lr == 0.0 || self.final_lr_ratio == 0.0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "invalid latent training config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LatentTraining {
    pub model: LatentFieldPrior,
    /// Mean total loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean reconstruction term (squared geodesic, rad²) per epoch.
    pub epoch_recon: Vec<f64>,
}

/// Squared geodesic between the orthonormalized 6D output and a target,
/// with its gradient in the raw 6D values.
pub fn geodesic_sq_6d(raw: &[f64], target: &Mat3<f64>) -> (f64, [f64; 6]) {
    let m = rot6d_to_mat(raw);
    let col = |mat: &Mat3<f64>, c: usize| Vector3::new(mat[0][c], mat[1][c], mat[2][c]);
    let (b1, b2, b3) = (col(&m, 0), col(&m, 1), col(&m, 2));
    let (t1, t2, t3) = (col(target, 0), col(target, 1), col(target, 2));
    let c = (b1.dot(&t1) + b2.dot(&t2) + b3.dot(&t3) - 1.0) * 0.5;
    let dc = acos_sq_deriv(c) * 0.5;
    // Gradient with respect to each column of the rotation.
    let (g1, g2, g3) = (t1 * dc, t2 * dc, t3 * dc);
    let g1 = g1 + b2.cross(&g3);
    let g2 = g2 + g3.cross(&b1);

    let a1 = Vector3::new(raw[0], raw[1], raw[2]);
    let a2 = Vector3::new(raw[3], raw[4], raw[5]);
    let d = b1.dot(&a2);
    let u = a2 - b1 * d;
    let gu = (g2 - b2 * b2.dot(&g2)) / u.norm();
    let da2 = gu - b1 * b1.dot(&gu);
    let gb1 = g1 - gu * d - a2 * b1.dot(&gu);
    let da1 = (gb1 - b1 * b1.dot(&gb1)) / a1.norm();
    (
        acos_sq_value(c),
        [da1[0], da1[1], da1[2], da2[0], da2[1], da2[2]],
    )
}

struct Sample {
    poses: Vec<PoseFrame>,
    /// Encoder input; equals `poses` without input noise.
    noisy: Vec<PoseFrame>,
}

fn perturb(poses: &[PoseFrame], std: f64, rng: &mut impl Rng) -> Vec<PoseFrame> {
    if std == 0.0 {
        return poses.to_vec();
    }
    poses
        .iter()
        .map(|f| {
            f.map(|r| {
                let e = Vector3::from_fn(|_, _| {
                    let n: f64 = StandardNormal.sample(rng);
                    n * std
                });
                r * Rotation3::from_scaled_axis(e).into_inner()
            })
        })
        .collect()
}

/// Loss and parameter gradients for one sequence.
struct Step {
    loss: f64,
    recon: f64,
    dec: MlpGrads,
    enc: MlpGrads,
    head: MlpGrads,
}

/// Per-feature mean and std of the encoder input over the training clips.
struct InputNorm {
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl InputNorm {
    /// Statistics over prefixes of every clip at evenly spaced lengths in
    /// `[min_crop, clip_len]`, with the training input noise applied.
    fn fit(
        model: &LatentFieldPrior,
        data: &[Vec<PoseFrame>],
        min_crop: usize,
        noise: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let clip_len = model.config.clip_len;
        let lengths: Vec<usize> = (0..NORM_LENGTHS)
            .map(|k| min_crop + k * (clip_len - min_crop) / (NORM_LENGTHS - 1))
            .collect();
        let mut rows = Vec::with_capacity(data.len() * NORM_LENGTHS);
        for p in data {
            for &n in &lengths {
                rows.push(model.encoder_features(&perturb(&p[..n.min(p.len())], noise, rng))?);
            }
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let x = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|v| v.max(NORM_FLOOR));
        Ok(InputNorm { mean, std })
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    /// Fold the normalization into the first encoder layer so the saved
    /// model takes raw features.
    fn fold(&self, model: &mut LatentFieldPrior) {
        let l = &mut model.encoder.layers[0];
        for (mut row, s) in l.w.rows_mut().into_iter().zip(&self.std) {
            row /= *s;
        }
        l.b -= &self.mean.dot(&l.w);
    }
}

const NORM_FLOOR: f64 = 1e-3;
const NORM_LENGTHS: usize = 8;

fn sample_step(
    model: &LatentFieldPrior,
    norm: &InputNorm,
    sample: &Sample,
    kl_weight: f64,
    rng: &mut impl Rng,
) -> Result<Step> {
    let d = model.latent_dim();
    let n = sample.poses.len();
    let feats = norm.apply(&model.encoder_features(&sample.noisy)?);
    let enc_cache = model.encoder.forward(&feats);
    let pooled = enc_cache
        .output()
        .mean_axis(Axis(0))
        .expect("non-empty")
        .insert_axis(Axis(0));
    let head_cache = model.encoder_head.forward(&pooled);
    let head = head_cache.output().row(0).to_owned();
    let (lo, hi) = LatentFieldPrior::logvar_range();
    let mu = head.slice(s![..d]).to_owned();
    let lv_raw = head.slice(s![d..]).to_owned();
    let lv = lv_raw.mapv(|v| v.clamp(lo, hi));
    let sigma = lv.mapv(|v| (0.5 * v).exp());
    let eps: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let z = &mu + &(&sigma * &eps);

    let times = model.frame_times(n)?;
    let dec_cache = model.decode_forward(z.as_slice().expect("contiguous"), &times)?;
    let raw = dec_cache.raw();
    let denom = (n * NUM_ARTICULATED) as f64;
    let mut d_raw = Array2::zeros(raw.raw_dim());
    let mut recon = 0.0;
    for t in 0..n {
        for j in 0..NUM_ARTICULATED {
            let r: Vec<f64> = (0..6).map(|k| raw[(t, j * 6 + k)]).collect();
            let (v, g) = geodesic_sq_6d(&r, &from_nalgebra(&sample.poses[t][j]));
            recon += v;
            for k in 0..6 {
                d_raw[(t, j * 6 + k)] = g[k] / denom;
            }
        }
    }
    recon /= denom;
    let kl: f64 = (0..d)
        .map(|i| 0.5 * (mu[i] * mu[i] + sigma[i] * sigma[i] - 1.0 - lv[i]))
        .sum();
    let loss = recon + kl_weight * kl;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(0));
    }

    let (dec, dx) = model.decoder.backward(dec_cache.mlp_cache(), &d_raw);
    let pe = dx.ncols() - d;
    let dz = dx.slice(s![.., pe..]).sum_axis(Axis(0));
    let mut d_head = Array1::zeros(2 * d);
    for i in 0..d {
        d_head[i] = dz[i] + kl_weight * mu[i];
        let in_range = lv_raw[i] > lo && lv_raw[i] < hi;
        if in_range {
            // z depends on lv through σ = exp(lv/2); KL through σ² and lv.
            let via_z = dz[i] * eps[i] * 0.5 * sigma[i];
            let via_kl = kl_weight * 0.5 * (sigma[i] * sigma[i] - 1.0);
            d_head[d + i] = via_z + via_kl;
        }
    }
    let (head_g, d_pooled) = model
        .encoder_head
        .backward(&head_cache, &d_head.insert_axis(Axis(0)));
    let rows = enc_cache.output().nrows() as f64;
    let d_h = Array2::from_shape_fn(enc_cache.output().raw_dim(), |(_, c)| {
        d_pooled[(0, c)] / rows
    });
    let (enc_g, _) = model.encoder.backward(&enc_cache, &d_h);
    Ok(Step {
        loss,
        recon,
        dec,
        enc: enc_g,
        head: head_g,
    })
}

/// Latent cycle loss `w · mean((mu − z)²)` for one prior sample, with
/// encoder and head gradients.
fn cycle_step(
    model: &LatentFieldPrior,
    norm: &InputNorm,
    len: usize,
    noise: f64,
    weight: f64,
    rng: &mut impl Rng,
) -> Result<(f64, MlpGrads, MlpGrads)> {
    let d = model.latent_dim();
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let poses = model.decode(&z, &model.frame_times(len)?)?;
    let feats = norm.apply(&model.encoder_features(&perturb(&poses, noise, rng))?);
    let enc_cache = model.encoder.forward(&feats);
    let pooled = enc_cache
        .output()
        .mean_axis(Axis(0))
        .expect("non-empty")
        .insert_axis(Axis(0));
    let head_cache = model.encoder_head.forward(&pooled);
    let head = head_cache.output().row(0).to_owned();
    let mut loss = 0.0;
    let mut d_head = Array1::zeros(2 * d);
    for i in 0..d {
        let e = head[i] - z[i];
        loss += weight * e * e / d as f64;
        d_head[i] = 2.0 * weight * e / d as f64;
    }
    let (head_g, d_pooled) = model
        .encoder_head
        .backward(&head_cache, &d_head.insert_axis(Axis(0)));
    let rows = enc_cache.output().nrows() as f64;
    let d_h = Array2::from_shape_fn(enc_cache.output().raw_dim(), |(_, c)| {
        d_pooled[(0, c)] / rows
    });
    let (enc_g, _) = model.encoder.backward(&enc_cache, &d_h);
    Ok((loss, enc_g, head_g))
}

/// Fit encoder and decoder with Adam on random crops; deterministic per seed.
pub fn train_latent_field(
    clips: &[ProcessedClip],
    config: &LatentTrainConfig,
    seed: u64,
) -> Result<LatentTraining> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::TooFew(1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LatentFieldPrior::new(config.model.clone(), &mut rng)?;
    let clip_len = config.model.clip_len;
    let data: Vec<Vec<PoseFrame>> = clips
        .iter()
        .map(|c| {
            let p = c.poses()?;
            if p.len() < clip_len {
                return Err(Error::TooShort(format!(
                    "clip of {} frames, model expects {clip_len}",
                    p.len()
                )));
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;
    let min_crop = config.min_crop.clamp(2, clip_len);
    let norm = InputNorm::fit(&model, &data, min_crop, config.input_noise, &mut rng)?;

    let sizes: Vec<usize> = [&model.decoder, &model.encoder, &model.encoder_head]
        .iter()
        .flat_map(|m| m.param_sizes())
        .collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut epoch_recon = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = config.batch_size.max(1);
    let decay = config
        .final_lr_ratio
        .powf(1.0 / config.epochs.saturating_sub(1).max(1) as f64);
    for epoch in 0..config.epochs {
        adam.config.lr = config.lr * decay.powi(epoch as i32);
        let kl_weight = if config.kl_anneal_epochs == 0 {
            config.kl_weight
        } else {
            config.kl_weight * ((epoch + 1) as f64 / config.kl_anneal_epochs as f64).min(1.0)
        };
        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_recon) = (0.0, 0.0);
        for chunk in order.chunks(batch) {
            let mut dec = MlpGrads::zeros_like(&model.decoder);
            let mut enc = MlpGrads::zeros_like(&model.encoder);
            let mut head = MlpGrads::zeros_like(&model.encoder_head);
            for &ci in chunk {
                let len = rng.random_range(min_crop..=clip_len);
                let start = rng.random_range(0..=data[ci].len() - len);
                let poses = data[ci][start..start + len].to_vec();
                let noisy = perturb(&poses, config.input_noise, &mut rng);
                let sample = Sample { poses, noisy };
                let st =
                    sample_step(&model, &norm, &sample, kl_weight, &mut rng).map_err(
                        |e| match e {
                            Error::NonFiniteLoss(_) => Error::NonFiniteLoss(epoch),
                            e => e,
                        },
                    )?;
                sum_loss += st.loss;
                sum_recon += st.recon;
                dec.add(&st.dec);
                enc.add(&st.enc);
                head.add(&st.head);
                if config.cycle_weight > 0.0 {
                    let (_, e, h) = cycle_step(
                        &model,
                        &norm,
                        len,
                        config.input_noise,
                        config.cycle_weight,
                        &mut rng,
                    )?;
                    enc.add(&e);
                    head.add(&h);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            adam.begin_step();
            let mut block = 0;
            for (mlp, g) in [
                (&mut model.decoder, &dec),
                (&mut model.encoder, &enc),
                (&mut model.encoder_head, &head),
            ] {
                for (p, gs) in mlp.param_slices_mut().into_iter().zip(g.slices()) {
                    let gs: Vec<f64> = gs.iter().map(|v| v * scale).collect();
                    adam.apply(block, p, &gs)?;
                    block += 1;
                }
            }
        }
        let n = data.len() as f64;
        log::debug!(
            "epoch {epoch}: loss {:.6} recon {:.6}",
            sum_loss / n,
            sum_recon / n
        );
        epoch_loss.push(sum_loss / n);
        epoch_recon.push(sum_recon / n);
    }
    norm.fold(&mut model);
    Ok(LatentTraining {
        model,
        epoch_loss,
        epoch_recon,
    })
}

/// Mean geodesic angle (rad) between the decoded posterior mean and the input.
pub fn reconstruction_error(model: &LatentFieldPrior, poses: &[PoseFrame]) -> Result<f64> {
    let post = model.encode(poses)?;
    let out = model.decode(&post.mu, &model.frame_times(poses.len())?)?;
    let mut s = 0.0;
    for (a, b) in out.iter().zip(poses) {
        for j in 0..NUM_ARTICULATED {
            s += crate::geometry::geodesic_matrix(&a[j], &b[j]);
        }
    }
    Ok(s / (poses.len() * NUM_ARTICULATED) as f64)
}
