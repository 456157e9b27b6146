//! Generative motion priors over local hand pose.

pub mod checkpoint;
pub mod gmm;
pub mod latent;
pub mod mlp;
pub mod pca;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_prior, save_prior};
pub use gmm::GmmPrior;
pub use latent::{GaussianPosterior, LatentFieldConfig, LatentFieldPrior, POSE_DIM};
pub use pca::PcaPrior;

use crate::error::{Error, Result};
use crate::handmodel::PoseSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    None,
    Pca,
    Gmm,
    Latent,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::None => "none",
            PriorKind::Pca => "pca",
            PriorKind::Gmm => "gmm",
            PriorKind::Latent => "latent",
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PriorKind::None),
            "pca" => Ok(PriorKind::Pca),
            "gmm" => Ok(PriorKind::Gmm),
            "latent" => Ok(PriorKind::Latent),
            _ => Err(Error::Config(format!("unknown prior variant `{s}`"))),
        }
    }
}

/// Sliding windows over a pose sequence for the window-based priors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length: 16,
            stride: 8,
        }
    }
}

impl WindowSpec {
    pub fn dim(&self) -> usize {
        self.length * POSE_DIM
    }

    /// Window start frames covering `n` frames; the last window is shifted
    /// to end at `n` when the stride does not divide evenly.
    pub fn starts(&self, n: usize) -> Vec<usize> {
        if self.length == 0 || self.stride == 0 || n < self.length {
            return Vec::new();
        }
        let last = n - self.length;
        let mut out: Vec<usize> = (0..=last).step_by(self.stride).collect();
        if out.last() != Some(&last) {
            out.push(last);
        }
        out
    }

    /// Flattened windows of a `T × 90` 6D array.
    pub fn extract(&self, six: &Array2<f64>) -> Vec<Vec<f64>> {
        self.starts(six.nrows())
            .into_iter()
            .map(|s0| {
                six.slice(s![s0..s0 + self.length, ..])
                    .iter()
                    .copied()
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PriorModel {
    None,
    Pca(PcaPrior),
    Gmm(GmmPrior),
    Latent(LatentFieldPrior),
}

/// What a prior scores: a latent code against its anchor, or a pose window.
pub enum PriorInput<'a> {
    Latent {
        z: &'a [f64],
        anchor: &'a GaussianPosterior,
    },
    Window(&'a [f64]),
}

impl PriorModel {
    pub fn kind(&self) -> PriorKind {
        match self {
            PriorModel::None => PriorKind::None,
            PriorModel::Pca(_) => PriorKind::Pca,
            PriorModel::Gmm(_) => PriorKind::Gmm,
            PriorModel::Latent(_) => PriorKind::Latent,
        }
    }

    pub fn window(&self) -> Option<WindowSpec> {
        match self {
            PriorModel::Pca(p) => Some(p.window),
            PriorModel::Gmm(g) => Some(g.window),
            _ => None,
        }
    }

    pub fn nll(&self, input: PriorInput<'_>) -> Result<f64> {
        match (self, input) {
            (PriorModel::None, _) => Ok(0.0),
            (PriorModel::Latent(_), PriorInput::Latent { z, anchor }) => anchor.nll(z),
            (PriorModel::Pca(p), PriorInput::Window(x)) => Ok(p.nll_and_grad(x)?.0),
            (PriorModel::Gmm(g), PriorInput::Window(x)) => g.nll(x),
            (m, _) => Err(Error::Config(format!(
                "input kind does not match the {} prior",
                m.kind()
            ))),
        }
    }

    /// Summed window nll over a `T × 90` sequence of (orthonormal) 6D poses,
    /// with its gradient. Zero for the latent and none variants.
    pub fn sequence_nll_and_grad(&self, six: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let mut grad = Array2::zeros(six.raw_dim());
        let Some(w) = self.window() else {
            return Ok((0.0, grad));
        };
        let mut total = 0.0;
        for s0 in w.starts(six.nrows()) {
            let x: Vec<f64> = six
                .slice(s![s0..s0 + w.length, ..])
                .iter()
                .copied()
                .collect();
            let (v, g) = match self {
                PriorModel::Pca(p) => p.nll_and_grad(&x)?,
                PriorModel::Gmm(m) => m.nll_and_grad(&x)?,
                _ => unreachable!(),
            };
            total += v;
            let g = Array2::from_shape_vec((w.length, POSE_DIM), g).expect("window shape");
            let mut dst = grad.slice_mut(s![s0..s0 + w.length, ..]);
            dst += &g;
        }
        Ok((total, grad))
    }

    /// Length of each sampled sequence.
    pub fn sample_len(&self) -> usize {
        match self {
            PriorModel::None => 0,
            PriorModel::Pca(p) => p.window.length,
            PriorModel::Gmm(g) => g.window.length,
            PriorModel::Latent(l) => l.config.clip_len,
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<PoseSequence>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = match self {
                PriorModel::None => return Err(Error::ModelNotTrained),
                PriorModel::Latent(l) => {
                    let z: Vec<f64> = (0..l.latent_dim())
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    out.push(l.decode(&z, &l.frame_times(l.config.clip_len)?)?);
                    continue;
                }
                PriorModel::Pca(p) => {
                    let c: Vec<f64> = p
                        .variances
                        .iter()
                        .map(|v| {
                            v.sqrt() * {
                                let e: f64 = StandardNormal.sample(&mut rng);
                                e
                            }
                        })
                        .collect();
                    Array1::from(p.reconstruct(&c))
                }
                PriorModel::Gmm(g) => {
                    let k = WeightedIndex::new(&g.weights)
                        .map_err(|e| Error::Checkpoint(e.to_string()))?
                        .sample(&mut rng);
                    Array1::from_shape_fn(g.dim(), |d| {
                        g.means[(k, d)]
                            + g.vars[(k, d)].sqrt() * {
                                let e: f64 = StandardNormal.sample(&mut rng);
                                e
                            }
                    })
                }
            };
            let len = raw.len() / POSE_DIM;
            let raw = raw
                .into_shape_with_order((len, POSE_DIM))
                .expect("window shape");
            out.push(latent::raw_to_poses(&raw)?);
        }
        Ok(out)
    }
}
