use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::WindowSpec;
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Diagonal-covariance Gaussian mixture over flattened 6D pose windows.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrior {
    pub window: WindowSpec,
    pub weights: Vec<f64>,
    /// `K × dim`
    pub means: Array2<f64>,
    /// `K × dim`
    pub vars: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct GmmMeta {
    pub window: WindowSpec,
    pub weights: Vec<f64>,
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmPrior {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `ln w_k + ln N(x; μ_k, Σ_k)` for every component.
    pub fn log_joint(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch(format!(
                "window of {} values, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        Ok((0..self.components())
            .map(|k| {
                let mut s = self.weights[k].ln();
                for (d, &xd) in x.iter().enumerate() {
                    let v = self.vars[(k, d)];
                    let r = xd - self.means[(k, d)];
                    s -= 0.5 * (r * r / v + v.ln() + ln2pi);
                }
                s
            })
            .collect())
    }

    pub fn nll(&self, x: &[f64]) -> Result<f64> {
        Ok(-log_sum_exp(&self.log_joint(x)?))
    }

    pub fn nll_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lj = self.log_joint(x)?;
        let lse = log_sum_exp(&lj);
        let mut grad = vec![0.0; x.len()];
        for (k, l) in lj.iter().enumerate() {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            for (d, g) in grad.iter_mut().enumerate() {
                *g += r * (x[d] - self.means[(k, d)]) / self.vars[(k, d)];
            }
        }
        Ok((-lse, grad))
    }

    pub(crate) fn meta(&self) -> GmmMeta {
        GmmMeta {
            window: self.window,
            weights: self.weights.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.components();
        if k == 0 || self.means.nrows() != k || self.vars.dim() != self.means.dim() {
            return Err(Error::ShapeMismatch("GMM parameter shapes disagree".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Checkpoint(format!("GMM weights sum to {total}")));
        }
        if self.vars.iter().any(|&v| v.is_nan() || v < VARIANCE_FLOOR) {
            return Err(Error::Checkpoint("GMM variance below floor".into()));
        }
        Ok(())
    }
}
