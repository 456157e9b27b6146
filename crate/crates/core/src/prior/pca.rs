use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::WindowSpec;
use crate::error::{Error, Result};

/// Linear-Gaussian model of flattened 6D pose windows.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaPrior {
    pub window: WindowSpec,
    pub mean: Array1<f64>,
    /// `dim × k`, orthonormal columns.
    pub basis: Array2<f64>,
    pub variances: Vec<f64>,
    /// Variance assigned to every direction outside the basis.
    pub residual_var: f64,
    pub explained_variance_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct PcaMeta {
    pub window: WindowSpec,
    pub residual_var: f64,
    pub explained_variance_ratio: f64,
}

impl PcaPrior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch(format!(
                "window of {} values, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let d = Array1::from(x.to_vec()) - &self.mean;
        Ok(self.basis.t().dot(&d).to_vec())
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        (&self.mean + &self.basis.dot(&Array1::from(coeffs.to_vec()))).to_vec()
    }

    /// Negative log density of one window and its gradient.
    pub fn nll_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let d = Array1::from(x.to_vec()) - &self.mean;
        let c = self.basis.t().dot(&d);
        let mut nll = 0.0;
        let mut scaled = Array1::zeros(self.k());
        for (i, (&ci, &var)) in c.iter().zip(&self.variances).enumerate() {
            nll += 0.5 * (ci * ci / var + var.ln() + ln2pi);
            scaled[i] = ci / var;
        }
        let mut grad = self.basis.dot(&scaled);
        let rest = self.dim() - self.k();
        if rest > 0 {
            let r = &d - &self.basis.dot(&c);
            let s2 = self.residual_var;
            nll += 0.5 * r.dot(&r) / s2 + 0.5 * rest as f64 * (s2.ln() + ln2pi);
            grad = grad + r / s2;
        }
        Ok((nll, grad.to_vec()))
    }

    pub(crate) fn meta(&self) -> PcaMeta {
        PcaMeta {
            window: self.window,
            residual_var: self.residual_var,
            explained_variance_ratio: self.explained_variance_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.basis.nrows() != self.dim() || self.variances.len() != k {
            return Err(Error::ShapeMismatch(
                "PCA basis and variances disagree".into(),
            ));
        }
        let gram = self.basis.t().dot(&self.basis);
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - want).abs() > 1e-7 {
                    return Err(Error::Checkpoint("PCA basis is not orthonormal".into()));
                }
            }
        }
        if self.variances.iter().any(|&v| v <= 0.0) || self.residual_var <= 0.0 {
            return Err(Error::Checkpoint("PCA variances must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> PcaPrior {
        // Plane spanned by e0 and (e1 + e2)/√2 in R⁴.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        PcaPrior {
            window: WindowSpec {
                length: 1,
                stride: 1,
            },
            mean: Array1::from(vec![1.0, 0.0, 0.0, 2.0]),
            basis: Array2::from_shape_vec((4, 2), vec![1.0, 0.0, 0.0, h, 0.0, h, 0.0, 0.0])
                .unwrap(),
            variances: vec![4.0, 0.25],
            residual_var: 0.01,
            explained_variance_ratio: 0.99,
        }
    }

    #[test]
    fn nll_closed_form() {
        let p = toy();
        p.validate().unwrap();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let x = [3.0, 0.5, 0.5, 2.1];
        let c = p.project(&x).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12);
        assert!((c[1] - 2.0f64.sqrt() * 0.5).abs() < 1e-12);
        let want = 0.5 * (4.0 / 4.0 + 0.5 / 0.25)
            + 0.5 * (4.0f64.ln() + 0.25f64.ln() + 2.0 * ln2pi)
            + 0.5 * 0.01 / 0.01
            + 0.5 * 2.0 * (0.01f64.ln() + ln2pi);
        let (nll, _) = p.nll_and_grad(&x).unwrap();
        assert!((nll - want).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = toy();
        let x = [0.3, -0.2, 0.7, 1.5];
        let (_, g) = p.nll_and_grad(&x).unwrap();
        for i in 0..4 {
            let mut a = x;
            let mut b = x;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (p.nll_and_grad(&a).unwrap().0 - p.nll_and_grad(&b).unwrap().0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-5, "{i}: {fd} vs {}", g[i]);
        }
        assert!(p.nll_and_grad(&[0.0; 3]).is_err());
    }
}
