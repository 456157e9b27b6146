use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a list of independently shaped parameter blocks.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    scale: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        Adam {
            config,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            scale: vec![1.0; block_sizes.len()],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Multiply the learning rate of one block.
    pub fn set_block_scale(&mut self, block: usize, scale: f64) {
        self.scale[block] = scale;
    }

    /// Advance the step counter. Call once per iteration before `apply`.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update one block in place using the current step's bias correction.
    pub fn apply(&mut self, block: usize, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let m = self
            .m
            .get_mut(block)
            .ok_or_else(|| Error::ShapeMismatch(format!("no Adam block {block}")))?;
        let v = &mut self.v[block];
        if params.len() != m.len() || grad.len() != m.len() {
            return Err(Error::ShapeMismatch(format!(
                "block {block}: params {}, grad {}, state {}",
                params.len(),
                grad.len(),
                m.len()
            )));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let lr = lr * self.scale[block];
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        let mut x = vec![1.0, -2.0, 0.5];
        adam.begin_step();
        adam.apply(0, &mut x, &[0.0; 3]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg, &[4]);
        let g = [3.0, -0.01, 250.0, -7.0];
        let mut x = vec![0.0; 4];
        adam.begin_step();
        adam.apply(0, &mut x, &g).unwrap();
        for (xi, gi) in x.iter().zip(&g) {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
            let expect = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((xi - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        adam.begin_step();
        let mut x = vec![0.0; 3];
        assert!(matches!(
            adam.apply(0, &mut x, &[0.0; 3]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let a = [1.5, -0.25, 3.0, 0.0, -2.0];
        let mut x = vec![0.0; 5];
        let mut adam = Adam::new(AdamConfig::default(), &[5]);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().zip(&a).map(|(x, a)| 2.0 * (x - a)).collect();
            adam.begin_step();
            adam.apply(0, &mut x, &g).unwrap();
        }
        let err: f64 = x
            .iter()
            .zip(&a)
            .map(|(x, a)| (x - a).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-3, "distance {err}");
    }
}
