//! Fully connected network with tanh hidden layers, batched over rows.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// `layers[i]` maps `sizes[i] → sizes[i+1]`. Every layer but the last is
/// followed by tanh; the last is linear unless `tanh_output` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub tanh_output: bool,
}

pub struct MlpCache {
    /// Input to each layer, followed by the network output.
    acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("non-empty cache")
    }

    pub fn output_mut(&mut self) -> &mut Array2<f64> {
        self.acts.last_mut().expect("non-empty cache")
    }
}

#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            w: mlp
                .layers
                .iter()
                .map(|l| Array2::zeros(l.w.raw_dim()))
                .collect(),
            b: mlp
                .layers
                .iter()
                .map(|l| Array1::zeros(l.b.raw_dim()))
                .collect(),
        }
    }

    pub fn add(&mut self, o: &MlpGrads) {
        for (a, b) in self.w.iter_mut().zip(&o.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&o.b) {
            *a += b;
        }
    }
}

impl Mlp {
    /// Xavier-normal weights, zero biases.
    pub fn new(sizes: &[usize], tanh_output: bool, rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / (w[0] + w[1]) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("valid std");
                Dense {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| normal.sample(rng)),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Mlp {
            layers,
            tanh_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.ncols()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.tanh_output
    }

    pub fn forward(&self, x: &Array2<f64>) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = acts[i].dot(&l.w) + &l.b;
            if self.activates(i) {
                h.mapv_inplace(f64::tanh);
            }
            acts.push(h);
        }
        MlpCache { acts }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if self.activates(i) {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    /// Parameter gradients and input gradient given `d_out = ∂L/∂output`.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut d = d_out.clone();
        for i in (0..n).rev() {
            if self.activates(i) {
                let y = &cache.acts[i + 1];
                d.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y);
            }
            gw.push(cache.acts[i].t().dot(&d));
            gb.push(d.sum_axis(Axis(0)));
            d = d.dot(&self.layers[i].w.t());
        }
        gw.reverse();
        gb.reverse();
        (MlpGrads { w: gw, b: gb }, d)
    }

    /// Only the input gradient, skipping parameter gradients.
    pub fn input_gradient(&self, cache: &MlpCache, d_out: &Array2<f64>) -> Array2<f64> {
        let mut d = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            if self.activates(i) {
                let y = &cache.acts[i + 1];
                d.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y);
            }
            d = d.dot(&self.layers[i].w.t());
        }
        d
    }

    /// Parameter blocks in a fixed order: w0, b0, w1, b1, …
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.len(), l.b.len()])
            .collect()
    }
}

impl MlpGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}
