//! PCA and GMM fits over flattened pose windows.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ProcessedClip;
use crate::error::{Error, Result};
use crate::prior::gmm::{log_sum_exp, VARIANCE_FLOOR};
use crate::prior::{GmmPrior, PcaPrior, WindowSpec};

/// Flattened windows of every clip, one per row.
pub fn window_matrix(clips: &[ProcessedClip], window: WindowSpec) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = clips
        .iter()
        .flat_map(|c| window.extract(&c.six_d()))
        .collect();
    let dim = window.dim();
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&Array1::from(r.clone()));
    }
    out
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn fit_pca(clips: &[ProcessedClip], k: usize, window: WindowSpec) -> Result<PcaPrior> {
    fit_pca_data(&window_matrix(clips, window), k, window)
}

/// PCA of the rows of `data`. Eigenvalues below a relative tolerance count
/// as rank deficiency: `k` shrinks with a warning.
pub fn fit_pca_data(data: &Array2<f64>, k: usize, window: WindowSpec) -> Result<PcaPrior> {
    let (n, dim) = data.dim();
    if n == 0 || k == 0 {
        return Err(Error::TooFew(k.max(1)));
    }
    if n < k.min(dim) {
        return Err(Error::TooFew(k));
    }
    let k = k.min(dim);
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let total_var = centered.mapv(|v| v * v).sum() / n as f64;

    // Eigenvectors of the covariance, from whichever Gram matrix is smaller.
    let (vals, vecs): (Vec<f64>, Array2<f64>) = if n < dim {
        let g = centered.dot(&centered.t()) / n as f64;
        let eig = SymmetricEigen::new(to_dmatrix(&g));
        let u = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, j)]);
        let v = centered.t().dot(&u);
        (eig.eigenvalues.iter().copied().collect(), v)
    } else {
        let c = centered.t().dot(&centered) / n as f64;
        let eig = SymmetricEigen::new(to_dmatrix(&c));
        let v = Array2::from_shape_fn((dim, dim), |(i, j)| eig.eigenvectors[(i, j)]);
        (eig.eigenvalues.iter().copied().collect(), v)
    };
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let tol = 1e-12 * vals.iter().copied().fold(0.0, f64::max).max(1e-300);
    let rank = order.iter().filter(|&&i| vals[i] > tol).count();
    if rank == 0 {
        return Err(Error::RankDeficient("all windows are identical".into()));
    }
    let k = if rank < k {
        log::warn!("PCA rank {rank} < requested {k}; shrinking");
        rank
    } else {
        k
    };
    let mut basis = Array2::zeros((dim, k));
    let mut variances = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut col = vecs.column(i).to_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let norm = col.dot(&col).sqrt();
        col /= if pivot < 0.0 { -norm } else { norm };
        basis.column_mut(c).assign(&col);
        variances.push(vals[i].max(VARIANCE_FLOOR));
    }
    let kept: f64 = variances.iter().sum();
    let residual_var = if dim > k {
        ((total_var - kept) / (dim - k) as f64).max(VARIANCE_FLOOR)
    } else {
        VARIANCE_FLOOR
    };
    Ok(PcaPrior {
        window,
        mean,
        basis,
        variances,
        residual_var,
        explained_variance_ratio: if total_var > 0.0 {
            (kept / total_var).min(1.0)
        } else {
            1.0
        },
    })
}

/// Result of EM: the mixture and the log-likelihood after every iteration.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmPrior,
    pub log_likelihood: Vec<f64>,
}

pub fn fit_gmm(
    clips: &[ProcessedClip],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    window: WindowSpec,
) -> Result<GmmFit> {
    fit_gmm_data(
        &window_matrix(clips, window),
        k,
        seed,
        max_iter,
        tol,
        window,
    )
}

fn kmeans_pp(data: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = data.nrows();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data, i, data, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        centers.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data, i, data, next));
        }
    }
    centers
}

fn sq_dist(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j))
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn m_step(data: &Array2<f64>, resp: &Array2<f64>) -> (Vec<f64>, Array2<f64>, Array2<f64>) {
    let (n, dim) = data.dim();
    let k = resp.ncols();
    let nk = resp.sum_axis(Axis(0));
    let mut weights = Vec::with_capacity(k);
    let mut means: Array2<f64> = Array2::zeros((k, dim));
    let mut vars: Array2<f64> = Array2::zeros((k, dim));
    for c in 0..k {
        let w = nk[c].max(1e-300);
        weights.push(nk[c] / n as f64);
        let r = resp.column(c);
        let mu = r.dot(data) / w;
        for i in 0..n {
            if r[i] == 0.0 {
                continue;
            }
            for d in 0..dim {
                let e = data[(i, d)] - mu[d];
                vars[(c, d)] += r[i] * e * e;
            }
        }
        for d in 0..dim {
            vars[(c, d)] = (vars[(c, d)] / w).max(VARIANCE_FLOOR);
        }
        means.row_mut(c).assign(&mu);
    }
    let s: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= s;
    }
    (weights, means, vars)
}

/// EM for a diagonal mixture, seeded by k-means++ hard assignments.
pub fn fit_gmm_data(
    data: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    window: WindowSpec,
) -> Result<GmmFit> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(Error::TooFew(k.max(1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(data, k, &mut rng);
    let mut resp = Array2::zeros((n, k));
    for i in 0..n {
        let best = (0..k)
            .min_by(|&a, &b| {
                sq_dist(data, i, data, centers[a]).total_cmp(&sq_dist(data, i, data, centers[b]))
            })
            .expect("k > 0");
        resp[(i, best)] = 1.0;
    }
    let (weights, means, vars) = m_step(data, &resp);
    let mut model = GmmPrior {
        window,
        weights,
        means,
        vars,
    };
    let mut trace: Vec<f64> = Vec::new();
    for it in 0..max_iter {
        // E step
        let mut ll = 0.0;
        for i in 0..n {
            let x = data.row(i).to_vec();
            let lj = model.log_joint(&x)?;
            let lse = log_sum_exp(&lj);
            ll += lse;
            for c in 0..k {
                resp[(i, c)] = (lj[c] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return Err(Error::EmDiverged(it));
        }
        if let Some(&prev) = trace.last() {
            if ll < prev - 1e-8 * prev.abs().max(1.0) {
                log::warn!("EM log-likelihood decreased at iteration {it}: {prev} → {ll}");
            }
            trace.push(ll);
            if ll - prev < tol {
                break;
            }
        } else {
            trace.push(ll);
        }
        let (weights, means, vars) = m_step(data, &resp);
        if weights
            .iter()
            .chain(means.iter())
            .chain(vars.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::EmDiverged(it));
        }
        model.weights = weights;
        model.means = means;
        model.vars = vars;
    }
    Ok(GmmFit {
        model,
        log_likelihood: trace,
    })
}
