//! Evaluation metrics: similarity alignment, per-joint position errors,
//! acceleration error, joint F-scores and sample diversity.
//!
//! Positions are taken in meters; errors are reported in millimeters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::geodesic_matrix;
use crate::handmodel::PoseSequence;

const MM: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        (self.scale * self.rotation * Vector3::from(*p) + self.translation).into()
    }

    pub fn apply_all(&self, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

fn centroid(pts: &[[f64; 3]]) -> Vector3<f64> {
    pts.iter()
        .fold(Vector3::zeros(), |a, p| a + Vector3::from(*p))
        / pts.len() as f64
}

/// Least-squares similarity transform taking `pred` onto `gt` (Umeyama).
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<SimilarityTransform> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted vs {} reference points",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 3 {
        return Err(Error::DegenerateConfiguration);
    }
    let mp = centroid(pred);
    let mg = centroid(gt);
    let mut cross = Matrix3::zeros();
    let mut gt_scatter = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let pc = Vector3::from(*p) - mp;
        let gc = Vector3::from(*g) - mg;
        cross += gc * pc.transpose();
        gt_scatter += gc * gc.transpose();
        var_p += pc.norm_squared();
    }
    // rank of the centered reference cloud
    let ev = gt_scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = ev.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 1e-18 || ev[1] <= 1e-12 * ev[0] || var_p <= 1e-18 {
        return Err(Error::DegenerateConfiguration);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.ok_or(Error::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = svd.singular_values.dot(&d) / var_p;
    let translation = mg - scale * rotation * mp;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn mean_dist(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (Vector3::from(*p) - Vector3::from(*q)).norm())
        .sum::<f64>()
        / a.len() as f64
}

fn check_lengths<F: AsRef<[[f64; 3]]>>(pred: &[F], gt: &[F]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            gt.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.as_ref().len() != g.as_ref().len() {
            return Err(Error::LengthMismatch(format!(
                "joint counts differ at frame {i}"
            )));
        }
    }
    Ok(())
}

/// Procrustes-aligned mean per-joint error of each frame, in mm.
pub fn pa_mpjpe_per_frame<F: AsRef<[[f64; 3]]>>(pred: &[F], gt: &[F]) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let t = procrustes_align(p.as_ref(), g.as_ref())?;
            Ok(MM * mean_dist(&t.apply_all(p.as_ref()), g.as_ref()))
        })
        .collect()
}

pub fn pa_mpjpe<F: AsRef<[[f64; 3]]>>(pred: &[F], gt: &[F]) -> Result<f64> {
    let per = pa_mpjpe_per_frame(pred, gt)?;
    Ok(mean(&per))
}

fn root_relative(pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let r = pts[0];
    pts.iter()
        .map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]])
        .collect()
}

/// Root (wrist) aligned mean per-joint error, in mm.
pub fn ra_mpjpe<F: AsRef<[[f64; 3]]>>(pred: &[F], gt: &[F]) -> Result<f64> {
    check_lengths(pred, gt)?;
    let per: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| MM * mean_dist(&root_relative(p.as_ref()), &root_relative(g.as_ref())))
        .collect();
    Ok(mean(&per))
}

/// Root-aligned acceleration error in mm/s², from second central differences.
pub fn ra_acc<F: AsRef<[[f64; 3]]>>(pred: &[F], gt: &[F], fps: f64) -> Result<f64> {
    check_lengths(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::TooShort(format!(
            "acceleration needs at least 3 frames, got {}",
            pred.len()
        )));
    }
    let p: Vec<Vec<[f64; 3]>> = pred.iter().map(|f| root_relative(f.as_ref())).collect();
    let g: Vec<Vec<[f64; 3]>> = gt.iter().map(|f| root_relative(f.as_ref())).collect();
    let fps2 = fps * fps;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..p.len() - 1 {
        for j in 0..p[t].len() {
            let mut d = Vector3::zeros();
            for a in 0..3 {
                let ap = p[t + 1][j][a] - 2.0 * p[t][j][a] + p[t - 1][j][a];
                let ag = g[t + 1][j][a] - 2.0 * g[t][j][a] + g[t - 1][j][a];
                d[a] = (ap - ag) * fps2;
            }
            total += d.norm();
            count += 1;
        }
    }
    Ok(MM * total / count as f64)
}

/// F-score at distance `threshold` (same unit as the points) for matched
/// point sets. With a one-to-one correspondence precision and recall are both
/// the fraction of points within the threshold, so the harmonic mean reduces
/// to that fraction.
pub fn f_score(pred: &[[f64; 3]], gt: &[[f64; 3]], threshold: f64) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| (Vector3::from(**p) - Vector3::from(**g)).norm() < threshold)
        .count();
    let precision = hits as f64 / pred.len() as f64;
    let recall = hits as f64 / gt.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean over frames of the F-score after per-frame Procrustes alignment;
/// `threshold_mm` is in millimeters, points in meters.
pub fn pa_f_score<F: AsRef<[[f64; 3]]>>(pred: &[F], gt: &[F], threshold_mm: f64) -> Result<f64> {
    check_lengths(pred, gt)?;
    let per = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let t = procrustes_align(p.as_ref(), g.as_ref())?;
            Ok(f_score(
                &t.apply_all(p.as_ref()),
                g.as_ref(),
                threshold_mm / MM,
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&per))
}

/// Mean geodesic distance between two pose sequences over frames and joints.
pub fn pose_distance(a: &PoseSequence, b: &PoseSequence) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "pose sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for (ra, rb) in fa.iter().zip(fb) {
            total += geodesic_matrix(ra, rb);
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Average pairwise distance (APD) over all sample pairs, in radians.
pub fn diversity_apd(samples: &[PoseSequence]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFew(2));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            total += pose_distance(&samples[i], &samples[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scalar metrics bundle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub pa_mpjpe_mm: f64,
    pub ra_mpjpe_mm: f64,
    pub ra_acc_mm_s2: Option<f64>,
    pub pa_f5: f64,
    pub pa_f15: f64,
    pub pa_mpjpe_per_frame: Vec<f64>,
}

/// Every metric for a predicted sequence of joints against ground truth.
pub fn summarize<F: AsRef<[[f64; 3]]>>(pred: &[F], gt: &[F], fps: f64) -> Result<MetricSummary> {
    let per = pa_mpjpe_per_frame(pred, gt)?;
    Ok(MetricSummary {
        pa_mpjpe_mm: mean(&per),
        ra_mpjpe_mm: ra_mpjpe(pred, gt)?,
        ra_acc_mm_s2: if pred.len() >= 3 {
            Some(ra_acc(pred, gt, fps)?)
        } else {
            None
        },
        pa_f5: pa_f_score(pred, gt, 5.0)?,
        pa_f15: pa_f_score(pred, gt, 15.0)?,
        pa_mpjpe_per_frame: per,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::handmodel::NUM_ARTICULATED;

    fn cloud(seed: u64, n: usize) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random::<f64>() * 0.1,
                    rng.random::<f64>() * 0.1,
                    0.5 + rng.random::<f64>() * 0.05,
                ]
            })
            .collect()
    }

    fn transform(pts: &[[f64; 3]], s: f64, r: &Matrix3<f64>, t: [f64; 3]) -> Vec<[f64; 3]> {
        pts.iter()
            .map(|p| (s * r * Vector3::from(*p) + Vector3::from(t)).into())
            .collect()
    }

    fn rot(aa: [f64; 3]) -> Matrix3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(aa)).into_inner()
    }

    #[test]
    fn identical_clouds_give_identity() {
        let g = cloud(1, 21);
        let t = procrustes_align(&g, &g).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(mean_dist(&t.apply_all(&g), &g) < 1e-12);
    }

    #[test]
    fn planted_similarity_is_recovered() {
        let g = cloud(2, 21);
        let r = rot([0.4, -1.1, 0.7]);
        let p = transform(&g, 2.0, &r, [0.3, -0.2, 1.0]);
        let t = procrustes_align(&p, &g).unwrap();
        assert!((t.scale - 0.5).abs() < 1e-9);
        assert!((t.rotation - r.transpose()).abs().max() < 1e-9);
        assert!(mean_dist(&t.apply_all(&p), &g) < 1e-9);
    }

    #[test]
    fn alignment_never_worse_than_identity() {
        let g = cloud(3, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<[f64; 3]> = g
            .iter()
            .map(|q| {
                let n: [f64; 3] =
                    std::array::from_fn(|_| 0.005 * rng.sample::<f64, _>(StandardNormal));
                [q[0] + n[0], q[1] + n[1], q[2] + n[2]]
            })
            .collect();
        let t = procrustes_align(&p, &g).unwrap();
        let sq = |a: &[[f64; 3]]| -> f64 {
            a.iter()
                .zip(&g)
                .map(|(x, y)| (Vector3::from(*x) - Vector3::from(*y)).norm_squared())
                .sum()
        };
        assert!(sq(&t.apply_all(&p)) <= sq(&p) + 1e-15);
    }

    #[test]
    fn collinear_reference_is_degenerate() {
        let g: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(
            procrustes_align(&g, &g),
            Err(Error::DegenerateConfiguration)
        ));
    }

    #[test]
    fn mpjpe_cases() {
        let g: Vec<Vec<[f64; 3]>> = (0..4).map(|i| cloud(10 + i, 21)).collect();
        assert!(pa_mpjpe(&g, &g).unwrap() < 1e-9);
        assert_eq!(ra_mpjpe(&g, &g).unwrap(), 0.0);

        let rigid: Vec<Vec<[f64; 3]>> = g
            .iter()
            .enumerate()
            .map(|(i, f)| transform(f, 1.0, &rot([0.1 * i as f64, 0.3, -0.2]), [0.05, 0.0, 0.1]))
            .collect();
        assert!(pa_mpjpe(&rigid, &g).unwrap() < 1e-7);
        assert!(ra_mpjpe(&rigid, &g).unwrap() > 1.0);

        let shifted: Vec<Vec<[f64; 3]>> = g
            .iter()
            .map(|f| transform(f, 1.0, &Matrix3::identity(), [0.2, -0.1, 0.3]))
            .collect();
        assert!(ra_mpjpe(&shifted, &g).unwrap() < 1e-9);
        assert!(pa_mpjpe(&shifted, &g).unwrap() < 1e-9);

        assert!(matches!(
            pa_mpjpe(&g[..3], &g),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn ra_acc_cases() {
        let g: Vec<Vec<[f64; 3]>> = (0..10).map(|i| cloud(20 + i, 21)).collect();
        assert_eq!(ra_acc(&g, &g, 30.0).unwrap(), 0.0);
        let drift: Vec<Vec<[f64; 3]>> = g
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.iter()
                    .enumerate()
                    .map(|(j, p)| {
                        let v = 0.001 * t as f64 * (j as f64 + 1.0);
                        [p[0] + v, p[1] - 2.0 * v, p[2] + 0.5 * v]
                    })
                    .collect()
            })
            .collect();
        assert!(ra_acc(&drift, &g, 30.0).unwrap() < 1e-6);
        assert!(matches!(
            ra_acc(&g[..2], &g[..2], 30.0),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn ra_acc_sinusoid_matches_brute_force() {
        let fps = 30.0;
        let (amp, omega) = (0.01, 5.0);
        let g: Vec<Vec<[f64; 3]>> = (0..40).map(|_| cloud(99, 21)).collect();
        let pred: Vec<Vec<[f64; 3]>> = g
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let mut f = f.clone();
                f[7][1] += amp * (omega * t as f64 / fps).sin();
                f
            })
            .collect();
        // brute force: only joint 7's y coordinate accelerates; the rest is zero
        let x = |t: usize| amp * (omega * t as f64 / fps).sin();
        let mut sum = 0.0;
        for t in 1..39 {
            sum += ((x(t + 1) - 2.0 * x(t) + x(t - 1)) * fps * fps).abs();
        }
        let expect = 1000.0 * sum / (38.0 * 21.0);
        assert!((ra_acc(&pred, &g, fps).unwrap() - expect).abs() < 1e-9);
        // discrete gain: |Δ² sin| = 4 sin²(ω/2fps) |sin|, close to ω²/fps²
        let gain = 4.0 * (omega / (2.0 * fps)).sin().powi(2) * fps * fps;
        assert!((gain - omega * omega).abs() / (omega * omega) < 0.01);
    }

    #[test]
    fn f_score_cases() {
        let g = cloud(5, 20);
        assert_eq!(f_score(&g, &g, 0.005), 1.0);
        let moved: Vec<[f64; 3]> = g.iter().map(|p| [p[0] + 0.01, p[1], p[2]]).collect();
        assert_eq!(f_score(&moved, &g, 0.005), 0.0);
        let half: Vec<[f64; 3]> = g
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i % 2 == 0 {
                    *p
                } else {
                    [p[0], p[1] + 0.01, p[2]]
                }
            })
            .collect();
        assert_eq!(f_score(&half, &g, 0.005), 0.5);
    }

    fn pose_seq(angle: f64) -> PoseSequence {
        vec![[rot([angle, 0.0, 0.0]); NUM_ARTICULATED]; 3]
    }

    #[test]
    fn diversity_cases() {
        let a = pose_seq(0.0);
        assert_eq!(
            diversity_apd(&[a.clone(), a.clone(), a.clone()]).unwrap(),
            0.0
        );
        let b = pose_seq(0.3);
        assert!((diversity_apd(&[a.clone(), b.clone()]).unwrap() - 0.3).abs() < 1e-12);
        let c = pose_seq(1.0);
        // pairwise: 0.3, 1.0, 0.7
        assert!((diversity_apd(&[a.clone(), b, c]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(diversity_apd(&[a]), Err(Error::TooFew(2))));
    }

    proptest! {
        #[test]
        fn pa_invariant_to_similarity(seed in 0u64..1000, s in 0.2..3.0f64, aa in proptest::array::uniform3(-2.0..2.0f64), t in proptest::array::uniform3(-1.0..1.0f64)) {
            let g = vec![cloud(seed, 21), cloud(seed + 1, 21)];
            let p: Vec<Vec<[f64; 3]>> = g.iter().map(|f| f.iter().map(|q| [q[0] + 0.003, q[1] * 1.01, q[2]]).collect()).collect();
            let base = pa_mpjpe(&p, &g).unwrap();
            let moved: Vec<Vec<[f64; 3]>> = p.iter().map(|f| transform(f, s, &rot(aa), t)).collect();
            prop_assert!((pa_mpjpe(&moved, &g).unwrap() - base).abs() < 1e-7);
        }

        #[test]
        fn ra_invariant_to_translation(seed in 0u64..1000, t in proptest::array::uniform3(-1.0..1.0f64)) {
            let g = vec![cloud(seed, 21)];
            let p = vec![cloud(seed + 7, 21)];
            let base = ra_mpjpe(&p, &g).unwrap();
            let pm = vec![transform(&p[0], 1.0, &Matrix3::identity(), t)];
            let gm = vec![transform(&g[0], 1.0, &Matrix3::identity(), [t[1], t[2], t[0]])];
            prop_assert!((ra_mpjpe(&pm, &g).unwrap() - base).abs() < 1e-9);
            prop_assert!((ra_mpjpe(&p, &gm).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn f_score_monotone_in_threshold(seed in 0u64..1000, a in 0.0..0.05f64, b in 0.0..0.05f64) {
            let g = cloud(seed, 21);
            let p = cloud(seed + 3, 21);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(f_score(&p, &g, lo) <= f_score(&p, &g, hi));
        }

        #[test]
        fn ra_acc_ignores_linear_in_time(seed in 0u64..1000, v in proptest::array::uniform3(-0.1..0.1f64), c in proptest::array::uniform3(-0.1..0.1f64)) {
            let g: Vec<Vec<[f64; 3]>> = (0..6).map(|i| cloud(seed + i, 21)).collect();
            let p: Vec<Vec<[f64; 3]>> = (0..6).map(|i| cloud(seed + 50 + i, 21)).collect();
            let base = ra_acc(&p, &g, 30.0).unwrap();
            let moved: Vec<Vec<[f64; 3]>> = p.iter().enumerate().map(|(t, f)| {
                f.iter().enumerate().map(|(j, q)| {
                    let k = t as f64 * (1.0 + j as f64 * 0.1);
                    [q[0] + c[0] + v[0] * k, q[1] + c[1] + v[1] * k, q[2] + c[2] + v[2] * k]
                }).collect()
            }).collect();
            prop_assert!((ra_acc(&moved, &g, 30.0).unwrap() - base).abs() < 1e-6 * base.max(1.0));
        }
    }
}
