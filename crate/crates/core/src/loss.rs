//! Soft Jaccard index, the square-symmetry minimised loss, and a continuous
//! rotation search for analysing predictions.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{rotate_image, RasterImage, D4};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("image sides differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("both images are identically zero")]
    ZeroDenominator,
    #[error("rotation step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

pub type Result<T, E = LossError> = std::result::Result<T, E>;

/// Denominator floor used by the training path only.
pub const TRAIN_DENOM_FLOOR: f64 = 1e-12;

/// Loss gap below which two group elements count as tied when picking the
/// branch to differentiate.
pub const TIE_TOL: f64 = 1e-12;

fn check(pred: &RasterImage, truth: &RasterImage) -> Result<()> {
    if pred.side() != truth.side() {
        return Err(LossError::SizeMismatch(pred.side(), truth.side()));
    }
    Ok(())
}

/// Numerator Σpq and denominator Σ(p² + q² − pq), summed in pixel order.
fn terms(p: &[f64], q: &[f64]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        num += a * b;
        den += a * a + b * b - a * b;
    }
    (num, den)
}

/// Σpᵢqᵢ / Σ(pᵢ² + qᵢ² − pᵢqᵢ).
pub fn jaccard(pred: &RasterImage, truth: &RasterImage) -> Result<f64> {
    check(pred, truth)?;
    let (num, den) = terms(pred.data(), truth.data());
    if den == 0.0 {
        return Err(LossError::ZeroDenominator);
    }
    Ok(num / den)
}

/// min over g ∈ D4 of 1 − J(g(pred), truth), with the first minimiser in
/// [`D4::ALL`] order.
pub fn d4_loss(pred: &RasterImage, truth: &RasterImage) -> Result<(f64, D4)> {
    check(pred, truth)?;
    let mut best = (f64::INFINITY, D4::Identity);
    for g in D4::ALL {
        let l = 1.0 - jaccard(&g.apply(pred), truth)?;
        if l < best.0 {
            best = (l, g);
        }
    }
    Ok(best)
}

/// Training form of [`d4_loss`] on raw pixel slices: the loss, the chosen
/// branch, and the gradient with respect to `pred` accumulated into `grad`.
///
/// The gradient follows the minimising element; elements within
/// [`TIE_TOL`] of the minimum resolve to the earliest in group order. The
/// denominator is floored at [`TRAIN_DENOM_FLOOR`].
pub fn d4_loss_grad(pred: &[f64], truth: &[f64], side: usize, grad: &mut [f64]) -> (f64, D4) {
    debug_assert_eq!(pred.len(), side * side);
    debug_assert_eq!(truth.len(), side * side);
    let mut losses = [0.0; 8];
    let mut permuted = vec![0.0; pred.len()];
    let mut parts = [(0.0, 0.0); 8];
    for g in D4::ALL {
        let perm = permutation(g, side);
        for (dst, &k) in permuted.iter_mut().zip(perm.iter()) {
            *dst = pred[k];
        }
        let (num, den) = terms(&permuted, truth);
        let den = den.max(TRAIN_DENOM_FLOOR);
        parts[g.index()] = (num, den);
        losses[g.index()] = 1.0 - num / den;
    }
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let g = D4::ALL[losses.iter().position(|&l| l <= min + TIE_TOL).unwrap_or(0)];
    let (num, den) = parts[g.index()];
    let perm = permutation(g, side);
    for (k, &src) in perm.iter().enumerate() {
        let p = pred[src];
        let q = truth[k];
        // d(1 − N/D)/dp = −(q·D − N·(2p − q)) / D²
        grad[src] += -(q * den - num * (2.0 * p - q)) / (den * den);
    }
    (losses[g.index()], g)
}

/// Whether the two smallest group losses are closer than `margin`.
pub fn near_tie(pred: &[f64], truth: &[f64], side: usize, margin: f64) -> bool {
    let mut ls: Vec<f64> = D4::ALL
        .iter()
        .map(|&g| {
            let perm = permutation(g, side);
            let p: Vec<f64> = perm.iter().map(|&k| pred[k]).collect();
            let (num, den) = terms(&p, truth);
            1.0 - num / den.max(TRAIN_DENOM_FLOOR)
        })
        .collect();
    ls.sort_by(f64::total_cmp);
    ls[1] - ls[0] < margin
}

fn permutation(g: D4, side: usize) -> std::borrow::Cow<'static, [usize]> {
    if side == crate::geometry::GRID {
        std::borrow::Cow::Borrowed(g.grid_permutation())
    } else {
        std::borrow::Cow::Owned(g.permutation(side))
    }
}

/// Outcome of the continuous rotation search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFit {
    /// Counter-clockwise angle applied to the prediction, in [0, 2π).
    pub theta: f64,
    /// Whether the x-flip was applied before rotating.
    pub reflect: bool,
    pub loss: f64,
}

/// Grid search over θ = k·step in [0, 2π) and both reflections, comparing
/// `rotate_image(pred, θ, reflect)` against `truth`. Returns the first
/// global minimiser in (reflect = false, true) × ascending θ order.
pub fn rotation_search(pred: &RasterImage, truth: &RasterImage, step: f64) -> Result<RotationFit> {
    check(pred, truth)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(LossError::InvalidStep(step));
    }
    let steps = (2.0 * PI / step).ceil() as usize;
    let mut best = RotationFit {
        theta: 0.0,
        reflect: false,
        loss: f64::INFINITY,
    };
    for reflect in [false, true] {
        for k in 0..steps {
            let theta = k as f64 * step;
            if theta >= 2.0 * PI {
                break;
            }
            let rotated = rotate_image(pred, theta, reflect);
            let (num, den) = terms(rotated.data(), truth.data());
            // a rotation can push all mass off the grid; count it as a miss
            let loss = if den == 0.0 { 1.0 } else { 1.0 - num / den };
            if loss < best.loss {
                best = RotationFit {
                    theta,
                    reflect,
                    loss,
                };
            }
        }
    }
    Ok(best)
}

/// One row of the rotation-search batch report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationRow {
    pub sample_id: u64,
    pub d4_loss: f64,
    pub fit: RotationFit,
}

/// CSV with header `sample_id,d4_loss,best_theta_deg,reflect,best_loss`.
pub fn rotation_report(rows: &[RotationRow]) -> String {
    let mut s = String::from("sample_id,d4_loss,best_theta_deg,reflect,best_loss\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{},{:.16e}",
            r.sample_id,
            r.d4_loss,
            r.fit.theta.to_degrees(),
            u8::from(r.fit.reflect),
            r.fit.loss
        );
    }
    s
}

/// Fraction of rows whose best rotation beats their square-symmetry loss
/// by more than `margin`.
pub fn rescued_fraction(rows: &[RotationRow], margin: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows
        .iter()
        .filter(|r| r.fit.loss + margin < r.d4_loss)
        .count();
    n as f64 / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{d4_transform, rasterize, Polygon, GRID};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_binary(side: usize, rng: &mut impl Rng) -> RasterImage {
        let data = (0..side * side)
            .map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
            .collect();
        RasterImage::from_vec(side, data).unwrap()
    }

    fn random_soft(side: usize, rng: &mut impl Rng) -> RasterImage {
        let data = (0..side * side).map(|_| rng.random::<f64>()).collect();
        RasterImage::from_vec(side, data).unwrap()
    }

    fn blob() -> RasterImage {
        let p = Polygon::from_xy(&[
            (-0.6, -1.2),
            (1.4, -0.3),
            (0.9, 1.1),
            (-0.8, 0.7),
            (-1.3, -0.1),
        ])
        .unwrap();
        rasterize(&p).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let t = blob();
        assert_eq!(jaccard(&t, &t).unwrap(), 1.0);
        let mut other = RasterImage::zeros(GRID);
        for (i, &v) in t.data().iter().enumerate() {
            if v == 0.0 {
                other.set(i % GRID, i / GRID, 1.0);
            }
        }
        assert_eq!(jaccard(&other, &t).unwrap(), 0.0);
    }

    #[test]
    fn half_intensity_gives_two_thirds() {
        let t = blob();
        let half = RasterImage::from_vec(GRID, t.data().iter().map(|v| v * 0.5).collect()).unwrap();
        assert!((jaccard(&half, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_over_zero_is_an_error() {
        let z = RasterImage::zeros(5);
        assert_eq!(jaccard(&z, &z), Err(LossError::ZeroDenominator));
        assert!(matches!(
            jaccard(&RasterImage::zeros(4), &z),
            Err(LossError::SizeMismatch(4, 5))
        ));
    }

    #[test]
    fn symmetric_and_bounded_on_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_binary(7, &mut rng);
            let b = random_binary(7, &mut rng);
            let j = jaccard(&a, &b).unwrap();
            assert_eq!(j, jaccard(&b, &a).unwrap());
            assert!((0.0..=1.0).contains(&j));
            assert_eq!(j == 1.0, a == b);
        }
    }

    #[test]
    fn rotated_truth_is_recovered() {
        let t = blob();
        let (l, g) = d4_loss(&D4::Rot90.apply(&t), &t).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, D4::Rot270);
        assert_eq!(d4_loss(&t, &t).unwrap(), (0.0, D4::Identity));
    }

    #[test]
    fn ties_resolve_to_identity_for_symmetric_truth() {
        let sq = Polygon::from_xy(&[(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let t = rasterize(&sq).unwrap();
        assert_eq!(d4_loss(&t, &t).unwrap().1, D4::Identity);
    }

    #[test]
    fn loss_bounded_by_plain_jaccard() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = random_soft(6, &mut rng);
            let t = random_binary(6, &mut rng);
            let (l, _) = d4_loss(&p, &t).unwrap();
            assert!((0.0..=1.0).contains(&l));
            assert!(l <= 1.0 - jaccard(&p, &t).unwrap());
        }
    }

    #[test]
    fn matches_exhaustive_oracle_on_5x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let p = random_soft(5, &mut rng);
            let t = random_binary(5, &mut rng);
            let mut oracle = (f64::INFINITY, D4::Identity);
            for g in D4::ALL {
                let img = d4_transform(&p, g);
                let (mut n, mut d) = (0.0, 0.0);
                for (a, b) in img.data().iter().zip(t.data()) {
                    n += a * b;
                    d += a * a + b * b - a * b;
                }
                let l = 1.0 - n / d;
                if l < oracle.0 {
                    oracle = (l, g);
                }
            }
            assert_eq!(d4_loss(&p, &t).unwrap(), oracle);
        }
    }

    #[test]
    fn training_path_agrees_with_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let p = random_soft(GRID, &mut rng);
            let t = blob();
            let mut grad = vec![0.0; p.data().len()];
            let (l, g) = d4_loss_grad(p.data(), t.data(), GRID, &mut grad);
            assert_eq!((l, g), d4_loss(&p, &t).unwrap());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let side = 6;
        let t = random_binary(side, &mut rng);
        let p: Vec<f64> = (0..side * side)
            .map(|_| rng.random_range(0.2..0.8))
            .collect();
        assert!(!near_tie(&p, t.data(), side, 1e-4));
        let mut grad = vec![0.0; p.len()];
        d4_loss_grad(&p, t.data(), side, &mut grad);
        let eps = 1e-6;
        for i in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += eps;
            lo[i] -= eps;
            let mut scratch = vec![0.0; p.len()];
            let fh = d4_loss_grad(&hi, t.data(), side, &mut scratch).0;
            let fl = d4_loss_grad(&lo, t.data(), side, &mut scratch).0;
            let fd = (fh - fl) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() < 1e-7,
                "pixel {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn all_zero_prediction_trains_without_nan() {
        let t = RasterImage::zeros(5);
        let mut grad = vec![0.0; 25];
        let (l, _) = d4_loss_grad(&[0.0; 25], t.data(), 5, &mut grad);
        assert!(l.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn rotation_search_identity() {
        let t = blob();
        let fit = rotation_search(&t, &t, 1f64.to_radians()).unwrap();
        assert!(
            fit.theta <= 1f64.to_radians() + 1e-12 || fit.theta >= 2.0 * PI - 1f64.to_radians()
        );
        assert!(fit.loss <= 0.02);
        assert!(!fit.reflect);
    }

    #[test]
    fn rotation_search_undoes_rotation() {
        let t = blob();
        let pred = rotate_image(&t, 150f64.to_radians(), false);
        let fit = rotation_search(&pred, &t, 1f64.to_radians()).unwrap();
        assert!(
            (fit.theta.to_degrees() - 210.0).abs() <= 1.0 + 1e-9,
            "{fit:?}"
        );
        assert!(!fit.reflect);
        // floor from resampling twice
        let floor = 1.0 - jaccard(&rotate_image(&pred, 210f64.to_radians(), false), &t).unwrap();
        assert!(fit.loss <= floor + 1e-12);
    }

    #[test]
    fn rotation_search_bad_step() {
        let t = blob();
        assert_eq!(
            rotation_search(&t, &t, 0.0),
            Err(LossError::InvalidStep(0.0))
        );
    }

    #[test]
    fn report_format() {
        let row = RotationRow {
            sample_id: 3,
            d4_loss: 0.5,
            fit: RotationFit {
                theta: PI,
                reflect: true,
                loss: 0.25,
            },
        };
        let csv = rotation_report(&[row]);
        assert_eq!(
            csv,
            "sample_id,d4_loss,best_theta_deg,reflect,best_loss\n3,5.0000000000000000e-1,1.8000000000000000e2,1,2.5000000000000000e-1\n"
        );
        assert_eq!(rescued_fraction(&[row], 0.0), 1.0);
    }
}
