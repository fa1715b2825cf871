//! Central-difference verification of the analytic gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelError, Result};
use crate::loss::{d4_loss_grad, near_tie};

/// Relative deviations are measured against max(|analytic|, |numeric|, this).
pub const REL_FLOOR: f64 = 1e-7;

/// Margin under which the two best group elements count as tied.
pub const TIE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_dev: f64,
    /// Parameter with the largest deviation.
    pub worst_param: Option<usize>,
    pub checked: usize,
    /// Parameters whose perturbation crossed a kink or changed the minimising
    /// group element.
    pub excluded: usize,
    /// The sample itself sits near a tie between group elements.
    pub near_tie: bool,
}

/// Compares the analytic gradient of the training loss with central
/// differences at step `eps` on `count` randomly chosen parameters.
pub fn gradient_check(
    model: &Model,
    spacings: &[f64],
    truth: &[f64],
    eps: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(
        &mut rng,
        model.param_count(),
        count.min(model.param_count()),
    )
    .into_vec();
    gradient_check_at(model, spacings, truth, eps, &picks)
}

/// [`gradient_check`] on an explicit list of parameter indices.
pub fn gradient_check_at(
    model: &Model,
    spacings: &[f64],
    truth: &[f64],
    eps: f64,
    picks: &[usize],
) -> Result<GradCheck> {
    model.check_input(spacings)?;
    if let Some(&bad) = picks.iter().find(|&&i| i >= model.param_count()) {
        return Err(ModelError::ParamCount {
            expected: model.param_count(),
            got: bad,
        });
    }
    let side = model.cfg.output_side;
    if truth.len() != side * side {
        return Err(ModelError::ShapeMismatch {
            expected: side * side,
            got: truth.len(),
        });
    }
    let mut grad = vec![0.0; model.param_count()];
    model.loss_grad(spacings, truth, &mut grad);
    let base = model.trace_with(&model.params, spacings);
    let pattern = base.kink_pattern();
    let mut scratch = vec![0.0; side * side];
    let branch = d4_loss_grad(&base.output, truth, side, &mut scratch).1;
    let tie = near_tie(&base.output, truth, side, TIE_MARGIN);

    let mut p = model.params.clone();
    let mut eval = |p: &[f64]| {
        let tr = model.trace_with(p, spacings);
        let (l, g) = d4_loss_grad(&tr.output, truth, side, &mut scratch);
        (l, g, tr.kink_pattern())
    };
    let mut out = GradCheck {
        max_rel_dev: 0.0,
        worst_param: None,
        checked: 0,
        excluded: 0,
        near_tie: tie,
    };
    for &i in picks {
        let orig = p[i];
        p[i] = orig + eps;
        let (lp, gp, kp) = eval(&p);
        p[i] = orig - eps;
        let (lm, gm, km) = eval(&p);
        p[i] = orig;
        if gp != branch || gm != branch || kp != pattern || km != pattern {
            out.excluded += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let a = grad[i];
        let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        out.checked += 1;
        if dev > out.max_rel_dev || out.worst_param.is_none() {
            out.max_rel_dev = dev;
            out.worst_param = Some(i);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{dc, EncoderKind, ModelConfig};
    use super::*;
    use crate::geometry::{rasterize, Polygon};
    use rand::Rng;

    fn truth() -> Vec<f64> {
        let p = Polygon::from_xy(&[
            (1.2, 0.0),
            (0.3, 1.1),
            (-1.0, 0.6),
            (-0.8, -0.9),
            (0.5, -1.0),
        ])
        .unwrap();
        rasterize(&p).unwrap().into_data()
    }

    fn spacings(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..100).map(|_| rng.random_range(0.1..2.0)).collect()
    }

    /// Smooth network: no hidden units, a single sigmoid transposed
    /// convolution.
    fn smooth_config() -> ModelConfig {
        ModelConfig {
            input_len: 100,
            encoder: EncoderKind::Dense { widths: vec![] },
            latent: 9,
            dec_dense: vec![],
            maps: 1,
            map_side: 3,
            deconv: vec![dc(1, 21, 10)],
            output_side: 41,
            leaky_slope: 0.3,
            norm_mean: vec![],
            norm_std: vec![],
            init_seed: 5,
        }
    }

    #[test]
    fn smooth_network_matches_tightly() {
        let mut m = Model::new(smooth_config()).unwrap();
        m.params_mut().iter_mut().for_each(|v| *v *= 0.2);
        // A larger step keeps rounding in the loss difference below the
        // tolerance for gradients of order 1e-7.
        let r = gradient_check(&m, &spacings(1), &truth(), 1e-4, 100, 3).unwrap();
        assert!(!r.near_tie);
        assert_eq!(r.excluded, 0);
        assert_eq!(r.checked, 100);
        assert!(r.max_rel_dev <= 1e-6, "{r:?}");
    }

    #[test]
    fn toy_networks_match() {
        for cfg in [ModelConfig::toy(), ModelConfig::toy_dense()] {
            let m = Model::new(cfg).unwrap();
            let r = gradient_check(&m, &spacings(2), &truth(), 1e-5, 100, 4).unwrap();
            assert!(!r.near_tie);
            assert!(r.checked >= 80, "{r:?}");
            assert!(r.max_rel_dev <= 1e-3, "{r:?}");
        }
    }

    #[test]
    fn kink_is_excluded() {
        let m = Model::new(ModelConfig::toy_dense()).unwrap();
        let x = spacings(3);
        let tr = m.trace(&x).unwrap();
        // Put the first decoder dense unit exactly on its kink by moving its
        // bias so the pre-activation is zero.
        let r = m.layout.dense[0];
        let pre = tr.dense[0].0[0];
        let bias = r.0 + m.cfg.latent * 50;
        let mut m2 = m.clone();
        m2.params_mut()[bias] -= pre;
        let g = gradient_check_at(&m2, &x, &truth(), 1e-5, &[bias]).unwrap();
        assert_eq!((g.excluded, g.checked), (1, 0));
        let g = gradient_check_at(&m2, &x, &truth(), 1e-5, &[bias + 1]).unwrap();
        assert_eq!((g.excluded, g.checked), (0, 1));
    }
}
