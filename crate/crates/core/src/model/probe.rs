//! Small networks trained on frozen latent activations to read off
//! interpretable shape descriptors.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::analysis::log_log_slope;
use super::layers::{dense_backward, dense_forward, Act};
use super::train::Adam;
use super::{normalization_stats, ModelError, Result};
use crate::config::invalid;
use crate::dataset::SampleRecord;
use crate::geometry::GRID_HALF_EXTENT;

/// Offset in the percentage-error denominator.
pub const PCT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSet {
    /// a, b, k
    Weyl,
    /// x₁, x₂, y₂, …, x₅, y₅; y₁ is zero in the canonical gauge
    Vertices,
    /// five edge lengths then five inner angles
    EdgesAngles,
}

impl TargetSet {
    pub const ALL: [TargetSet; 3] = [TargetSet::Weyl, TargetSet::Vertices, TargetSet::EdgesAngles];

    pub fn name(self) -> &'static str {
        match self {
            TargetSet::Weyl => "weyl",
            TargetSet::Vertices => "vertices",
            TargetSet::EdgesAngles => "edges_angles",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn dim(self) -> usize {
        match self {
            TargetSet::Weyl => 3,
            TargetSet::Vertices => 9,
            TargetSet::EdgesAngles => 10,
        }
    }
}

/// Target vector of a record.
pub fn probe_targets(r: &SampleRecord, set: TargetSet) -> Vec<f64> {
    match set {
        TargetSet::Weyl => r.weyl.to_array().to_vec(),
        TargetSet::Vertices => {
            let mut v = vec![r.vertices[0].x];
            for p in &r.vertices[1..] {
                v.extend([p.x, p.y]);
            }
            v
        }
        TargetSet::EdgesAngles => {
            let poly = r.polygon().expect("stored vertices form a polygon");
            let mut v = poly.edge_lengths();
            v.extend(poly.inner_angles());
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Hidden layers, 0 for a linear map.
    pub hidden: usize,
    pub width: usize,
    pub leaky_slope: f64,
    pub target: TargetSet,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 1,
            width: 50,
            leaky_slope: 0.3,
            target: TargetSet::Weyl,
            epochs: 200,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub const MAX_HIDDEN: usize = 5;

    pub fn validate(&self) -> Result<(), crate::config::ConfigError> {
        if self.hidden > Self::MAX_HIDDEN {
            return Err(invalid(
                "hidden",
                format!("at most {} layers", Self::MAX_HIDDEN),
            ));
        }
        if self.width == 0 {
            return Err(invalid("width", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(invalid("lr", "must be finite and non-negative"));
        }
        Ok(())
    }

    fn dims(&self, inp: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut i = inp;
        for _ in 0..self.hidden {
            dims.push((i, self.width));
            i = self.width;
        }
        dims.push((i, self.target.dim()));
        dims
    }
}

/// Trained probe with its input and output standardisation.
#[derive(Debug, Clone)]
pub struct Probe {
    pub cfg: ProbeConfig,
    dims: Vec<(usize, usize)>,
    params: Vec<f64>,
    in_mean: Vec<f64>,
    in_std: Vec<f64>,
    out_mean: Vec<f64>,
    out_std: Vec<f64>,
}

impl Probe {
    fn act(&self, layer: usize) -> Act {
        if layer + 1 == self.dims.len() {
            Act::Linear
        } else {
            Act::Leaky(self.cfg.leaky_slope)
        }
    }

    /// Forward pass in standardised units, keeping layer inputs and
    /// pre-activations.
    fn run(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut inputs = vec![x.to_vec()];
        let mut pres = Vec::new();
        let mut off = 0;
        for (l, &(i, o)) in self.dims.iter().enumerate() {
            let (w, rest) = self.params[off..].split_at(i * o);
            let mut z = vec![0.0; o];
            dense_forward(w, &rest[..o], inputs.last().unwrap(), &mut z);
            off += i * o + o;
            let a = self.act(l);
            inputs.push(z.iter().map(|&v| a.apply(v)).collect());
            pres.push(z);
        }
        (inputs, pres)
    }

    fn standardize(&self, latent: &[f64]) -> Vec<f64> {
        latent
            .iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Prediction in physical units.
    pub fn predict(&self, latent: &[f64]) -> Vec<f64> {
        let (acts, _) = self.run(&self.standardize(latent));
        acts.last()
            .unwrap()
            .iter()
            .zip(self.out_mean.iter().zip(&self.out_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Squared error in standardised units; gradient accumulated into `g`.
    fn loss_grad(&self, x: &[f64], y: &[f64], g: &mut [f64]) -> f64 {
        let (acts, pres) = self.run(x);
        let out = acts.last().unwrap();
        let n = out.len() as f64;
        let mut d: Vec<f64> = out.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / n).collect();
        let loss = out
            .iter()
            .zip(y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let offsets: Vec<usize> = self
            .dims
            .iter()
            .scan(0, |o, &(i, k)| {
                let s = *o;
                *o += i * k + k;
                Some(s)
            })
            .collect();
        for l in (0..self.dims.len()).rev() {
            let (i, o) = self.dims[l];
            let a = self.act(l);
            let dz: Vec<f64> = d
                .iter()
                .zip(pres[l].iter().zip(&acts[l + 1]))
                .map(|(g, (&z, &y))| g * a.grad(z, y))
                .collect();
            let off = offsets[l];
            let w = &self.params[off..off + i * o];
            let (dw, rest) = g[off..].split_at_mut(i * o);
            let mut dx = vec![0.0; i];
            dense_backward(w, &acts[l], &dz, dw, &mut rest[..o], Some(&mut dx));
            d = dx;
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub target: TargetSet,
    pub hidden: usize,
    /// Mean of |pred − true| / (|true| + 1e-9) per component, in percent.
    pub component_pct: Vec<f64>,
    /// Average of the component errors.
    pub mean_pct: f64,
    pub final_train_mse: f64,
}

impl ProbeReport {
    pub fn csv(reports: &[ProbeReport]) -> String {
        let mut s = String::from("target,hidden,component,mean_pct_error\n");
        for r in reports {
            for (i, e) in r.component_pct.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{:.16e}", r.target.name(), r.hidden, i, e);
            }
            let _ = writeln!(
                s,
                "{},{},mean,{:.16e}",
                r.target.name(),
                r.hidden,
                r.mean_pct
            );
        }
        s
    }
}

/// Mean percentage error per component.
pub fn percentage_errors(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<f64> {
    let dim = truth.first().map_or(0, |t| t.len());
    let n = truth.len().max(1) as f64;
    let mut err = vec![0.0; dim];
    for (p, t) in pred.iter().zip(truth) {
        for k in 0..dim {
            err[k] += (p[k] - t[k]).abs() / (t[k].abs() + PCT_EPS) / n;
        }
    }
    err.iter().map(|e| 100.0 * e).collect()
}

/// Trains a probe with mean squared error on standardised latents and
/// targets, then reports percentage errors on `test`. `encode` maps a
/// spacing vector to latent activations and is never updated.
pub fn probe_train<E>(
    encode: E,
    train: &[SampleRecord],
    test: &[SampleRecord],
    cfg: &ProbeConfig,
) -> Result<(Probe, ProbeReport)>
where
    E: Fn(&[f64]) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let latents = |rs: &[SampleRecord]| -> Vec<Vec<f64>> {
        rs.par_iter().map(|r| encode(&r.spacings())).collect()
    };
    let zs = latents(train);
    let ys: Vec<Vec<f64>> = train.iter().map(|r| probe_targets(r, cfg.target)).collect();
    let (in_mean, in_std) = normalization_stats(&zs.iter().map(|v| &v[..]).collect::<Vec<_>>());
    let (out_mean, out_std) = normalization_stats(&ys.iter().map(|v| &v[..]).collect::<Vec<_>>());
    let dims = cfg.dims(in_mean.len());
    let total: usize = dims.iter().map(|(i, o)| i * o + o).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = vec![0.0; total];
    let mut off = 0;
    for (l, &(i, o)) in dims.iter().enumerate() {
        let gain = if l + 1 == dims.len() { 3.0 } else { 6.0 };
        let bound = (gain / i as f64).sqrt();
        for v in &mut params[off..off + i * o] {
            *v = rng.random_range(-bound..bound);
        }
        off += i * o + o;
    }
    let mut probe = Probe {
        cfg: cfg.clone(),
        dims,
        params,
        in_mean,
        in_std,
        out_mean,
        out_std,
    };
    let xs: Vec<Vec<f64>> = zs.iter().map(|z| probe.standardize(z)).collect();
    let ts: Vec<Vec<f64>> = ys
        .iter()
        .map(|y| {
            y.iter()
                .zip(probe.out_mean.iter().zip(&probe.out_std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();
    let mut adam = Adam::new(total, cfg.lr, 0.0);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut final_mse = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = vec![0.0; total];
            for &i in batch {
                sum += probe.loss_grad(&xs[i], &ts[i], &mut g);
            }
            let scale = 1.0 / batch.len() as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            adam.step(&mut probe.params, &g);
        }
        final_mse = sum / xs.len() as f64;
    }
    let test_z = latents(test);
    let pred: Vec<Vec<f64>> = test_z.iter().map(|z| probe.predict(z)).collect();
    let truth: Vec<Vec<f64>> = test.iter().map(|r| probe_targets(r, cfg.target)).collect();
    let component_pct = percentage_errors(&pred, &truth);
    let mean_pct = component_pct.iter().sum::<f64>() / component_pct.len() as f64;
    let report = ProbeReport {
        target: cfg.target,
        hidden: cfg.hidden,
        component_pct,
        mean_pct,
        final_train_mse: final_mse,
    };
    Ok((probe, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeScalingRow {
    pub s: f64,
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScalingTable {
    pub rows: Vec<ProbeScalingRow>,
    /// Samples whose scaled shapes stay inside the grid for every S.
    pub retained: usize,
    pub exponent_a: f64,
    pub exponent_b: f64,
    /// Slope of mean k against ln S.
    pub slope_k: f64,
}

impl ProbeScalingTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("s,a,b,k,exponent_a,exponent_b,slope_k,retained\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.s, r.a, r.b, r.k, self.exponent_a, self.exponent_b, self.slope_k, self.retained
            );
        }
        s
    }
}

/// Whether the record's polygon, shrunk by 1/√S, stays inside the grid.
fn fits_grid(r: &SampleRecord, s: f64) -> bool {
    let f = 1.0 / s.sqrt();
    r.vertices
        .iter()
        .all(|v| (v.x * f).abs() <= GRID_HALF_EXTENT && (v.y * f).abs() <= GRID_HALF_EXTENT)
}

/// Mean predicted (a, b, k) as eigenvalues are multiplied by each S, over
/// the samples that remain inside the grid for all S. `predict` receives the
/// record, S, and the scaled spacing vector.
pub fn probe_scaling<F>(predict: F, records: &[SampleRecord], s_values: &[f64]) -> ProbeScalingTable
where
    F: Fn(&SampleRecord, f64, &[f64]) -> [f64; 3] + Sync,
{
    let kept: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| s_values.iter().all(|&s| fits_grid(r, s)))
        .collect();
    let n = kept.len().max(1) as f64;
    let rows: Vec<ProbeScalingRow> = s_values
        .iter()
        .map(|&s| {
            let preds: Vec<[f64; 3]> = kept
                .par_iter()
                .map(|r| {
                    let sp: Vec<f64> = r.spacings().iter().map(|v| v * s).collect();
                    predict(r, s, &sp)
                })
                .collect();
            let mut m = [0.0; 3];
            for p in &preds {
                for k in 0..3 {
                    m[k] += p[k] / n;
                }
            }
            ProbeScalingRow {
                s,
                a: m[0],
                b: m[1],
                k: m[2],
            }
        })
        .collect();
    let a: Vec<f64> = rows.iter().map(|r| r.a).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.b).collect();
    let ln_s: Vec<f64> = s_values.iter().map(|s| s.ln()).collect();
    let mx = ln_s.iter().sum::<f64>() / ln_s.len() as f64;
    let mk = rows.iter().map(|r| r.k).sum::<f64>() / rows.len() as f64;
    let sxy: f64 = ln_s
        .iter()
        .zip(&rows)
        .map(|(x, r)| (x - mx) * (r.k - mk))
        .sum();
    let sxx: f64 = ln_s.iter().map(|x| (x - mx) * (x - mx)).sum();
    ProbeScalingTable {
        exponent_a: log_log_slope(s_values, &a),
        exponent_b: log_log_slope(s_values, &b),
        slope_k: sxy / sxx,
        retained: kept.len(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_sample, DatasetConfig};
    use crate::spectral::scaled_params;

    fn records(n: usize) -> Vec<SampleRecord> {
        let cfg = DatasetConfig {
            fem_h: 0.3,
            ..DatasetConfig::fast()
        };
        (200..200 + n as u64)
            .map(|s| make_sample(s, &cfg).unwrap())
            .collect()
    }

    #[test]
    fn targets_have_declared_dims() {
        let r = &records(1)[0];
        for t in TargetSet::ALL {
            assert_eq!(probe_targets(r, t).len(), t.dim());
            assert_eq!(TargetSet::parse(t.name()), Some(t));
        }
        assert_eq!(r.vertices[0].y, 0.0);
        let ea = probe_targets(r, TargetSet::EdgesAngles);
        let angle_sum: f64 = ea[5..].iter().sum();
        assert!((angle_sum - 3.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn probe_gradient_matches_differences() {
        let recs = records(4);
        let cfg = ProbeConfig {
            hidden: 2,
            width: 6,
            epochs: 0,
            target: TargetSet::EdgesAngles,
            ..ProbeConfig::default()
        };
        let enc = |sp: &[f64]| sp[..10].to_vec();
        let (probe, _) = probe_train(enc, &recs, &recs, &cfg).unwrap();
        let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.3).collect();
        let y: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let mut g = vec![0.0; probe.params.len()];
        probe.loss_grad(&x, &y, &mut g);
        for i in 0..probe.params.len() {
            let mut p = probe.clone();
            p.params[i] += 1e-6;
            let hi = p.loss_grad(&x, &y, &mut vec![0.0; g.len()]);
            p.params[i] -= 2e-6;
            let lo = p.loss_grad(&x, &y, &mut vec![0.0; g.len()]);
            let fd = (hi - lo) / 2e-6;
            assert!(
                (fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn informative_latent_beats_noise() {
        let recs = records(60);
        let (train, test) = recs.split_at(45);
        let cfg = ProbeConfig {
            hidden: 0,
            epochs: 300,
            lr: 1e-2,
            ..ProbeConfig::default()
        };
        // Eigenvalue sums carry area information; pseudo-random features do not.
        let informative = |sp: &[f64]| {
            let mut acc = 0.0;
            (0..10)
                .map(|k| {
                    acc += sp[k * 10..(k + 1) * 10].iter().sum::<f64>();
                    1.0 / acc
                })
                .collect()
        };
        let noise = |sp: &[f64]| {
            let seed = sp[0].to_bits();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let (_, good) = probe_train(informative, train, test, &cfg).unwrap();
        let (_, bad) = probe_train(noise, train, test, &cfg).unwrap();
        assert!(
            good.component_pct[0] < bad.component_pct[0],
            "{good:?} {bad:?}"
        );
        let csv = ProbeReport::csv(&[good]);
        assert!(csv.starts_with("target,hidden,component,mean_pct_error\nweyl,0,0,"));
    }

    #[test]
    fn deterministic_training() {
        let recs = records(12);
        let cfg = ProbeConfig {
            epochs: 5,
            ..ProbeConfig::default()
        };
        let enc = |sp: &[f64]| sp[..10].to_vec();
        let (a, ra) = probe_train(enc, &recs, &recs, &cfg).unwrap();
        let (b, rb) = probe_train(enc, &recs, &recs, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra, rb);
        let bad = ProbeConfig { hidden: 6, ..cfg };
        assert!(probe_train(enc, &recs, &recs, &bad).is_err());
    }

    #[test]
    fn oracle_gives_exact_exponents() {
        let recs = records(8);
        let s = [0.5, 1.0, 1.5, 2.0, 2.5];
        let t = probe_scaling(|r, s, _| scaled_params(&r.weyl, s).to_array(), &recs, &s);
        assert!((t.exponent_a + 1.0).abs() < 1e-12);
        assert!((t.exponent_b + 0.5).abs() < 1e-12);
        assert!(t.slope_k.abs() < 1e-12);
        assert!(t.retained > 0 && t.retained <= recs.len());
        assert!(t
            .to_csv()
            .starts_with("s,a,b,k,exponent_a,exponent_b,slope_k,retained\n"));
    }

    #[test]
    fn percentage_error_formula() {
        let e = percentage_errors(&[vec![1.1, 0.0]], &[vec![1.0, 0.0]]);
        assert!((e[0] - 10.0).abs() < 1e-6);
        assert_eq!(e[1], 0.0);
    }
}
