//! Evaluation of trained predictors: loss distribution, example selection,
//! the constant-image baseline, spectrum scaling, and the Weyl-parameter
//! check on poorly predicted shapes.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::{Model, Result};
use crate::dataset::SampleRecord;
use crate::geometry::{RasterImage, PIXEL_SIZE};
use crate::loss::{d4_loss, LossError};

impl Model {
    /// Predicted image for a record's spectrum.
    pub fn predict(&self, r: &SampleRecord) -> Result<RasterImage> {
        Ok(self.forward(&r.spacings())?.0)
    }
}

/// Evaluation loss; two all-zero images count as a complete miss.
pub fn eval_loss(pred: &RasterImage, truth: &RasterImage) -> f64 {
    match d4_loss(pred, truth) {
        Ok((l, _)) => l,
        Err(LossError::ZeroDenominator) => 1.0,
        Err(LossError::SizeMismatch(..)) => 1.0,
        Err(LossError::InvalidStep(_)) => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub losses: Vec<f64>,
    /// Sum of predicted pixel values per sample.
    pub areas: Vec<f64>,
    pub mean: f64,
}

/// Per-sample loss of `predict` against each record's image.
pub fn evaluate<F>(predict: F, records: &[SampleRecord]) -> Evaluation
where
    F: Fn(&SampleRecord) -> RasterImage + Sync,
{
    let pairs: Vec<(f64, f64)> = records
        .par_iter()
        .map(|r| {
            let p = predict(r);
            (eval_loss(&p, &r.image), p.sum())
        })
        .collect();
    let (losses, areas): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
    Evaluation {
        losses,
        areas,
        mean,
    }
}

/// Empirical CDF as CSV "loss,cdf", one row per sample.
pub fn cdf_table(losses: &[f64]) -> String {
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut s = String::from("loss,cdf\n");
    for (i, l) in sorted.iter().enumerate() {
        let _ = writeln!(s, "{l:.16e},{:.16e}", (i + 1) as f64 / n);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleBand {
    /// lowest 15 % of losses
    Good,
    /// middle 70 %
    Mediocre,
    /// highest 10 %
    Bad,
}

impl ExampleBand {
    pub const ALL: [ExampleBand; 3] = [ExampleBand::Good, ExampleBand::Mediocre, ExampleBand::Bad];

    pub fn name(self) -> &'static str {
        match self {
            ExampleBand::Good => "good",
            ExampleBand::Mediocre => "mediocre",
            ExampleBand::Bad => "bad",
        }
    }

    /// Quantile range of the band.
    pub fn range(self) -> (f64, f64) {
        match self {
            ExampleBand::Good => (0.0, 0.15),
            ExampleBand::Mediocre => (0.15, 0.85),
            ExampleBand::Bad => (0.90, 1.0),
        }
    }
}

/// Sample index at the middle of each band, ranked by loss (ties by index).
pub fn example_triptych(losses: &[f64]) -> Vec<(ExampleBand, usize)> {
    if losses.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let n = losses.len() as f64;
    ExampleBand::ALL
        .iter()
        .map(|&band| {
            let (lo, hi) = band.range();
            let mid = ((lo + hi) / 2.0 * n).floor() as usize;
            (band, order[mid.min(order.len() - 1)])
        })
        .collect()
}

/// Best single image under the mean evaluation loss over a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub image: RasterImage,
    /// Threshold applied to the mean training image; `None` for the soft mean.
    pub threshold: Option<f64>,
    pub train_loss: f64,
}

/// Searches thresholds 0.05, 0.10, …, 0.95 of the mean training image, and
/// the soft mean itself, for the lowest mean training loss.
pub fn constant_baseline(train: &[SampleRecord]) -> Option<Baseline> {
    let first = train.first()?;
    let side = first.image.side();
    let n = train.len() as f64;
    let mut mean = vec![0.0; side * side];
    for r in train {
        for (m, v) in mean.iter_mut().zip(r.image.data()) {
            *m += v / n;
        }
    }
    let mut candidates: Vec<(Option<f64>, RasterImage)> = (1..20)
        .map(|i| {
            let t = i as f64 * 0.05;
            let img = mean
                .iter()
                .map(|&m| if m >= t { 1.0 } else { 0.0 })
                .collect();
            (
                Some(t),
                RasterImage::from_vec(side, img).expect("side matches"),
            )
        })
        .collect();
    candidates.push((
        None,
        RasterImage::from_vec(side, mean).expect("side matches"),
    ));
    candidates
        .into_iter()
        .map(|(threshold, image)| {
            let train_loss = evaluate(|_| image.clone(), train).mean;
            Baseline {
                image,
                threshold,
                train_loss,
            }
        })
        .min_by(|a, b| a.train_loss.total_cmp(&b.train_loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub s: f64,
    pub mean_area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of ln(mean area) against ln S.
    pub exponent: f64,
}

impl ScalingTable {
    /// CSV "s,mean_area,exponent"; the exponent repeats on every row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,mean_area,exponent\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                r.s, r.mean_area, self.exponent
            );
        }
        out
    }
}

/// Slope of the least-squares line through (ln x, ln y).
pub(crate) fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Builds the table from per-S mean areas.
pub fn scaling_table(s_values: &[f64], mean_areas: &[f64]) -> ScalingTable {
    ScalingTable {
        rows: s_values
            .iter()
            .zip(mean_areas)
            .map(|(&s, &mean_area)| ScalingRow { s, mean_area })
            .collect(),
        exponent: log_log_slope(s_values, mean_areas),
    }
}

/// Multiplies every eigenvalue (hence every spacing) by S and records the
/// mean predicted area, `area` mapping a spacing vector to a pixel sum.
pub fn scaling_experiment<F>(area: F, records: &[SampleRecord], s_values: &[f64]) -> ScalingTable
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let base: Vec<Vec<f64>> = records.iter().map(|r| r.spacings()).collect();
    let means: Vec<f64> = s_values
        .iter()
        .map(|&s| {
            let areas: Vec<f64> = base
                .par_iter()
                .map(|sp| {
                    let scaled: Vec<f64> = sp.iter().map(|v| v * s).collect();
                    area(&scaled)
                })
                .collect();
            areas.iter().sum::<f64>() / areas.len().max(1) as f64
        })
        .collect();
    scaling_table(s_values, &means)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreservationRow {
    pub index: usize,
    pub loss: f64,
    /// Relative deviations of the thresholded prediction's area and
    /// perimeter estimates from the true polygon's.
    pub area_delta: f64,
    pub perimeter_delta: f64,
}

impl PreservationRow {
    pub fn csv(rows: &[PreservationRow]) -> String {
        let mut s = String::from("index,loss,area_delta,perimeter_delta\n");
        for r in rows {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e}",
                r.index, r.loss, r.area_delta, r.perimeter_delta
            );
        }
        s
    }
}

/// Pixel-count area and boundary-edge perimeter of `img > 0.5`. The edge
/// count of a staircase boundary overestimates a smooth curve's length by
/// 4/π on average, which the estimate divides out.
pub fn pixel_area_perimeter(img: &RasterImage) -> (f64, f64) {
    let side = img.side();
    let on = |c: isize, r: isize| {
        c >= 0
            && r >= 0
            && (c as usize) < side
            && (r as usize) < side
            && img.get(c as usize, r as usize) > 0.5
    };
    let mut count = 0usize;
    let mut edges = 0usize;
    for r in 0..side as isize {
        for c in 0..side as isize {
            if on(c, r) {
                count += 1;
                edges += [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .filter(|(dc, dr)| !on(c + dc, r + dr))
                    .count();
            }
        }
    }
    let area = count as f64 * PIXEL_SIZE * PIXEL_SIZE;
    let perimeter = edges as f64 * PIXEL_SIZE * PI / 4.0;
    (area, perimeter)
}

/// Area and perimeter deltas of the worst tenth of predictions.
pub fn weyl_preservation_diagnostic<F>(
    predict: F,
    records: &[SampleRecord],
    losses: &[f64],
) -> Vec<PreservationRow>
where
    F: Fn(&SampleRecord) -> RasterImage + Sync,
{
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    let keep = records.len().div_ceil(10);
    order[..keep]
        .par_iter()
        .map(|&i| {
            let r = &records[i];
            let (area, perim) = pixel_area_perimeter(&predict(r));
            let true_area = r.weyl.a * 4.0 * PI;
            let true_perim = r.weyl.b * 4.0 * PI;
            PreservationRow {
                index: i,
                loss: losses[i],
                area_delta: (area - true_area).abs() / true_area,
                perimeter_delta: (perim - true_perim).abs() / true_perim,
            }
        })
        .collect()
}
