//! Adam training on the square-symmetry minimised Jaccard loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{loss_at, Model, ModelError, Result};
use crate::config::{invalid, ConfigError, KvConfig};
use crate::dataset::{split_indices, SampleRecord};

/// Samples per parallel work unit. Gradients are summed inside a unit and
/// units are reduced in order, so results do not depend on thread count.
const UNIT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// lr_t = lr / (1 + decay·t), t counting optimiser steps.
    pub decay: f64,
    pub batch_size: usize,
    /// Training data is cut into this many disjoint chunks, fed in turn.
    pub chunks: usize,
    /// Epochs spent on the first and last chunk; linear in between.
    pub epochs_first: usize,
    pub epochs_last: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale schedule: one chunk, 30 epochs.
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            decay: 1e-5,
            batch_size: 32,
            chunks: 1,
            epochs_first: 30,
            epochs_last: 30,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Eleven chunks with epochs falling from 50 to 10.
    pub fn full_schedule() -> Self {
        TrainConfig {
            chunks: 11,
            epochs_first: 50,
            epochs_last: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(invalid("lr", "must be finite and non-negative"));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return Err(invalid("decay", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if self.chunks == 0 {
            return Err(invalid("chunks", "must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(invalid("val_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Epoch count per chunk.
    pub fn schedule(&self) -> Vec<usize> {
        if self.chunks == 1 {
            return vec![self.epochs_first];
        }
        let (a, b) = (self.epochs_first as f64, self.epochs_last as f64);
        (0..self.chunks)
            .map(|c| (a + (b - a) * c as f64 / (self.chunks - 1) as f64).round() as usize)
            .collect()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("lr", format!("{:?}", self.lr));
        kv.set("decay", format!("{:?}", self.decay));
        kv.set("batch_size", self.batch_size);
        kv.set("chunks", self.chunks);
        kv.set("epochs_first", self.epochs_first);
        kv.set("epochs_last", self.epochs_last);
        kv.set("val_fraction", format!("{:?}", self.val_fraction));
        kv.set("train_seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self, ConfigError> {
        let d = Self::default();
        let epochs = kv.get_or("epochs", d.epochs_first)?;
        let cfg = TrainConfig {
            lr: kv.get_or("lr", d.lr)?,
            decay: kv.get_or("decay", d.decay)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            chunks: kv.get_or("chunks", d.chunks)?,
            epochs_first: kv.get_or("epochs_first", epochs)?,
            epochs_last: kv.get_or("epochs_last", epochs)?,
            val_fraction: kv.get_or("val_fraction", d.val_fraction)?,
            seed: kv.get_or("train_seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Adam with a per-step inverse-time learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, decay: f64) -> Self {
        Adam {
            lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Learning rate of the next step.
    pub fn current_lr(&self) -> f64 {
        self.lr / (1.0 + self.decay * self.t as f64)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.current_lr();
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRow {
    pub epoch: usize,
    /// Mean loss over the epoch's steps, measured before each update.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate in effect at the end of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    pub best_epoch: Option<usize>,
    pub best_val: f64,
    pub best_params: Vec<f64>,
    /// Set when training stopped on a non-finite loss or gradient; the model
    /// keeps its last finite parameters.
    pub aborted: Option<String>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e}",
                r.epoch, r.train_loss, r.val_loss, r.lr
            );
        }
        s
    }
}

/// Spacing vector and target pixels of one record.
pub(crate) fn example(r: &SampleRecord) -> (Vec<f64>, Vec<f64>) {
    (r.spacings(), r.image.data().to_vec())
}

/// Loss and summed gradient over `batch`, reduced in a fixed order.
fn batch_grad(model: &Model, data: &[(Vec<f64>, Vec<f64>)], batch: &[usize]) -> (f64, Vec<f64>) {
    let n = model.param_count();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(UNIT)
        .map(|unit| {
            let mut g = vec![0.0; n];
            let mut l = 0.0;
            for &i in unit {
                let (x, y) = &data[i];
                l += model.loss_grad(x, y, &mut g);
            }
            (l, g)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for (l, g) in parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total, grad)
}

/// Mean training-form loss over `idx`.
pub(crate) fn mean_loss(model: &Model, data: &[(Vec<f64>, Vec<f64>)], idx: &[usize]) -> f64 {
    let losses: Vec<f64> = idx
        .par_iter()
        .map(|&i| loss_at(model, &model.params, &data[i].0, &data[i].1))
        .collect();
    losses.iter().sum::<f64>() / idx.len().max(1) as f64
}

/// Trains in place. The split, chunking and shuffles all derive from
/// `cfg.seed`.
pub fn train(
    model: &mut Model,
    records: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if records.len() < 2 {
        return Err(ModelError::EmptyDataset);
    }
    let data: Vec<(Vec<f64>, Vec<f64>)> = records.iter().map(example).collect();
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != model.cfg.input_len) {
        return Err(ModelError::ShapeMismatch {
            expected: model.cfg.input_len,
            got: x.len(),
        });
    }
    let split = split_indices(
        records.len(),
        (1.0 - cfg.val_fraction, cfg.val_fraction, 0.0),
        cfg.seed,
    )?;
    let (train_idx, val_idx) = (split.train, split.val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(invalid("val_fraction", "leaves an empty training or validation set").into());
    }
    let schedule = cfg.schedule();
    let per = train_idx.len().div_ceil(cfg.chunks);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(model.param_count(), cfg.lr, cfg.decay);
    let mut report = TrainReport {
        rows: Vec::new(),
        best_epoch: None,
        best_val: f64::INFINITY,
        best_params: model.params.clone(),
        aborted: None,
        train_indices: train_idx.clone(),
        val_indices: val_idx.clone(),
    };
    let mut epoch = 0;
    'outer: for (c, &epochs) in schedule.iter().enumerate() {
        let lo = (c * per).min(train_idx.len());
        let hi = ((c + 1) * per).min(train_idx.len());
        let mut order = train_idx[lo..hi].to_vec();
        if order.is_empty() {
            continue;
        }
        for _ in 0..epochs {
            epoch += 1;
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let (l, mut g) = batch_grad(model, &data, batch);
                let scale = 1.0 / batch.len() as f64;
                g.iter_mut().for_each(|v| *v *= scale);
                if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    report.aborted = Some(format!("non-finite loss or gradient in epoch {epoch}"));
                    break 'outer;
                }
                let before = model.params.clone();
                adam.step(&mut model.params, &g);
                if model.params.iter().any(|v| !v.is_finite()) {
                    model.params = before;
                    report.aborted = Some(format!("non-finite parameters in epoch {epoch}"));
                    break 'outer;
                }
                sum += l;
            }
            let train_loss = sum / order.len() as f64;
            let val_loss = mean_loss(model, &data, &val_idx);
            log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
            if val_loss < report.best_val {
                report.best_val = val_loss;
                report.best_epoch = Some(epoch);
                report.best_params.copy_from_slice(&model.params);
            }
            report.rows.push(TrainRow {
                epoch,
                train_loss,
                val_loss,
                lr: adam.current_lr(),
            });
        }
    }
    Ok(report)
}
