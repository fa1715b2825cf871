//! Encoder-decoder network from eigenvalue spacings to a 41×41 shape image,
//! its training loop, and the analysis harness built on top of it.
//!
//! Parameters live in one flat `f64` vector in declared layer order:
//! encoder, latent, decoder dense stack, transposed convolutions.

pub(crate) mod layers;

mod analysis;
mod checkpoint;
mod gradcheck;
mod probe;
mod train;

pub use analysis::{
    cdf_table, constant_baseline, eval_loss, evaluate, example_triptych, pixel_area_perimeter,
    scaling_experiment, scaling_table, weyl_preservation_diagnostic, Baseline, Evaluation,
    ExampleBand, PreservationRow, ScalingRow, ScalingTable,
};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, gradient_check_at, GradCheck};
pub use probe::{
    percentage_errors, probe_scaling, probe_targets, probe_train, Probe, ProbeConfig, ProbeReport,
    ProbeScalingRow, ProbeScalingTable, TargetSet,
};
pub use train::{train, Adam, TrainConfig, TrainReport, TrainRow};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{invalid, ConfigError, KvConfig};
use crate::geometry::{RasterImage, GRID};
use layers::{Act, Deconv, LstmTrace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input length {got}, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, model expects {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderKind {
    /// Stacked recurrent layers over the spacing sequence; the last hidden
    /// state of the top layer feeds the latent layer.
    Lstm { layers: usize, width: usize },
    /// Dense LeakyReLU stack over the whole spacing vector.
    Dense { widths: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_len: usize,
    pub encoder: EncoderKind,
    pub latent: usize,
    pub dec_dense: Vec<usize>,
    pub maps: usize,
    pub map_side: usize,
    pub deconv: Vec<DeconvSpec>,
    pub output_side: usize,
    pub leaky_slope: f64,
    /// Per-position input shift and scale; empty means raw spacings.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub init_seed: u64,
}

const fn dc(channels: usize, kernel: usize, stride: usize) -> DeconvSpec {
    DeconvSpec {
        channels,
        kernel,
        stride,
    }
}

/// Smallest latent width that can hold a pentagon's shape parameters.
pub const MIN_LATENT: usize = 7;

impl ModelConfig {
    /// Desk-scale default.
    pub fn toy() -> Self {
        ModelConfig {
            input_len: 100,
            encoder: EncoderKind::Lstm {
                layers: 1,
                width: 32,
            },
            latent: 10,
            dec_dense: vec![50, 256, 800],
            maps: 32,
            map_side: 5,
            deconv: vec![dc(16, 3, 2), dc(8, 3, 2), dc(4, 3, 2), dc(1, 1, 1)],
            output_side: GRID,
            leaky_slope: 0.3,
            norm_mean: Vec::new(),
            norm_std: Vec::new(),
            init_seed: 0,
        }
    }

    /// Toy decoder behind a dense 100 → 128 → 128 encoder.
    pub fn toy_dense() -> Self {
        ModelConfig {
            encoder: EncoderKind::Dense {
                widths: vec![128, 128],
            },
            ..Self::toy()
        }
    }

    /// Full-size network.
    pub fn full_scale() -> Self {
        ModelConfig {
            encoder: EncoderKind::Lstm {
                layers: 3,
                width: 128,
            },
            dec_dense: vec![50, 512, 1024, 3200],
            maps: 128,
            deconv: vec![dc(64, 3, 2), dc(32, 3, 2), dc(16, 3, 2), dc(1, 1, 1)],
            ..Self::toy()
        }
    }

    /// Side of the last transposed convolution before cropping.
    pub fn full_side(&self) -> usize {
        self.deconv
            .iter()
            .fold(self.map_side, |s, d| (s - 1) * d.stride + d.kernel)
    }

    /// Offset of the centred crop.
    pub fn crop_offset(&self) -> usize {
        (self.full_side() - self.output_side) / 2
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.input_len == 0 {
            return Err(invalid("input_len", "must be positive"));
        }
        match &self.encoder {
            EncoderKind::Lstm { layers, width } => {
                if *layers == 0 || *width == 0 {
                    return Err(invalid("encoder", "lstm layers and width must be positive"));
                }
            }
            EncoderKind::Dense { widths } => {
                if widths.contains(&0) {
                    return Err(invalid("encoder", "dense widths must be positive"));
                }
            }
        }
        if self.latent < MIN_LATENT {
            return Err(invalid(
                "latent",
                format!("must be at least {MIN_LATENT}, got {}", self.latent),
            ));
        }
        if self.dec_dense.contains(&0) {
            return Err(invalid("dec_dense", "widths must be positive"));
        }
        if self.maps == 0 || self.map_side == 0 {
            return Err(invalid("maps", "maps and map_side must be positive"));
        }
        let want = self.maps * self.map_side * self.map_side;
        let last = self.dec_dense.last().copied().unwrap_or(self.latent);
        if last != want {
            return Err(invalid(
                "dec_dense",
                format!("last width {last} must equal maps·map_side² = {want}"),
            ));
        }
        if self.deconv.is_empty() {
            return Err(invalid("deconv", "at least one layer required"));
        }
        if self
            .deconv
            .iter()
            .any(|d| d.channels == 0 || d.kernel == 0 || d.stride == 0)
        {
            return Err(invalid(
                "deconv",
                "channels, kernel and stride must be positive",
            ));
        }
        if self.deconv.last().map(|d| d.channels) != Some(1) {
            return Err(invalid("deconv", "last layer must have one channel"));
        }
        let full = self.full_side();
        if full < self.output_side || (full - self.output_side) % 2 != 0 {
            return Err(invalid(
                "deconv",
                format!(
                    "spatial chain ends at {full}, cannot centre-crop to {}",
                    self.output_side
                ),
            ));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(invalid("leaky_slope", "must be finite and non-negative"));
        }
        if !self.norm_mean.is_empty() || !self.norm_std.is_empty() {
            if self.norm_mean.len() != self.input_len || self.norm_std.len() != self.input_len {
                return Err(invalid(
                    "norm_mean",
                    "normalisation vectors must match input_len",
                ));
            }
            if self.norm_std.iter().any(|s| !(s.is_finite() && *s > 0.0))
                || self.norm_mean.iter().any(|m| !m.is_finite())
            {
                return Err(invalid("norm_std", "must be finite with positive scales"));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let joinf = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut kv = KvConfig::new();
        kv.set("input_len", self.input_len);
        match &self.encoder {
            EncoderKind::Lstm { layers, width } => {
                kv.set("encoder", "lstm");
                kv.set("encoder_layers", layers);
                kv.set("encoder_width", width);
            }
            EncoderKind::Dense { widths } => {
                kv.set("encoder", "dense");
                kv.set("encoder_widths", join(widths));
            }
        }
        kv.set("latent", self.latent);
        kv.set("dec_dense", join(&self.dec_dense));
        kv.set("maps", self.maps);
        kv.set("map_side", self.map_side);
        let chans: Vec<usize> = self.deconv.iter().map(|d| d.channels).collect();
        let kerns: Vec<usize> = self.deconv.iter().map(|d| d.kernel).collect();
        let strides: Vec<usize> = self.deconv.iter().map(|d| d.stride).collect();
        kv.set("deconv_channels", join(&chans));
        kv.set("deconv_kernels", join(&kerns));
        kv.set("deconv_strides", join(&strides));
        kv.set("output_side", self.output_side);
        kv.set("leaky_slope", format!("{:?}", self.leaky_slope));
        kv.set("norm_mean", joinf(&self.norm_mean));
        kv.set("norm_std", joinf(&self.norm_std));
        kv.set("init_seed", self.init_seed);
        kv
    }

    /// Reads the keys written by [`ModelConfig::to_kv`]; missing keys fall
    /// back to the toy default. Unknown keys are ignored so that one file can
    /// carry both model and training settings.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ConfigError> {
        let d = Self::toy();
        let encoder = match kv.get("encoder").unwrap_or("lstm") {
            "lstm" => {
                let (l, w) = match &d.encoder {
                    EncoderKind::Lstm { layers, width } => (*layers, *width),
                    EncoderKind::Dense { .. } => unreachable!(),
                };
                EncoderKind::Lstm {
                    layers: kv.get_or("encoder_layers", l)?,
                    width: kv.get_or("encoder_width", w)?,
                }
            }
            "dense" => EncoderKind::Dense {
                widths: kv.get_list("encoder_widths", vec![128, 128])?,
            },
            other => {
                return Err(invalid(
                    "encoder",
                    format!("expected `lstm` or `dense`, got `{other}`"),
                ))
            }
        };
        let chans = kv.get_list(
            "deconv_channels",
            d.deconv.iter().map(|x| x.channels).collect(),
        )?;
        let kerns = kv.get_list(
            "deconv_kernels",
            d.deconv.iter().map(|x| x.kernel).collect(),
        )?;
        let strides = kv.get_list(
            "deconv_strides",
            d.deconv.iter().map(|x| x.stride).collect(),
        )?;
        if chans.len() != kerns.len() || chans.len() != strides.len() {
            return Err(invalid(
                "deconv_channels",
                "deconv channel, kernel and stride lists differ in length",
            ));
        }
        let deconv = chans
            .iter()
            .zip(&kerns)
            .zip(&strides)
            .map(|((&c, &k), &s)| dc(c, k, s))
            .collect();
        let cfg = ModelConfig {
            input_len: kv.get_or("input_len", d.input_len)?,
            encoder,
            latent: kv.get_or("latent", d.latent)?,
            dec_dense: kv.get_list("dec_dense", d.dec_dense.clone())?,
            maps: kv.get_or("maps", d.maps)?,
            map_side: kv.get_or("map_side", d.map_side)?,
            deconv,
            output_side: kv.get_or("output_side", d.output_side)?,
            leaky_slope: kv.get_or("leaky_slope", d.leaky_slope)?,
            norm_mean: kv.get_list("norm_mean", Vec::new())?,
            norm_std: kv.get_list("norm_std", Vec::new())?,
            init_seed: kv.get_or("init_seed", d.init_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = (off, n);
            off += n;
            r
        };
        let mut enc = Vec::new();
        let enc_out = match &self.encoder {
            EncoderKind::Lstm { layers, width } => {
                for l in 0..*layers {
                    let inp = if l == 0 { 1 } else { *width };
                    enc.push(take(layers::lstm_params(inp, *width)));
                }
                *width
            }
            EncoderKind::Dense { widths } => {
                let mut inp = self.input_len;
                for &w in widths {
                    enc.push(take(inp * w + w));
                    inp = w;
                }
                inp
            }
        };
        let latent = take(enc_out * self.latent + self.latent);
        let mut dense = Vec::new();
        let mut inp = self.latent;
        for &w in &self.dec_dense {
            dense.push(take(inp * w + w));
            inp = w;
        }
        let mut convs = Vec::new();
        let mut cin = self.maps;
        let mut side = self.map_side;
        for d in &self.deconv {
            let layer = Deconv {
                cin,
                cout: d.channels,
                k: d.kernel,
                stride: d.stride,
            };
            convs.push((take(layer.param_len()), layer, side));
            cin = d.channels;
            side = layer.out_side(side);
        }
        Layout {
            enc,
            enc_out,
            latent,
            dense,
            convs,
            total: off,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

/// Parameter offsets as `(start, len)`.
#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<(usize, usize)>,
    enc_out: usize,
    latent: (usize, usize),
    dense: Vec<(usize, usize)>,
    convs: Vec<((usize, usize), Deconv, usize)>,
    total: usize,
}

fn slice(p: &[f64], r: (usize, usize)) -> &[f64] {
    &p[r.0..r.0 + r.1]
}

fn slice_mut(p: &mut [f64], r: (usize, usize)) -> &mut [f64] {
    &mut p[r.0..r.0 + r.1]
}

#[derive(Debug, Clone)]
enum EncTrace {
    Lstm(Vec<LstmTrace>),
    /// (pre-activation, post-activation) per layer
    Dense(Vec<(Vec<f64>, Vec<f64>)>),
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    enc: EncTrace,
    enc_out: Vec<f64>,
    latent: Vec<f64>,
    dense: Vec<(Vec<f64>, Vec<f64>)>,
    convs: Vec<(Vec<f64>, Vec<f64>)>,
    output: Vec<f64>,
}

impl Trace {
    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    /// Cropped output pixels in raster order.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Sign of every pre-activation feeding a piecewise-linear unit.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if let EncTrace::Dense(layers) = &self.enc {
            for (pre, _) in layers {
                out.extend(pre.iter().map(|&z| z > 0.0));
            }
        }
        for (pre, _) in &self.dense {
            out.extend(pre.iter().map(|&z| z > 0.0));
        }
        let n = self.convs.len();
        for (i, (pre, _)) in self.convs.iter().enumerate() {
            if conv_act(i, n).has_kink() {
                out.extend(pre.iter().map(|&z| z > 0.0));
            }
        }
        out
    }
}

fn conv_act(i: usize, n: usize) -> Act {
    if i + 1 == n {
        Act::Sigmoid
    } else {
        Act::Relu
    }
}

/// Network weights together with their configuration.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl Model {
    /// Seeded fan-in uniform initialisation: He bounds before ReLU-family
    /// units, LeCun bounds elsewhere, zero biases except a unit forget-gate
    /// bias in recurrent layers.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = cfg.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut params = vec![0.0; layout.total];
        let fill = |p: &mut [f64], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng| {
            let bound = (gain / fan_in as f64).sqrt();
            for v in p {
                *v = rng.random_range(-bound..bound);
            }
        };
        match &cfg.encoder {
            EncoderKind::Lstm { width, .. } => {
                for (l, &r) in layout.enc.iter().enumerate() {
                    let inp = if l == 0 { 1 } else { *width };
                    let h4 = 4 * width;
                    let p = slice_mut(&mut params, r);
                    let (wx, rest) = p.split_at_mut(h4 * inp);
                    let (wh, b) = rest.split_at_mut(h4 * width);
                    fill(wx, inp, 3.0, &mut rng);
                    fill(wh, *width, 3.0, &mut rng);
                    b[*width..2 * width].iter_mut().for_each(|v| *v = 1.0);
                }
            }
            EncoderKind::Dense { .. } => {
                let mut inp = cfg.input_len;
                for &r in &layout.enc {
                    let out = r.1 / (inp + 1);
                    fill(
                        &mut slice_mut(&mut params, r)[..inp * out],
                        inp,
                        6.0,
                        &mut rng,
                    );
                    inp = out;
                }
            }
        }
        let e = layout.enc_out;
        fill(
            &mut slice_mut(&mut params, layout.latent)[..e * cfg.latent],
            e,
            3.0,
            &mut rng,
        );
        let mut inp = cfg.latent;
        for (&r, &w) in layout.dense.iter().zip(&cfg.dec_dense) {
            fill(
                &mut slice_mut(&mut params, r)[..inp * w],
                inp,
                6.0,
                &mut rng,
            );
            inp = w;
        }
        let n = layout.convs.len();
        for (i, &(r, layer, _)) in layout.convs.iter().enumerate() {
            let fan_in = layer.cin * layer.k * layer.k / (layer.stride * layer.stride).max(1);
            let gain = if conv_act(i, n).has_kink() { 6.0 } else { 3.0 };
            fill(
                &mut slice_mut(&mut params, r)[..layer.weight_len()],
                fan_in.max(1),
                gain,
                &mut rng,
            );
        }
        Ok(Model {
            cfg,
            layout,
            params,
        })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = cfg.layout();
        if params.len() != layout.total {
            return Err(ModelError::ParamCount {
                expected: layout.total,
                got: params.len(),
            });
        }
        Ok(Model {
            cfg,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Replaces the input normalisation.
    pub fn set_normalization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        let mut cfg = self.cfg.clone();
        cfg.norm_mean = mean;
        cfg.norm_std = std;
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    /// Output image and latent activations.
    pub fn forward(&self, spacings: &[f64]) -> Result<(RasterImage, Vec<f64>)> {
        let tr = self.trace(spacings)?;
        let img = RasterImage::from_vec(self.cfg.output_side, tr.output)
            .expect("output side matches config");
        Ok((img, tr.latent))
    }

    /// Latent activations only.
    pub fn encode(&self, spacings: &[f64]) -> Result<Vec<f64>> {
        self.check_input(spacings)?;
        let x = self.normalize(spacings);
        let (_, enc_out) = self.encoder_forward(&self.params, &x);
        let mut z = vec![0.0; self.cfg.latent];
        let (w, b) = self.latent_wb(&self.params);
        layers::dense_forward(w, b, &enc_out, &mut z);
        Ok(z)
    }

    fn check_input(&self, spacings: &[f64]) -> Result<()> {
        if spacings.len() != self.cfg.input_len {
            return Err(ModelError::ShapeMismatch {
                expected: self.cfg.input_len,
                got: spacings.len(),
            });
        }
        Ok(())
    }

    fn normalize(&self, s: &[f64]) -> Vec<f64> {
        if self.cfg.norm_mean.is_empty() {
            s.to_vec()
        } else {
            s.iter()
                .zip(&self.cfg.norm_mean)
                .zip(&self.cfg.norm_std)
                .map(|((x, m), sd)| (x - m) / sd)
                .collect()
        }
    }

    fn latent_wb<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        slice(p, self.layout.latent).split_at(self.layout.enc_out * self.cfg.latent)
    }

    fn encoder_forward(&self, p: &[f64], x: &[f64]) -> (EncTrace, Vec<f64>) {
        match &self.cfg.encoder {
            EncoderKind::Lstm { width, .. } => {
                let mut seq = x.to_vec();
                let mut inp = 1;
                let mut traces = Vec::with_capacity(self.layout.enc.len());
                for &r in &self.layout.enc {
                    let tr = layers::lstm_forward(slice(p, r), inp, *width, &seq);
                    seq = tr.hs[*width..].to_vec();
                    inp = *width;
                    traces.push(tr);
                }
                let last = seq[seq.len() - width..].to_vec();
                (EncTrace::Lstm(traces), last)
            }
            EncoderKind::Dense { .. } => {
                let act = Act::Leaky(self.cfg.leaky_slope);
                let mut h = x.to_vec();
                let mut acts = Vec::with_capacity(self.layout.enc.len());
                for &r in &self.layout.enc {
                    let out = r.1 / (h.len() + 1);
                    let (w, b) = slice(p, r).split_at(h.len() * out);
                    let mut z = vec![0.0; out];
                    layers::dense_forward(w, b, &h, &mut z);
                    h = z.iter().map(|&v| act.apply(v)).collect();
                    acts.push((z, h.clone()));
                }
                (EncTrace::Dense(acts), h)
            }
        }
    }

    /// Forward pass keeping every intermediate for backpropagation.
    pub fn trace(&self, spacings: &[f64]) -> Result<Trace> {
        self.check_input(spacings)?;
        Ok(self.trace_with(&self.params, spacings))
    }

    fn trace_with(&self, p: &[f64], spacings: &[f64]) -> Trace {
        let input = self.normalize(spacings);
        let (enc, enc_out) = self.encoder_forward(p, &input);
        let mut latent = vec![0.0; self.cfg.latent];
        let (w, b) = self.latent_wb(p);
        layers::dense_forward(w, b, &enc_out, &mut latent);
        let act = Act::Leaky(self.cfg.leaky_slope);
        let mut h = latent.clone();
        let mut dense = Vec::with_capacity(self.layout.dense.len());
        for (&r, &out) in self.layout.dense.iter().zip(&self.cfg.dec_dense) {
            let (w, b) = slice(p, r).split_at(h.len() * out);
            let mut z = vec![0.0; out];
            layers::dense_forward(w, b, &h, &mut z);
            h = z.iter().map(|&v| act.apply(v)).collect();
            dense.push((z, h.clone()));
        }
        let n = self.layout.convs.len();
        let mut convs = Vec::with_capacity(n);
        for (i, &(r, layer, side)) in self.layout.convs.iter().enumerate() {
            let z = layer.forward(slice(p, r), &h, side);
            let a = conv_act(i, n);
            h = z.iter().map(|&v| a.apply(v)).collect();
            convs.push((z, h.clone()));
        }
        let full = self.cfg.full_side();
        let off = self.cfg.crop_offset();
        let side = self.cfg.output_side;
        let mut output = Vec::with_capacity(side * side);
        for row in 0..side {
            let start = (row + off) * full + off;
            output.extend_from_slice(&h[start..start + side]);
        }
        Trace {
            input,
            enc,
            enc_out,
            latent,
            dense,
            convs,
            output,
        }
    }

    /// Accumulates dL/dθ into `grad` given dL/d(output pixels).
    pub fn backward(&self, tr: &Trace, d_out: &[f64], grad: &mut [f64]) {
        self.backward_with(&self.params, tr, d_out, grad)
    }

    fn backward_with(&self, p: &[f64], tr: &Trace, d_out: &[f64], grad: &mut [f64]) {
        let full = self.cfg.full_side();
        let off = self.cfg.crop_offset();
        let side = self.cfg.output_side;
        let mut d = vec![0.0; full * full];
        for row in 0..side {
            let start = (row + off) * full + off;
            d[start..start + side].copy_from_slice(&d_out[row * side..(row + 1) * side]);
        }
        let n = self.layout.convs.len();
        for i in (0..n).rev() {
            let (r, layer, in_side) = self.layout.convs[i];
            let (z, y) = &tr.convs[i];
            let a = conv_act(i, n);
            let dz: Vec<f64> = d
                .iter()
                .zip(z.iter().zip(y))
                .map(|(g, (&zv, &yv))| g * a.grad(zv, yv))
                .collect();
            let x: &[f64] = if i == 0 {
                &tr.dense.last().map(|l| &l.1).unwrap_or(&tr.latent)[..]
            } else {
                &tr.convs[i - 1].1
            };
            d = layer.backward(slice(p, r), x, in_side, &dz, slice_mut(grad, r));
        }
        let act = Act::Leaky(self.cfg.leaky_slope);
        for i in (0..self.layout.dense.len()).rev() {
            let r = self.layout.dense[i];
            let (z, y) = &tr.dense[i];
            let dz: Vec<f64> = d
                .iter()
                .zip(z.iter().zip(y))
                .map(|(g, (&zv, &yv))| g * act.grad(zv, yv))
                .collect();
            let x: &[f64] = if i == 0 {
                &tr.latent
            } else {
                &tr.dense[i - 1].1
            };
            let out = z.len();
            let (w, _) = slice(p, r).split_at(x.len() * out);
            let (dw, db) = slice_mut(grad, r).split_at_mut(x.len() * out);
            let mut dx = vec![0.0; x.len()];
            layers::dense_backward(w, x, &dz, dw, db, Some(&mut dx));
            d = dx;
        }
        let e = self.layout.enc_out;
        let (w, _) = self.latent_wb(p);
        let (dw, db) = slice_mut(grad, self.layout.latent).split_at_mut(e * self.cfg.latent);
        let mut d_enc = vec![0.0; e];
        layers::dense_backward(w, &tr.enc_out, &d, dw, db, Some(&mut d_enc));
        match (&tr.enc, &self.cfg.encoder) {
            (EncTrace::Lstm(traces), EncoderKind::Lstm { width, .. }) => {
                let steps = self.cfg.input_len;
                let mut dh = vec![0.0; steps * width];
                dh[(steps - 1) * width..].copy_from_slice(&d_enc);
                for l in (0..traces.len()).rev() {
                    let r = self.layout.enc[l];
                    let inp = if l == 0 { 1 } else { *width };
                    let (p_l, g_l) = (slice(p, r), slice_mut(grad, r));
                    dh = layers::lstm_backward(p_l, inp, *width, &traces[l], &dh, g_l);
                }
            }
            (EncTrace::Dense(acts), EncoderKind::Dense { .. }) => {
                let mut d = d_enc;
                for i in (0..acts.len()).rev() {
                    let r = self.layout.enc[i];
                    let (z, y) = &acts[i];
                    let dz: Vec<f64> = d
                        .iter()
                        .zip(z.iter().zip(y))
                        .map(|(g, (&zv, &yv))| g * act.grad(zv, yv))
                        .collect();
                    let x: &[f64] = if i == 0 { &tr.input } else { &acts[i - 1].1 };
                    let (w, _) = slice(p, r).split_at(x.len() * z.len());
                    let (dw, db) = slice_mut(grad, r).split_at_mut(x.len() * z.len());
                    if i == 0 {
                        layers::dense_backward(w, x, &dz, dw, db, None);
                    } else {
                        let mut dx = vec![0.0; x.len()];
                        layers::dense_backward(w, x, &dz, dw, db, Some(&mut dx));
                        d = dx;
                    }
                }
            }
            _ => unreachable!("trace matches encoder kind"),
        }
    }

    /// Training loss of one sample; the gradient is accumulated into `grad`.
    pub fn loss_grad(&self, spacings: &[f64], truth: &[f64], grad: &mut [f64]) -> f64 {
        self.loss_grad_with(&self.params, spacings, truth, grad)
    }

    fn loss_grad_with(&self, p: &[f64], spacings: &[f64], truth: &[f64], grad: &mut [f64]) -> f64 {
        let tr = self.trace_with(p, spacings);
        let side = self.cfg.output_side;
        let mut d_out = vec![0.0; side * side];
        let (loss, _) = crate::loss::d4_loss_grad(&tr.output, truth, side, &mut d_out);
        self.backward_with(p, &tr, &d_out, grad);
        loss
    }

    /// Training loss of one sample without the gradient.
    pub fn loss(&self, spacings: &[f64], truth: &[f64]) -> f64 {
        loss_at(self, &self.params, spacings, truth)
    }
}

pub(crate) fn loss_at(m: &Model, p: &[f64], spacings: &[f64], truth: &[f64]) -> f64 {
    let tr = m.trace_with(p, spacings);
    let side = m.cfg.output_side;
    let mut scratch = vec![0.0; side * side];
    crate::loss::d4_loss_grad(&tr.output, truth, side, &mut scratch).0
}

/// Per-position mean and standard deviation of the given spacing vectors.
pub fn normalization_stats(inputs: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = inputs.first().map_or(0, |v| v.len());
    let count = inputs.len().max(1) as f64;
    let mut mean = vec![0.0; n];
    for v in inputs {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x / count;
        }
    }
    let mut var = vec![0.0; n];
    for v in inputs {
        for ((s, x), m) in var.iter_mut().zip(v.iter()).zip(&mean) {
            *s += (x - m) * (x - m) / count;
        }
    }
    let std = var.iter().map(|v| v.sqrt().max(1e-12)).collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spacings(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..3.0)).collect()
    }

    #[test]
    fn default_chain_crops_to_grid() {
        for cfg in [
            ModelConfig::toy(),
            ModelConfig::toy_dense(),
            ModelConfig::full_scale(),
        ] {
            assert_eq!(cfg.full_side(), 47);
            assert_eq!(cfg.crop_offset(), 3);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs_name_field() {
        let mut c = ModelConfig::toy();
        c.latent = 6;
        c.dec_dense[0] = 50;
        assert_eq!(c.validate().unwrap_err().field(), Some("latent"));
        let mut c = ModelConfig::toy();
        c.dec_dense = vec![50, 256, 801];
        assert_eq!(c.validate().unwrap_err().field(), Some("dec_dense"));
        let mut c = ModelConfig::toy();
        c.deconv[3].kernel = 2;
        assert_eq!(c.validate().unwrap_err().field(), Some("deconv"));
    }

    #[test]
    fn kv_round_trip() {
        for mut cfg in [
            ModelConfig::toy(),
            ModelConfig::toy_dense(),
            ModelConfig::full_scale(),
        ] {
            cfg.init_seed = 17;
            let back = ModelConfig::from_kv(&KvConfig::parse(&cfg.to_kv().to_string()).unwrap());
            assert_eq!(back.unwrap(), cfg);
        }
        let mut cfg = ModelConfig::toy();
        cfg.norm_mean = (0..100).map(|i| i as f64 * 0.1).collect();
        cfg.norm_std = vec![1.0 / 3.0; 100];
        let back = ModelConfig::from_kv(&KvConfig::parse(&cfg.to_kv().to_string()).unwrap());
        assert_eq!(back.unwrap(), cfg);
    }

    #[test]
    fn shape_contract() {
        for cfg in [ModelConfig::toy(), ModelConfig::toy_dense()] {
            let m = Model::new(cfg).unwrap();
            let (img, z) = m.forward(&spacings(1, 100)).unwrap();
            assert_eq!(img.side(), 41);
            assert_eq!(z.len(), 10);
            assert!(img.data().iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(matches!(
                m.forward(&spacings(1, 99)),
                Err(ModelError::ShapeMismatch {
                    expected: 100,
                    got: 99
                })
            ));
        }
    }

    #[test]
    fn zero_weights_give_sigmoid_of_bias() {
        let cfg = ModelConfig::toy();
        let mut m = Model::new(cfg).unwrap();
        m.params_mut().iter_mut().for_each(|v| *v = 0.0);
        let last = *m.layout.convs.last().unwrap();
        let bias_idx = last.0 .0 + last.0 .1 - 1;
        m.params_mut()[bias_idx] = 0.7;
        let (img, _) = m.forward(&spacings(2, 100)).unwrap();
        let want = layers::sigmoid(0.7);
        assert!(img.data().iter().all(|&v| v == want));
    }

    #[test]
    fn forward_is_deterministic() {
        let a = Model::new(ModelConfig::toy()).unwrap();
        let b = Model::new(ModelConfig::toy()).unwrap();
        assert_eq!(a.params(), b.params());
        let x = spacings(3, 100);
        let (i1, z1) = a.forward(&x).unwrap();
        let (i2, z2) = a.forward(&x).unwrap();
        assert_eq!(i1, i2);
        assert_eq!(z1, z2);
        assert_eq!(a.encode(&x).unwrap(), z1);
        let mut cfg = ModelConfig::toy();
        cfg.init_seed = 1;
        assert_ne!(Model::new(cfg).unwrap().params(), a.params());
    }

    #[test]
    fn param_count_matches_layout() {
        let m = Model::new(ModelConfig::toy()).unwrap();
        let lstm = 4 * 32 * (1 + 32 + 1);
        let latent = 32 * 10 + 10;
        let dense = 10 * 50 + 50 + 50 * 256 + 256 + 256 * 800 + 800;
        let conv = (32 * 16 * 9 + 16) + (16 * 8 * 9 + 8) + (8 * 4 * 9 + 4) + (4 + 1);
        assert_eq!(m.param_count(), lstm + latent + dense + conv);
        assert!(Model::from_params(ModelConfig::toy(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn normalization_applies() {
        let x = spacings(4, 100);
        let stats = normalization_stats(&[&x, &spacings(5, 100)]);
        let mut m = Model::new(ModelConfig::toy()).unwrap();
        let before = m.forward(&x).unwrap().0;
        m.set_normalization(stats.0, stats.1).unwrap();
        assert_ne!(m.forward(&x).unwrap().0, before);
        assert!(m.set_normalization(vec![0.0; 3], vec![1.0; 3]).is_err());
    }
}
