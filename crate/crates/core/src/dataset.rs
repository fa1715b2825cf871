//! Sample generation (polygon → spectrum → image), the binary dataset file,
//! integrity checks and splitting.
//!
//! File layout, little-endian throughout:
//!
//! ```text
//! "SDRM" | version u32 | count u64 | n_eigs u32 | grid u32 | cfg_len u32 | cfg (UTF-8)
//! count × { vertices 10×f64 | eigenvalues n_eigs×f64 | weyl 3×f64 | image grid²×u8 | seed u64 }
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{invalid, ConfigError, KvConfig};
use crate::fem::{triangulate_with, FemError, FemSettings, DEFAULT_SMOOTHING_PASSES};
use crate::geometry::{
    canonicalize, generate_pentagon, rasterize, GenConfig, GeometryError, Point, Polygon,
    RasterImage, GRID, GRID_HALF_EXTENT,
};
use crate::spectral::WeylParams;

pub const MAGIC: &[u8; 4] = b"SDRM";
pub const FORMAT_VERSION: u32 = 1;
pub const N_VERTICES: usize = 5;
pub const DEFAULT_N_EIGS: usize = 100;
/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "DRUMSHAPE_THREADS";

const MAX_CONFIG_BYTES: usize = 1 << 20;
const MAX_N_EIGS: usize = 100_000;
/// Draws per seed before giving up on landing inside the window.
const MAX_WINDOW_REJECTIONS: u32 = 10_000;
/// Tolerance on canonical-gauge idempotence.
const GAUGE_TOL: f64 = 1e-9;
/// Tolerance on stored Weyl fields.
const WEYL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("byte {offset}: bad magic, expected \"SDRM\"")]
    BadMagic { offset: u64 },
    #[error(
        "byte {offset}: unsupported format version {found} (reader supports {FORMAT_VERSION})"
    )]
    UnsupportedVersion { offset: u64, found: u32 },
    #[error("byte {offset}: invalid header: {reason}")]
    InvalidHeader { offset: u64, reason: String },
    #[error("byte {offset}: file truncated inside the header")]
    TruncatedHeader { offset: u64 },
    #[error("byte {offset}: file truncated in record {record}")]
    Truncated { offset: u64, record: u64 },
    #[error("byte {offset}: record {record}: {reason}")]
    InvalidRecord {
        offset: u64,
        record: u64,
        reason: String,
    },
    #[error("byte {offset}: {extra} trailing bytes after the last record")]
    TrailingBytes { offset: u64, extra: u64 },
    #[error("seed {seed}: {source}")]
    Fem { seed: u64, source: FemError },
    #[error("seed {seed}: {source}")]
    Geometry { seed: u64, source: GeometryError },
    #[error("record {record} (seed {seed}): {reason}")]
    Violation {
        record: usize,
        seed: u64,
        reason: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Everything that determines a generated record, echoed into the header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub radius_min: f64,
    pub radius_max: f64,
    /// Polar gap bounds in radians.
    pub gap_min: f64,
    pub gap_max: f64,
    pub fem_h: f64,
    pub extrapolate: bool,
    pub smoothing_passes: usize,
    pub n_eigs: usize,
    /// Whether training should standardise input spacings per feature.
    pub normalize_inputs: bool,
    /// Seed of the first record.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        let fem = FemSettings::PRODUCTION;
        Self {
            radius_min: g.radius_min,
            radius_max: g.radius_max,
            gap_min: g.gap_min,
            gap_max: g.gap_max,
            fem_h: fem.h,
            extrapolate: fem.extrapolate,
            smoothing_passes: fem.smoothing_passes,
            n_eigs: DEFAULT_N_EIGS,
            normalize_inputs: false,
            seed: 0,
        }
    }
}

const CONFIG_KEYS: [&str; 10] = [
    "radius_min",
    "radius_max",
    "gap_min",
    "gap_max",
    "fem_h",
    "extrapolate",
    "smoothing_passes",
    "n_eigs",
    "normalize_inputs",
    "seed",
];

impl DatasetConfig {
    /// FAST FEM settings, for tests and toy datasets.
    pub fn fast() -> Self {
        Self {
            fem_h: FemSettings::FAST.h,
            extrapolate: FemSettings::FAST.extrapolate,
            ..Self::default()
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            radius_min: self.radius_min,
            radius_max: self.radius_max,
            gap_min: self.gap_min,
            gap_max: self.gap_max,
            seed: self.seed,
        }
    }

    pub fn fem_settings(&self) -> FemSettings {
        FemSettings {
            h: self.fem_h,
            extrapolate: self.extrapolate,
            smoothing_passes: self.smoothing_passes,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.gen_config().validate().map_err(|e| match e {
            GeometryError::InvalidConfig { field, reason } => invalid(field, reason),
            other => invalid("generator", other.to_string()),
        })?;
        if !(self.fem_h.is_finite() && self.fem_h > 0.0) {
            return Err(invalid("fem_h", "must be a positive number"));
        }
        if self.smoothing_passes > 5 {
            return Err(invalid("smoothing_passes", "at most 5"));
        }
        if self.n_eigs == 0 || self.n_eigs > MAX_N_EIGS {
            return Err(invalid("n_eigs", format!("must be in 1..={MAX_N_EIGS}")));
        }
        Ok(())
    }

    /// Reads known keys over the defaults; unknown keys are an error.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ConfigError> {
        kv.reject_unknown(&CONFIG_KEYS)?;
        let d = Self::default();
        let cfg = Self {
            radius_min: kv.get_or("radius_min", d.radius_min)?,
            radius_max: kv.get_or("radius_max", d.radius_max)?,
            gap_min: kv.get_or("gap_min", d.gap_min)?,
            gap_max: kv.get_or("gap_max", d.gap_max)?,
            fem_h: kv.get_or("fem_h", d.fem_h)?,
            extrapolate: kv.get_or("extrapolate", d.extrapolate)?,
            smoothing_passes: kv.get_or("smoothing_passes", d.smoothing_passes)?,
            n_eigs: kv.get_or("n_eigs", d.n_eigs)?,
            normalize_inputs: kv.get_or("normalize_inputs", d.normalize_inputs)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("radius_min", self.radius_min);
        kv.set("radius_max", self.radius_max);
        kv.set("gap_min", self.gap_min);
        kv.set("gap_max", self.gap_max);
        kv.set("fem_h", self.fem_h);
        kv.set("extrapolate", self.extrapolate);
        kv.set("smoothing_passes", self.smoothing_passes);
        kv.set("n_eigs", self.n_eigs);
        kv.set("normalize_inputs", self.normalize_inputs);
        kv.set("seed", self.seed);
        kv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Canonical gauge, counter-clockwise, first vertex on the +x axis.
    pub vertices: [Point; N_VERTICES],
    pub eigenvalues: Vec<f64>,
    pub weyl: WeylParams,
    pub image: RasterImage,
    pub seed: u64,
}

impl SampleRecord {
    pub fn polygon(&self) -> Result<Polygon, GeometryError> {
        Polygon::new(self.vertices.to_vec())
    }

    /// Eigenvalue spacings with λ₀ = 0; repeated eigenvalues give zeros.
    pub fn spacings(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.eigenvalues
            .iter()
            .map(|&e| {
                let s = e - prev;
                prev = e;
                s
            })
            .collect()
    }

    fn byte_len(n_eigs: usize) -> usize {
        8 * (2 * N_VERTICES + n_eigs + 3) + GRID * GRID + 8
    }

    /// Every stored field against a fresh recomputation from the vertices.
    pub fn check(&self, n_eigs: usize) -> Result<(), String> {
        let poly = self.polygon().map_err(|e| format!("vertices: {e}"))?;
        if poly.vertices() != self.vertices {
            return Err("vertices are not counter-clockwise".into());
        }
        let canon = canonicalize(&poly).map_err(|e| format!("vertices: {e}"))?;
        let drift = canon
            .vertices()
            .iter()
            .zip(&self.vertices)
            .map(|(a, b)| a.sub(*b).norm())
            .fold(0.0, f64::max);
        if drift > GAUGE_TOL {
            return Err(format!("vertices not in canonical gauge (drift {drift:e})"));
        }
        let img = rasterize(&poly).map_err(|e| format!("vertices: {e}"))?;
        if img != self.image {
            return Err("image differs from rasterized vertices".into());
        }
        let w = WeylParams::from_polygon(&poly).map_err(|e| format!("weyl: {e}"))?;
        for (name, got, want) in [
            ("a", self.weyl.a, w.a),
            ("b", self.weyl.b, w.b),
            ("k", self.weyl.k, w.k),
        ] {
            if !((got - want).abs() <= WEYL_TOL) {
                return Err(format!("weyl {name} = {got} but geometry gives {want}"));
            }
        }
        if self.eigenvalues.len() != n_eigs {
            return Err(format!(
                "{} eigenvalues, header says {n_eigs}",
                self.eigenvalues.len()
            ));
        }
        let mut prev = 0.0;
        for (i, &e) in self.eigenvalues.iter().enumerate() {
            if !(e.is_finite() && e > 0.0 && e >= prev) {
                return Err(format!(
                    "eigenvalue {} = {e} breaks positive ascending order",
                    i + 1
                ));
            }
            prev = e;
        }
        Ok(())
    }
}

/// A generated record plus how many draws fell outside the window first.
#[derive(Debug, Clone)]
pub struct Generated {
    pub record: SampleRecord,
    pub window_rejections: u32,
}

/// Mesh size actually used: `h` shrunk until the mesh has more than
/// `2·n` interior nodes, as the eigensolver requires.
pub fn resolving_h(p: &Polygon, n: usize, h: f64, passes: usize) -> Result<f64, FemError> {
    let mut h = h;
    for _ in 0..16 {
        match triangulate_with(p, h, passes) {
            Ok(m) if m.interior_count() > 2 * n => return Ok(h),
            Ok(_) | Err(FemError::MeshTooCoarse { .. }) => h *= 0.75,
            Err(e) => return Err(e),
        }
    }
    Err(FemError::MeshTooCoarse { h })
}

pub fn generate_sample(seed: u64, cfg: &DatasetConfig) -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = cfg.gen_config();
    let geo = |source| DatasetError::Geometry { seed, source };
    let mut rejected = 0;
    let poly = loop {
        let p = canonicalize(&generate_pentagon(&gen, &mut rng).map_err(geo)?).map_err(geo)?;
        let inside = p
            .vertices()
            .iter()
            .all(|v| v.x.abs() <= GRID_HALF_EXTENT && v.y.abs() <= GRID_HALF_EXTENT);
        if inside {
            break p;
        }
        rejected += 1;
        if rejected >= MAX_WINDOW_REJECTIONS {
            return Err(geo(GeometryError::RejectionLimit(u64::from(rejected))));
        }
    };
    let fem = |source| DatasetError::Fem { seed, source };
    let mut settings = cfg.fem_settings();
    settings.h =
        resolving_h(&poly, cfg.n_eigs, settings.h, settings.smoothing_passes).map_err(fem)?;
    let spectrum = settings.spectrum(&poly, cfg.n_eigs).map_err(fem)?;
    let image = rasterize(&poly).map_err(geo)?;
    let weyl = WeylParams::from_polygon(&poly).map_err(|e| match e {
        crate::spectral::SpectralError::Geometry(g) => geo(g),
        other => geo(GeometryError::Parse {
            line: 0,
            reason: other.to_string(),
        }),
    })?;
    let mut vertices = [Point::default(); N_VERTICES];
    if poly.len() != N_VERTICES {
        return Err(geo(GeometryError::Degenerate));
    }
    vertices.copy_from_slice(poly.vertices());
    Ok(Generated {
        record: SampleRecord {
            vertices,
            eigenvalues: spectrum.into_vec(),
            weyl,
            image,
            seed,
        },
        window_rejections: rejected,
    })
}

/// Deterministic record for `seed`.
pub fn make_sample(seed: u64, cfg: &DatasetConfig) -> Result<SampleRecord> {
    generate_sample(seed, cfg).map(|g| g.record)
}

/// Generation tallies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenStats {
    pub window_rejections: u64,
    /// Seeds whose FEM or geometry failed, with the message.
    pub failures: Vec<(u64, String)>,
}

/// `count` records from consecutive seeds starting at `cfg.seed`. Failed
/// seeds are logged and skipped. Results depend only on the config, not on
/// the worker count.
pub fn generate_dataset(
    cfg: &DatasetConfig,
    count: usize,
) -> Result<(Vec<SampleRecord>, GenStats)> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(count);
    let mut stats = GenStats::default();
    let mut next = cfg.seed;
    let done = AtomicUsize::new(0);
    while records.len() < count {
        let need = count - records.len();
        let seeds: Vec<u64> = (0..need as u64).map(|i| next.wrapping_add(i)).collect();
        next = next.wrapping_add(need as u64);
        let results: Vec<Result<Generated>> = seeds
            .par_iter()
            .map(|&s| {
                let r = generate_sample(s, cfg);
                let d = done.fetch_add(1, Ordering::Relaxed) + 1;
                if d % 100 == 0 {
                    log::info!("generated {d}/{count}");
                }
                r
            })
            .collect();
        for (seed, r) in seeds.iter().zip(results) {
            match r {
                Ok(g) => {
                    stats.window_rejections += u64::from(g.window_rejections);
                    records.push(g.record);
                }
                Err(e) => {
                    log::warn!("skipping seed {seed}: {e}");
                    stats.failures.push((*seed, e.to_string()));
                }
            }
        }
    }
    Ok((records, stats))
}

/// Parsed file header.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: u64,
    pub n_eigs: usize,
    pub grid: usize,
    pub config: KvConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<SampleRecord>,
}

pub fn encode_dataset(config: &KvConfig, n_eigs: usize, records: &[SampleRecord]) -> Vec<u8> {
    let cfg = config.to_string();
    let mut out =
        Vec::with_capacity(32 + cfg.len() + records.len() * SampleRecord::byte_len(n_eigs));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&(n_eigs as u32).to_le_bytes());
    out.extend_from_slice(&(GRID as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    for r in records {
        assert_eq!(r.eigenvalues.len(), n_eigs, "record eigenvalue count");
        for v in &r.vertices {
            out.extend_from_slice(&v.x.to_le_bytes());
            out.extend_from_slice(&v.y.to_le_bytes());
        }
        for e in &r.eigenvalues {
            out.extend_from_slice(&e.to_le_bytes());
        }
        for w in r.weyl.to_array() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend(r.image.data().iter().map(|&p| u8::from(p != 0.0)));
        out.extend_from_slice(&r.seed.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses a whole dataset file image. Structural problems carry the byte
/// offset; record-level invariants are left to [`verify_records`].
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    let short = |pos: usize| DatasetError::TruncatedHeader { offset: pos as u64 };
    let magic = c.take(4).ok_or(short(0))?;
    if magic != MAGIC {
        return Err(DatasetError::BadMagic { offset: 0 });
    }
    let version = c.u32().ok_or(short(c.pos))?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion {
            offset: 4,
            found: version,
        });
    }
    let count = c.u64().ok_or(short(c.pos))?;
    let at = c.pos as u64;
    let n_eigs = c.u32().ok_or(short(c.pos))? as usize;
    if n_eigs == 0 || n_eigs > MAX_N_EIGS {
        return Err(DatasetError::InvalidHeader {
            offset: at,
            reason: format!("n_eigs {n_eigs} out of range"),
        });
    }
    let at = c.pos as u64;
    let grid = c.u32().ok_or(short(c.pos))? as usize;
    if grid != GRID {
        return Err(DatasetError::InvalidHeader {
            offset: at,
            reason: format!("grid {grid}, expected {GRID}"),
        });
    }
    let at = c.pos as u64;
    let cfg_len = c.u32().ok_or(short(c.pos))? as usize;
    if cfg_len > MAX_CONFIG_BYTES {
        return Err(DatasetError::InvalidHeader {
            offset: at,
            reason: format!("config echo of {cfg_len} bytes is too long"),
        });
    }
    let at = c.pos as u64;
    let text = c.take(cfg_len).ok_or(short(c.pos))?;
    let text = std::str::from_utf8(text).map_err(|e| DatasetError::InvalidHeader {
        offset: at,
        reason: format!("config echo is not UTF-8: {e}"),
    })?;
    let config = KvConfig::parse(text).map_err(|e| DatasetError::InvalidHeader {
        offset: at,
        reason: format!("config echo: {e}"),
    })?;

    let rec_len = SampleRecord::byte_len(n_eigs);
    let body = c.bytes.len() - c.pos;
    let available = (body / rec_len) as u64;
    if available < count {
        let offset = c.pos as u64 + available * rec_len as u64;
        return Err(DatasetError::Truncated {
            offset,
            record: available,
        });
    }
    let mut records = Vec::with_capacity(count as usize);
    for index in 0..count {
        let start = c.pos;
        let bad = |pos: usize, reason: String| DatasetError::InvalidRecord {
            offset: pos as u64,
            record: index,
            reason,
        };
        let mut vertices = [Point::default(); N_VERTICES];
        for v in vertices.iter_mut() {
            *v = Point::new(c.f64().unwrap(), c.f64().unwrap());
        }
        let eigenvalues: Vec<f64> = (0..n_eigs).map(|_| c.f64().unwrap()).collect();
        let weyl = WeylParams {
            a: c.f64().unwrap(),
            b: c.f64().unwrap(),
            k: c.f64().unwrap(),
        };
        let img_at = c.pos;
        let pixels = c.take(GRID * GRID).unwrap();
        if let Some(i) = pixels.iter().position(|&b| b > 1) {
            return Err(bad(
                img_at + i,
                format!("pixel byte {} is not 0 or 1", pixels[i]),
            ));
        }
        let image = RasterImage::from_vec(GRID, pixels.iter().map(|&b| f64::from(b)).collect())
            .map_err(|e| bad(img_at, e.to_string()))?;
        let seed = c.u64().unwrap();
        debug_assert_eq!(c.pos - start, rec_len);
        records.push(SampleRecord {
            vertices,
            eigenvalues,
            weyl,
            image,
            seed,
        });
    }
    if c.pos != bytes.len() {
        return Err(DatasetError::TrailingBytes {
            offset: c.pos as u64,
            extra: (bytes.len() - c.pos) as u64,
        });
    }
    Ok(Dataset {
        header: DatasetHeader {
            version,
            count,
            n_eigs,
            grid,
            config,
        },
        records,
    })
}

pub fn write_dataset(
    path: &Path,
    config: &KvConfig,
    n_eigs: usize,
    records: &[SampleRecord],
) -> Result<()> {
    std::fs::write(path, encode_dataset(config, n_eigs, records))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// Re-checks every record invariant; the first violation names its record.
pub fn verify_records(records: &[SampleRecord], n_eigs: usize) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        r.check(n_eigs).map_err(|reason| DatasetError::Violation {
            record: i,
            seed: r.seed,
            reason,
        })?;
    }
    Ok(())
}

/// Parallel form of [`verify_records`]; reports the lowest failing index.
pub fn verify_records_par(records: &[SampleRecord], n_eigs: usize) -> Result<()> {
    let bad = records
        .par_iter()
        .enumerate()
        .filter_map(|(i, r)| r.check(n_eigs).err().map(|e| (i, e)))
        .min_by_key(|(i, _)| *i);
    match bad {
        Some((i, reason)) => Err(DatasetError::Violation {
            record: i,
            seed: records[i].seed,
            reason,
        }),
        None => Ok(()),
    }
}

/// Index sets of a seeded shuffle split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it by `(train, val, test)`
/// fractions. Each part is within one of its requested size; when the
/// fractions sum to one the parts cover every index.
pub fn split_indices(
    n: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split, ConfigError> {
    let (ft, fv, fs) = fractions;
    for (name, f) in [("train", ft), ("val", fv), ("test", fs)] {
        if !(f.is_finite() && f >= 0.0) {
            return Err(invalid(name, "fraction must be non-negative"));
        }
    }
    let total = ft + fv + fs;
    if total > 1.0 + 1e-9 || total <= 0.0 {
        return Err(invalid("fractions", "must sum to a value in (0, 1]"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let nv = (fv * n as f64).round() as usize;
    let ns = ((fs * n as f64).round() as usize).min(n - nv);
    let nt = if (total - 1.0).abs() <= 1e-9 {
        n - nv - ns
    } else {
        ((ft * n as f64).round() as usize).min(n - nv - ns)
    };
    Ok(Split {
        train: idx[..nt].to_vec(),
        val: idx[nt..nt + nv].to_vec(),
        test: idx[nt + nv..nt + nv + ns].to_vec(),
    })
}

/// Record-level form of [`split_indices`].
pub fn split<T: Clone>(
    records: &[T],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), ConfigError> {
    let s = split_indices(records.len(), fractions, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect();
    Ok((pick(&s.train), pick(&s.val), pick(&s.test)))
}

/// Long-format CSV `record,seed,index,eigenvalue`.
pub fn spectra_csv(records: &[SampleRecord]) -> String {
    let mut s = String::from("record,seed,index,eigenvalue\n");
    for (i, r) in records.iter().enumerate() {
        for (k, e) in r.eigenvalues.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{e:.16e}", r.seed, k + 1);
        }
    }
    s
}

/// CSV `record,seed,a,b,k` of the geometric Weyl parameters.
pub fn weyl_csv(records: &[SampleRecord]) -> String {
    let mut s = String::from("record,seed,a,b,k\n");
    for (i, r) in records.iter().enumerate() {
        let w = r.weyl;
        let _ = writeln!(s, "{i},{},{:.16e},{:.16e},{:.16e}", r.seed, w.a, w.b, w.k);
    }
    s
}

/// CSV `record,seed,x1,y1,…,x5,y5`.
pub fn vertices_csv(records: &[SampleRecord]) -> String {
    let mut s = String::from("record,seed");
    for i in 1..=N_VERTICES {
        let _ = write!(s, ",x{i},y{i}");
    }
    s.push('\n');
    for (i, r) in records.iter().enumerate() {
        let _ = write!(s, "{i},{}", r.seed);
        for v in &r.vertices {
            let _ = write!(s, ",{:.16e},{:.16e}", v.x, v.y);
        }
        s.push('\n');
    }
    s
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Largest relative gap between fresh eigenvalues of the record's polygon
/// scaled by `s` and the stored ones divided by s². The fresh run uses the
/// same mesh size, so the meshes are not congruent.
pub fn scaled_consistency(record: &SampleRecord, cfg: &DatasetConfig, s: f64) -> Result<f64> {
    let seed = record.seed;
    let geo = |source| DatasetError::Geometry { seed, source };
    let fem = |source| DatasetError::Fem { seed, source };
    let p = record.polygon().map_err(geo)?.scaled(s).map_err(geo)?;
    let n = record.eigenvalues.len();
    let mut settings = cfg.fem_settings();
    settings.h = resolving_h(&p, n, settings.h, settings.smoothing_passes).map_err(fem)?;
    let fresh = settings.spectrum(&p, n).map_err(fem)?;
    Ok(fresh
        .values()
        .iter()
        .zip(&record.eigenvalues)
        .map(|(f, e)| (f * s * s / e - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Default smoothing passes, re-exported for config files.
pub const SMOOTHING_PASSES: usize = DEFAULT_SMOOTHING_PASSES;
