//! Command-line front end: dataset generation, FEM validation, training,
//! evaluation, latent probes, the spectrum-scaling experiment, dataset
//! verification and export.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drumshape::config::{ConfigError, KvConfig};
use drumshape::dataset::{
    self, generate_dataset, read_dataset, spectra_csv, verify_records_par, vertices_csv, weyl_csv,
    write_dataset, DatasetConfig, DatasetError, SampleRecord,
};
use drumshape::fem::validation::{run_suite, tolerance_for};
use drumshape::geometry::RasterImage;
use drumshape::loss::{rescued_fraction, rotation_report, rotation_search, RotationRow};
use drumshape::model::{
    cdf_table, constant_baseline, decode_checkpoint, encode_checkpoint, evaluate, example_triptych,
    normalization_stats, probe_scaling, probe_train, scaling_experiment, train,
    weyl_preservation_diagnostic, Model, ModelConfig, ModelError, PreservationRow, ProbeConfig,
    ProbeReport, TargetSet, TrainConfig, CHECKPOINT_VERSION,
};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(c) => CliError::Usage(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(c) => CliError::Usage(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn runtime(ctx: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{ctx}: {e}"))
}

#[derive(Parser)]
#[command(
    name = "drumshape",
    about = "Shapes of polygonal drums from their Dirichlet spectra"
)]
#[command(disable_version_flag = true)]
struct Cli {
    /// Print program and file-format versions.
    #[arg(long)]
    version: bool,
    /// Worker threads; overrides DRUMSHAPE_THREADS. 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset of random pentagons with spectra and images.
    Gen(GenArgs),
    /// Check the FEM solver against analytic and isospectral references.
    FemValidate(FemArgs),
    /// Train the encoder-decoder network.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train latent probes on a frozen encoder.
    Probe(ProbeArgs),
    /// Predicted area under eigenvalue scaling.
    ScaleExp(ScaleArgs),
    /// Re-check every record invariant of a dataset.
    Verify(VerifyArgs),
    /// Write CSV tables and PGM images of a dataset.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// key = value file; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    /// Seed of the first record; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Coarse FEM settings (h = 0.1, no extrapolation) as the base config.
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FemArgs {
    /// Target mesh size.
    #[arg(long, default_value_t = 0.05)]
    h: f64,
    #[arg(long)]
    no_extrapolate: bool,
    /// Directory for the CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// key = value file with model and training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Epochs per chunk; overrides the config file.
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed of the split and shuffles; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// `lstm` or `dense`; overrides the config file.
    #[arg(long)]
    encoder: Option<String>,
    /// Standardise spacings per position with training-set statistics.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training dataset for the constant-image baseline.
    #[arg(long)]
    baseline_data: Option<PathBuf>,
    /// Worst predictions to run the rotation search on.
    #[arg(long, default_value_t = 20)]
    rotation_worst: usize,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hidden-layer counts to train, 0..=5.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    hidden: Vec<usize>,
    /// Target sets: weyl, vertices, edges_angles.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "weyl,vertices,edges_angles"
    )]
    targets: Vec<String>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Held-out fraction for the error report.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Eigenvalue scaling factors for the Weyl-probe scaling table.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.5,2.0,2.5")]
    s: Vec<f64>,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.5,2.0,2.5")]
    s: Vec<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of records to write as PGM images.
    #[arg(long, default_value_t = 0)]
    images: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Runtime(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.version {
        println!(
            "drumshape {} (dataset format {}, checkpoint format {})",
            env!("CARGO_PKG_VERSION"),
            dataset::FORMAT_VERSION,
            CHECKPOINT_VERSION
        );
        return Ok(());
    }
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("`threads` must be positive".into())),
        Some(n) => Some(n),
        None => dataset::env_threads(),
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let Some(cmd) = cli.cmd else {
        return Err(CliError::Usage("no subcommand given; see --help".into()));
    };
    match cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::FemValidate(a) => fem_validate(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Probe(a) => probe_cmd(a),
        Cmd::ScaleExp(a) => scale_cmd(a),
        Cmd::Verify(a) => verify_cmd(a),
        Cmd::Export(a) => export_cmd(a),
    }
}

fn read_kv(path: &Path) -> Result<KvConfig> {
    let text = fs::read_to_string(path).map_err(runtime(&path.display().to_string()))?;
    Ok(KvConfig::parse(&text)?)
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, data).map_err(runtime(&path.display().to_string()))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(runtime(&dir.display().to_string()))
}

fn load(path: &Path) -> Result<Vec<SampleRecord>> {
    Ok(read_dataset(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        .records)
}

fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(runtime(&path.display().to_string()))?;
    Ok(decode_checkpoint(&bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        .0)
}

/// Merges several configs into one echo, first occurrence winning.
fn merged(parts: &[&KvConfig]) -> KvConfig {
    let mut out = KvConfig::new();
    for kv in parts {
        for k in kv.keys() {
            if out.get(k).is_none() {
                out.set(k, kv.get(k).unwrap_or_default());
            }
        }
    }
    out
}

fn gen(a: GenArgs) -> Result<()> {
    let mut kv = if a.fast {
        DatasetConfig::fast().to_kv()
    } else {
        DatasetConfig::default().to_kv()
    };
    if let Some(p) = &a.config {
        let file = read_kv(p)?;
        for k in file.keys() {
            kv.set(k, file.get(k).unwrap_or_default());
        }
    }
    if let Some(s) = a.seed {
        kv.set("seed", s);
    }
    let cfg = DatasetConfig::from_kv(&kv)?;
    let (records, stats) = generate_dataset(&cfg, a.count)?;
    log::info!(
        "{} records, {} window rejections, {} failed seeds",
        records.len(),
        stats.window_rejections,
        stats.failures.len()
    );
    let echo = cfg.to_kv();
    write_dataset(&a.out, &echo, cfg.n_eigs, &records)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let mut echo_path = a.out.clone().into_os_string();
    echo_path.push(".config.txt");
    write(Path::new(&echo_path), echo.to_string())
}

fn fem_validate(a: FemArgs) -> Result<()> {
    if !(a.h.is_finite() && a.h > 0.0) {
        return Err(CliError::Usage(
            "invalid value for `h`: must be positive".into(),
        ));
    }
    let ex = !a.no_extrapolate;
    let tol = tolerance_for(a.h, ex);
    println!("h = {}, extrapolate = {ex}, tolerance = {tol}", a.h);
    let checks = run_suite(a.h, ex).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut csv = String::from("check,measured,expected,rel_err,tolerance,pass\n");
    let mut failed = 0;
    for c in &checks {
        let ok = c.passed();
        failed += usize::from(!ok);
        println!(
            "{} {:<22} rel_err {:.3e} (tol {:.1e})",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            c.rel_err,
            c.tolerance
        );
        let _ = writeln!(
            csv,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{ok}",
            c.name, c.measured, c.expected, c.rel_err, c.tolerance
        );
    }
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        write(&dir.join("fem_validate.csv"), csv)?;
        let mut echo = KvConfig::new();
        echo.set("h", a.h);
        echo.set("extrapolate", ex);
        echo.set("tolerance", tol);
        write(&dir.join("config.txt"), echo.to_string())?;
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} checks failed",
            checks.len()
        )));
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => read_kv(p)?,
        None => KvConfig::new(),
    };
    let mut model_cfg = ModelConfig::from_kv(&file)?;
    if let Some(enc) = &a.encoder {
        let base = match enc.as_str() {
            "lstm" => ModelConfig::toy(),
            "dense" => ModelConfig::toy_dense(),
            other => {
                return Err(CliError::Usage(format!(
                    "invalid value for `encoder`: expected `lstm` or `dense`, got `{other}`"
                )))
            }
        };
        model_cfg.encoder = base.encoder;
    }
    let mut train_cfg = TrainConfig::from_kv(&file)?;
    if let Some(e) = a.epochs {
        train_cfg.epochs_first = e;
        train_cfg.epochs_last = e;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    let records = load(&a.data)?;
    let normalize = a.normalize || file.get_or("normalize_inputs", false)?;
    if normalize {
        let sp: Vec<Vec<f64>> = records.iter().map(|r| r.spacings()).collect();
        let (m, s) = normalization_stats(&sp.iter().map(|v| &v[..]).collect::<Vec<_>>());
        model_cfg.norm_mean = m;
        model_cfg.norm_std = s;
    }
    let mut model = Model::new(model_cfg)?;
    out_dir(&a.out)?;
    let train_kv = train_cfg.to_kv();
    write(
        &a.out.join("config.txt"),
        merged(&[&model.config().to_kv(), &train_kv]).to_string(),
    )?;
    let report = train(&mut model, &records, &train_cfg)?;
    write(&a.out.join("train_log.csv"), report.to_csv())?;
    write(
        &a.out.join("final.ckpt"),
        encode_checkpoint(&model, &train_kv),
    )?;
    let best = Model::from_params(model.config().clone(), report.best_params.clone())?;
    write(
        &a.out.join("best.ckpt"),
        encode_checkpoint(&best, &train_kv),
    )?;
    let mut split = String::from("index,role\n");
    for &i in &report.train_indices {
        let _ = writeln!(split, "{i},train");
    }
    for &i in &report.val_indices {
        let _ = writeln!(split, "{i},val");
    }
    write(&a.out.join("split.csv"), split)?;
    if let Some(msg) = report.aborted {
        return Err(CliError::Runtime(format!(
            "training aborted: {msg}; last finite parameters saved"
        )));
    }
    Ok(())
}

fn write_pgm(path: &Path, img: &RasterImage) -> Result<()> {
    write(path, img.to_pgm())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let records = load(&a.data)?;
    out_dir(&a.out)?;
    let predict = |r: &SampleRecord| model.predict(r).expect("record length matches model");
    if let Some(r) = records
        .iter()
        .find(|r| r.eigenvalues.len() != model.config().input_len)
    {
        return Err(CliError::Runtime(format!(
            "record with seed {} has {} eigenvalues, model expects {}",
            r.seed,
            r.eigenvalues.len(),
            model.config().input_len
        )));
    }
    let ev = evaluate(predict, &records);
    let mut per = String::from("index,seed,loss,area\n");
    for (i, (l, ar)) in ev.losses.iter().zip(&ev.areas).enumerate() {
        let _ = writeln!(per, "{i},{},{l:.16e},{ar:.16e}", records[i].seed);
    }
    write(&a.out.join("losses.csv"), per)?;
    write(&a.out.join("cdf.csv"), cdf_table(&ev.losses))?;
    let mut summary = String::from("metric,value\n");
    let _ = writeln!(summary, "mean_loss,{:.16e}", ev.mean);
    let _ = writeln!(summary, "samples,{}", records.len());
    if let Some(p) = &a.baseline_data {
        let train_recs = load(p)?;
        if let Some(b) = constant_baseline(&train_recs) {
            let held = evaluate(|_| b.image.clone(), &records);
            let _ = writeln!(summary, "baseline_mean_loss,{:.16e}", held.mean);
            let _ = writeln!(
                summary,
                "baseline_threshold,{}",
                b.threshold
                    .map_or("soft".to_string(), |t| format!("{t:.2}"))
            );
            write_pgm(&a.out.join("baseline.pgm"), &b.image)?;
        }
    }
    write(&a.out.join("summary.csv"), summary)?;
    for (band, i) in example_triptych(&ev.losses) {
        write_pgm(
            &a.out.join(format!("{}_pred.pgm", band.name())),
            &predict(&records[i]),
        )?;
        write_pgm(
            &a.out.join(format!("{}_true.pgm", band.name())),
            &records[i].image,
        )?;
    }
    let diag = weyl_preservation_diagnostic(predict, &records, &ev.losses);
    write(
        &a.out.join("weyl_preservation.csv"),
        PreservationRow::csv(&diag),
    )?;
    let mut worst: Vec<usize> = (0..records.len()).collect();
    worst.sort_by(|&x, &y| ev.losses[y].total_cmp(&ev.losses[x]).then(x.cmp(&y)));
    worst.truncate(a.rotation_worst);
    let rows: Vec<RotationRow> = worst
        .iter()
        .map(|&i| {
            let fit = rotation_search(&predict(&records[i]), &records[i].image, 1f64.to_radians())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(RotationRow {
                sample_id: i as u64,
                d4_loss: ev.losses[i],
                fit,
            })
        })
        .collect::<Result<_>>()?;
    write(&a.out.join("rotation.csv"), rotation_report(&rows))?;
    log::info!(
        "mean loss {:.6}; rotation rescues {:.1}% of the {} worst",
        ev.mean,
        100.0 * rescued_fraction(&rows, 0.0),
        rows.len()
    );
    let mut echo = KvConfig::new();
    echo.set("checkpoint", a.checkpoint.display());
    echo.set("data", a.data.display());
    echo.set("rotation_worst", a.rotation_worst);
    write(&a.out.join("config.txt"), echo.to_string())
}

fn probe_cmd(a: ProbeArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let records = load(&a.data)?;
    let split = dataset::split_indices(
        records.len(),
        (1.0 - a.test_fraction, a.test_fraction, 0.0),
        a.seed,
    )?;
    let train_recs: Vec<SampleRecord> = split.train.iter().map(|&i| records[i].clone()).collect();
    let test_recs: Vec<SampleRecord> = split.val.iter().map(|&i| records[i].clone()).collect();
    let targets = a
        .targets
        .iter()
        .map(|t| {
            TargetSet::parse(t).ok_or_else(|| {
                CliError::Usage(format!("invalid value for `targets`: unknown set `{t}`"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out_dir(&a.out)?;
    let encode = |sp: &[f64]| model.encode(sp).expect("record length matches model");
    let mut reports = Vec::new();
    let mut weyl_probe = None;
    for &target in &targets {
        for &hidden in &a.hidden {
            let cfg = ProbeConfig {
                hidden,
                target,
                epochs: a.epochs,
                seed: a.seed,
                ..ProbeConfig::default()
            };
            let (probe, report) = probe_train(encode, &train_recs, &test_recs, &cfg)?;
            log::info!(
                "probe {} hidden {hidden}: {:.2}%",
                target.name(),
                report.mean_pct
            );
            if target == TargetSet::Weyl && weyl_probe.is_none() {
                weyl_probe = Some(probe);
            }
            reports.push(report);
        }
    }
    write(&a.out.join("probe_errors.csv"), ProbeReport::csv(&reports))?;
    if let Some(probe) = weyl_probe {
        let table = probe_scaling(
            |_, _, sp| {
                let p = probe.predict(&encode(sp));
                [p[0], p[1], p[2]]
            },
            &test_recs,
            &a.s,
        );
        write(&a.out.join("probe_scaling.csv"), table.to_csv())?;
    }
    let mut echo = KvConfig::new();
    echo.set("checkpoint", a.checkpoint.display());
    echo.set("data", a.data.display());
    echo.set(
        "hidden",
        a.hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    echo.set("targets", a.targets.join(","));
    echo.set("epochs", a.epochs);
    echo.set("test_fraction", a.test_fraction);
    echo.set("seed", a.seed);
    write(&a.out.join("config.txt"), echo.to_string())
}

fn scale_cmd(a: ScaleArgs) -> Result<()> {
    if let Some(s) = a.s.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(CliError::Usage(format!("invalid value for `s`: {s}")));
    }
    let model = load_model(&a.checkpoint)?;
    let records = load(&a.data)?;
    out_dir(&a.out)?;
    let table = scaling_experiment(
        |sp| {
            model
                .forward(sp)
                .expect("record length matches model")
                .0
                .sum()
        },
        &records,
        &a.s,
    );
    log::info!("area exponent {:.4}", table.exponent);
    write(&a.out.join("scaling.csv"), table.to_csv())?;
    let mut echo = KvConfig::new();
    echo.set("checkpoint", a.checkpoint.display());
    echo.set("data", a.data.display());
    echo.set(
        "s",
        a.s.iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    write(&a.out.join("config.txt"), echo.to_string())
}

fn verify_cmd(a: VerifyArgs) -> Result<()> {
    let ds = read_dataset(&a.data)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.data.display())))?;
    verify_records_par(&ds.records, ds.header.n_eigs)?;
    println!("{} records verified", ds.records.len());
    Ok(())
}

fn export_cmd(a: ExportArgs) -> Result<()> {
    let records = load(&a.data)?;
    out_dir(&a.out)?;
    write(&a.out.join("spectra.csv"), spectra_csv(&records))?;
    write(&a.out.join("weyl.csv"), weyl_csv(&records))?;
    write(&a.out.join("vertices.csv"), vertices_csv(&records))?;
    for (i, r) in records.iter().take(a.images).enumerate() {
        write_pgm(&a.out.join(format!("image_{i:06}.pgm")), &r.image)?;
    }
    let mut echo = KvConfig::new();
    echo.set("data", a.data.display());
    echo.set("images", a.images);
    write(&a.out.join("config.txt"), echo.to_string())
}
