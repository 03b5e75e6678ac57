//! Command-line runner: dataset export, fitting, grid prediction, latitude
//! band reports, resolution sweeps and the embedding benchmark.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::data::{
    centers_for_spacing, mean_center_spacing, DatasetBundle, DatasetSpec, GridField, Task,
};
use crate::dfs::{EmbeddingSpec, Scales, DEFAULT_R_MAX, DEFAULT_R_MIN};
use crate::encoder::PositionalEncoder;
use crate::error::{GeoError, Result};
use crate::geom::{fibonacci_sphere, SpherePoint};
use crate::net::NetworkArch;
use crate::sphharm::{compile_basis, embed_closed_form};
use crate::train::{evaluate, fit, parse_key_values, predict, Metric, MetricReport, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "geoharm", version, about = "Location encoders on the sphere")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset and export its splits as CSV.
    Dataset(DatasetArgs),
    /// Train a positional embedding + network and report test metrics.
    Fit(FitArgs),
    /// Evaluate a checkpoint on a regular lon/lat grid.
    PredictGrid(PredictGridArgs),
    /// Test accuracy of a checkpoint per latitude band.
    Latitudinal(LatitudinalArgs),
    /// Checkerboard accuracy as the centers get denser.
    SweepResolution(SweepArgs),
    /// Wall time of embedding 10^4 points for several embeddings.
    BenchPe(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ExperimentArgs {
    /// Key=value file with `dataset`, `pe`, `nn` and training keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub pe: Option<String>,
    #[arg(long)]
    pub nn: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictGridArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cell size in degrees.
    #[arg(long, default_value_t = 1.0)]
    pub resolution: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LatitudinalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose test split is evaluated.
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub band_deg: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Training keys; `dataset`, `pe` and `nn` entries are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Semicolon-separated embedding specs.
    #[arg(long, default_value = "sh:L=10;sh:L=20")]
    pub pe: String,
    /// Semicolon-separated network specs.
    #[arg(long, default_value = "linear")]
    pub nn: String,
    /// Comma-separated center counts.
    #[arg(long, value_delimiter = ',')]
    pub centers: Vec<usize>,
    /// Comma-separated target spacings in degrees; converted to center counts.
    #[arg(long, value_delimiter = ',')]
    pub spacings: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated kinds: `sh` (precompiled), `sh-closed`, or any
    /// scale-based embedding kind such as `spherec+`.
    #[arg(long, value_delimiter = ',', default_value = "sh,sh-closed,spherec+")]
    pub kinds: Vec<String>,
    /// Comma-separated L values (SH kinds) or scale counts S (others).
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    pub params: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub n_points: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub pe: EmbeddingSpec,
    pub nn: NetworkArch,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Merges a config file (if any) with command-line overrides.
    pub fn resolve(args: &ExperimentArgs) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut source = "command line".to_string();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
            source = path.display().to_string();
            map = parse_key_values(&text, &source)?;
        }
        let mut pick = |key: &str, flag: &Option<String>| -> Result<String> {
            let file_value = map.remove(key);
            flag.clone().or(file_value).ok_or_else(|| {
                GeoError::invalid(format!(
                    "missing `{key}` (pass --{key} or set it in --config)"
                ))
            })
        };
        let dataset: DatasetSpec = pick("dataset", &args.dataset)?.parse()?;
        let pe: EmbeddingSpec = pick("pe", &args.pe)?.parse()?;
        let nn: NetworkArch = pick("nn", &args.nn)?.parse()?;
        let mut train = TrainConfig::from_map(&mut map, &source)?;
        if let Some(k) = map.keys().next() {
            return Err(GeoError::parse(&source, k, "unknown key"));
        }
        if let Some(seed) = args.seed {
            train.seed = seed;
        }
        if let Some(e) = args.max_epochs {
            train.max_epochs = e;
            train.patience = train.patience.min(e);
        }
        train.validate()?;
        if let DatasetSpec::Grid { path, .. }
        | DatasetSpec::LandOcean {
            path: Some(path), ..
        } = &dataset
        {
            if !Path::new(path).exists() {
                return Err(GeoError::invalid(format!(
                    "dataset file `{path}` does not exist"
                )));
            }
        }
        Ok(Self {
            dataset,
            pe,
            nn,
            train,
        })
    }

    /// Canonical text used for the config hash.
    pub fn canonical_text(&self) -> String {
        format!(
            "dataset = {}\npe = {}\nnn = {}\n{}",
            self.dataset,
            self.pe,
            self.nn,
            self.train.to_kv_text()
        )
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_text().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| GeoError::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| GeoError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    write_file(path, text + "\n")
}

fn write_manifest(
    out: &Path,
    command: &str,
    artifacts: &[String],
    config: Option<&str>,
) -> Result<()> {
    let hash = config.map(|c| hex(&Sha256::digest(c.as_bytes())));
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": command,
            "artifacts": artifacts,
            "config": config,
            "config_hash": hash,
        }),
    )
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn test_metric(task: Task) -> (Metric, &'static str) {
    match task {
        Task::Regression(_) => (Metric::Mse, "test_mse"),
        _ => (Metric::Accuracy, "test_accuracy"),
    }
}

fn cmd_dataset(args: &DatasetArgs) -> Result<()> {
    let spec: DatasetSpec = args.dataset.parse()?;
    let bundle = spec.build(args.seed)?;
    create_dir(&args.out)?;
    let mut artifacts = Vec::new();
    for name in ["train", "val", "test"] {
        let file = format!("{name}.csv");
        write_file(&args.out.join(&file), bundle.split_csv(bundle.split(name)?))?;
        artifacts.push(file);
    }
    let config = format!("dataset = {spec}\nseed = {}\n", args.seed);
    write_manifest(&args.out, "dataset", &artifacts, Some(&config))?;
    println!(
        "{spec}: {} train, {} val, {} test points -> {}",
        bundle.train.len(),
        bundle.val.len(),
        bundle.test.len(),
        args.out.display()
    );
    Ok(())
}

/// Result of one training run inside `fit`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub test_metric: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub seconds: f64,
}

/// Trains `repeats` models with seeds `seed, seed+1, …` on one dataset
/// draw and writes all artifacts to `out`.
pub fn run_fit(cfg: &ExperimentConfig, repeats: usize, out: &Path) -> Result<Vec<RunSummary>> {
    if repeats == 0 {
        return Err(GeoError::invalid("--repeats must be >= 1"));
    }
    create_dir(out)?;
    let bundle = cfg.dataset.build(cfg.train.seed)?;
    let encoder = PositionalEncoder::new(&cfg.pe)?;
    let (metric, metric_name) = test_metric(bundle.task);
    let mut artifacts = Vec::new();
    let mut runs = Vec::new();
    for r in 0..repeats {
        let seed = cfg.train.seed + r as u64;
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let t0 = Instant::now();
        let result = fit(&bundle, &cfg.pe, cfg.nn, &train_cfg)?;
        let seconds = t0.elapsed().as_secs_f64();
        let value = evaluate(&result.model, &encoder, &bundle.test, metric)?
            .scalar()
            .expect("scalar metric");
        println!(
            "run {}/{repeats} seed={seed}: {metric_name}={value:.4} best_epoch={} epochs={} ({seconds:.1}s)",
            r + 1,
            result.best_epoch,
            result.history.len()
        );
        let suffix = if repeats == 1 {
            String::new()
        } else {
            format!("_run{r}")
        };
        let history = format!("history{suffix}.csv");
        write_file(&out.join(&history), result.history_csv())?;
        artifacts.push(history);
        let ckpt = format!("model{suffix}.geoh");
        Checkpoint {
            model: result.model.clone(),
            embedding: cfg.pe,
            task: bundle.task,
        }
        .save(&out.join(&ckpt))?;
        artifacts.push(ckpt);
        runs.push(RunSummary {
            seed,
            test_metric: value,
            best_epoch: result.best_epoch,
            epochs: result.history.len(),
            seconds,
        });
    }
    let values: Vec<f64> = runs.iter().map(|r| r.test_metric).collect();
    let (mean, std) = mean_std(&values);
    let mut metrics = json!({
        "task": bundle.task.to_string(),
        "dataset": cfg.dataset.to_string(),
        "pe": cfg.pe.to_string(),
        "nn": cfg.nn.to_string(),
        "metric": metric_name,
        "mean": mean,
        "std": std,
        "runs": runs.iter().map(|r| json!({
            "seed": r.seed,
            "value": r.test_metric,
            "best_epoch": r.best_epoch,
            "epochs": r.epochs,
            "seconds": r.seconds,
        })).collect::<Vec<_>>(),
    });
    metrics[metric_name] = json!(mean);
    write_json(&out.join("metrics.json"), &metrics)?;
    artifacts.push("metrics.json".into());
    let canonical = format!("{}repeats = {repeats}\n", cfg.canonical_text());
    write_manifest(out, "fit", &artifacts, Some(&canonical))?;
    println!("{metric_name}: mean={mean:.4} std={std:.4}");
    Ok(runs)
}

/// Regular grid of cell centers, rows from south to north.
pub fn regular_grid(resolution_deg: f64) -> Result<(usize, usize, Vec<SpherePoint>)> {
    if !(resolution_deg.is_finite() && resolution_deg > 0.0 && resolution_deg <= 180.0) {
        return Err(GeoError::invalid("resolution must be in (0, 180] degrees"));
    }
    let cols = (360.0 / resolution_deg).round().max(1.0) as usize;
    let rows = (180.0 / resolution_deg).round().max(1.0) as usize;
    let (dlon, dlat) = (360.0 / cols as f64, 180.0 / rows as f64);
    let mut pts = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            pts.push(SpherePoint::from_degrees(
                -180.0 + (j as f64 + 0.5) * dlon,
                -90.0 + (i as f64 + 0.5) * dlat,
            )?);
        }
    }
    Ok((rows, cols, pts))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Distinct colors for class maps.
fn class_color(c: usize) -> [u8; 3] {
    let h = (c as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.65, 0.95);
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Binary PGM (P5) with row 0 at the top.
pub fn pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Binary PPM (P6) with row 0 at the top.
pub fn ppm(width: usize, height: usize, pixels: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(p);
    }
    out
}

fn cmd_predict_grid(args: &PredictGridArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let encoder = PositionalEncoder::new(&ck.embedding)?;
    let (rows, cols, pts) = regular_grid(args.resolution)?;
    let pred = predict(&ck.model, &encoder, &pts)?;
    create_dir(&args.out)?;
    let (names, values): (Vec<String>, Vec<f64>) = match ck.task {
        Task::MultiClass(_) => (
            vec!["class".into()],
            pred.iter_rows()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                        )
                        .0 as f64
                })
                .collect(),
        ),
        Task::Binary => (
            vec!["probability".into()],
            pred.iter_rows().map(|r| sigmoid(r[0])).collect(),
        ),
        Task::Regression(c) => {
            let mut v = Vec::with_capacity(c * pts.len());
            for ch in 0..c {
                v.extend(pred.iter_rows().map(|r| r[ch]));
            }
            ((0..c).map(|ch| format!("channel{ch}")).collect(), v)
        }
    };
    let (dlon, dlat) = (360.0 / cols as f64, 180.0 / rows as f64);
    let field = GridField::new(
        (-180.0 + dlon / 2.0, dlon, cols),
        (-90.0 + dlat / 2.0, dlat, rows),
        names,
        values,
    )?;
    field.save(&args.out.join("grid.grdf"))?;
    let mut artifacts = vec!["grid.grdf".to_string()];

    // Images run north to south.
    let cell = |img_row: usize, col: usize| field.value(0, rows - 1 - img_row, col);
    let first = &field.values[..rows * cols];
    let (lo, hi) = first
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let gray: Vec<u8> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| {
            let v = cell(r, c);
            let t = match ck.task {
                Task::Binary => v,
                Task::MultiClass(k) => v / (k.max(2) - 1) as f64,
                Task::Regression(_) if hi > lo => (v - lo) / (hi - lo),
                Task::Regression(_) => 0.5,
            };
            (t.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    write_file(&args.out.join("preview.pgm"), pgm(cols, rows, &gray))?;
    artifacts.push("preview.pgm".into());
    if let Task::MultiClass(_) = ck.task {
        let colored: Vec<[u8; 3]> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| class_color(cell(r, c) as usize))
            .collect();
        write_file(&args.out.join("classes.ppm"), ppm(cols, rows, &colored))?;
        artifacts.push("classes.ppm".into());
    }
    let config = format!(
        "checkpoint = {}\nresolution = {}\n",
        args.checkpoint.display(),
        args.resolution
    );
    write_manifest(&args.out, "predict-grid", &artifacts, Some(&config))?;
    println!("{cols}x{rows} grid -> {}", args.out.display());
    Ok(())
}

pub fn latitudinal_csv(ck: &Checkpoint, bundle: &DatasetBundle, band_deg: f64) -> Result<String> {
    if let Task::Regression(_) = ck.task {
        return Err(GeoError::invalid(
            "latitudinal report needs a classification checkpoint",
        ));
    }
    let encoder = PositionalEncoder::new(&ck.embedding)?;
    let report = evaluate(
        &ck.model,
        &encoder,
        &bundle.test,
        Metric::BandedAccuracy { band_deg },
    )?;
    let MetricReport::Bands(bands) = report else {
        unreachable!("banded metric returns bands")
    };
    let mut csv = String::from("band_south_deg,band_north_deg,accuracy,n_points\n");
    for b in bands {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            b.south_deg, b.north_deg, b.accuracy, b.n_points
        );
    }
    Ok(csv)
}

fn cmd_latitudinal(args: &LatitudinalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let spec: DatasetSpec = args.dataset.parse()?;
    let bundle = spec.build(args.seed)?;
    if bundle.task != ck.task {
        return Err(GeoError::invalid(format!(
            "checkpoint task {} does not match dataset task {}",
            ck.task, bundle.task
        )));
    }
    let csv = latitudinal_csv(&ck, &bundle, args.band_deg)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("latitudinal.csv"), &csv)?;
    let config = format!(
        "checkpoint = {}\ndataset = {spec}\nseed = {}\nband_deg = {}\n",
        args.checkpoint.display(),
        args.seed,
        args.band_deg
    );
    write_manifest(
        &args.out,
        "latitudinal",
        &["latitudinal.csv".into()],
        Some(&config),
    )?;
    print!("{csv}");
    Ok(())
}

/// One row of the resolution sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub pe: String,
    pub nn: String,
    pub num_centers: usize,
    pub mean_dist_deg: f64,
    pub test_accuracy: f64,
}

/// Checkerboard accuracy for every (pe, nn, center count) combination.
pub fn run_sweep(
    pes: &[EmbeddingSpec],
    nns: &[NetworkArch],
    centers: &[usize],
    n_train: usize,
    train: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &n in centers {
        let spec = DatasetSpec::Checkerboard(crate::data::CheckerboardConfig {
            num_centers: n,
            n_train,
            n_val: n_train,
            ..Default::default()
        });
        let bundle = spec.build(train.seed)?;
        let spacing = mean_center_spacing(n)?;
        for pe in pes {
            let encoder = PositionalEncoder::new(pe)?;
            for &nn in nns {
                let result = fit(&bundle, pe, nn, train)?;
                let acc = evaluate(&result.model, &encoder, &bundle.test, Metric::Accuracy)?
                    .scalar()
                    .expect("scalar metric");
                println!("{pe} {nn} centers={n} spacing={spacing:.2}: accuracy={acc:.4}");
                rows.push(SweepRow {
                    pe: pe.to_string(),
                    nn: nn.to_string(),
                    num_centers: n,
                    mean_dist_deg: spacing,
                    test_accuracy: acc,
                });
            }
        }
    }
    Ok(rows)
}

fn quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("pe,nn,num_centers,mean_dist_deg,test_accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            quote(&r.pe),
            quote(&r.nn),
            r.num_centers,
            r.mean_dist_deg,
            r.test_accuracy
        );
    }
    out
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut train = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
            let source = path.display().to_string();
            let mut map = parse_key_values(&text, &source)?;
            for k in ["dataset", "pe", "nn"] {
                map.remove(k);
            }
            let cfg = TrainConfig::from_map(&mut map, &source)?;
            if let Some(k) = map.keys().next() {
                return Err(GeoError::parse(&source, k, "unknown key"));
            }
            cfg
        }
        None => TrainConfig::default(),
    };
    train.seed = args.seed;
    if let Some(e) = args.max_epochs {
        train.max_epochs = e;
        train.patience = train.patience.min(e);
    }
    let pes = args
        .pe
        .split(';')
        .map(str::parse)
        .collect::<Result<Vec<EmbeddingSpec>>>()?;
    let nns = args
        .nn
        .split(';')
        .map(str::parse)
        .collect::<Result<Vec<NetworkArch>>>()?;
    let mut centers = args.centers.clone();
    for &s in &args.spacings {
        centers.push(centers_for_spacing(s)?);
    }
    if centers.is_empty() {
        return Err(GeoError::invalid("pass --centers or --spacings"));
    }
    let rows = run_sweep(&pes, &nns, &centers, args.n_train, &train)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("sweep.csv"), sweep_csv(&rows))?;
    let config = format!(
        "pe = {}\nnn = {}\ncenters = {:?}\nn_train = {}\n{}",
        args.pe,
        args.nn,
        centers,
        args.n_train,
        train.to_kv_text()
    );
    write_manifest(
        &args.out,
        "sweep-resolution",
        &["sweep.csv".into()],
        Some(&config),
    )?;
    Ok(())
}

/// Median of `repeats` wall-time measurements of `f`.
pub fn median_seconds(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    })
}

/// Time to embed `points` with one configuration. `sh` includes compiling
/// the basis; `sh-closed` evaluates every harmonic from the closed form.
pub fn bench_one(kind: &str, param: usize, points: &[SpherePoint], repeats: usize) -> Result<f64> {
    match kind {
        "sh" => median_seconds(repeats, || {
            let basis = compile_basis(param)?;
            let mut out = vec![0.0; basis.dim()];
            let mut acc = 0.0;
            for p in points {
                basis.embed_into(p, &mut out);
                acc += out[out.len() - 1];
            }
            std::hint::black_box(acc);
            Ok(())
        }),
        "sh-closed" => median_seconds(repeats, || {
            let mut acc = 0.0;
            for p in points {
                acc += embed_closed_form(param, p)?[0];
            }
            std::hint::black_box(acc);
            Ok(())
        }),
        other => {
            let spec: EmbeddingSpec =
                format!("{other}:S={param},rmin={DEFAULT_R_MIN},rmax={DEFAULT_R_MAX}").parse()?;
            Scales::new(param, DEFAULT_R_MIN, DEFAULT_R_MAX)?;
            median_seconds(repeats, || {
                let enc = PositionalEncoder::new(&spec)?;
                std::hint::black_box(enc.embed_batch(points));
                Ok(())
            })
        }
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let points = fibonacci_sphere(args.n_points)?.into_inner();
    let mut csv = String::from("kind,param,median_seconds\n");
    for kind in &args.kinds {
        for &param in &args.params {
            let t = bench_one(kind, param, &points, args.repeats)?;
            println!("{kind} {param}: {t:.4}s");
            let _ = writeln!(csv, "{kind},{param},{t}");
        }
    }
    create_dir(&args.out)?;
    write_file(&args.out.join("bench.csv"), &csv)?;
    let config = format!(
        "kinds = {:?}\nparams = {:?}\nn_points = {}\nrepeats = {}\n",
        args.kinds, args.params, args.n_points, args.repeats
    );
    write_manifest(&args.out, "bench-pe", &["bench.csv".into()], Some(&config))?;
    Ok(())
}

/// Parses a CSV written by this module into its header and rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let header = split_csv_line(
        lines
            .next()
            .ok_or_else(|| GeoError::parse("csv", "line 1", "empty file"))?,
    );
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = split_csv_line(line);
        if row.len() != header.len() {
            return Err(GeoError::parse(
                "csv",
                format!("line {}", i + 2),
                format!("{} fields, header has {}", row.len(), header.len()),
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Dataset(a) => cmd_dataset(a),
        Command::Fit(a) => {
            let cfg = ExperimentConfig::resolve(&a.exp)?;
            run_fit(&cfg, a.repeats, &a.out).map(|_| ())
        }
        Command::PredictGrid(a) => cmd_predict_grid(a),
        Command::Latitudinal(a) => cmd_latitudinal(a),
        Command::SweepResolution(a) => cmd_sweep(a),
        Command::BenchPe(a) => cmd_bench(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> std::result::Result<(), String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| e.to_string())?;
    run(cli).map_err(|e| e.to_string())
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let (rows, cols, pts) = regular_grid(1.0).unwrap();
        assert_eq!((rows, cols, pts.len()), (180, 360, 64_800));
        assert!((pts[0].lon_deg() + 179.5).abs() < 1e-12);
        assert!((pts[0].lat_deg() + 89.5).abs() < 1e-12);
        assert!(regular_grid(0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![SweepRow {
            pe: "grid:S=4,rmin=10,rmax=360".into(),
            nn: "siren:H=8,N=1,w0=30,p=0".into(),
            num_centers: 100,
            mean_dist_deg: 19.5,
            test_accuracy: 0.875,
        }];
        let (header, parsed) = read_csv(&sweep_csv(&rows)).unwrap();
        assert!(header.contains(&"mean_dist_deg".to_string()));
        assert_eq!(parsed[0][0], rows[0].pe);
        assert_eq!(parsed[0][1], rows[0].nn);
        assert_eq!(parsed[0][3].parse::<f64>().unwrap(), 19.5);
    }

    #[test]
    fn image_headers() {
        let img = pgm(3, 2, &[0, 1, 2, 3, 4, 255]);
        assert!(img.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(img.len(), 11 + 6);
        let img = ppm(1, 1, &[class_color(3)]);
        assert!(img.starts_with(b"P6\n1 1\n255\n"));
        let colors: std::collections::HashSet<_> = (0..16).map(class_color).collect();
        assert_eq!(colors.len(), 16);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn experiment_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(
            &path,
            "dataset = checkerboard:train=100,val=100,test=100\npe = sh:L=4\nnn = linear\nlearning_rate = 0.01\npatience = 5\n",
        )
        .unwrap();
        let args = ExperimentArgs {
            config: Some(path.clone()),
            dataset: None,
            pe: Some("sh:L=6".into()),
            nn: None,
            seed: Some(3),
            max_epochs: Some(2),
        };
        let cfg = ExperimentConfig::resolve(&args).unwrap();
        assert_eq!(cfg.pe, EmbeddingSpec::SphericalHarmonics { degree: 6 });
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.train.max_epochs, 2);
        assert_eq!(cfg.train.patience, 2);
        assert_eq!(cfg.hash().len(), 64);
        assert_eq!(cfg.hash(), ExperimentConfig::resolve(&args).unwrap().hash());

        std::fs::write(
            &path,
            "dataset = checkerboard\npe = sh\nnn = linear\nlr = 0.1\n",
        )
        .unwrap();
        assert!(ExperimentConfig::resolve(&args).is_err());
        let missing = ExperimentArgs {
            config: None,
            dataset: Some("grid:path=/nonexistent.grdf".into()),
            pe: Some("sh".into()),
            nn: Some("linear".into()),
            seed: None,
            max_epochs: None,
        };
        assert!(ExperimentConfig::resolve(&missing).is_err());
    }
}
