//! Benchmark datasets: the Fibonacci checkerboard, land/ocean labels from a
//! polygon file, synthetic harmonic fields and gridded multi-channel data.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geom::{
    fibonacci_sphere, format_significant, haversine, nearest_center_labels, uniform_points,
    SpherePoint,
};
use crate::grammar::SpecString;
use crate::matrix::Matrix;
use crate::sphharm::compile_basis;
use crate::train::Targets;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    MultiClass(usize),
    Binary,
    Regression(usize),
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::MultiClass(k) => write!(f, "multiclass({k})"),
            Task::Binary => f.write_str("binary"),
            Task::Regression(c) => write!(f, "regression({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub points: Vec<SpherePoint>,
    pub targets: Targets,
}

impl Split {
    pub fn new(points: Vec<SpherePoint>, targets: Targets) -> Result<Self> {
        if points.len() != targets.len() {
            return Err(GeoError::invalid(format!(
                "{} points but {} targets",
                points.len(),
                targets.len()
            )));
        }
        Ok(Self { points, targets })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-channel affine map applied to regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Mean and standard deviation of each column; constant columns get
    /// a unit scale.
    pub fn fit(values: &Matrix) -> Self {
        let (n, c) = (values.rows().max(1) as f64, values.cols());
        let mut mean = vec![0.0; c];
        for row in values.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; c];
        for row in values.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, values: &mut Matrix) {
        for r in 0..values.rows() {
            for ((v, m), s) in values.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn invert(&self, values: &mut Matrix) {
        for r in 0..values.rows() {
            for ((v, m), s) in values.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub task: Task,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    /// Column names for regression targets.
    pub channel_names: Vec<String>,
    /// Present when regression targets were standardized.
    pub standardization: Option<Standardization>,
}

impl DatasetBundle {
    fn new(task: Task, train: Split, val: Split, test: Split) -> Self {
        Self {
            task,
            train,
            val,
            test,
            channel_names: Vec::new(),
            standardization: None,
        }
    }

    pub fn split(&self, name: &str) -> Result<&Split> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(GeoError::invalid(format!("unknown split `{other}`"))),
        }
    }

    /// CSV `lon_deg,lat_deg,target…` for one split.
    pub fn split_csv(&self, split: &Split) -> String {
        let mut out = String::from("lon_deg,lat_deg");
        match &split.targets {
            Targets::Values(m) => {
                for c in 0..m.cols() {
                    out.push(',');
                    match self.channel_names.get(c) {
                        Some(name) => out.push_str(name),
                        None => out.push_str(&format!("target{c}")),
                    }
                }
            }
            _ => out.push_str(",target"),
        }
        out.push('\n');
        for (i, p) in split.points.iter().enumerate() {
            out.push_str(&format_significant(p.lon_deg(), 9));
            out.push(',');
            out.push_str(&format_significant(p.lat_deg(), 9));
            match &split.targets {
                Targets::Classes(v) => out.push_str(&format!(",{}", v[i])),
                Targets::Binary(v) => out.push_str(&format!(",{}", v[i] as u8)),
                Targets::Values(m) => {
                    for v in m.row(i) {
                        out.push(',');
                        out.push_str(&v.to_string());
                    }
                }
                Targets::Absent(_) => out.push_str(",0"),
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckerboardConfig {
    pub num_centers: usize,
    pub num_classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for CheckerboardConfig {
    fn default() -> Self {
        Self {
            num_centers: 100,
            num_classes: 16,
            n_train: 10_000,
            n_val: 10_000,
            n_test: 10_000,
            seed: 0,
        }
    }
}

/// Fibonacci checkerboard: `num_centers` lattice points labeled
/// `index mod num_classes`; every sample takes the label of its nearest
/// center. Train and val are independent uniform draws, test is a
/// Fibonacci lattice.
pub fn build_checkerboard(cfg: &CheckerboardConfig) -> Result<DatasetBundle> {
    if cfg.num_classes < 2 || cfg.num_classes > cfg.num_centers {
        return Err(GeoError::invalid(format!(
            "need 2 <= num_classes <= num_centers, got {} classes and {} centers",
            cfg.num_classes, cfg.num_centers
        )));
    }
    if cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0 {
        return Err(GeoError::invalid(
            "checkerboard split sizes must be positive",
        ));
    }
    let centers = fibonacci_sphere(cfg.num_centers)?;
    let labels: Vec<usize> = (0..cfg.num_centers).map(|i| i % cfg.num_classes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let make = |points: Vec<SpherePoint>| -> Result<Split> {
        let y = nearest_center_labels(&points, &centers, &labels)?;
        Split::new(points, Targets::Classes(y))
    };
    let train = make(uniform_points(&mut rng, cfg.n_train).into_inner())?;
    let val = make(uniform_points(&mut rng, cfg.n_val).into_inner())?;
    let test = make(fibonacci_sphere(cfg.n_test)?.into_inner())?;
    Ok(DatasetBundle::new(
        Task::MultiClass(cfg.num_classes),
        train,
        val,
        test,
    ))
}

/// Mean distance in degrees from each checkerboard center to its nearest
/// neighbour.
pub fn mean_center_spacing(num_centers: usize) -> Result<f64> {
    if num_centers < 2 {
        return Err(GeoError::invalid("mean_center_spacing needs >= 2 centers"));
    }
    let c = fibonacci_sphere(num_centers)?;
    let total: f64 = c
        .iter()
        .enumerate()
        .map(|(i, p)| {
            c.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| haversine(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok((total / num_centers as f64).to_degrees())
}

/// Number of checkerboard centers whose mean spacing is closest to
/// `spacing_deg`.
pub fn centers_for_spacing(spacing_deg: f64) -> Result<usize> {
    if !(spacing_deg.is_finite() && spacing_deg > 0.0) {
        return Err(GeoError::invalid("spacing must be positive"));
    }
    // Equal-area cells: spacing ≈ c / sqrt(n); calibrate c at 100 centers.
    let c = mean_center_spacing(100)? * 10.0;
    Ok(((c / spacing_deg).powi(2).round() as usize).max(2))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolygonFile {
    format: String,
    version: u32,
    features: Vec<FeatureFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureFile {
    #[serde(default)]
    name: String,
    rings: Vec<Vec<[f64; 2]>>,
}

pub const POLYGON_FORMAT: &str = "geoharm-polygons";

/// Closed ring with precomputed edge data for the meridian ray test.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    points: Vec<SpherePoint>,
    max_lat: f64,
    /// `+1` when the ring winds eastward once around the globe, `-1`
    /// westward, `0` otherwise.
    pole_winding: i32,
}

impl Ring {
    pub fn new(points: Vec<SpherePoint>) -> Result<Self> {
        if points.len() < 4 {
            return Err(GeoError::invalid("ring needs at least 4 points"));
        }
        if points.first() != points.last() {
            return Err(GeoError::invalid("ring is not closed"));
        }
        let max_lat = points
            .iter()
            .map(|p| p.lat())
            .fold(f64::NEG_INFINITY, f64::max);
        let winding: f64 = points
            .windows(2)
            .map(|w| lon_step(w[0].lon(), w[1].lon()))
            .sum();
        let pole_winding = (winding / TAU).round() as i32;
        Ok(Self {
            points,
            max_lat,
            pole_winding,
        })
    }

    pub fn points(&self) -> &[SpherePoint] {
        &self.points
    }

    /// Even-odd parity of the northward meridian ray from `p`. Rings that
    /// encircle a pole are resolved by winding: stored exteriors run
    /// clockwise on the map, so an eastward loop encloses the south pole
    /// (which the northward ray already handles) and a westward loop the
    /// north pole (which flips the parity).
    fn contains(&self, p: &SpherePoint) -> bool {
        let flip = self.pole_winding < 0;
        let (lon, lat) = (p.lon(), p.lat());
        if lat > self.max_lat {
            return flip;
        }
        let mut inside = false;
        for w in self.points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let d = lon_step(a.lon(), b.lon());
            if d == 0.0 {
                continue;
            }
            // Express the query longitude in the edge's unwrapped frame.
            let mut q = lon;
            let (lo, hi) = if d > 0.0 {
                (a.lon(), a.lon() + d)
            } else {
                (a.lon() + d, a.lon())
            };
            if q < lo {
                q += TAU;
            } else if q >= hi {
                q -= TAU;
            }
            if !(lo <= q && q < hi) {
                continue;
            }
            let t = (q - a.lon()) / d;
            let cross_lat = a.lat() + t * (b.lat() - a.lat());
            if cross_lat > lat {
                inside = !inside;
            }
        }
        inside ^ flip
    }
}

/// Signed longitude change along the shorter way round.
fn lon_step(from: f64, to: f64) -> f64 {
    let mut d = to - from;
    if d > PI {
        d -= TAU;
    } else if d < -PI {
        d += TAU;
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub rings: Vec<Ring>,
}

impl Feature {
    /// Even-odd over all rings, so holes cut out of exteriors.
    pub fn contains(&self, p: &SpherePoint) -> bool {
        self.rings.iter().fold(false, |acc, r| acc ^ r.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolygonSet {
    pub features: Vec<Feature>,
}

impl PolygonSet {
    pub fn num_rings(&self) -> usize {
        self.features.iter().map(|f| f.rings.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        self.features.iter().flat_map(|f| f.rings.iter())
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let file: PolygonFile = serde_json::from_str(text).map_err(|e| {
            GeoError::parse(
                source_name,
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        if file.format != POLYGON_FORMAT || file.version != 1 {
            return Err(GeoError::parse(
                source_name,
                "header",
                format!(
                    "expected format `{POLYGON_FORMAT}` version 1, got `{}` version {}",
                    file.format, file.version
                ),
            ));
        }
        let mut features = Vec::with_capacity(file.features.len());
        for (fi, f) in file.features.into_iter().enumerate() {
            let mut rings = Vec::with_capacity(f.rings.len());
            for (ri, raw) in f.rings.into_iter().enumerate() {
                let at = || format!("feature {fi} (`{}`) ring {ri}", f.name);
                let pts = raw
                    .iter()
                    .map(|&[lon, lat]| {
                        if !(-180.0..=180.0).contains(&lon) {
                            return Err(GeoError::parse(
                                source_name,
                                at(),
                                format!("longitude {lon} outside [-180, 180]"),
                            ));
                        }
                        SpherePoint::from_degrees(lon, lat)
                            .map_err(|e| GeoError::parse(source_name, at(), e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rings.push(
                    Ring::new(pts)
                        .map_err(|e| GeoError::parse(source_name, at(), e.to_string()))?,
                );
            }
            features.push(Feature {
                name: f.name,
                rings,
            });
        }
        Ok(Self { features })
    }

    pub fn to_json(&self) -> String {
        let file = PolygonFile {
            format: POLYGON_FORMAT.to_string(),
            version: 1,
            features: self
                .features
                .iter()
                .map(|f| FeatureFile {
                    name: f.name.clone(),
                    rings: f
                        .rings
                        .iter()
                        .map(|r| {
                            r.points
                                .iter()
                                .map(|p| [p.lon_deg(), p.lat_deg()])
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("polygon file serializes")
    }
}

/// Coarse world land polygons shipped with the crate.
pub const BUNDLED_LAND_JSON: &str = include_str!("../../../assets/land_110m.json");

pub fn bundled_land() -> Result<PolygonSet> {
    PolygonSet::from_json(BUNDLED_LAND_JSON, "bundled land_110m.json")
}

pub fn load_polygons(path: &Path) -> Result<PolygonSet> {
    let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
    PolygonSet::from_json(&text, &path.display().to_string())
}

pub fn point_in_land(p: &SpherePoint, polygons: &PolygonSet) -> bool {
    polygons.features.iter().any(|f| f.contains(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandOceanConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for LandOceanConfig {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_val: 5000,
            n_test: 5000,
            seed: 0,
        }
    }
}

/// Binary land/ocean labels: uniform train and an independent uniform val
/// draw, Fibonacci test points.
pub fn build_landocean(polygons: &PolygonSet, cfg: &LandOceanConfig) -> Result<DatasetBundle> {
    if cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0 {
        return Err(GeoError::invalid("land-ocean split sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let make = |points: Vec<SpherePoint>| -> Result<Split> {
        let y = points.iter().map(|p| point_in_land(p, polygons)).collect();
        Split::new(points, Targets::Binary(y))
    };
    let train = make(uniform_points(&mut rng, cfg.n_train).into_inner())?;
    let val = make(uniform_points(&mut rng, cfg.n_val).into_inner())?;
    let test = make(fibonacci_sphere(cfg.n_test)?.into_inner())?;
    Ok(DatasetBundle::new(Task::Binary, train, val, test))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthFieldConfig {
    pub channels: usize,
    pub truth_degree: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthFieldConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            truth_degree: 5,
            n_train: 5000,
            n_val: 2000,
            n_test: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthField {
    pub bundle: DatasetBundle,
    /// `channels × truth_degree²` harmonic weights in feature order.
    pub coefficients: Matrix,
}

/// Random band-limited field: channel `c` is `Σ w_{c,lm} Y_lm` over degrees
/// `< truth_degree` with `w ~ N(0, 1) / (1 + l)`, standardized per channel
/// with train statistics. Train and val are uniform draws, test is a
/// Fibonacci lattice.
pub fn synth_field_bundle(cfg: &SynthFieldConfig) -> Result<SynthField> {
    if cfg.channels == 0 {
        return Err(GeoError::invalid(
            "synthetic field needs at least one channel",
        ));
    }
    if cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0 {
        return Err(GeoError::invalid(
            "synthetic field split sizes must be positive",
        ));
    }
    let basis = compile_basis(cfg.truth_degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = basis.dim();
    let mut coefficients = Matrix::zeros(cfg.channels, dim);
    for c in 0..cfg.channels {
        for l in 0..cfg.truth_degree {
            for j in l * l..(l + 1) * (l + 1) {
                let z: f64 = StandardNormal.sample(&mut rng);
                coefficients.row_mut(c)[j] = z / (1 + l) as f64;
            }
        }
    }
    let values = |points: &[SpherePoint]| -> Matrix {
        let mut out = Matrix::zeros(points.len(), cfg.channels);
        let mut y = vec![0.0; dim];
        for (i, p) in points.iter().enumerate() {
            basis.embed_into(p, &mut y);
            for c in 0..cfg.channels {
                out.row_mut(i)[c] = coefficients.row(c).iter().zip(&y).map(|(w, v)| w * v).sum();
            }
        }
        out
    };
    let train_pts = uniform_points(&mut rng, cfg.n_train).into_inner();
    let val_pts = uniform_points(&mut rng, cfg.n_val).into_inner();
    let test_pts = fibonacci_sphere(cfg.n_test)?.into_inner();
    let (mut yt, mut yv, mut ys) = (values(&train_pts), values(&val_pts), values(&test_pts));
    let scaling = Standardization::fit(&yt);
    for m in [&mut yt, &mut yv, &mut ys] {
        scaling.apply(m);
    }
    let mut bundle = DatasetBundle::new(
        Task::Regression(cfg.channels),
        Split::new(train_pts, Targets::Values(yt))?,
        Split::new(val_pts, Targets::Values(yv))?,
        Split::new(test_pts, Targets::Values(ys))?,
    );
    bundle.channel_names = (0..cfg.channels).map(|c| format!("channel{c}")).collect();
    bundle.standardization = Some(scaling);
    Ok(SynthField {
        bundle,
        coefficients,
    })
}

pub const GRID_MAGIC: &[u8; 5] = b"GRDF1";

/// Regular lon/lat grid of `C` channels. Axis origins are the centers of
/// the first column and row; values are stored channel-major, then row
/// (latitude), then column (longitude).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub lon0_deg: f64,
    pub dlon_deg: f64,
    pub cols: usize,
    pub lat0_deg: f64,
    pub dlat_deg: f64,
    pub rows: usize,
    pub channel_names: Vec<String>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(
        (lon0_deg, dlon_deg, cols): (f64, f64, usize),
        (lat0_deg, dlat_deg, rows): (f64, f64, usize),
        channel_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let g = Self {
            lon0_deg,
            dlon_deg,
            cols,
            lat0_deg,
            dlat_deg,
            rows,
            channel_names,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.channel_names.is_empty() {
            return Err(GeoError::invalid("grid needs rows, columns and channels"));
        }
        if !(self.dlon_deg > 0.0 && self.dlat_deg > 0.0)
            || !self.dlon_deg.is_finite()
            || !self.dlat_deg.is_finite()
            || !self.lon0_deg.is_finite()
            || !self.lat0_deg.is_finite()
        {
            return Err(GeoError::invalid(
                "grid spacing must be positive and finite",
            ));
        }
        let last_lat = self.lat0_deg + (self.rows - 1) as f64 * self.dlat_deg;
        if self.lat0_deg < -90.0 || last_lat > 90.0 + 1e-9 {
            return Err(GeoError::invalid("grid latitudes outside [-90, 90]"));
        }
        if self.values.len() != self.channels() * self.rows * self.cols {
            return Err(GeoError::invalid(format!(
                "grid expects {} values, got {}",
                self.channels() * self.rows * self.cols,
                self.values.len()
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[(channel * self.rows + row) * self.cols + col]
    }

    /// Center of cell `index = row * cols + col`.
    pub fn cell_center(&self, index: usize) -> Result<SpherePoint> {
        let (row, col) = (index / self.cols, index % self.cols);
        let lat = (self.lat0_deg + row as f64 * self.dlat_deg).min(90.0);
        SpherePoint::from_degrees(self.lon0_deg + col as f64 * self.dlon_deg, lat)
    }

    pub fn cell_centers(&self) -> Result<Vec<SpherePoint>> {
        (0..self.num_cells()).map(|i| self.cell_center(i)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        out.extend_from_slice(GRID_MAGIC);
        for v in [self.channels(), self.rows, self.cols] {
            out.extend((v as u32).to_le_bytes());
        }
        for v in [self.lon0_deg, self.dlon_deg, self.lat0_deg, self.dlat_deg] {
            out.extend(v.to_le_bytes());
        }
        for name in &self.channel_names {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for v in &self.values {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let mut r = ByteReader {
            bytes,
            pos: 0,
            source_name,
        };
        if r.take(5)? != GRID_MAGIC {
            return Err(r.error("missing GRDF1 magic"));
        }
        let channels = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let lon0 = r.f64()?;
        let dlon = r.f64()?;
        let lat0 = r.f64()?;
        let dlat = r.f64()?;
        let mut names = Vec::with_capacity(channels);
        for _ in 0..channels {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            names.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| r.error("channel name is not UTF-8"))?,
            );
        }
        let count = channels
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or_else(|| r.error("grid dimensions overflow"))?;
        if r.remaining() != count * 8 {
            return Err(r.error(format!(
                "expected {} payload bytes, found {}",
                count * 8,
                r.remaining()
            )));
        }
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        GridField::new((lon0, dlon, cols), (lat0, dlat, rows), names, values)
            .map_err(|e| GeoError::parse(source_name, "header", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GeoError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| GeoError::io(path, e))
    }
}

pub fn load_grid_field(path: &Path) -> Result<GridField> {
    GridField::load(path)
}

/// Random disjoint split of grid cells: `floor(n·train_frac)` train cells,
/// `floor(n·val_frac)` val cells, the rest test. Targets are standardized
/// per channel with train statistics.
pub fn grid_to_bundle(
    field: &GridField,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(GeoError::invalid(
            "grid fractions must be positive with train_frac + val_frac < 1",
        ));
    }
    let n = field.num_cells();
    let n_train = (n as f64 * train_frac).floor() as usize;
    let n_val = (n as f64 * val_frac).floor() as usize;
    if n_train == 0 || n_val == 0 {
        return Err(GeoError::invalid(format!(
            "grid of {n} cells leaves an empty train or val split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let c = field.channels();
    let take = |idx: &[usize]| -> Result<(Vec<SpherePoint>, Matrix)> {
        let pts = idx
            .iter()
            .map(|&i| field.cell_center(i))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Matrix::zeros(idx.len(), c);
        for (r, &i) in idx.iter().enumerate() {
            let (row, col) = (i / field.cols, i % field.cols);
            for ch in 0..c {
                m.row_mut(r)[ch] = field.value(ch, row, col);
            }
        }
        Ok((pts, m))
    };
    let (tp, mut ty) = take(&order[..n_train])?;
    let (vp, mut vy) = take(&order[n_train..n_train + n_val])?;
    let (sp, mut sy) = take(&order[n_train + n_val..])?;
    if !(ty.all_finite() && vy.all_finite() && sy.all_finite()) {
        return Err(GeoError::numeric("grid field values"));
    }
    let scaling = Standardization::fit(&ty);
    for m in [&mut ty, &mut vy, &mut sy] {
        scaling.apply(m);
    }
    let mut bundle = DatasetBundle::new(
        Task::Regression(c),
        Split::new(tp, Targets::Values(ty))?,
        Split::new(vp, Targets::Values(vy))?,
        Split::new(sp, Targets::Values(sy))?,
    );
    bundle.channel_names = field.channel_names.clone();
    bundle.standardization = Some(scaling);
    Ok(bundle)
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub source_name: &'a str,
}

impl<'a> ByteReader<'a> {
    pub fn error(&self, msg: impl Into<String>) -> GeoError {
        GeoError::parse(self.source_name, format!("byte {}", self.pos), msg)
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error("unexpected end of file"));
        }
        let s: &'a [u8] = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Dataset selected by a spec string:
///
/// - `checkerboard:centers=100,classes=16,train=10000,val=10000,test=10000`
/// - `landocean:train=5000,val=5000,test=5000[,path=FILE]`
/// - `synth:C=8,L=5,train=5000,val=2000,test=5000`
/// - `grid:path=FILE,train_frac=0.01,val_frac=0.05`
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Checkerboard(CheckerboardConfig),
    LandOcean {
        cfg: LandOceanConfig,
        path: Option<String>,
    },
    Synth(SynthFieldConfig),
    Grid {
        path: String,
        train_frac: f64,
        val_frac: f64,
    },
}

impl DatasetSpec {
    /// Builds the bundle. `seed` drives every random draw.
    pub fn build(&self, seed: u64) -> Result<DatasetBundle> {
        match self {
            DatasetSpec::Checkerboard(c) => build_checkerboard(&CheckerboardConfig { seed, ..*c }),
            DatasetSpec::LandOcean { cfg, path } => {
                let polys = match path {
                    Some(p) => load_polygons(Path::new(p))?,
                    None => bundled_land()?,
                };
                build_landocean(&polys, &LandOceanConfig { seed, ..*cfg })
            }
            DatasetSpec::Synth(c) => {
                synth_field_bundle(&SynthFieldConfig { seed, ..*c }).map(|s| s.bundle)
            }
            DatasetSpec::Grid {
                path,
                train_frac,
                val_frac,
            } => grid_to_bundle(
                &load_grid_field(Path::new(path))?,
                *train_frac,
                *val_frac,
                seed,
            ),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DatasetSpec::Checkerboard(_) => "checkerboard",
            DatasetSpec::LandOcean { .. } => "landocean",
            DatasetSpec::Synth(_) => "synth",
            DatasetSpec::Grid { .. } => "grid",
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Checkerboard(c) => write!(
                f,
                "checkerboard:centers={},classes={},train={},val={},test={}",
                c.num_centers, c.num_classes, c.n_train, c.n_val, c.n_test
            ),
            DatasetSpec::LandOcean { cfg, path } => {
                write!(
                    f,
                    "landocean:train={},val={},test={}",
                    cfg.n_train, cfg.n_val, cfg.n_test
                )?;
                match path {
                    Some(p) => write!(f, ",path={p}"),
                    None => Ok(()),
                }
            }
            DatasetSpec::Synth(c) => write!(
                f,
                "synth:C={},L={},train={},val={},test={}",
                c.channels, c.truth_degree, c.n_train, c.n_val, c.n_test
            ),
            DatasetSpec::Grid {
                path,
                train_frac,
                val_frac,
            } => write!(
                f,
                "grid:path={path},train_frac={train_frac},val_frac={val_frac}"
            ),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SpecString::parse(s)?;
        let out = match spec.kind.as_str() {
            "checkerboard" => {
                let d = CheckerboardConfig::default();
                DatasetSpec::Checkerboard(CheckerboardConfig {
                    num_centers: spec.take_or("centers", d.num_centers)?,
                    num_classes: spec.take_or("classes", d.num_classes)?,
                    n_train: spec.take_or("train", d.n_train)?,
                    n_val: spec.take_or("val", d.n_val)?,
                    n_test: spec.take_or("test", d.n_test)?,
                    seed: 0,
                })
            }
            "landocean" => {
                let d = LandOceanConfig::default();
                DatasetSpec::LandOcean {
                    cfg: LandOceanConfig {
                        n_train: spec.take_or("train", d.n_train)?,
                        n_val: spec.take_or("val", d.n_val)?,
                        n_test: spec.take_or("test", d.n_test)?,
                        seed: 0,
                    },
                    path: spec.take("path")?,
                }
            }
            "synth" => {
                let d = SynthFieldConfig::default();
                DatasetSpec::Synth(SynthFieldConfig {
                    channels: spec.take_or("C", d.channels)?,
                    truth_degree: spec.take_or("L", d.truth_degree)?,
                    n_train: spec.take_or("train", d.n_train)?,
                    n_val: spec.take_or("val", d.n_val)?,
                    n_test: spec.take_or("test", d.n_test)?,
                    seed: 0,
                })
            }
            "grid" => DatasetSpec::Grid {
                path: spec
                    .take("path")?
                    .ok_or_else(|| GeoError::parse(s, "path", "grid dataset needs path=FILE"))?,
                train_frac: spec.take_or("train_frac", 0.01)?,
                val_frac: spec.take_or("val_frac", 0.05)?,
            },
            other => {
                return Err(GeoError::parse(
                    s,
                    "kind",
                    format!("unknown dataset `{other}`"),
                ))
            }
        };
        spec.finish()?;
        Ok(out)
    }
}
