//! Sine/cosine positional embeddings of the double-Fourier-sphere family,
//! their single-scale relatives, and the embedding spec shared with the
//! spherical-harmonic encoder.
//!
//! Radii are declared in degrees. A scale with radius `α` (degrees) maps a
//! coordinate `c` (radians) to `c / α_rad`, so `r = 1°` resolves roughly
//! one-degree structure and `r = 180/π` degrees reproduces the plain
//! `[cos λ, sin λ, cos φ, sin φ]` wrap features.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{GeoError, Result};
use crate::geom::SpherePoint;
use crate::grammar::SpecString;

/// Multi-scale schedule: `count` scales from `r_min` to `r_max` degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub count: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl Scales {
    pub fn new(count: usize, r_min: f64, r_max: f64) -> Result<Self> {
        if count == 0 {
            return Err(GeoError::invalid("scale count must be >= 1"));
        }
        if !(r_min.is_finite() && r_max.is_finite() && r_min > 0.0 && r_min <= r_max) {
            return Err(GeoError::invalid(format!(
                "need 0 < r_min <= r_max, got r_min={r_min}, r_max={r_max}"
            )));
        }
        Ok(Self {
            count,
            r_min,
            r_max,
        })
    }

    /// `1 / α_s` with `α_s` converted to radians, for every scale.
    pub fn inverse_radians(&self) -> Vec<f64> {
        (0..self.count)
            .map(|s| 1.0 / self.factor_unchecked(s).to_radians())
            .collect()
    }

    fn factor_unchecked(&self, s: usize) -> f64 {
        if self.count == 1 {
            return self.r_min;
        }
        let t = s as f64 / (self.count - 1) as f64;
        self.r_min * (self.r_max / self.r_min).powf(t)
    }
}

/// Geometric scale factor `α_s = r_min (r_max / r_min)^{s / (S - 1)}` in
/// degrees; a single scale yields `r_min`.
pub fn scale_factor(s: usize, scales: &Scales) -> Result<f64> {
    if s >= scales.count {
        return Err(GeoError::invalid(format!(
            "scale index {s} outside 0..{}",
            scales.count
        )));
    }
    Ok(scales.factor_unchecked(s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmbeddingSpec {
    Direct,
    Cartesian3D,
    Wrap,
    Grid(Scales),
    Theory(Scales),
    SphereC(Scales),
    SphereCPlus(Scales),
    SphereM(Scales),
    SphereMPlus(Scales),
    SphericalHarmonics { degree: usize },
}

pub const DEFAULT_SCALES: usize = 16;
pub const DEFAULT_R_MIN: f64 = 10.0;
pub const DEFAULT_R_MAX: f64 = 360.0;
pub const DEFAULT_SH_DEGREE: usize = 10;

impl EmbeddingSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EmbeddingSpec::Direct => "direct",
            EmbeddingSpec::Cartesian3D => "cartesian3d",
            EmbeddingSpec::Wrap => "wrap",
            EmbeddingSpec::Grid(_) => "grid",
            EmbeddingSpec::Theory(_) => "theory",
            EmbeddingSpec::SphereC(_) => "spherec",
            EmbeddingSpec::SphereCPlus(_) => "spherec+",
            EmbeddingSpec::SphereM(_) => "spherem",
            EmbeddingSpec::SphereMPlus(_) => "spherem+",
            EmbeddingSpec::SphericalHarmonics { .. } => "sh",
        }
    }

    pub fn scales(&self) -> Option<&Scales> {
        match self {
            EmbeddingSpec::Grid(s)
            | EmbeddingSpec::Theory(s)
            | EmbeddingSpec::SphereC(s)
            | EmbeddingSpec::SphereCPlus(s)
            | EmbeddingSpec::SphereM(s)
            | EmbeddingSpec::SphereMPlus(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_sh(&self) -> bool {
        matches!(self, EmbeddingSpec::SphericalHarmonics { .. })
    }
}

/// Output width of an embedding.
pub fn embed_dim(spec: &EmbeddingSpec) -> usize {
    let per_scale = |s: &Scales, k: usize| k * s.count;
    match spec {
        EmbeddingSpec::Direct => 2,
        EmbeddingSpec::Cartesian3D => 3,
        EmbeddingSpec::Wrap => 4,
        EmbeddingSpec::Grid(s) => per_scale(s, 4),
        EmbeddingSpec::Theory(s) => per_scale(s, 6),
        EmbeddingSpec::SphereC(s) => per_scale(s, 3),
        EmbeddingSpec::SphereCPlus(s) => per_scale(s, 7),
        EmbeddingSpec::SphereM(s) => per_scale(s, 5),
        EmbeddingSpec::SphereMPlus(s) => per_scale(s, 9),
        EmbeddingSpec::SphericalHarmonics { degree } => degree * degree,
    }
}

impl fmt::Display for EmbeddingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSpec::SphericalHarmonics { degree } => write!(f, "sh:L={degree}"),
            other => match other.scales() {
                Some(s) => write!(
                    f,
                    "{}:S={},rmin={},rmax={}",
                    other.kind_name(),
                    s.count,
                    s.r_min,
                    s.r_max
                ),
                None => f.write_str(other.kind_name()),
            },
        }
    }
}

impl FromStr for EmbeddingSpec {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SpecString::parse(s)?;
        let scales = |spec: &mut SpecString| -> Result<Scales> {
            let count = spec.take_or("S", DEFAULT_SCALES)?;
            let r_min = spec.take_or("rmin", DEFAULT_R_MIN)?;
            let r_max = spec.take_or("rmax", DEFAULT_R_MAX)?;
            Scales::new(count, r_min, r_max)
        };
        let out = match spec.kind.as_str() {
            "direct" => EmbeddingSpec::Direct,
            "cartesian3d" => EmbeddingSpec::Cartesian3D,
            "wrap" => EmbeddingSpec::Wrap,
            "grid" => EmbeddingSpec::Grid(scales(&mut spec)?),
            "theory" => EmbeddingSpec::Theory(scales(&mut spec)?),
            "spherec" => EmbeddingSpec::SphereC(scales(&mut spec)?),
            "spherec+" | "sphereCplus" | "spherecplus" => {
                EmbeddingSpec::SphereCPlus(scales(&mut spec)?)
            }
            "spherem" => EmbeddingSpec::SphereM(scales(&mut spec)?),
            "spherem+" | "spheremplus" => EmbeddingSpec::SphereMPlus(scales(&mut spec)?),
            "sh" | "sphericalharmonics" => {
                let degree = spec.take_or("L", DEFAULT_SH_DEGREE)?;
                if !(1..=crate::sphharm::MAX_DEGREE).contains(&degree) {
                    return Err(GeoError::invalid(format!(
                        "sh degree count {degree} out of range"
                    )));
                }
                EmbeddingSpec::SphericalHarmonics { degree }
            }
            other => {
                return Err(GeoError::parse(
                    s,
                    "kind",
                    format!("unknown embedding `{other}`"),
                ))
            }
        };
        spec.finish()?;
        Ok(out)
    }
}

/// Evaluator for every non-SH embedding with the scale factors resolved.
#[derive(Debug, Clone)]
pub struct DfsEmbedding {
    spec: EmbeddingSpec,
    inv_alpha: Vec<f64>,
}

const THEORY_AXES: [[f64; 2]; 3] = [
    [1.0, 0.0],
    [-0.5, 0.866_025_403_784_438_6],
    [-0.5, -0.866_025_403_784_438_6],
];

impl DfsEmbedding {
    pub fn new(spec: &EmbeddingSpec) -> Result<Self> {
        if spec.is_sh() {
            return Err(GeoError::invalid(
                "spherical harmonics are evaluated by sphharm::CompiledBasis",
            ));
        }
        if let Some(s) = spec.scales() {
            Scales::new(s.count, s.r_min, s.r_max)?;
        }
        Ok(Self {
            spec: *spec,
            inv_alpha: spec
                .scales()
                .map(Scales::inverse_radians)
                .unwrap_or_default(),
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        embed_dim(&self.spec)
    }

    pub fn embed(&self, p: &SpherePoint) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.embed_into(p, &mut out);
        out
    }

    /// Appends the embedding of `p` to `out`.
    pub fn embed_into(&self, p: &SpherePoint, out: &mut Vec<f64>) {
        let (lon, lat) = (p.lon(), p.lat());
        match self.spec {
            EmbeddingSpec::Direct => out.extend([lon, lat]),
            EmbeddingSpec::Cartesian3D => {
                let (slat, clat) = lat.sin_cos();
                let (slon, clon) = lon.sin_cos();
                out.extend([clat * clon, clat * slon, slat]);
            }
            EmbeddingSpec::Wrap => {
                let (slon, clon) = lon.sin_cos();
                let (slat, clat) = lat.sin_cos();
                out.extend([clon, slon, clat, slat]);
            }
            EmbeddingSpec::Grid(_) => self.grid(lon, lat, out),
            EmbeddingSpec::Theory(_) => {
                for &k in &self.inv_alpha {
                    for a in &THEORY_AXES {
                        let (s, c) = ((lon * a[0] + lat * a[1]) * k).sin_cos();
                        out.extend([c, s]);
                    }
                }
            }
            EmbeddingSpec::SphereC(_) => self.sphere_c(lon, lat, out),
            EmbeddingSpec::SphereCPlus(_) => {
                self.sphere_c(lon, lat, out);
                self.grid(lon, lat, out);
            }
            EmbeddingSpec::SphereM(_) => self.sphere_m(lon, lat, out),
            EmbeddingSpec::SphereMPlus(_) => {
                self.sphere_m(lon, lat, out);
                self.grid(lon, lat, out);
            }
            EmbeddingSpec::SphericalHarmonics { .. } => unreachable!("rejected in new"),
        }
    }

    fn grid(&self, lon: f64, lat: f64, out: &mut Vec<f64>) {
        for &k in &self.inv_alpha {
            let (sl, cl) = (lon * k).sin_cos();
            let (sp, cp) = (lat * k).sin_cos();
            out.extend([cl, sl, cp, sp]);
        }
    }

    fn sphere_c(&self, lon: f64, lat: f64, out: &mut Vec<f64>) {
        for &k in &self.inv_alpha {
            let (sl, cl) = (lon * k).sin_cos();
            let (sp, cp) = (lat * k).sin_cos();
            out.extend([sp, cp * cl, cp * sl]);
        }
    }

    fn sphere_m(&self, lon: f64, lat: f64, out: &mut Vec<f64>) {
        let (slon, clon) = lon.sin_cos();
        let clat = lat.cos();
        for &k in &self.inv_alpha {
            let (sl, cl) = (lon * k).sin_cos();
            let (sp, cp) = (lat * k).sin_cos();
            out.extend([sp, cp * clon, clat * cl, cp * slon, clat * sl]);
        }
    }
}

/// One-shot embedding of a single point.
pub fn embed(spec: &EmbeddingSpec, p: &SpherePoint) -> Result<Vec<f64>> {
    Ok(DfsEmbedding::new(spec)?.embed(p))
}

/// Radius in degrees for which a single scale reproduces the wrap features.
pub const UNIT_RADIUS_DEG: f64 = 180.0 / PI;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::uniform_sphere_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sc(count: usize, r_min: f64, r_max: f64) -> Scales {
        Scales::new(count, r_min, r_max).unwrap()
    }

    fn all_kinds(s: Scales) -> Vec<EmbeddingSpec> {
        vec![
            EmbeddingSpec::Direct,
            EmbeddingSpec::Cartesian3D,
            EmbeddingSpec::Wrap,
            EmbeddingSpec::Grid(s),
            EmbeddingSpec::Theory(s),
            EmbeddingSpec::SphereC(s),
            EmbeddingSpec::SphereCPlus(s),
            EmbeddingSpec::SphereM(s),
            EmbeddingSpec::SphereMPlus(s),
        ]
    }

    #[test]
    fn scale_factor_examples() {
        let two = sc(2, 1.0, 360.0);
        assert_eq!(scale_factor(0, &two).unwrap(), 1.0);
        assert!((scale_factor(1, &two).unwrap() - 360.0).abs() < 1e-12);
        let flat = sc(5, 8.0, 8.0);
        for s in 0..5 {
            assert_eq!(scale_factor(s, &flat).unwrap(), 8.0);
        }
        let three = sc(3, 1.0, 360.0);
        assert!((scale_factor(1, &three).unwrap() - 360f64.sqrt()).abs() < 1e-12);
        assert!((scale_factor(1, &three).unwrap() - 18.974).abs() < 1e-3);
        assert!(scale_factor(3, &three).is_err());
        assert_eq!(scale_factor(0, &sc(1, 4.0, 90.0)).unwrap(), 4.0);
        assert!(Scales::new(0, 1.0, 2.0).is_err());
        assert!(Scales::new(2, 3.0, 2.0).is_err());
        assert!(Scales::new(2, 0.0, 2.0).is_err());
    }

    #[test]
    fn embed_examples() {
        let o = SpherePoint::new(0.0, 0.0).unwrap();
        assert_eq!(
            embed(&EmbeddingSpec::Wrap, &o).unwrap(),
            vec![1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(
            embed(&EmbeddingSpec::Cartesian3D, &o).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        assert!(embed(&EmbeddingSpec::SphericalHarmonics { degree: 3 }, &o).is_err());
    }

    #[test]
    fn unit_radius_grid_is_wrap() {
        let grid = EmbeddingSpec::Grid(sc(1, UNIT_RADIUS_DEG, UNIT_RADIUS_DEG));
        for p in uniform_sphere_sample(100, 1).unwrap().iter() {
            let g = embed(&grid, p).unwrap();
            let w = embed(&EmbeddingSpec::Wrap, p).unwrap();
            for (a, b) in g.iter().zip(&w) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dims() {
        assert_eq!(embed_dim(&EmbeddingSpec::Grid(sc(16, 1.0, 360.0))), 64);
        assert_eq!(
            embed_dim(&EmbeddingSpec::SphereMPlus(sc(32, 1.0, 360.0))),
            288
        );
        assert_eq!(
            embed_dim(&EmbeddingSpec::SphericalHarmonics { degree: 20 }),
            400
        );

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = uniform_sphere_sample(20, 2).unwrap();
        for p in pts.iter() {
            let count = rng.random_range(1..40);
            let r_min = rng.random_range(1.0..90.0);
            let s = sc(count, r_min, rng.random_range(r_min..400.0));
            for spec in all_kinds(s) {
                assert_eq!(embed(&spec, p).unwrap().len(), embed_dim(&spec), "{spec}");
            }
        }
    }

    #[test]
    fn plus_variants_concatenate() {
        let s = sc(7, 3.0, 300.0);
        for p in uniform_sphere_sample(30, 5).unwrap().iter() {
            let grid = embed(&EmbeddingSpec::Grid(s), p).unwrap();
            for (base, plus) in [
                (EmbeddingSpec::SphereC(s), EmbeddingSpec::SphereCPlus(s)),
                (EmbeddingSpec::SphereM(s), EmbeddingSpec::SphereMPlus(s)),
            ] {
                let mut want = embed(&base, p).unwrap();
                want.extend(&grid);
                assert_eq!(embed(&plus, p).unwrap(), want);
            }
        }
    }

    #[test]
    fn bounded_components() {
        let s = sc(10, 1.0, 360.0);
        for p in uniform_sphere_sample(200, 8).unwrap().iter() {
            for spec in all_kinds(s).into_iter().skip(2) {
                assert!(embed(&spec, p).unwrap().iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    fn dateline_gap(spec: &EmbeddingSpec, lat: f64) -> f64 {
        let eps = 1e-7;
        let a = embed(spec, &SpherePoint::new(PI - eps, lat).unwrap()).unwrap();
        let b = embed(spec, &SpherePoint::new(-PI + eps, lat).unwrap()).unwrap();
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn dateline_continuity() {
        // Continuous only when every scale wraps an integer number of periods
        // around the globe. Inverse radii 16, 8, 4, 2 are even, which also
        // covers the half-weighted longitude in the theory axes.
        let harmonic = sc(4, UNIT_RADIUS_DEG / 16.0, UNIT_RADIUS_DEG / 2.0);
        for lat in [-1.3, -0.2, 0.0, 0.7, 1.4] {
            for spec in all_kinds(harmonic).into_iter().skip(1) {
                assert!(dateline_gap(&spec, lat) < 1e-5, "{spec} at lat {lat}");
            }
            assert!(dateline_gap(&EmbeddingSpec::Direct, lat) > 6.0);
        }
    }

    #[test]
    fn fractional_periods_break_at_the_dateline() {
        // r = 90 deg gives λ/α = ±2 at the dateline: sin(2) != sin(-2).
        let s = sc(1, 90.0, 90.0);
        assert!(dateline_gap(&EmbeddingSpec::Grid(s), 0.3) > 1.0);
    }

    #[test]
    fn spec_strings_round_trip() {
        for text in [
            "direct",
            "cartesian3d",
            "wrap",
            "grid:S=16,rmin=8,rmax=360",
            "theory:S=3,rmin=1.5,rmax=90",
            "spherec+:S=32,rmin=1,rmax=360",
            "spherem:S=2,rmin=10,rmax=360",
            "spherem+:S=2,rmin=10,rmax=360",
            "spherec:S=2,rmin=10,rmax=360",
            "sh:L=20",
        ] {
            let spec: EmbeddingSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        let d: EmbeddingSpec = "grid".parse().unwrap();
        assert_eq!(d, EmbeddingSpec::Grid(sc(16, 10.0, 360.0)));
        assert!("grid:S=16,radius=3".parse::<EmbeddingSpec>().is_err());
        assert!("sh:L=0".parse::<EmbeddingSpec>().is_err());
        assert!("hexagon".parse::<EmbeddingSpec>().is_err());
        assert!("wrap:S=3".parse::<EmbeddingSpec>().is_err());
    }
}
