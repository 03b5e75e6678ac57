//! Spherical geometry primitives.
//!
//! All angles are radians. Degrees only appear at the serialization boundary
//! (`PointSet` CSV and the CLI).

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GeoError, Result};

/// Golden ratio.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// Wraps a longitude into `[-π, π]`. Values already inside the closed
/// interval are returned unchanged, so both `-π` and `π` are fixed points.
pub fn wrap_lon(lon: f64) -> f64 {
    if (-PI..=PI).contains(&lon) {
        lon
    } else {
        (lon + PI).rem_euclid(TAU) - PI
    }
}

/// A (longitude, latitude) pair in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    lon: f64,
    lat: f64,
}

impl SpherePoint {
    /// Builds a point, wrapping the longitude into `[-π, π]`.
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(GeoError::invalid(format!(
                "non-finite coordinate ({lon}, {lat})"
            )));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&lat) {
            return Err(GeoError::invalid(format!(
                "latitude {lat} outside [-pi/2, pi/2]"
            )));
        }
        Ok(Self {
            lon: wrap_lon(lon),
            lat,
        })
    }

    pub fn from_degrees(lon_deg: f64, lat_deg: f64) -> Result<Self> {
        Self::new(lon_deg.to_radians(), lat_deg.to_radians())
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon.to_degrees()
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat.to_degrees()
    }

    /// Unit vector with x towards (0, 0), z towards the north pole.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (slat, clat) = self.lat.sin_cos();
        let (slon, clon) = self.lon.sin_cos();
        [clat * clon, clat * slon, slat]
    }
}

/// Ordered collection of points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet(Vec<SpherePoint>);

impl PointSet {
    pub fn new(points: Vec<SpherePoint>) -> Self {
        Self(points)
    }

    pub fn into_inner(self) -> Vec<SpherePoint> {
        self.0
    }

    /// CSV with header `lon_deg,lat_deg`, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lon_deg,lat_deg\n");
        for p in &self.0 {
            let _ = writeln!(
                out,
                "{},{}",
                format_significant(p.lon_deg(), 9),
                format_significant(p.lat_deg(), 9)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("lon_deg,lat_deg") => {}
            other => {
                return Err(GeoError::parse(
                    "point csv",
                    "line 1",
                    format!("expected header `lon_deg,lat_deg`, found {other:?}"),
                ))
            }
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("line {}", i + 2);
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| GeoError::parse("point csv", &loc, format!("missing {name}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| GeoError::parse("point csv", &loc, e.to_string()))
            };
            let lon = next("lon_deg")?;
            let lat = next("lat_deg")?;
            points.push(SpherePoint::from_degrees(lon, lat)?);
        }
        Ok(Self(points))
    }
}

impl Deref for PointSet {
    type Target = [SpherePoint];

    fn deref(&self) -> &[SpherePoint] {
        &self.0
    }
}

impl From<Vec<SpherePoint>> for PointSet {
    fn from(points: Vec<SpherePoint>) -> Self {
        Self(points)
    }
}

impl FromIterator<SpherePoint> for PointSet {
    fn from_iter<I: IntoIterator<Item = SpherePoint>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a PointSet {
    type Item = &'a SpherePoint;
    type IntoIter = std::slice::Iter<'a, SpherePoint>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Fibonacci lattice with indices `i = -n..=n`, i.e. `2n + 1` points.
///
/// Point `i` sits at `lat = asin(2i / (2n + 1))`, `lon = wrap(2π i Φ)`.
pub fn fibonacci_lattice(n: usize) -> Result<PointSet> {
    if n == 0 {
        return Err(GeoError::invalid("fibonacci_lattice needs n >= 1"));
    }
    fibonacci_sphere(2 * n + 1)
}

/// Fibonacci spiral with an arbitrary point count.
///
/// Uses the centred index `i - (count - 1) / 2`, which for odd counts is
/// exactly [`fibonacci_lattice`] and for even counts uses half-integer
/// offsets so the layout stays symmetric about the equator.
pub fn fibonacci_sphere(count: usize) -> Result<PointSet> {
    if count == 0 {
        return Err(GeoError::invalid("fibonacci_sphere needs count >= 1"));
    }
    let n = count as f64;
    let centre = (n - 1.0) / 2.0;
    (0..count)
        .map(|i| {
            let k = i as f64 - centre;
            let lat = (2.0 * k / n).asin();
            let lon = wrap_lon((TAU * k * GOLDEN_RATIO).rem_euclid(TAU));
            SpherePoint::new(lon, lat)
        })
        .collect::<Result<Vec<_>>>()
        .map(PointSet)
}

/// Area-uniform random points: `lon ~ U(-π, π)`, `lat = asin(U(-1, 1))`.
pub fn uniform_sphere_sample(count: usize, seed: u64) -> Result<PointSet> {
    if count == 0 {
        return Err(GeoError::invalid("uniform_sphere_sample needs count >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(uniform_points(&mut rng, count))
}

pub(crate) fn uniform_points<R: Rng>(rng: &mut R, count: usize) -> PointSet {
    (0..count)
        .map(|_| {
            let lon = rng.random_range(-PI..PI);
            let z: f64 = rng.random_range(-1.0..=1.0);
            SpherePoint { lon, lat: z.asin() }
        })
        .collect()
}

/// Great-circle central angle in `[0, π]`.
pub fn haversine(p: &SpherePoint, q: &SpherePoint) -> f64 {
    let dlat = q.lat - p.lat;
    let dlon = q.lon - p.lon;
    let h = (dlat / 2.0).sin().powi(2) + p.lat.cos() * q.lat.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Label of the haversine-nearest center for every query.
///
/// Ties go to the lowest center index.
pub fn nearest_center_labels(
    queries: &[SpherePoint],
    centers: &[SpherePoint],
    center_labels: &[usize],
) -> Result<Vec<usize>> {
    if centers.is_empty() {
        return Err(GeoError::invalid("nearest_center_labels: no centers"));
    }
    if centers.len() != center_labels.len() {
        return Err(GeoError::invalid(format!(
            "nearest_center_labels: {} centers but {} labels",
            centers.len(),
            center_labels.len()
        )));
    }
    Ok(queries
        .iter()
        .map(|q| center_labels[nearest_index(q, centers)])
        .collect())
}

pub(crate) fn nearest_index(q: &SpherePoint, centers: &[SpherePoint]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = haversine(q, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
