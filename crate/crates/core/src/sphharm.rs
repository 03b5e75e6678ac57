//! Real spherical-harmonic positional embedding.
//!
//! Harmonics use the geographic convention: the Legendre argument is
//! `cos(colatitude) = sin(lat)` and the azimuthal factor is `m * lon`.
//! Features are ordered degree-major, orders ascending from `-l` to `l`, so
//! `(l, m)` lives at index `l^2 + l + m`.

use std::f64::consts::SQRT_2;

use crate::error::{GeoError, Result};
use crate::geom::SpherePoint;
use crate::legendre::{closed_form_eval, compile_normalized, normalization, CompiledLegendre};

pub const MAX_DEGREE: usize = 50;

/// Precompiled evaluators for all harmonics of degree `< max_degree`.
#[derive(Debug, Clone)]
pub struct CompiledBasis {
    max_degree: usize,
    /// `legendre[l][m]`, `m >= 0`, normalization and the `sqrt(2)` of the
    /// real form folded into the coefficients for `m > 0`.
    legendre: Vec<Vec<CompiledLegendre>>,
}

#[inline]
pub fn feature_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

pub fn compile_basis(max_degree: usize) -> Result<CompiledBasis> {
    if !(1..=MAX_DEGREE).contains(&max_degree) {
        return Err(GeoError::invalid(format!(
            "spherical harmonic degree count {max_degree} outside 1..={MAX_DEGREE}"
        )));
    }
    let mut legendre = compile_normalized(max_degree as u32);
    // The Condon-Shortley phase inside P_l^m and the explicit (-1)^m of the
    // real form cancel, leaving +sqrt(2) for every m != 0.
    for row in legendre.iter_mut() {
        for ev in row.iter_mut().skip(1) {
            let sign = if ev.m % 2 == 0 { 1.0 } else { -1.0 };
            ev.scale(sign * SQRT_2);
        }
    }
    Ok(CompiledBasis {
        max_degree,
        legendre,
    })
}

impl CompiledBasis {
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Embedding width `L^2`.
    pub fn dim(&self) -> usize {
        self.max_degree * self.max_degree
    }

    pub fn num_evaluators(&self) -> usize {
        self.legendre.iter().map(|row| 2 * row.len() - 1).sum()
    }

    /// Single harmonic `Y_{l,m}` at `p`.
    pub fn real_sh(&self, l: usize, m: i64, p: &SpherePoint) -> Result<f64> {
        if l >= self.max_degree || m.unsigned_abs() as usize > l {
            return Err(GeoError::invalid(format!(
                "harmonic ({l}, {m}) outside basis of degree {}",
                self.max_degree
            )));
        }
        let am = m.unsigned_abs() as u32;
        let ev = &self.legendre[l][am as usize];
        let x = p.lat().sin();
        let radial = ev.poly(x, x * x) * crate::legendre::sin_power(x, am);
        Ok(match m {
            0 => radial,
            m if m > 0 => radial * (m as f64 * p.lon()).cos(),
            m => radial * ((-m) as f64 * p.lon()).sin(),
        })
    }

    /// All `L^2` harmonics at `p`.
    pub fn embed(&self, p: &SpherePoint) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.embed_into(p, &mut out);
        out
    }

    /// Writes the embedding into `out`, which must hold exactly `L^2` values.
    pub fn embed_into(&self, p: &SpherePoint, out: &mut [f64]) {
        let lmax = self.max_degree;
        debug_assert_eq!(out.len(), lmax * lmax);
        let x = p.lat().sin();
        let x2 = x * x;
        let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();

        // s^m cos(m lon) and s^m sin(m lon) for every order.
        let mut cos_m = vec![0.0; lmax];
        let mut sin_m = vec![0.0; lmax];
        let mut s_pow = 1.0;
        for m in 0..lmax {
            let (sn, cs) = (m as f64 * p.lon()).sin_cos();
            cos_m[m] = s_pow * cs;
            sin_m[m] = s_pow * sn;
            s_pow *= s;
        }

        for l in 0..lmax {
            let row = &self.legendre[l];
            let centre = l * l + l;
            out[centre] = row[0].poly(x, x2);
            for m in 1..=l {
                let q = row[m].poly(x, x2);
                out[centre + m] = q * cos_m[m];
                out[centre - m] = q * sin_m[m];
            }
        }
    }
}

/// Same embedding as [`CompiledBasis::embed`], but every associated Legendre
/// value comes from the closed-form binomial sum and every normalization
/// constant is recomputed per point.
pub fn embed_closed_form(max_degree: usize, p: &SpherePoint) -> Result<Vec<f64>> {
    if !(1..=MAX_DEGREE).contains(&max_degree) {
        return Err(GeoError::invalid(format!(
            "spherical harmonic degree count {max_degree} outside 1..={MAX_DEGREE}"
        )));
    }
    let x = p.lat().sin();
    let mut out = vec![0.0; max_degree * max_degree];
    for l in 0..max_degree {
        let centre = l * l + l;
        for m in 0..=l {
            let plm = closed_form_eval(l as u32, m as u32, x)? * normalization(l as u32, m as i32);
            if m == 0 {
                out[centre] = plm;
            } else {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let radial = sign * SQRT_2 * plm;
                let (sn, cs) = (m as f64 * p.lon()).sin_cos();
                out[centre + m] = radial * cs;
                out[centre - m] = radial * sn;
            }
        }
    }
    Ok(out)
}
