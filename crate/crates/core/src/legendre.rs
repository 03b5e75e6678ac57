//! Associated Legendre polynomials.
//!
//! Polynomials are built symbolically with exact rational coefficients
//! (Rodrigues' formula followed by repeated differentiation) and only
//! rounded to `f64` once construction is finished. Coefficients of `P_l`
//! grow like `2^l` with alternating signs, so a float pipeline loses most of
//! its digits well before `l = 40`.
//!
//! A second, closed-form evaluator sums binomial terms at run time. It is
//! much slower and only exists for runtime comparisons.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{GeoError, Result};

/// Dense real polynomial; `coeffs[k]` multiplies `x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Drops trailing zeros so the last coefficient is nonzero.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Exact polynomial used during construction.
#[derive(Debug, Clone, PartialEq)]
struct RationalPoly(Vec<BigRational>);

impl RationalPoly {
    fn constant(c: BigRational) -> Self {
        RationalPoly(vec![c])
    }

    fn mul(&self, other: &RationalPoly) -> RationalPoly {
        let mut out = vec![BigRational::zero(); self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        RationalPoly(out)
    }

    fn derivative(&self) -> RationalPoly {
        if self.0.len() <= 1 {
            return RationalPoly(vec![BigRational::zero()]);
        }
        RationalPoly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * BigRational::from_integer(BigInt::from(k)))
                .collect(),
        )
    }

    fn scale(&self, s: &BigRational) -> RationalPoly {
        RationalPoly(self.0.iter().map(|c| c * s).collect())
    }

    fn to_polynomial(&self) -> Polynomial {
        Polynomial::new(self.0.iter().map(rational_to_f64).collect())
    }
}

fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Only reached for values outside the f64 range.
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn factorial_big(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// `P_l` via Rodrigues: `(1 / (2^l l!)) d^l/dx^l (x^2 - 1)^l`.
fn legendre_exact(l: u32) -> RationalPoly {
    let base = RationalPoly(vec![int(-1), int(0), int(1)]);
    let mut p = RationalPoly::constant(int(1));
    for _ in 0..l {
        p = p.mul(&base);
    }
    for _ in 0..l {
        p = p.derivative();
    }
    let denom = BigInt::from(2u32).pow(l) * factorial_big(l);
    p.scale(&BigRational::new(BigInt::one(), denom))
}

/// Polynomial parts of `P_l^m` for `m = 0..=l` (Condon-Shortley phase
/// included), obtained by differentiating `P_l` one order at a time.
fn assoc_exact_all_orders(l: u32) -> Vec<RationalPoly> {
    let mut out = Vec::with_capacity(l as usize + 1);
    let mut d = legendre_exact(l);
    for m in 0..=l {
        let sign = if m % 2 == 0 { int(1) } else { int(-1) };
        out.push(d.scale(&sign));
        d = d.derivative();
    }
    out
}

/// Factor `(-1)^m (l-m)!/(l+m)!` that maps `P_l^m` to `P_l^{-m}`.
fn negative_order_factor(l: u32, m: u32) -> BigRational {
    let sign = if m % 2 == 0 { int(1) } else { int(-1) };
    sign * BigRational::new(factorial_big(l - m), factorial_big(l + m))
}

pub fn legendre_poly(l: u32) -> Polynomial {
    legendre_exact(l).to_polynomial()
}

/// Associated Legendre function `P_l^m(x) = poly(x) (1 - x^2)^{|m|/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssocLegendre {
    pub l: u32,
    pub m: i32,
    pub poly: Polynomial,
    pub half_power: u32,
}

impl AssocLegendre {
    pub fn eval(&self, x: f64) -> f64 {
        self.poly.eval(x) * sin_power(x, self.half_power)
    }
}

/// `(1 - x^2)^{k/2}` computed as `((1-x)(1+x))^{k/2}`.
#[inline]
pub(crate) fn sin_power(x: f64, k: u32) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    s.powi(k as i32)
}

fn check_order(l: u32, m: i32) -> Result<()> {
    if m.unsigned_abs() > l {
        return Err(GeoError::invalid(format!("order |{m}| exceeds degree {l}")));
    }
    Ok(())
}

fn check_domain(x: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(GeoError::invalid(format!("argument {x} outside [-1, 1]")));
    }
    Ok(())
}

pub fn assoc_legendre(l: u32, m: i32) -> Result<AssocLegendre> {
    check_order(l, m)?;
    let am = m.unsigned_abs();
    let mut d = legendre_exact(l);
    for _ in 0..am {
        d = d.derivative();
    }
    if am % 2 == 1 {
        d = d.scale(&int(-1));
    }
    if m < 0 {
        d = d.scale(&negative_order_factor(l, am));
    }
    Ok(AssocLegendre {
        l,
        m,
        poly: d.to_polynomial(),
        half_power: am,
    })
}

/// `sqrt((2l+1)/(4π) (l-|m|)!/(l+|m|)!)`.
pub fn normalization(l: u32, m: i32) -> f64 {
    let am = m.unsigned_abs();
    let ratio = ((l - am + 1)..=(l + am)).fold(1.0f64, |acc, k| acc / k as f64);
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Normalized `P̄_l^{|m|}(x)`.
pub fn normalized_eval(l: u32, m: i32, x: f64) -> Result<f64> {
    check_order(l, m)?;
    check_domain(x)?;
    let p = assoc_legendre(l, m.abs())?;
    Ok(normalization(l, m) * p.eval(x))
}

/// Horner-ready table for `P̄_l^m` (`m >= 0`): the polynomial part only has
/// powers of parity `l - m`, so it is stored as a polynomial in `x^2`.
///
/// Monomial coefficients of high-degree Legendre polynomials are large and
/// alternate in sign, so each one is kept as an unevaluated sum
/// `coeffs[k] + coeffs_lo[k]` and evaluated with compensated Horner. This
/// keeps the result accurate to a few ulps through degree 49.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledLegendre {
    pub l: u32,
    pub m: u32,
    /// Leading parts of the even-reduced coefficients, normalization folded in.
    pub coeffs: Vec<f64>,
    /// Rounding residuals of `coeffs`.
    pub coeffs_lo: Vec<f64>,
    /// True when the polynomial part is odd in `x`.
    pub odd: bool,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl CompiledLegendre {
    /// Polynomial part at `x`, given `x2 = x * x`.
    #[inline]
    pub fn poly(&self, x: f64, x2: f64) -> f64 {
        let x2_lo = x.mul_add(x, -x2);
        let n = self.coeffs.len();
        let mut s = self.coeffs[n - 1];
        let mut err = self.coeffs_lo[n - 1];
        for k in (0..n - 1).rev() {
            let (p, pe) = two_prod(s, x2);
            let (t, te) = two_sum(p, self.coeffs[k]);
            err = err.mul_add(x2, s.mul_add(x2_lo, pe + te + self.coeffs_lo[k]));
            s = t;
        }
        let v = s + err;
        if self.odd {
            v * x
        } else {
            v
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.poly(x, x * x) * sin_power(x, self.m)
    }

    /// Multiplies the polynomial by `factor`, keeping the residuals.
    pub fn scale(&mut self, factor: f64) {
        for (hi, lo) in self.coeffs.iter_mut().zip(self.coeffs_lo.iter_mut()) {
            let (p, pe) = two_prod(*hi, factor);
            let (h, l) = two_sum(p, lo.mul_add(factor, pe));
            *hi = h;
            *lo = l;
        }
    }
}

/// Leading f64 and residual of an exact rational.
fn split_rational(r: &BigRational) -> (f64, f64) {
    let hi = rational_to_f64(r);
    if !hi.is_finite() || hi == 0.0 {
        return (hi, 0.0);
    }
    let exact_hi = BigRational::from_float(hi).expect("finite float");
    (hi, rational_to_f64(&(r - exact_hi)))
}

/// Compiles normalized evaluators for every `(l, m)` with `l < degree`,
/// `0 <= m <= l`, indexed `[l][m]`.
pub fn compile_normalized(degree: u32) -> Vec<Vec<CompiledLegendre>> {
    (0..degree)
        .map(|l| {
            assoc_exact_all_orders(l)
                .into_iter()
                .enumerate()
                .map(|(m, poly)| {
                    let m = m as u32;
                    let odd = (l - m) % 2 == 1;
                    let (coeffs, coeffs_lo) = poly
                        .0
                        .iter()
                        .skip(odd as usize)
                        .step_by(2)
                        .map(split_rational)
                        .unzip();
                    let mut ev = CompiledLegendre {
                        l,
                        m,
                        coeffs,
                        coeffs_lo,
                        odd,
                    };
                    ev.scale(normalization(l, m as i32));
                    ev
                })
                .collect()
        })
        .collect()
}

/// CSV dump `l,m,k,coeff` of the polynomial parts of `P_l^m`, `l < degree`,
/// `-l <= m <= l`.
pub fn coefficient_table_csv(degree: u32) -> String {
    let mut out = String::from("l,m,k,coeff\n");
    for l in 0..degree {
        for m in -(l as i32)..=(l as i32) {
            let p = assoc_legendre(l, m).expect("order within degree");
            for (k, c) in p.poly.coeffs().iter().enumerate() {
                let _ = writeln!(out, "{l},{m},{k},{c:e}");
            }
        }
    }
    out
}

/// Generalized binomial coefficient `C(a, k)` for real `a`.
fn generalized_binomial(a: f64, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (a - i as f64) / (i + 1) as f64)
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Unnormalized `P_l^m(x)` from the closed-form binomial sum
/// `(-1)^m 2^l (1-x^2)^{m/2} Σ_{k=m}^{l} k!/(k-m)! x^{k-m} C(l,k) C((l+k-1)/2, l)`.
///
/// Every coefficient is recomputed on each call.
pub fn closed_form_eval(l: u32, m: u32, x: f64) -> Result<f64> {
    if m > l {
        return Err(GeoError::invalid(format!("order {m} exceeds degree {l}")));
    }
    check_domain(x)?;
    let mut sum = 0.0;
    for k in m..=l {
        let falling = ((k - m + 1)..=k).fold(1.0, |acc, j| acc * j as f64);
        let half = (l + k) as f64 / 2.0 - 0.5;
        sum += falling * x.powi((k - m) as i32) * binomial(l, k) * generalized_binomial(half, l);
    }
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * 2f64.powi(l as i32) * sin_power(x, m) * sum)
}
