//! The cylinder C/Z through its universal cover E(z) = exp(2 pi i z), and the
//! normal form of entire maps commuting with T1.

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);
const TAIL_TARGET: f64 = 1e-14;
const MAX_SERIES_DEGREE: usize = 2000;
// Largest admissible sum of |v_n| rho^n; keeps rounding in Horner below ~1e-12.
const MAGNITUDE_CAP: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CylError {
    #[error("point with Im(z) = {im} lies below the validity strip Im(z) >= {floor}")]
    OutOfValidityStrip { im: f64, floor: f64 },
    #[error("lifted map undefined at {0}")]
    LiftOutsideDomain(C64),
    #[error("no radius >= {0} admits a certified tail bound")]
    TailNotCertifiable(f64),
}

pub fn eval_e(z: C64) -> C64 {
    (TAU * I * z).exp()
}

/// exp(2 pi i z / m), the chart of C/mZ.
pub fn eval_e_period(z: C64, m: f64) -> C64 {
    (TAU * I * z / m).exp()
}

/// A point of C/mZ given by a lifted representative.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CylPoint {
    pub z: C64,
    pub period: u64,
}

impl CylPoint {
    pub fn new(z: C64, period: u64) -> Self {
        CylPoint { z, period }
    }

    /// Representative with real part in [0, period).
    pub fn canonical(&self) -> C64 {
        let p = self.period as f64;
        C64::new(self.z.re.rem_euclid(p), self.z.im)
    }
}

impl PartialEq for CylPoint {
    fn eq(&self, other: &Self) -> bool {
        if self.period != other.period {
            return false;
        }
        let d = self.z - other.z;
        let p = self.period as f64;
        let k = (d.re / p).round();
        let scale = 1.0 + self.z.norm().max(other.z.norm());
        (d.re - k * p).abs() <= 1e-12 * scale && d.im.abs() <= 1e-12 * scale
    }
}

/// psi(z) = z + s + v(E(z))/(2 pi i) with psi'(z) = exp(E(z) w(E(z))).
#[derive(Debug, Clone)]
pub struct PeriodicEntireMap {
    pub w_coeffs: Vec<C64>,
    pub v0: C64,
    pub shift: C64,
    pub v_coeffs: Vec<C64>,
    pub trunc_radius: f64,
    pub tail_bound: f64,
}

impl PartialEq for PeriodicEntireMap {
    fn eq(&self, other: &Self) -> bool {
        self.w_coeffs == other.w_coeffs
            && self.v0 == other.v0
            && self.shift == other.shift
            && self.trunc_radius == other.trunc_radius
    }
}

/// Taylor coefficients of exp(g) - 1 where g(z) = z w(z), up to degree `deg`.
fn exp_series(w: &[C64], deg: usize) -> Vec<C64> {
    let mut e = vec![C64::new(0.0, 0.0); deg + 1];
    e[0] = C64::new(1.0, 0.0);
    for n in 1..=deg {
        let mut acc = C64::new(0.0, 0.0);
        for k in 1..=n.min(w.len()) {
            acc += w[k - 1] * (k as f64) * e[n - k];
        }
        e[n] = acc / n as f64;
    }
    e
}

/// Majorant of g(z) = z w(z) on |z| = r.
fn majorant(w: &[C64], r: f64) -> f64 {
    w.iter()
        .enumerate()
        .map(|(k, c)| c.norm() * r.powi(k as i32 + 1))
        .sum()
}

/// Upper bound for max Re(z w(z)) on |z| = r: dense samples plus the
/// derivative majorant times half the sample spacing.
fn max_re_g(w: &[C64], r: f64) -> f64 {
    const N: usize = 2048;
    let slope: f64 = w
        .iter()
        .enumerate()
        .map(|(k, c)| (k + 1) as f64 * c.norm() * r.powi(k as i32 + 1))
        .sum();
    let sampled = (0..N)
        .map(|j| {
            let z = C64::from_polar(r, TAU * j as f64 / N as f64);
            (z * w.iter().rev().fold(C64::new(0.0, 0.0), |acc, c| acc * z + c)).re
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (sampled + slope * PI / N as f64).min(majorant(w, r))
}

/// Smallest degree D whose Cauchy tail on |z| <= rho is below the target, with the bound.
fn certify(w: &[C64], rho: f64) -> Option<(usize, f64)> {
    if w.iter().all(|c| *c == C64::new(0.0, 0.0)) {
        return Some((0, 0.0));
    }
    let mut best: Option<(usize, f64)> = None;
    for lambda in [1.02, 1.05, 1.1, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 16.0, 32.0] {
        let r = lambda * rho;
        let g = max_re_g(w, r);
        if !g.is_finite() || g > 700.0 {
            continue;
        }
        let q = 1.0 / lambda;
        // Cauchy: |[z^n](e^g - 1)| <= (e^{max Re g} + 1) / r^n
        let tail = |d: usize| (g.exp() + 1.0) * q.powi(d as i32 + 1) / ((1.0 - q) * (d as f64 + 1.0));
        let mut d = 1usize;
        while d <= MAX_SERIES_DEGREE && tail(d) >= TAIL_TARGET {
            d += 1;
        }
        if d > MAX_SERIES_DEGREE {
            continue;
        }
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, tail(d)));
        }
    }
    best
}

impl PeriodicEntireMap {
    pub fn identity() -> Self {
        PeriodicEntireMap {
            w_coeffs: Vec::new(),
            v0: C64::new(0.0, 0.0),
            shift: C64::new(0.0, 0.0),
            v_coeffs: vec![C64::new(0.0, 0.0)],
            trunc_radius: f64::INFINITY,
            tail_bound: 0.0,
        }
    }

    /// Builds the normal form, shrinking the requested radius (geometrically,
    /// factor 1.05) until the v-series is certifiable.
    pub fn new(w: Vec<C64>, v0: C64, shift: C64, rho_request: f64) -> Result<Self, CylError> {
        let mut w = w;
        while w.last() == Some(&C64::new(0.0, 0.0)) {
            w.pop();
        }
        if w.is_empty() {
            return Ok(PeriodicEntireMap {
                w_coeffs: w,
                v0,
                shift,
                v_coeffs: vec![v0],
                trunc_radius: rho_request,
                tail_bound: 0.0,
            });
        }
        let mut rho = rho_request;
        while rho >= 1e-3 {
            if let Ok(b) = Self::from_parts(w.clone(), v0, shift, rho) {
                return Ok(b);
            }
            rho /= 1.05;
        }
        Err(CylError::TailNotCertifiable(1e-3))
    }

    /// Rebuilds v at exactly the given radius; fails if it cannot be certified there.
    pub fn from_parts(w: Vec<C64>, v0: C64, shift: C64, rho: f64) -> Result<Self, CylError> {
        if w.iter().all(|c| *c == C64::new(0.0, 0.0)) {
            return Ok(PeriodicEntireMap {
                w_coeffs: w,
                v0,
                shift,
                v_coeffs: vec![v0],
                trunc_radius: rho,
                tail_bound: 0.0,
            });
        }
        let (d, tail) = certify(&w, rho).ok_or(CylError::TailNotCertifiable(rho))?;
        let e = exp_series(&w, d);
        let mut v = Vec::with_capacity(d + 1);
        v.push(v0);
        for (n, en) in e.iter().enumerate().skip(1) {
            v.push(en / n as f64);
        }
        let mag: f64 = v
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, c)| c.norm() * rho.powi(n as i32))
            .sum();
        if !mag.is_finite() || mag > MAGNITUDE_CAP {
            return Err(CylError::TailNotCertifiable(rho));
        }
        Ok(PeriodicEntireMap {
            w_coeffs: w,
            v0,
            shift,
            v_coeffs: v,
            trunc_radius: rho,
            tail_bound: tail,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.w_coeffs.is_empty() && self.v0 == C64::new(0.0, 0.0) && self.shift == C64::new(0.0, 0.0)
    }

    /// Lower edge of the strip where evaluation is certified.
    pub fn validity_floor(&self) -> f64 {
        if self.trunc_radius.is_infinite() {
            f64::NEG_INFINITY
        } else {
            -self.trunc_radius.ln() / TAU
        }
    }

    fn check(&self, z: C64) -> Result<(), CylError> {
        let floor = self.validity_floor();
        if z.im.is_finite() && z.im >= floor {
            Ok(())
        } else {
            Err(CylError::OutOfValidityStrip { im: z.im, floor })
        }
    }

    pub fn eval_w(&self, zeta: C64) -> C64 {
        self.w_coeffs
            .iter()
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, c| acc * zeta + c)
    }

    pub fn eval_v(&self, zeta: C64) -> C64 {
        self.v_coeffs
            .iter()
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, c| acc * zeta + c)
    }

    /// Limit of psi(z) - z as Im(z) -> +infinity.
    pub fn asymptotic_constant(&self) -> C64 {
        self.shift + self.v0 / (TAU * I)
    }

    pub fn eval_map(&self, z: C64) -> Result<C64, CylError> {
        self.check(z)?;
        if self.w_coeffs.is_empty() {
            return Ok(z + self.asymptotic_constant());
        }
        Ok(z + self.shift + self.eval_v(eval_e(z)) / (TAU * I))
    }

    pub fn eval_derivative(&self, z: C64) -> Result<C64, CylError> {
        self.check(z)?;
        if self.w_coeffs.is_empty() {
            return Ok(C64::new(1.0, 0.0));
        }
        let zeta = eval_e(z);
        Ok((zeta * self.eval_w(zeta)).exp())
    }

    /// Value and derivative in one pass.
    pub fn eval_with_derivative(&self, z: C64) -> Result<(C64, C64), CylError> {
        self.check(z)?;
        if self.w_coeffs.is_empty() {
            return Ok((z + self.asymptotic_constant(), C64::new(1.0, 0.0)));
        }
        let zeta = eval_e(z);
        let val = z + self.shift + self.eval_v(zeta) / (TAU * I);
        Ok((val, (zeta * self.eval_w(zeta)).exp()))
    }

    /// The projected map zeta e^{v(zeta)} e^{2 pi i s}, so that E o psi = Psi o E.
    pub fn disk_map(&self, zeta: C64) -> C64 {
        zeta * self.eval_v(zeta).exp() * (TAU * I * self.shift).exp()
    }
}

#[derive(Serialize, Deserialize)]
struct MapRecord {
    w: Vec<C64>,
    v0: C64,
    shift: C64,
    trunc_radius: f64,
    tail_bound: f64,
}

impl Serialize for PeriodicEntireMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // JSON has no infinity; the identity's unbounded radius is written as f64::MAX.
        let r = if self.trunc_radius.is_finite() { self.trunc_radius } else { f64::MAX };
        MapRecord {
            w: self.w_coeffs.clone(),
            v0: self.v0,
            shift: self.shift,
            trunc_radius: r,
            tail_bound: self.tail_bound,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PeriodicEntireMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = MapRecord::deserialize(d)?;
        let rho = if rec.trunc_radius == f64::MAX { f64::INFINITY } else { rec.trunc_radius };
        if !(rho > 0.0) {
            return Err(serde::de::Error::custom("trunc_radius must be positive"));
        }
        PeriodicEntireMap::from_parts(rec.w, rec.v0, rec.shift, rho).map_err(serde::de::Error::custom)
    }
}

/// f(at) = E(F(z)) for a lift z of `at`; f(0) = 0.
pub fn project_to_disk_map<F, E>(lifted: F, at: C64) -> Result<C64, CylError>
where
    F: Fn(C64) -> Result<C64, E>,
{
    if at == C64::new(0.0, 0.0) {
        return Ok(at);
    }
    let z = at.ln() / (TAU * I);
    let fz = lifted(z).map_err(|_| CylError::LiftOutsideDomain(z))?;
    Ok(eval_e(fz))
}

/// Imaginary level whose E-image is the circle of radius r.
pub fn height_of_radius(r: f64) -> f64 {
    -r.ln() / (2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn e_values() {
        assert_eq!(eval_e(c(0.0, 0.0)), c(1.0, 0.0));
        let z = c(0.3, 0.2);
        assert!((eval_e(z + 1.0) - eval_e(z)).norm() < 1e-15);
        assert!((eval_e(c(0.0, 1.0)).re - 0.0018674427317079893).abs() < 1e-17);
    }

    #[test]
    fn cyl_point_equality() {
        assert_eq!(CylPoint::new(c(0.25, 1.0), 5), CylPoint::new(c(10.25, 1.0), 5));
        assert_ne!(CylPoint::new(c(0.25, 1.0), 5), CylPoint::new(c(1.25, 1.0), 5));
        assert_eq!(CylPoint::new(c(-4.5, 0.0), 5).canonical(), c(0.5, 0.0));
    }

    #[test]
    fn identity_and_translation() {
        let id = PeriodicEntireMap::identity();
        let z = c(0.7, -3.0);
        assert_eq!(id.eval_map(z).unwrap(), z);
        assert_eq!(id.eval_derivative(z).unwrap(), c(1.0, 0.0));
        let shift = c(0.3, 0.1);
        let t = PeriodicEntireMap::new(vec![], TAU * I * shift, c(0.0, 0.0), 1e9).unwrap();
        assert!((t.eval_map(z).unwrap() - z - shift).norm() < 1e-15);
    }

    fn quad_v(zeta: f64) -> f64 {
        // composite Simpson on (e^{t^2}-1)/t, smooth at 0
        let n = 2000;
        let h = zeta / n as f64;
        let f = |t: f64| if t == 0.0 { 0.0 } else { ((t * t).exp() - 1.0) / t };
        let mut s = f(0.0) + f(zeta);
        for k in 1..n {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn linear_w_matches_quadrature() {
        let b = PeriodicEntireMap::new(vec![c(0.0, 0.0), c(1.0, 0.0)], c(0.0, 0.0), c(0.0, 0.0), 10.0).unwrap();
        let z = c(0.0, -(0.1f64).ln() / TAU);
        assert!((eval_e(z) - c(0.1, 0.0)).norm() < 1e-15);
        let expect = z + c(quad_v(0.1), 0.0) / (TAU * I);
        let err = (b.eval_map(z).unwrap() - expect).norm();
        assert!(err < 1e-13, "{err}");
        assert!((b.eval_derivative(z).unwrap() - c(0.01f64.exp(), 0.0)).norm() < 1e-14);
    }

    #[test]
    fn strip_is_enforced() {
        let b = PeriodicEntireMap::new(vec![c(1.0, 0.0)], c(0.0, 0.0), c(0.0, 0.0), 10.0).unwrap();
        let floor = b.validity_floor();
        assert!(matches!(
            b.eval_map(c(0.0, floor - 0.01)),
            Err(CylError::OutOfValidityStrip { .. })
        ));
        assert!(b.eval_map(c(0.0, floor + 0.01)).is_ok());
    }

    #[test]
    fn radius_shrinks_for_large_w() {
        let b = PeriodicEntireMap::new(vec![c(0.0, 0.0), c(5.0, 0.0)], c(0.0, 0.0), c(0.0, 0.0), 1e5).unwrap();
        assert!(b.trunc_radius < 1e5);
        assert!(b.tail_bound < TAIL_TARGET);
    }

    #[test]
    fn json_round_trip() {
        let b = PeriodicEntireMap::new(
            vec![c(0.1, -0.2), c(1.0 / 3.0, 0.0)],
            c(0.5, 0.25),
            c(0.0, -0.125),
            5.0,
        )
        .unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: PeriodicEntireMap = serde_json::from_str(&s).unwrap();
        assert_eq!(back.w_coeffs, b.w_coeffs);
        assert_eq!(back.v_coeffs, b.v_coeffs);
        assert_eq!(back.trunc_radius, b.trunc_radius);
        let id: PeriodicEntireMap = serde_json::from_str(&serde_json::to_string(&PeriodicEntireMap::identity()).unwrap()).unwrap();
        assert!(id.trunc_radius.is_infinite());
    }

    #[test]
    fn projection() {
        let theta = 0.37;
        let z0 = c(0.2, 0.4);
        let f = |z: C64| Ok::<C64, ()>(z + theta);
        let got = project_to_disk_map(f, eval_e(z0)).unwrap();
        assert!((got - eval_e(z0 + theta)).norm() < 1e-14);
        assert_eq!(project_to_disk_map(f, c(0.0, 0.0)).unwrap(), c(0.0, 0.0));
        let b = PeriodicEntireMap::new(vec![c(0.3, 0.1)], c(0.2, 0.0), c(0.0, -0.1), 5.0).unwrap();
        let z = c(0.41, 0.3);
        let lhs = eval_e(b.eval_map(z).unwrap());
        assert!((lhs - b.disk_map(eval_e(z))).norm() < 1e-10);
    }
}
