//! From a conformal map to an entire T1-commuting approximation of its
//! inverse: samples of w with ψ' = exp(ζ w(ζ)), polynomial fits of w, the
//! resulting normal form, and the crooked image chains of its inverse branch.

use crate::chains::{crooked_embedding_witness, is_circular_chain, standard_chain, CircularChain, CrookedWitness};
use crate::conformal::{ConformalMap, MapError};
use crate::cylinder::{eval_e, CylError, PeriodicEntireMap, C64};
use crate::geom::Polygon;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RungeError {
    #[error("continuous branch lost near {0}")]
    BranchTracking(C64),
    #[error("degree {degree} is ill-conditioned on the samples (diagonal ratio {ratio:.2e})")]
    IllConditioned { degree: usize, ratio: f64 },
    #[error("inverse branch probe failed at {at} (residual {residual:.2e})")]
    InverseBranchProbeFailed { at: C64, residual: f64 },
    #[error("the disk chart has period {0}; a T1-invariant target is required")]
    NotUnitPeriodic(f64),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Cyl(#[from] CylError),
}

/// Samples of w = u/ζ on the curve E(φ(x + iy)), x in [0, 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WSamples {
    pub height: f64,
    /// Points s = x + iy of the half-cylinder.
    pub s: Vec<C64>,
    /// Their images z = φ(s).
    pub z: Vec<C64>,
    pub zeta: Vec<C64>,
    pub w: Vec<C64>,
    /// v(0): ψ(z) - z tends to v0/(2πi).
    pub v0: C64,
    /// w(0) = u'(0), from the Cauchy integral over the sampled curve.
    pub w0: C64,
}

/// Samples w on the image of Im(s) = height. Here ψ = φ⁻¹, so ψ(φ(s)) = s gives
/// v(E(φ(s))) = 2πi (s - φ(s)) and u = log ψ'(φ(s)) = -log φ'(s).
pub fn extract_w(phi: &ConformalMap, height: f64, n: usize) -> Result<WSamples, RungeError> {
    if phi.chart_period != 1.0 {
        return Err(RungeError::NotUnitPeriodic(phi.chart_period));
    }
    if !(height >= phi.accuracy.certified_height) {
        return Err(RungeError::Map(MapError::EpsilonOutsideCertifiedRegion {
            eps: height,
            floor: phi.accuracy.certified_height,
        }));
    }
    let rows = phi.circle_logs(height, n).map_err(|e| match e {
        MapError::BranchTracking(u) => RungeError::BranchTracking(u),
        other => RungeError::Map(other),
    })?;
    let mut out = WSamples {
        height,
        s: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        zeta: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        v0: C64::new(TAU * phi.asymptotic_constant.im, 0.0),
        w0: C64::new(0.0, 0.0),
    };
    let mut integral = C64::new(0.0, 0.0);
    for (x, _, _, lf, ld) in rows {
        let s = C64::new(x, height);
        let z = s - C64::i() * lf / TAU;
        let zeta = eval_e(z);
        let w = -ld / zeta;
        if !w.is_finite() {
            return Err(RungeError::BranchTracking(zeta));
        }
        // u'(0) = (1/2πi)∮ u/ζ² dζ with dζ = 2πi ζ φ'(s) dx
        integral += w * ld.exp();
        out.s.push(s);
        out.z.push(z);
        out.zeta.push(zeta);
        out.w.push(w);
    }
    out.w0 = integral / n as f64;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyFit {
    /// Monomial coefficients of w, constant term first.
    pub coeffs: Vec<C64>,
    pub degree: usize,
    pub train_error: f64,
    pub validation_error: f64,
    /// min/max of |R_kk| in the QR factorization of the scaled Vandermonde matrix.
    pub conditioning: f64,
}

const CONDITIONING_FLOOR: f64 = 1e-13;

fn horner(c: &[C64], z: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, a| acc * z + a)
}

/// Least-squares polynomial of the given degree through (ζ_k, w_k), in the
/// basis (ζ/r)^j with r the largest |ζ_k|; errors are sup-norms.
pub fn fit_samples(
    zeta: &[C64],
    w: &[C64],
    validation: (&[C64], &[C64]),
    degree: usize,
) -> Result<PolyFit, RungeError> {
    let r = zeta.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let cols = degree + 1;
    if zeta.len() < cols {
        return Err(RungeError::IllConditioned { degree, ratio: 0.0 });
    }
    let a = DMatrix::from_fn(zeta.len(), cols, |i, j| (zeta[i] / r).powu(j as u32));
    let b = DVector::from_column_slice(w);
    let qr = a.qr();
    let diag: Vec<f64> = qr.r().diagonal().iter().map(|d| d.norm()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let ratio = if dmax > 0.0 { diag.iter().cloned().fold(f64::INFINITY, f64::min) / dmax } else { 0.0 };
    if !(ratio >= CONDITIONING_FLOOR) {
        return Err(RungeError::IllConditioned { degree, ratio });
    }
    let qtb = qr.q().adjoint() * b;
    let y = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or(RungeError::IllConditioned { degree, ratio })?;
    let coeffs: Vec<C64> = y.iter().enumerate().map(|(j, c)| c / r.powi(j as i32)).collect();
    let sup = |zs: &[C64], ws: &[C64]| {
        zs.iter()
            .zip(ws)
            .map(|(z, w)| (horner(&coeffs, *z) - w).norm())
            .fold(0.0, |a: f64, e| if e > a || e.is_nan() { e } else { a })
    };
    Ok(PolyFit {
        train_error: sup(zeta, w),
        validation_error: sup(validation.0, validation.1),
        coeffs,
        degree,
        conditioning: ratio,
    })
}

/// Fits w on the training samples and measures the error on the validation set.
pub fn fit_polynomial(train: &WSamples, validation: &WSamples, degree: usize) -> Result<PolyFit, RungeError> {
    fit_samples(&train.zeta, &train.w, (&validation.zeta, &validation.w), degree)
}

/// Result of the Newton probe of the inverse branch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeReport {
    pub points: usize,
    pub max_residual: f64,
    /// Lowest Im(z) probed.
    pub floor: f64,
}

const NEWTON_TOL: f64 = 1e-10;
const CONTINUATION_STEP: f64 = 0.05;

/// The inverse branch of an entire ψ on Im(z) > -ε/2, evaluated by Newton
/// with continuation down from the upper end.
#[derive(Debug, Clone, Copy)]
pub struct InverseBranch<'a> {
    pub psi: &'a PeriodicEntireMap,
    pub eps: f64,
}

impl InverseBranch<'_> {
    /// Solves ψ(t) = z starting from `t`.
    pub fn newton(&self, z: C64, mut t: C64) -> Result<(C64, f64), RungeError> {
        let mut res = f64::INFINITY;
        for _ in 0..60 {
            let (val, d) = self.psi.eval_with_derivative(t)?;
            let r = val - z;
            res = r.norm();
            if res <= 0.1 * NEWTON_TOL {
                return Ok((t, res));
            }
            let mut step = r / d;
            // damp steps that would leave the strip or increase the residual
            let mut accepted = false;
            for _ in 0..30 {
                let cand = t - step;
                if let Ok(v) = self.psi.eval_map(cand) {
                    if (v - z).norm() < res {
                        t = cand;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if res <= NEWTON_TOL {
            Ok((t, res))
        } else {
            Err(RungeError::InverseBranchProbeFailed { at: z, residual: res })
        }
    }

    /// φ_ψ(z): the branch of ψ⁻¹ continued downward from the upper end.
    pub fn eval(&self, z: C64) -> Result<C64, RungeError> {
        let top = z.im.max(1.0) + 1.0;
        let mut y = top;
        let mut t = C64::new(z.re, top) - self.psi.asymptotic_constant();
        loop {
            let target = C64::new(z.re, y);
            t = self.newton(target, t)?.0;
            if y <= z.im {
                return Ok(t);
            }
            y = (y - CONTINUATION_STEP).max(z.im);
        }
    }

    /// As `eval`, seeded with a nearby known preimage instead of the upper end.
    pub fn eval_near(&self, z: C64, seed: (C64, C64)) -> Result<C64, RungeError> {
        let (z0, t0) = seed;
        let n = (((z - z0).norm() / CONTINUATION_STEP).ceil() as usize).max(1);
        let mut t = t0;
        for k in 1..=n {
            let zk = z0 + (z - z0) * (k as f64 / n as f64);
            t = self.newton(zk, t)?.0;
        }
        Ok(t)
    }

    /// Newton probe on columns x = k/64 from Im = 2 down to just above -ε/2.
    pub fn probe(&self) -> Result<ProbeReport, RungeError> {
        let floor = -0.45 * self.eps;
        let cols: Vec<Result<(usize, f64), RungeError>> = (0..64)
            .into_par_iter()
            .map(|k| {
                let x = k as f64 / 64.0;
                let mut y = 2.0;
                let mut t = C64::new(x, y) - self.psi.asymptotic_constant();
                let (mut n, mut worst) = (0, 0.0f64);
                loop {
                    let (tt, r) = self.newton(C64::new(x, y), t)?;
                    t = tt;
                    n += 1;
                    worst = worst.max(r);
                    if y <= floor {
                        return Ok((n, worst));
                    }
                    y = (y - CONTINUATION_STEP).max(floor);
                }
            })
            .collect();
        let mut report = ProbeReport { points: 0, max_residual: 0.0, floor };
        for c in cols {
            let (n, r) = c?;
            report.points += n;
            report.max_residual = report.max_residual.max(r);
        }
        Ok(report)
    }
}

/// Default truncation radius request for ψ: certified down to Im = -h - 1.
pub fn default_radius(h: f64) -> f64 {
    (TAU * (h + 1.0)).exp()
}

/// ψ(z) = z - iε + v(E(z))/(2πi) with ψ' = exp(ζ w(ζ)), plus the probe of its
/// inverse branch on Im(z) > -ε/2.
pub fn build_psi(w: &[C64], v0: C64, eps: f64, rho: f64) -> Result<(PeriodicEntireMap, ProbeReport), RungeError> {
    let psi = PeriodicEntireMap::new(w.to_vec(), v0, C64::new(0.0, -eps), rho)?;
    let report = InverseBranch { psi: &psi, eps }.probe()?;
    Ok((psi, report))
}

/// Sup over the samples of |ψ(φ(s)) + iε - s|: distance of ψ + iε from φ⁻¹.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DefectReport {
    pub max: f64,
    pub evaluated: usize,
    /// Samples below the validity strip of ψ, left out of `max`.
    pub skipped: usize,
}

pub fn inverse_defect(branch: InverseBranch, samples: &WSamples) -> Result<DefectReport, RungeError> {
    let mut rep = DefectReport { max: 0.0, evaluated: 0, skipped: 0 };
    for (s, z) in samples.s.iter().zip(&samples.z) {
        match branch.psi.eval_map(*z) {
            Ok(p) => {
                let e = (p + C64::new(0.0, branch.eps) - s).norm();
                rep.max = if e > rep.max || e.is_nan() { e } else { rep.max };
                rep.evaluated += 1;
            }
            Err(CylError::OutOfValidityStrip { .. }) => rep.skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulledChainReport {
    pub m: usize,
    pub m_prime: usize,
    /// Images of the links of C_m' under z -> φ_ψ(m z / m'), on C/mZ.
    pub chain: CircularChain,
    pub is_chain: bool,
    pub witness: Option<CrookedWitness>,
}

impl PulledChainReport {
    pub fn passed(&self) -> bool {
        self.is_chain && self.witness.is_some()
    }
}

/// Boundary of a link, subdivided so that consecutive points are at most `step` apart.
fn subdivided(p: &Polygon, step: f64) -> Vec<C64> {
    let mut out = Vec::new();
    for (a, b) in p.edges() {
        let n = (((b - a).norm() / step).ceil() as usize).max(1);
        for k in 0..n {
            out.push(a + (b - a) * (k as f64 / n as f64));
        }
    }
    out
}

/// Maps a polygon through the inverse branch with continuation along its boundary.
pub fn map_polygon(branch: InverseBranch, p: &Polygon, step: f64) -> Result<Polygon, RungeError> {
    let pts = subdivided(p, step);
    let mut out = Vec::with_capacity(pts.len());
    let mut prev: Option<(C64, C64)> = None;
    for z in pts {
        let t = match prev {
            Some(seed) => branch.eval_near(z, seed)?,
            None => branch.eval(z)?,
        };
        prev = Some((z, t));
        out.push(t);
    }
    Ok(Polygon::new(out))
}

/// The image chain of C_m' under z -> φ_ψ(m z / m') and its crooked witness in C_m.
pub fn pulled_standard_chain(branch: InverseBranch, m: usize, m_prime: usize) -> Result<CircularChain, RungeError> {
    let scaled = standard_chain(m_prime)
        .map_err(|e| RungeError::Map(MapError::Chain(e)))?
        .scaled(m as f64 / m_prime as f64, m as u64);
    let step = 0.25 * m as f64 / m_prime as f64;
    let links = scaled
        .links
        .par_iter()
        .map(|l| map_polygon(branch, l, step))
        .collect::<Result<Vec<_>, _>>()?;
    CircularChain::new(m as u64, links).map_err(|e| RungeError::Map(MapError::Chain(e)))
}

pub fn verify_pulled_chain(branch: InverseBranch, m: usize, m_prime: usize) -> Result<PulledChainReport, RungeError> {
    let chain = pulled_standard_chain(branch, m, m_prime)?;
    let (is_chain, _) = is_circular_chain(&chain);
    let outer = standard_chain(m).map_err(|e| RungeError::Map(MapError::Chain(e)))?;
    let witness = if is_chain { crooked_embedding_witness(&chain, &outer) } else { None };
    Ok(PulledChainReport { m, m_prime, chain, is_chain, witness })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn cubic_is_recovered() {
        let zs: Vec<C64> = (0..200).map(|k| C64::from_polar(0.3 + 0.1 * (k % 7) as f64 / 7.0, k as f64 * 0.7)).collect();
        let ws: Vec<C64> = zs.iter().map(|z| z.powu(3)).collect();
        let fit = fit_samples(&zs, &ws, (&zs, &ws), 5).unwrap();
        for (j, a) in fit.coeffs.iter().enumerate() {
            let want = if j == 3 { 1.0 } else { 0.0 };
            assert!((a - want).norm() < 1e-10, "{j}: {a}");
        }
        let zero = vec![c(0.0, 0.0); zs.len()];
        let fit = fit_samples(&zs, &zero, (&zs, &zero), 4).unwrap();
        assert!(fit.coeffs.iter().all(|a| a.norm() == 0.0));
        assert_eq!(fit.validation_error, 0.0);
    }

    #[test]
    fn high_degree_on_few_points_is_rejected() {
        let zs: Vec<C64> = (0..30).map(|k| C64::from_polar(0.5, k as f64 * 0.2)).collect();
        let ws = zs.clone();
        assert!(matches!(fit_samples(&zs, &ws, (&zs, &ws), 40), Err(RungeError::IllConditioned { .. })));
    }

    #[test]
    fn translation_branch() {
        let (psi, r) = build_psi(&[], c(0.0, 0.0), 0.5, 1e6).unwrap();
        let b = InverseBranch { psi: &psi, eps: 0.5 };
        assert!(r.max_residual <= 1e-10);
        let z = c(0.3, -0.2);
        assert!((b.eval(z).unwrap() - (z + c(0.0, 0.5))).norm() < 1e-12);
        assert!((b.psi.asymptotic_constant() - c(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn straight_images_are_not_crooked() {
        let (psi, _) = build_psi(&[], c(0.0, 0.0), 0.25, 1e6).unwrap();
        let b = InverseBranch { psi: &psi, eps: 0.25 };
        for q in [2, 3, 5] {
            let rep = verify_pulled_chain(b, 5, 5 * q).unwrap();
            assert!(rep.is_chain);
            assert!(rep.witness.is_none());
        }
    }

    #[test]
    fn newton_inverse_of_a_nontrivial_map() {
        let w = vec![c(0.3, 0.1), c(-0.2, 0.05)];
        let (psi, rep) = build_psi(&w, c(0.1, 0.0), 0.2, 50.0).unwrap();
        let b = InverseBranch { psi: &psi, eps: 0.2 };
        assert!(rep.max_residual <= 1e-10);
        for z in [c(0.1, 0.0), c(0.7, 0.5), c(-2.3, 1.5)] {
            let t = b.eval(z).unwrap();
            assert!((b.psi.eval_map(t).unwrap() - z).norm() <= 1e-10);
            assert!((b.eval(z + 1.0).unwrap() - t - 1.0).norm() < 1e-9);
        }
    }
}
