//! Riemann maps from the upper half-cylinder onto the upper complementary
//! component of a Jordan curve on the cylinder.
//!
//! The map is computed on the disk chart ζ = exp(2πiz/P), where the upper end
//! becomes 0 and the curve becomes a Jordan curve around 0. The disk map is
//! built with the geodesic zipper algorithm.

use crate::chains::{crook_clearance, is_stably_crooked, ChainError, CircularChain, JordanPolyline};
use crate::cylinder::{eval_e_period, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("target curve is not simple")]
    CurveNotSimple,
    #[error("map accuracy {achieved:.3e} does not meet {required:.1e}")]
    AccuracyNotMet { achieved: f64, required: f64 },
    #[error("height {eps} is below the certified region (floor {floor})")]
    EpsilonOutsideCertifiedRegion { eps: f64, floor: f64 },
    #[error("no crooked level curve found down to height {last_eps}")]
    NoEpsilonFound { last_eps: f64 },
    #[error("branch tracking failed near {0}")]
    BranchTracking(C64),
    #[error("unsupported map file version {0}")]
    Version(u32),
    #[error("stored samples disagree with the rebuilt map by {0:.3e}")]
    Corrupt(f64),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

fn i() -> C64 {
    C64::new(0.0, 1.0)
}

/// Square root with non-negative imaginary part; on the real axis the sign
/// follows `hint`.
fn sqrt_h(u: C64, hint: f64) -> C64 {
    let r = u.sqrt();
    if r.im.abs() <= 1e-15 * r.norm() {
        let x = r.norm();
        C64::new(if hint < 0.0 { -x } else { x }, 0.0)
    } else if r.im < 0.0 {
        -r
    } else {
        r
    }
}

/// One unzipping step: T(w) = w / (1 - r w), then sqrt(T^2 + s2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Step {
    r: f64,
    s2: f64,
}

impl Step {
    fn for_point(c: C64) -> Step {
        let c = if c.im > 0.0 { c } else { C64::new(c.re, 1e-300f64.max(1e-15 * c.norm())) };
        let n2 = c.norm_sqr();
        let s = n2 / c.im;
        Step { r: c.re / n2, s2: s * s }
    }

    fn apply(&self, w: C64) -> C64 {
        let t = w / (1.0 - w * self.r);
        sqrt_h(t * t + self.s2, t.re)
    }

    fn apply_d(&self, w: C64) -> (C64, C64) {
        let den = 1.0 - w * self.r;
        let t = w / den;
        let dt = 1.0 / (den * den);
        let f = sqrt_h(t * t + self.s2, t.re);
        (f, t * dt / f)
    }

    /// Image of the point at infinity, None if it stays at infinity.
    fn apply_inf(&self) -> Option<f64> {
        if self.r == 0.0 {
            return None;
        }
        let t = -1.0 / self.r;
        Some(t.signum() * (t * t + self.s2).sqrt())
    }

    fn apply_real(&self, x: Option<f64>) -> Option<f64> {
        match x {
            None => self.apply_inf(),
            Some(x) => {
                let den = 1.0 - x * self.r;
                if den == 0.0 {
                    return None;
                }
                let t = x / den;
                Some(t.signum() * (t * t + self.s2).sqrt())
            }
        }
    }

    fn invert_d(&self, f: C64) -> (C64, C64) {
        let t = sqrt_h(f * f - self.s2, f.re);
        let dt = f / t;
        let den = 1.0 + t * self.r;
        (t / den, dt / (den * den))
    }
}

/// Conformal map g from a Jordan domain containing 0 onto the unit disk with
/// g(0) = 0, g'(0) > 0, and its inverse f.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zipper {
    z0: C64,
    z1: C64,
    steps: Vec<Step>,
    p_inv: f64,
    sigma: f64,
    a: C64,
    rot: C64,
}

impl Zipper {
    /// Boundary points in positive order around 0.
    pub fn build(points: &[C64]) -> Zipper {
        let n = points.len();
        assert!(n >= 3);
        let (z0, z1) = (points[0], points[1]);
        let first = |z: C64| i() * ((z - z1) / (z - z0)).sqrt();
        let mut w: Vec<C64> = points[2..].iter().map(|&z| first(z)).collect();
        let mut centre = first(C64::new(0.0, 0.0));
        let mut far: Option<f64> = None;
        let mut steps = Vec::with_capacity(n - 2);
        for k in 0..w.len() {
            let st = Step::for_point(w[k]);
            steps.push(st);
            let rest = &mut w[k + 1..];
            if rest.len() > 4096 {
                rest.par_iter_mut().for_each(|x| *x = st.apply(*x));
            } else {
                rest.iter_mut().for_each(|x| *x = st.apply(*x));
            }
            centre = st.apply(centre);
            far = st.apply_real(far);
        }
        let p_inv = far.map_or(0.0, |p| 1.0 / p);
        let q = centre / (1.0 - centre * p_inv);
        let sigma = if (q * q).im > 0.0 { 1.0 } else { -1.0 };
        let a = sigma * q * q;
        let mut z = Zipper { z0, z1, steps, p_inv, sigma, a, rot: C64::new(1.0, 0.0) };
        let (_, d) = z.forward_d(C64::new(0.0, 0.0));
        z.rot = d.conj() / d.norm();
        z
    }

    /// Disk coordinate and derivative of a point of the domain.
    pub fn forward_d(&self, zeta: C64) -> (C64, C64) {
        let h = (zeta - self.z1) / (zeta - self.z0);
        let sh = h.sqrt();
        let mut w = i() * sh;
        let dh = (self.z1 - self.z0) / ((zeta - self.z0) * (zeta - self.z0));
        let mut d = i() * dh / (2.0 * sh);
        for st in &self.steps {
            let (f, df) = st.apply_d(w);
            w = f;
            d *= df;
        }
        let den = 1.0 - w * self.p_inv;
        let q = w / den;
        d *= 1.0 / (den * den);
        let big = self.sigma * q * q;
        d *= self.sigma * 2.0 * q;
        let mob = (big - self.a) / (big - self.a.conj());
        d *= (self.a - self.a.conj()) / ((big - self.a.conj()) * (big - self.a.conj()));
        (self.rot * mob, self.rot * d)
    }

    pub fn forward(&self, zeta: C64) -> C64 {
        self.forward_d(zeta).0
    }

    /// Domain point and derivative of f at a point of the open unit disk.
    pub fn inverse_d(&self, xi: C64) -> (C64, C64) {
        let x = xi / self.rot;
        let mut d = 1.0 / self.rot;
        let big = (self.a.conj() * x - self.a) / (x - 1.0);
        d *= (self.a - self.a.conj()) / ((x - 1.0) * (x - 1.0));
        let mut q = (self.sigma * big).sqrt();
        if self.sigma < 0.0 {
            q = -q;
        }
        d *= self.sigma / (2.0 * q);
        let den = 1.0 + q * self.p_inv;
        let mut w = q / den;
        d *= 1.0 / (den * den);
        for st in self.steps.iter().rev() {
            let (t, dt) = st.invert_d(w);
            w = t;
            d *= dt;
        }
        let h = -w * w;
        d *= -2.0 * w;
        let zeta = (self.z1 - h * self.z0) / (1.0 - h);
        d *= (self.z1 - self.z0) / ((1.0 - h) * (1.0 - h));
        (zeta, d)
    }

    pub fn inverse(&self, xi: C64) -> C64 {
        self.inverse_d(xi).0
    }

    pub fn nodes(&self) -> usize {
        self.steps.len() + 2
    }
}

/// The branch of log(u) closest to `near`.
pub fn log_near(u: C64, near: C64) -> C64 {
    let l = u.ln();
    let k = ((near.im - l.im) / TAU).round();
    C64::new(l.re, l.im + k * TAU)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapAccuracy {
    /// Sup error estimate on the certified region.
    pub eps_map: f64,
    /// Lowest height Im(s) of the certified region.
    pub certified_height: f64,
    /// Largest |f(g(ζ)) - ζ| style round-trip error, in cylinder units.
    pub inverse_residual: f64,
    /// Zipper nodes of the coarse and fine maps.
    pub nodes: (usize, usize),
    /// Change of the asymptotic constant under resolution doubling.
    pub constant_drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapOptions {
    /// Boundary sample spacing of the coarse map, in cylinder units.
    pub spacing: f64,
    pub tolerance: f64,
    /// Heights 2^-k, k <= depth, are tested.
    pub depth: u32,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions { spacing: 0.001, tolerance: 1e-6, depth: 24 }
    }
}

/// φ from the upper half-cylinder onto the upper component of C/PZ minus J.
#[derive(Debug, Clone)]
pub struct ConformalMap {
    pub period: u64,
    /// Period of the chart the disk map lives on: 1 for T1-invariant targets.
    pub chart_period: f64,
    pub target: JordanPolyline,
    pub accuracy: MapAccuracy,
    /// φ(s) - s tends to this purely imaginary constant at the upper end.
    pub asymptotic_constant: C64,
    zipper: Zipper,
    /// Taylor coefficients of log(f(ξ)/ξ) at 0, built on first use.
    series: OnceLock<Vec<C64>>,
}

/// Radius of the circle the Taylor coefficients are read from, and the
/// radius below which the series replaces the zipper.
const SERIES_RADIUS: f64 = 0.25;
const SERIES_USE: f64 = 1.0 / 32.0;
const SERIES_TERMS: usize = 128;

/// Samples of the quotient curve, ordered by increasing x, and the chart period.
fn chart_samples(j: &JordanPolyline, spacing: f64) -> (Vec<C64>, f64) {
    let (verts, per): (Vec<C64>, f64) = match j.piece_len() {
        Some(p) => ((0..=p as i64).map(|k| j.lifted(k)).collect(), 1.0),
        None => ((0..=j.len() as i64).map(|k| j.lifted(k)).collect(), (j.turns * j.period as i64) as f64),
    };
    let mut out = Vec::new();
    for w in verts.windows(2) {
        let n = ((w[1] - w[0]).norm() / spacing).ceil().max(1.0) as usize;
        // cosine grading towards the vertices, where the map is singular
        for k in 0..n {
            let t = 0.5 * (1.0 - (PI * k as f64 / n as f64).cos());
            out.push(w[0] + (w[1] - w[0]) * t);
        }
    }
    (out, per)
}

/// A T1-invariant curve is simple iff a few consecutive pieces close up simply
/// on the correspondingly shorter cylinder.
fn quotient_is_simple(j: &JordanPolyline) -> bool {
    match j.piece_len() {
        Some(p) => {
            let c = j.period.min(3);
            JordanPolyline::from_unit_piece(c, &j.vertices[..p]).is_simple()
        }
        None => j.is_simple(),
    }
}

fn build_zipper(j: &JordanPolyline, spacing: f64) -> (Zipper, f64) {
    let (pts, per) = chart_samples(j, spacing);
    let mut zeta: Vec<C64> = pts.iter().map(|&z| eval_e_period(z, per)).collect();
    // start unzipping at the point nearest the upper end; starting inside a
    // fjord crowds the image of 0 towards the real axis
    let top = (0..zeta.len()).min_by(|&a, &b| zeta[a].norm().total_cmp(&zeta[b].norm())).unwrap_or(0);
    zeta.rotate_left(top);
    (Zipper::build(&zeta), per)
}

pub fn riemann_map_upper(j: &JordanPolyline) -> Result<ConformalMap, MapError> {
    riemann_map_with(j, &MapOptions::default())
}

pub fn riemann_map_with(j: &JordanPolyline, opts: &MapOptions) -> Result<ConformalMap, MapError> {
    if j.len() < 2 || !quotient_is_simple(j) {
        return Err(MapError::CurveNotSimple);
    }
    let (coarse, per) = build_zipper(j, opts.spacing);
    let (fine, _) = build_zipper(j, opts.spacing / 2.0);
    let to_cyl = per / TAU;
    let k = 64;
    let mut eps_map = 0.0f64;
    let mut inv_res = 0.0f64;
    let mut floor = f64::INFINITY;
    let (_, dc) = coarse.inverse_d(C64::new(0.0, 0.0));
    let (_, df) = fine.inverse_d(C64::new(0.0, 0.0));
    let drift = to_cyl * (dc.norm().ln() - df.norm().ln()).abs();
    let mut top_error = f64::NAN;
    for level in 0..=opts.depth {
        let y = per * 0.5f64.powi(level as i32);
        let rad = (-TAU * y / per).exp();
        let errs: Vec<(f64, f64)> = (0..k)
            .into_par_iter()
            .map(|t| {
                let xi = C64::from_polar(rad, TAU * (t as f64 + 0.5) / k as f64);
                let za = coarse.inverse(xi);
                let zb = fine.inverse(xi);
                let back = fine.forward(zb);
                (to_cyl * (za - zb).norm() / zb.norm(), to_cyl * (back - xi).norm() / rad)
            })
            .collect();
        // NaN must fail the comparison below, so no f64::max here
        let e = errs.iter().map(|x| x.0).fold(0.0, |a, b| if b > a || b.is_nan() { b } else { a });
        let r = errs.iter().map(|x| x.1).fold(0.0, |a, b| if b > a || b.is_nan() { b } else { a });
        if !(e <= opts.tolerance && r <= opts.tolerance) {
            if level == 0 {
                top_error = e.max(r);
            }
            break;
        }
        eps_map = eps_map.max(e);
        inv_res = inv_res.max(r);
        floor = y;
    }
    if !floor.is_finite() {
        return Err(MapError::AccuracyNotMet { achieved: top_error, required: opts.tolerance });
    }
    let asym = C64::new(0.0, -to_cyl * df.norm().ln());
    Ok(ConformalMap {
        period: j.period,
        chart_period: per,
        target: j.clone(),
        accuracy: MapAccuracy {
            eps_map: eps_map.max(drift),
            certified_height: floor,
            inverse_residual: inv_res,
            nodes: (coarse.nodes(), fine.nodes()),
            constant_drift: drift,
        },
        asymptotic_constant: asym,
        zipper: fine,
        series: OnceLock::new(),
    })
}

/// Tracks log(h(t)) continuously along t in [t0, t1] from the value `start`
/// at t0, bisecting where the argument jumps.
fn track<F: Fn(f64) -> C64>(h: &F, t0: f64, t1: f64, start: C64, depth: u32) -> Result<C64, MapError> {
    let u = h(t1);
    let l = log_near(u, start);
    if (l.im - start.im).abs() < 0.7 {
        return Ok(l);
    }
    if depth == 0 {
        return Err(MapError::BranchTracking(u));
    }
    let tm = 0.5 * (t0 + t1);
    let mid = track(h, t0, tm, start, depth - 1)?;
    track(h, tm, t1, mid, depth - 1)
}

impl ConformalMap {
    fn to_chart(&self, s: C64) -> C64 {
        eval_e_period(s, self.chart_period)
    }

    /// Near ξ = 0 the zipper loses relative accuracy (f(ξ) is a difference of
    /// nearly equal Möbius terms), so log(f(ξ)/ξ) is summed from its Taylor
    /// series, read off a circle where the zipper is accurate.
    fn series(&self) -> Result<&Vec<C64>, MapError> {
        if let Some(c) = self.series.get() {
            return Ok(c);
        }
        let n = SERIES_TERMS;
        let (l0, _) = self.logs_at_zipper(C64::new(SERIES_RADIUS, 0.0))?;
        let mut vals = Vec::with_capacity(n);
        let mut a = l0;
        for k in 0..n {
            if k > 0 {
                let (h0, dh) = (TAU * (k - 1) as f64 / n as f64, TAU / n as f64);
                let lf = |t: f64| {
                    let p = C64::from_polar(SERIES_RADIUS, h0 + dh * t);
                    self.zipper.inverse(p) / p
                };
                a = track(&lf, 0.0, 1.0, a, 30)?;
            }
            vals.push(a);
        }
        let coeffs = (0..n / 2)
            .map(|j| {
                let sum: C64 = vals
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * C64::from_polar(1.0, -TAU * (j * k) as f64 / n as f64))
                    .sum();
                sum / (n as f64 * SERIES_RADIUS.powi(j as i32))
            })
            .collect();
        Ok(self.series.get_or_init(|| coeffs))
    }

    /// log(f(ξ)/ξ) and log(ξ f'(ξ)/f(ξ)) along the radius up to ξ.
    fn logs_at(&self, xi: C64) -> Result<(C64, C64), MapError> {
        if xi.norm() > SERIES_USE {
            return self.logs_at_zipper(xi);
        }
        self.series_logs(xi)
    }

    fn series_logs(&self, xi: C64) -> Result<(C64, C64), MapError> {
        let c = self.series()?;
        let (mut l, mut dl) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for (j, a) in c.iter().enumerate().rev() {
            l = l * xi + a;
            if j > 0 {
                dl = dl * xi + a * j as f64;
            }
        }
        Ok((l, (C64::new(1.0, 0.0) + xi * dl).ln()))
    }

    fn logs_at_zipper(&self, xi: C64) -> Result<(C64, C64), MapError> {
        let lf = |t: f64| {
            let x = xi * t;
            if t == 0.0 {
                return self.zipper.inverse_d(x).1;
            }
            self.zipper.inverse(x) / x
        };
        let ld = |t: f64| {
            let x = xi * t;
            if t == 0.0 {
                return C64::new(1.0, 0.0);
            }
            let (z, d) = self.zipper.inverse_d(x);
            x * d / z
        };
        let l0 = lf(0.0).ln();
        let rho = xi.norm();
        let mut a = l0;
        let mut b = C64::new(0.0, 0.0);
        let mut t = 0.0;
        // radial steps, geometric towards the circle
        let mut knots = vec![];
        let mut r = 0.25f64.min(rho);
        while r < rho {
            knots.push(r / rho);
            r = 1.0 - (1.0 - r) * 0.5;
        }
        knots.push(1.0);
        for &tk in &knots {
            a = track(&lf, t, tk, a, 40)?;
            b = track(&ld, t, tk, b, 40)?;
            t = tk;
        }
        Ok((a, b))
    }

    pub fn phi(&self, s: C64) -> Result<C64, MapError> {
        Ok(self.phi_d(s)?.0)
    }

    /// φ(s) and φ'(s).
    pub fn phi_d(&self, s: C64) -> Result<(C64, C64), MapError> {
        let xi = self.to_chart(s);
        let (a, b) = self.logs_at(xi)?;
        let k = self.chart_period / TAU;
        Ok((s - i() * k * a, b.exp()))
    }

    /// φ⁻¹(z), taking the lift nearest `hint` (or nearest Re z).
    pub fn phi_inverse(&self, z: C64, hint: Option<C64>) -> C64 {
        let zeta = self.to_chart(z);
        let k = self.chart_period / TAU;
        let s = if zeta.norm() > SERIES_USE * SERIES_USE {
            -i() * k * self.zipper.forward(zeta).ln()
        } else {
            z - self.asymptotic_constant
        };
        let target = hint.unwrap_or(z);
        let n = ((target.re - s.re) / self.chart_period).round();
        let mut s = s + n * self.chart_period;
        // polish with Newton on φ; the zipper alone loses relative accuracy near the upper end
        for _ in 0..3 {
            match self.phi_d(s) {
                Ok((w, d)) if d.norm() > 0.0 => {
                    let step = (w - z) / d;
                    if !step.is_finite() {
                        break;
                    }
                    s -= step;
                    if step.norm() < 1e-15 * (1.0 + s.norm()) {
                        break;
                    }
                }
                _ => break,
            }
        }
        s
    }

    /// Disk-level inverse map f: D -> W̃ on the chart and its derivative.
    pub fn disk_inverse(&self, xi: C64) -> (C64, C64) {
        self.zipper.inverse_d(xi)
    }

    /// Disk-level forward map g = f⁻¹ on the chart and its derivative.
    pub fn disk_forward(&self, zeta: C64) -> (C64, C64) {
        self.zipper.forward_d(zeta)
    }

    /// Samples of log(f(ξ)/ξ) and log(ξf'(ξ)/f(ξ)) on the circle of height y,
    /// one chart period, continuous along the circle. Returns (x, ξ, f, L_f, L_d).
    pub fn circle_logs(&self, y: f64, n: usize) -> Result<Vec<(f64, C64, C64, C64, C64)>, MapError> {
        let per = self.chart_period;
        let rad = (-TAU * y / per).exp();
        let (mut a, mut b) = self.logs_at(C64::new(rad, 0.0))?;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let x = per * k as f64 / n as f64;
            let xi = C64::from_polar(rad, TAU * x / per);
            if rad <= SERIES_USE {
                let (a, b) = self.series_logs(xi)?;
                out.push((x, xi, xi * a.exp(), a, b));
                continue;
            }
            if k > 0 {
                let x0 = per * (k - 1) as f64 / n as f64;
                let h0 = TAU * x0 / per;
                let dh = TAU * (x - x0) / per;
                let lf = |t: f64| {
                    let p = C64::from_polar(rad, h0 + dh * t);
                    self.zipper.inverse(p) / p
                };
                let ld = |t: f64| {
                    let p = C64::from_polar(rad, h0 + dh * t);
                    let (z, d) = self.zipper.inverse_d(p);
                    p * d / z
                };
                a = track(&lf, 0.0, 1.0, a, 30)?;
                b = track(&ld, 0.0, 1.0, b, 30)?;
            }
            let z = self.zipper.inverse(xi);
            out.push((x, xi, z, a, b));
        }
        Ok(out)
    }
}

/// Image of Im(s) = ε under φ as a polyline on C/PZ.
pub fn boundary_curve(phi: &ConformalMap, eps: f64) -> Result<JordanPolyline, MapError> {
    boundary_curve_n(phi, eps, None)
}

/// As `boundary_curve`, with an explicit base sample count per chart period.
/// Samples are refined until consecutive image points are within 0.01.
pub fn boundary_curve_n(phi: &ConformalMap, eps: f64, n: Option<usize>) -> Result<JordanPolyline, MapError> {
    if !(eps >= phi.accuracy.certified_height) {
        return Err(MapError::EpsilonOutsideCertifiedRegion { eps, floor: phi.accuracy.certified_height });
    }
    let n = n.unwrap_or(256);
    let samples = phi.circle_logs(eps, n)?;
    let mut pts: Vec<C64> = Vec::new();
    for (k, (x, _, _, a, _)) in samples.iter().enumerate() {
        let z = phi.level_point(*x, eps, *a);
        pts.push(z);
        let (x1, a1) = match samples.get(k + 1) {
            Some(next) => (next.0, next.3),
            None => {
                // close up against the first sample shifted by one chart period
                let (x0, _, _, a0, _) = samples[0];
                (x0 + phi.chart_period, a0)
            }
        };
        phi.refine_level(eps, (*x, *a, z), (x1, a1, phi.level_point(x1, eps, a1)), 0, &mut pts)?;
    }
    Ok(if phi.target.piece_len().is_some() {
        JordanPolyline::from_unit_piece(phi.period, &pts)
    } else {
        JordanPolyline::new(phi.period, pts)
    })
}

const LEVEL_SPACING: f64 = 0.01;

impl ConformalMap {
    /// φ(x + iε) from the tracked value of log(f(ξ)/ξ).
    fn level_point(&self, x: f64, eps: f64, log_ratio: C64) -> C64 {
        C64::new(x, eps) - i() * (self.chart_period / TAU) * log_ratio
    }

    fn log_ratio_track(&self, eps: f64, x0: f64, x1: f64, start: C64) -> Result<C64, MapError> {
        let per = self.chart_period;
        let rad = (-TAU * eps / per).exp();
        if rad <= SERIES_USE {
            return Ok(self.series_logs(C64::from_polar(rad, TAU * x1 / per))?.0);
        }
        let lf = |u: f64| {
            let p = C64::from_polar(rad, TAU * (x0 + (x1 - x0) * u) / per);
            self.zipper.inverse(p) / p
        };
        track(&lf, 0.0, 1.0, start, 40)
    }

    /// Appends image points strictly between the two given ones.
    fn refine_level(
        &self,
        eps: f64,
        p: (f64, C64, C64),
        q: (f64, C64, C64),
        depth: u32,
        out: &mut Vec<C64>,
    ) -> Result<(), MapError> {
        if (q.2 - p.2).norm() <= LEVEL_SPACING || depth >= 48 {
            return Ok(());
        }
        let xm = 0.5 * (p.0 + q.0);
        let am = self.log_ratio_track(eps, p.0, xm, p.1)?;
        let m = (xm, am, self.level_point(xm, eps, am));
        self.refine_level(eps, p, m, depth + 1, out)?;
        out.push(m.2);
        self.refine_level(eps, m, q, depth + 1, out)
    }
}

/// Symmetric Hausdorff distance between two curves on C/PZ, from dense
/// resampling of both at the given spacing.
pub fn hausdorff_distance(a: &JordanPolyline, b: &JordanPolyline, spacing: f64) -> f64 {
    let per = a.period as f64;
    let pa = dense(a, spacing);
    let pb = dense(b, spacing);
    directed(&pa, &pb, per, spacing).max(directed(&pb, &pa, per, spacing))
}

fn dense(c: &JordanPolyline, spacing: f64) -> Vec<C64> {
    let per = (c.turns * c.period as i64) as f64;
    let mut out = Vec::new();
    for k in 0..c.len() as i64 {
        let (p, q) = (c.lifted(k), c.lifted(k + 1));
        let n = ((q - p).norm() / spacing).ceil().max(1.0) as usize;
        for j in 0..n {
            let z = p + (q - p) * (j as f64 / n as f64);
            out.push(C64::new(z.re.rem_euclid(per), z.im));
        }
    }
    out
}

fn directed(from: &[C64], to: &[C64], per: f64, spacing: f64) -> f64 {
    let cell = (4.0 * spacing).max(per / 4096.0);
    let nx = (per / cell).ceil() as i64;
    let mut grid: std::collections::HashMap<(i64, i64), Vec<C64>> = std::collections::HashMap::new();
    for p in to {
        let key = (((p.re / cell).floor() as i64).rem_euclid(nx), (p.im / cell).floor() as i64);
        grid.entry(key).or_default().push(*p);
    }
    from.par_iter()
        .map(|p| {
            let cx = (p.re / cell).floor() as i64;
            let cy = (p.im / cell).floor() as i64;
            let mut best = f64::INFINITY;
            let mut ring = 0i64;
            loop {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        if dx.abs() != ring && dy.abs() != ring {
                            continue;
                        }
                        if let Some(list) = grid.get(&((cx + dx).rem_euclid(nx), cy + dy)) {
                            for q in list {
                                let mut ddx = (q.re - p.re).rem_euclid(per);
                                if ddx > per / 2.0 {
                                    ddx -= per;
                                }
                                best = best.min(ddx.hypot(q.im - p.im));
                            }
                        }
                    }
                }
                if best <= ring as f64 * cell || ring > nx {
                    break;
                }
                ring += 1;
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Largest ε = 2^-k, k = 1..=20, whose level curve is stably crooked in the
/// chain, with that curve's clearance.
pub fn choose_epsilon_stably_crooked(phi: &ConformalMap, chain: &CircularChain) -> Result<(f64, f64), MapError> {
    let mut last = 1.0;
    for k in 1..=20 {
        let eps = 0.5f64.powi(k);
        if eps < phi.accuracy.certified_height {
            break;
        }
        last = eps;
        let curve = boundary_curve(phi, eps)?;
        if is_stably_crooked(&curve, chain)? {
            return Ok((eps, crook_clearance(&curve, chain)?));
        }
    }
    Err(MapError::NoEpsilonFound { last_eps: last })
}

const MAP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MapFile {
    version: u32,
    period: u64,
    chart_period: f64,
    target: JordanPolyline,
    accuracy: MapAccuracy,
    asymptotic_constant: C64,
    zipper: Zipper,
    samples: Vec<(C64, C64)>,
}

impl ConformalMap {
    fn sample_grid(&self) -> Vec<C64> {
        let h = self.accuracy.certified_height.max(1e-3);
        [h, 2.0 * h, 0.25, 1.0]
            .iter()
            .flat_map(|&y| (0..8).map(move |k| C64::new(k as f64 / 8.0, y)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, MapError> {
        let samples = self
            .sample_grid()
            .into_iter()
            .map(|s| Ok((s, self.phi(s)?)))
            .collect::<Result<Vec<_>, MapError>>()?;
        let file = MapFile {
            version: MAP_VERSION,
            period: self.period,
            chart_period: self.chart_period,
            target: self.target.clone(),
            accuracy: self.accuracy,
            asymptotic_constant: self.asymptotic_constant,
            zipper: self.zipper.clone(),
            samples,
        };
        Ok(serde_json::to_string(&file).expect("map serializes"))
    }

    pub fn from_json(text: &str) -> Result<ConformalMap, MapError> {
        let file: MapFile = serde_json::from_str(text).map_err(|_| MapError::Version(0))?;
        if file.version != MAP_VERSION {
            return Err(MapError::Version(file.version));
        }
        let map = ConformalMap {
            period: file.period,
            chart_period: file.chart_period,
            target: file.target,
            accuracy: file.accuracy,
            asymptotic_constant: file.asymptotic_constant,
            zipper: file.zipper,
            series: OnceLock::new(),
        };
        let mut worst = 0.0f64;
        for (s, v) in &file.samples {
            worst = worst.max((map.phi(*s)? - v).norm());
        }
        if worst > 1e-9 {
            return Err(MapError::Corrupt(worst));
        }
        Ok(map)
    }
}

/// Height of the image of Im(s) = y far up: Im(φ(iy) - iy).
pub fn vertical_offset(phi: &ConformalMap, y: f64) -> Result<f64, MapError> {
    Ok((phi.phi(C64::new(0.0, y))? - C64::new(0.0, y)).im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize, r: f64) -> Vec<C64> {
        (0..n).map(|k| C64::from_polar(r, TAU * k as f64 / n as f64)).collect()
    }

    #[test]
    fn zipper_on_a_disk_is_a_scaling() {
        let z = Zipper::build(&circle(400, 0.5));
        for p in [C64::new(0.1, 0.05), C64::new(-0.2, 0.3), C64::new(0.0, -0.4)] {
            let g = z.forward(p);
            assert!((g - 2.0 * p).norm() < 1e-5, "{g} vs {}", 2.0 * p);
            assert!((z.inverse(g) - p).norm() < 1e-12);
        }
        let (_, d) = z.forward_d(C64::new(0.0, 0.0));
        assert!(d.im.abs() < 1e-12 && d.re > 0.0);
    }

    #[test]
    fn derivatives_match_differences() {
        let pts: Vec<C64> = (0..300)
            .map(|k| {
                let t = TAU * k as f64 / 300.0;
                C64::from_polar(1.0 + 0.3 * (3.0 * t).cos(), t)
            })
            .collect();
        let z = Zipper::build(&pts);
        let p = C64::new(0.2, 0.1);
        let h = 1e-6;
        let (_, d) = z.forward_d(p);
        let fd = (z.forward(p + h) - z.forward(p - h)) / (2.0 * h);
        assert!((d - fd).norm() < 1e-6 * d.norm());
        let q = C64::new(-0.3, 0.5);
        let (_, d) = z.inverse_d(q);
        let fd = (z.inverse(q + h) - z.inverse(q - h)) / (2.0 * h);
        assert!((d - fd).norm() < 1e-6 * d.norm());
    }

    #[test]
    fn log_branches() {
        let l = log_near(C64::new(-1.0, -1e-9), C64::new(0.0, 3.0));
        assert!((l.im - PI).abs() < 1e-8);
    }
}
