//! Re-verification of a tower from its stored data, exact rotation numbers,
//! and rasters of the projected chains E(Q_k).

use crate::chains::CircularChain;
use crate::cylinder::{eval_e, C64};
use crate::tower::{
    condition_1, condition_2, condition_3, condition_4, condition_5, condition_6, conjugacy_residual,
    conjugated_translation, eval_f, flow_time1, pullback_chain, LevelLedger, TowerState,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub levels: Vec<LevelLedger>,
    pub invariants: Vec<InvariantCheck>,
}

impl ConditionsReport {
    pub fn passed(&self) -> bool {
        self.levels.iter().all(|l| l.passed()) && self.invariants.iter().all(|c| c.passed)
    }

    /// "level k (i)" for every failed condition and the names of failed invariants.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .levels
            .iter()
            .flat_map(|l| l.failed().into_iter().map(move |id| format!("level {} ({id})", l.level)))
            .collect();
        out.extend(self.invariants.iter().filter(|c| !c.passed).map(|c| c.name.clone()));
        out
    }
}

fn chains_agree(a: &CircularChain, b: &CircularChain) -> f64 {
    if a.links.len() != b.links.len() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for (p, q) in a.links.iter().zip(&b.links) {
        if p.vertices.len() != q.vertices.len() {
            return f64::INFINITY;
        }
        for (u, v) in p.vertices.iter().zip(&q.vertices) {
            worst = worst.max((u - v).norm());
        }
    }
    worst
}

/// Re-runs conditions (1)-(6) for every level, with Q_k pulled back afresh,
/// plus the structural invariants of the state.
pub fn check_conditions(state: &TowerState) -> ConditionsReport {
    let mut invariants = Vec::new();
    let n = state.levels.len();
    let mut chains = Vec::with_capacity(n);
    for k in 1..=n {
        match pullback_chain(state, k) {
            Ok(c) => {
                let d = chains_agree(&c, &state.chains[k - 1]);
                invariants.push(InvariantCheck {
                    name: format!("stored Q_{k}"),
                    passed: d <= 1e-9,
                    detail: format!("max vertex deviation {d:.1e}"),
                });
                chains.push(c);
            }
            Err(e) => {
                invariants.push(InvariantCheck { name: format!("pullback Q_{k}"), passed: false, detail: e.to_string() });
                chains.push(state.chains[k - 1].clone());
            }
        }
    }
    let report = rotation_number_report(state);
    let stored_ok = report.theta_f64.iter().zip(&state.theta_partials).all(|(a, b)| (a - b).abs() <= 1e-15);
    invariants.push(InvariantCheck {
        name: "theta partials".into(),
        passed: stored_ok && state.theta_partials.windows(2).all(|w| w[1] > w[0]),
        detail: format!("θ_{n} = {}", report.theta),
    });
    let levels = (1..=n)
        .map(|k| {
            let (c4, _) = condition_4(state, k);
            LevelLedger {
                level: k,
                conditions: vec![
                    condition_1(state, k),
                    condition_2(&chains, k),
                    condition_3(&chains, k),
                    c4,
                    condition_5(state, k),
                    condition_6(state, k),
                ],
                provisional: state.ledger.get(k - 1).is_some_and(|l| l.provisional),
            }
        })
        .collect();
    ConditionsReport { levels, invariants }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationReport {
    /// θ_n = Σ 1/(q_1…q_k), exact, as "p/q".
    pub theta: String,
    pub theta_f64: Vec<f64>,
    pub continued_fraction: Vec<String>,
    /// Bound on θ - θ_n for any continuation with q_(n+1) >= `q_next` and later q >= 2.
    pub tail_bound: String,
    pub q_next: u64,
}

pub fn theta_exact(qs: &[u64]) -> Vec<BigRational> {
    let mut prod = BigInt::one();
    let mut theta = BigRational::zero();
    qs.iter()
        .map(|q| {
            prod *= BigInt::from(*q);
            theta += BigRational::new(BigInt::one(), prod.clone());
            theta.clone()
        })
        .collect()
}

pub fn continued_fraction(x: &BigRational) -> Vec<BigInt> {
    let mut out = Vec::new();
    let mut x = x.clone();
    loop {
        let a = x.floor();
        out.push(a.to_integer());
        let frac = &x - &a;
        if frac.is_zero() {
            return out;
        }
        x = frac.recip();
    }
}

/// 2/(q_1…q_n q_next): the series Σ_(j>n) 1/(q_1…q_j) with q_j >= 2 after q_next.
pub fn tail_bound_exact(qs: &[u64], q_next: u64) -> BigRational {
    let p: BigInt = qs.iter().map(|q| BigInt::from(*q)).product::<BigInt>() * BigInt::from(q_next);
    BigRational::new(BigInt::from(2), p)
}

/// θ_n, its continued fraction, and the tail bound with q_(n+1) >= max(n+1, 2).
pub fn rotation_number_report(state: &TowerState) -> RotationReport {
    let qs = state.qs();
    let thetas = theta_exact(&qs);
    let theta = thetas.last().cloned().unwrap_or_else(BigRational::zero);
    let q_next = (qs.len() as u64 + 1).max(2);
    RotationReport {
        theta: theta.to_string(),
        theta_f64: thetas.iter().map(|t| t.to_f64().unwrap_or(f64::NAN)).collect(),
        continued_fraction: continued_fraction(&theta).iter().map(|a| a.to_string()).collect(),
        tail_bound: tail_bound_exact(&qs, q_next).to_string(),
        q_next,
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("pixel size {pixel:.3e} exceeds half the smallest projected link diameter {link:.3e}")]
    ResolutionTooCoarse { pixel: f64, link: f64 },
    #[error("no level {0}")]
    NoSuchLevel(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const BACKGROUND: u8 = 0;
pub const LINK: u8 = 1;
pub const ZERO_COMPONENT: u8 = 2;
/// RGB entries for BACKGROUND, LINK, ZERO_COMPONENT.
pub const PALETTE: [u8; 9] = [255, 255, 255, 31, 58, 147, 244, 162, 54];

#[derive(Debug, Clone)]
pub struct Raster {
    pub resolution: usize,
    /// The grid covers [-radius, radius]² in the ζ-plane.
    pub radius: f64,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn pixel_size(&self) -> f64 {
        2.0 * self.radius / self.resolution as f64
    }

    pub fn center(&self, i: usize, j: usize) -> C64 {
        let p = self.pixel_size();
        C64::new(-self.radius + (j as f64 + 0.5) * p, self.radius - (i as f64 + 0.5) * p)
    }

    pub fn count(&self, class: u8) -> usize {
        self.pixels.iter().filter(|p| **p == class).count()
    }

    pub fn write_png(&self, path: &std::path::Path) -> Result<(), RenderError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut enc = png::Encoder::new(file, self.resolution as u32, self.resolution as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(PALETTE.to_vec());
        let mut w = enc.write_header()?;
        w.write_image_data(&self.pixels)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionStats {
    pub level: usize,
    pub resolution: usize,
    pub pixel_size: f64,
    /// Area of the 0-component, ± `area_error` (one pixel ring).
    pub area: f64,
    pub area_error: f64,
    /// Hausdorff distance between the pixel sets of E(Q_k) and E(Q_(k-1)).
    pub hausdorff: Option<f64>,
    pub chain_pixels_outside_unit_disk: usize,
    pub min_link_diameter: f64,
}

/// Diameter of the projected link E(P), from its boundary.
fn projected_diameter(p: &crate::geom::Polygon) -> f64 {
    let mut pts = Vec::new();
    for (a, b) in p.edges() {
        for k in 0..8 {
            pts.push(eval_e(a + (b - a) * (k as f64 / 8.0)));
        }
    }
    let mut d = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max((pts[i] - pts[j]).norm());
        }
    }
    d
}

/// Is the lift z of a ζ-plane point in the closure of some link of the chain (on C/Z)?
fn in_chain(chain: &CircularChain, boxes: &[crate::geom::BBox], z: C64) -> bool {
    chain.links.iter().zip(boxes).any(|(l, b)| {
        let k0 = (b.min_x - z.re).ceil() as i64;
        let k1 = (b.max_x - z.re).floor() as i64;
        (k0..=k1).any(|k| {
            let p = z + C64::new(k as f64, 0.0);
            b.contains(p, 0.0) && l.contains_closed(p)
        })
    })
}

/// Pixels of E(Q_k) on the square of half-width e^{2π margin}, with the
/// component of the complement containing 0 filled in.
pub fn rasterize(chain: &CircularChain, resolution: usize, margin: f64) -> Result<Raster, RenderError> {
    let radius = (TAU * margin).exp();
    let mut r = Raster { resolution, radius, pixels: vec![BACKGROUND; resolution * resolution] };
    let min_link = chain.links.iter().map(projected_diameter).fold(f64::INFINITY, f64::min);
    if r.pixel_size() > 0.5 * min_link {
        return Err(RenderError::ResolutionTooCoarse { pixel: r.pixel_size(), link: min_link });
    }
    let boxes = chain.bboxes();
    let rows: Vec<Vec<u8>> = (0..resolution)
        .into_par_iter()
        .map(|i| {
            (0..resolution)
                .map(|j| {
                    let zeta = r.center(i, j);
                    if zeta.norm() == 0.0 {
                        return BACKGROUND;
                    }
                    let z = C64::new(zeta.arg() / TAU, -zeta.norm().ln() / TAU);
                    if in_chain(chain, &boxes, z) {
                        LINK
                    } else {
                        BACKGROUND
                    }
                })
                .collect()
        })
        .collect();
    r.pixels = rows.concat();
    // flood fill from the pixel nearest 0
    let n = resolution;
    let c = n / 2;
    let start = [(c, c), (c - 1, c), (c, c - 1), (c - 1, c - 1)]
        .into_iter()
        .find(|&(i, j)| r.pixels[i * n + j] == BACKGROUND);
    if let Some((i, j)) = start {
        let mut stack = vec![(i, j)];
        r.pixels[i * n + j] = ZERO_COMPONENT;
        while let Some((i, j)) = stack.pop() {
            let mut visit = |a: usize, b: usize| {
                if r.pixels[a * n + b] == BACKGROUND {
                    r.pixels[a * n + b] = ZERO_COMPONENT;
                    stack.push((a, b));
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < n {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < n {
                visit(i, j + 1);
            }
        }
    }
    Ok(r)
}

/// Squared Euclidean distance transform (in pixels) to the set `mask`,
/// by separable lower envelopes of parabolas.
fn edt(mask: &[bool], n: usize) -> Vec<f64> {
    const INF: f64 = 1e20;
    fn pass(f: &[f64]) -> Vec<f64> {
        let len = f.len();
        let mut d = vec![0.0; len];
        let mut v = vec![0usize; len];
        let mut z = vec![0.0; len + 1];
        let mut k = 0;
        z[0] = -INF;
        z[1] = INF;
        for q in 1..len {
            loop {
                let p = v[k];
                let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                if s <= z[k] && k > 0 {
                    k -= 1;
                    continue;
                }
                if s <= z[k] {
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
        k = 0;
        for q in 0..len {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k];
            d[q] = (q as f64 - p as f64).powi(2) + f[p];
        }
        d
    }
    let mut g: Vec<f64> = mask.iter().map(|m| if *m { 0.0 } else { INF }).collect();
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| g[i * n + j]).collect();
        for (i, v) in pass(&col).into_iter().enumerate() {
            g[i * n + j] = v;
        }
    }
    for i in 0..n {
        let row = pass(&g[i * n..(i + 1) * n]);
        g[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    g
}

/// Hausdorff distance between two pixel classes of equal-geometry rasters.
pub fn pixel_hausdorff(a: &Raster, b: &Raster, class: u8) -> Option<f64> {
    let n = a.resolution;
    let ma: Vec<bool> = a.pixels.iter().map(|p| *p == class).collect();
    let mb: Vec<bool> = b.pixels.iter().map(|p| *p == class).collect();
    if !ma.iter().any(|x| *x) || !mb.iter().any(|x| *x) {
        return None;
    }
    let da = edt(&ma, n);
    let db = edt(&mb, n);
    let mut worst = 0.0f64;
    for i in 0..n * n {
        if ma[i] {
            worst = worst.max(db[i]);
        }
        if mb[i] {
            worst = worst.max(da[i]);
        }
    }
    Some(worst.sqrt() * a.pixel_size())
}

/// Is every `class` pixel of `inner` within one pixel of a `class` pixel of `outer`?
pub fn nested(inner: &Raster, outer: &Raster, class: u8) -> bool {
    let n = inner.resolution;
    (0..n * n).all(|idx| {
        if inner.pixels[idx] != class {
            return true;
        }
        let (i, j) = ((idx / n) as i64, (idx % n) as i64);
        (-1..=1).any(|di| {
            (-1..=1).any(|dj| {
                let (a, b) = (i + di, j + dj);
                a >= 0 && b >= 0 && a < n as i64 && b < n as i64 && outer.pixels[(a as usize) * n + b as usize] == class
            })
        })
    })
}

/// Raster of E(Q_k) and its statistics; the Hausdorff distance is taken
/// against the same rasterization of E(Q_(k-1)).
pub fn render_approximant(
    state: &TowerState,
    k: usize,
    resolution: usize,
    margin: f64,
) -> Result<(Raster, RegionStats), RenderError> {
    if k == 0 || k > state.chains.len() {
        return Err(RenderError::NoSuchLevel(k));
    }
    let r = rasterize(&state.chains[k - 1], resolution, margin)?;
    let hausdorff = if k > 1 {
        let prev = rasterize(&state.chains[k - 2], resolution, margin)?;
        pixel_hausdorff(&r, &prev, LINK)
    } else {
        None
    };
    let outside = (0..resolution * resolution)
        .filter(|idx| r.pixels[*idx] == LINK && r.center(idx / resolution, idx % resolution).norm() > 1.0)
        .count();
    let p = r.pixel_size();
    let zero = r.count(ZERO_COMPONENT);
    // boundary ring of the component: pixels with a non-component neighbour
    let n = resolution;
    let ring = (0..n * n)
        .filter(|idx| {
            r.pixels[*idx] == ZERO_COMPONENT && {
                let (i, j) = (idx / n, idx % n);
                i == 0 || j == 0 || i + 1 == n || j + 1 == n || [idx - 1, idx + 1, idx - n, idx + n].iter().any(|m| r.pixels[*m] != ZERO_COMPONENT)
            }
        })
        .count();
    let stats = RegionStats {
        level: k,
        resolution,
        pixel_size: p,
        area: zero as f64 * p * p,
        area_error: ring as f64 * p * p,
        hausdorff,
        chain_pixels_outside_unit_disk: outside,
        min_link_diameter: state.chains[k - 1].links.iter().map(projected_diameter).fold(f64::INFINITY, f64::min),
    };
    Ok((r, stats))
}

pub fn write_stats_csv<W: Write>(out: W, rows: &[RegionStats]) -> Result<(), RenderError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "resolution", "pixel_size", "area", "area_error", "hausdorff", "outside_unit_disk", "min_link_diameter"])?;
    for s in rows {
        w.write_record([
            s.level.to_string(),
            s.resolution.to_string(),
            format!("{:e}", s.pixel_size),
            format!("{:e}", s.area),
            format!("{:e}", s.area_error),
            s.hausdorff.map_or(String::new(), |h| format!("{h:e}")),
            s.chain_pixels_outside_unit_disk.to_string(),
            format!("{:e}", s.min_link_diameter),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompactReport {
    pub passed: bool,
    /// Largest |ζ| over the projected chains (from link vertices, Im >= 0 means |ζ| <= 1).
    pub chain_radius: f64,
    /// Achieved h' per level, min(h, -safety floor); f_k is defined on e^{2π h'} D.
    pub margins: Vec<f64>,
    pub outer_radii: Vec<f64>,
}

/// All projected chains lie in the closed unit disk, and every f_k is
/// certified on a disk of radius e^{2π h'} with h' > 0.
pub fn check_compact_containment(state: &TowerState) -> CompactReport {
    let min_im = state
        .chains
        .iter()
        .flat_map(|c| c.links.iter().flat_map(|l| l.vertices.iter().map(|v| v.im)))
        .fold(f64::INFINITY, f64::min);
    let chain_radius = (-TAU * min_im).exp();
    let margins: Vec<f64> = state.safety_floor.iter().map(|f| state.h.min(-f)).collect();
    let outer_radii = margins.iter().map(|m| (TAU * m).exp()).collect();
    let domains_ok = state.ledger.iter().all(|l| l.get(4).is_some_and(|c| c.passed)) && margins.iter().all(|m| *m > 0.0);
    CompactReport { passed: chain_radius <= 1.0 + 1e-12 && domains_ok, chain_radius, margins, outer_radii }
}

/// Random points x + iy with x in [-2, 2], y in [lo, lo + span].
fn sample_points(rng: &mut ChaCha8Rng, n: usize, lo: f64, span: f64) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-2.0..2.0), lo + rng.gen_range(0.0..span))).collect()
}

fn sup_check(name: String, tol: f64, values: &[Result<f64, String>], min_points: usize) -> InvariantCheck {
    let ok: Vec<f64> = values.iter().filter_map(|v| v.as_ref().ok().copied()).collect();
    let sup = ok.iter().fold(0.0f64, |a, &b| if b > a || b.is_nan() { b } else { a });
    let first_err = values.iter().find_map(|v| v.as_ref().err().cloned());
    let passed = ok.len() >= min_points && sup <= tol;
    let mut detail = format!("sup {sup:.2e} (tol {tol:.0e}) on {} of {} points", ok.len(), values.len());
    if let Some(e) = first_err {
        detail.push_str(&format!("; first failure: {e}"));
    }
    InvariantCheck { name, passed, detail }
}

/// Deck relations of B_k, G_n, F_n, the conjugacy Φ_n F_n = Φ_n + θ_n and
/// the agreement of the flow with S_n⁻¹ T_1 S_n, on `points` random points
/// above the certified floors.
pub fn invariant_suite(state: &TowerState, seed: u64, points: usize) -> Vec<InvariantCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let one = C64::new(1.0, 0.0);
    for (k, level) in state.levels.iter().enumerate() {
        let lo = level.b.validity_floor().max(-state.h - 1.0) + 0.05;
        let pts = sample_points(&mut rng, points, lo, 3.0);
        let vals: Vec<Result<f64, String>> = pts
            .iter()
            .map(|z| match (level.b.eval_map(*z + one), level.b.eval_map(*z)) {
                (Ok(a), Ok(b)) => Ok((a - b - one).norm()),
                (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
            })
            .collect();
        out.push(sup_check(format!("deck B_{}", k + 1), 1e-9, &vals, points));
    }
    for n in 1..=state.levels.len() {
        let lo = state.safety_floor.get(n - 1).copied().unwrap_or(0.0).max(-state.h - 1.0) + 0.05;
        let pts = sample_points(&mut rng, points, lo, 2.0);
        let g: Vec<Result<f64, String>> = pts
            .par_iter()
            .map(|z| match (flow_time1(state, n, *z + one), flow_time1(state, n, *z)) {
                (Ok(a), Ok(b)) => Ok((a - b - one).norm()),
                (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
            })
            .collect();
        out.push(sup_check(format!("deck G_{n}"), 1e-9, &g, points));
        let f: Vec<Result<f64, String>> = pts
            .par_iter()
            .map(|z| match (eval_f(state, n, *z + one), eval_f(state, n, *z)) {
                (Ok(a), Ok(b)) => Ok((a - b - one).norm()),
                (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
            })
            .collect();
        out.push(sup_check(format!("deck F_{n}"), 1e-9, &f, points));
        let conj: Vec<Result<f64, String>> =
            pts.par_iter().map(|z| conjugacy_residual(state, n, *z).map(|r| r.norm()).map_err(|e| e.to_string())).collect();
        out.push(sup_check(format!("conjugacy Φ_{n}"), 1e-6, &conj, points));
        let flow: Vec<Result<f64, String>> = pts
            .par_iter()
            .map(|z| match (flow_time1(state, n, *z), conjugated_translation(state, n, *z)) {
                (Ok(a), Ok(b)) => Ok((a - b).norm()),
                (Err(e), _) => Err(e.to_string()),
                (_, Err(e)) => Err(e.to_string()),
            })
            .collect();
        out.push(sup_check(format!("flow vs S_{n}⁻¹ T_1 S_{n}"), 1e-8, &flow, points.min(100)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_examples() {
        let t = theta_exact(&[5, 5]);
        assert_eq!(t[1], BigRational::new(BigInt::from(6), BigInt::from(25)));
        let t = theta_exact(&[5, 25]);
        assert_eq!(t[1], BigRational::new(BigInt::from(26), BigInt::from(125)));
        assert_eq!(tail_bound_exact(&[5, 25], 3), BigRational::new(BigInt::from(2), BigInt::from(375)));
    }

    #[test]
    fn continued_fractions() {
        let x = BigRational::new(BigInt::from(26), BigInt::from(125));
        let cf = continued_fraction(&x);
        assert_eq!(cf, [0, 4, 1, 4, 5].map(BigInt::from).to_vec());
        let mut back = BigRational::from_integer(cf.last().unwrap().clone());
        for a in cf.iter().rev().skip(1) {
            back = BigRational::from_integer(a.clone()) + back.recip();
        }
        assert_eq!(back, x);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let n = 17;
        let mask: Vec<bool> = (0..n * n).map(|i| i % 37 == 5 || i == 100).collect();
        let d = edt(&mask, n);
        for i in 0..n * n {
            let (a, b) = ((i / n) as f64, (i % n) as f64);
            let want = (0..n * n)
                .filter(|k| mask[*k])
                .map(|k| ((k / n) as f64 - a).powi(2) + ((k % n) as f64 - b).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d[i], want);
        }
    }
}
