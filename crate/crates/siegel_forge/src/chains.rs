//! Circular chains on cylinders, crooked embeddings, stably crooked curves and
//! the generator of T1-invariant crooked curves in the rectangle chains C_m.
//!
//! Lifted indexing: on C/PZ a chain of length m is unrolled so that lifted
//! link u = j + k m is link j translated by k P. Chains are expected to be
//! indexed in the direction of increasing real part.

use crate::cylinder::C64;
use crate::geom::{segment_crossing, BBox, Polygon};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("chain length {0} is below 4")]
    LengthTooSmall(usize),
    #[error("curve period {curve} differs from chain period {chain}")]
    PeriodMismatch { curve: u64, chain: u64 },
    #[error("piece starting at {0} is not contained in any link")]
    PieceNotInAnyLink(C64),
    #[error("consecutive pieces land in non-adjacent links {0} and {1}")]
    NonAdjacentPieces(usize, usize),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircularChain {
    pub period: u64,
    pub links: Vec<Polygon>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    /// Non-adjacent pairs whose links meet.
    pub spurious: Vec<(usize, usize)>,
    /// Adjacent pairs whose links are disjoint.
    pub missing: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrookedWitness {
    pub f_values: Vec<i64>,
    pub m: usize,
    pub m_prime: usize,
}

fn one() -> i64 {
    1
}

/// Closed polyline on C/mZ. The edge after the last vertex ends at
/// `vertices[0] + turns * period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JordanPolyline {
    pub period: u64,
    pub vertices: Vec<C64>,
    #[serde(default)]
    pub t1_invariant: bool,
    #[serde(default = "one")]
    pub turns: i64,
}

impl CircularChain {
    pub fn new(period: u64, links: Vec<Polygon>) -> Result<Self, ChainError> {
        if links.len() < 4 {
            return Err(ChainError::LengthTooSmall(links.len()));
        }
        Ok(CircularChain { period, links })
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    fn p(&self) -> f64 {
        self.period as f64
    }

    /// Translates k for which link j shifted by kP has a bbox near p.
    fn translates_near(&self, bb: &BBox, p: C64, pad: f64) -> std::ops::RangeInclusive<i64> {
        let per = self.p();
        let lo = ((p.re - bb.max_x - pad) / per).ceil() as i64;
        let hi = ((p.re - bb.min_x + pad) / per).floor() as i64;
        lo..=hi
    }

    pub fn bboxes(&self) -> Vec<BBox> {
        self.links.iter().map(|l| l.bbox()).collect()
    }

    /// Lifted indices of links whose closure (dilated by `delta`) contains p.
    fn closure_members(&self, bbs: &[BBox], p: C64, delta: f64) -> Vec<i64> {
        let m = self.len() as i64;
        let mut out = Vec::new();
        for (j, bb) in bbs.iter().enumerate() {
            for k in self.translates_near(bb, p, delta) {
                let q = p - C64::new(k as f64 * self.p(), 0.0);
                if !bb.contains(q, delta) {
                    continue;
                }
                let hit = if delta == 0.0 {
                    self.links[j].contains_closed(q)
                } else {
                    self.links[j].depth(q) >= -delta
                };
                if hit {
                    out.push(j as i64 + k * m);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Lifted indices of links that contain p at depth more than `delta`.
    fn open_members(&self, bbs: &[BBox], p: C64, delta: f64) -> Vec<i64> {
        let m = self.len() as i64;
        let mut out = Vec::new();
        for (j, bb) in bbs.iter().enumerate() {
            for k in self.translates_near(bb, p, 0.0) {
                let q = p - C64::new(k as f64 * self.p(), 0.0);
                if !bb.contains(q, 0.0) {
                    continue;
                }
                let hit = if delta == 0.0 {
                    self.links[j].contains_open(q)
                } else {
                    self.links[j].depth(q) > delta
                };
                if hit {
                    out.push(j as i64 + k * m);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Classes j such that some translate of link j contains the closed segment.
    fn segment_classes(&self, bbs: &[BBox], a: C64, b: C64) -> Vec<usize> {
        let mut out = Vec::new();
        let mid = (a + b) / 2.0;
        for (j, bb) in bbs.iter().enumerate() {
            for k in self.translates_near(bb, mid, (b - a).norm()) {
                let d = C64::new(k as f64 * self.p(), 0.0);
                if self.links[j].contains_segment_open(a - d, b - d) {
                    out.push(j);
                    break;
                }
            }
        }
        out
    }

    /// Translating every link by +1 permutes the chain as j -> j+1.
    pub fn unit_shift_invariant(&self) -> bool {
        let m = self.len();
        if self.period as usize != m {
            return false;
        }
        (0..m).all(|j| {
            let a = self.links[j].translated(C64::new(1.0, 0.0));
            let b = &self.links[(j + 1) % m];
            let shift = if j + 1 == m { C64::new(self.p(), 0.0) } else { C64::new(0.0, 0.0) };
            a.vertices.len() == b.vertices.len()
                && a.vertices.iter().zip(&b.vertices).all(|(x, y)| (x - (y + shift)).norm() < 1e-12)
        })
    }

    pub fn translated(&self, d: C64) -> CircularChain {
        CircularChain {
            period: self.period,
            links: self.links.iter().map(|l| l.translated(d)).collect(),
        }
    }

    pub fn scaled(&self, k: f64, period: u64) -> CircularChain {
        CircularChain {
            period,
            links: self.links.iter().map(|l| l.scaled(k)).collect(),
        }
    }
}

/// C_m: links ]i - 1/4, i + 5/4[ x ]0, 1[ on C/mZ.
pub fn standard_chain(m: usize) -> Result<CircularChain, ChainError> {
    if m < 4 {
        return Err(ChainError::LengthTooSmall(m));
    }
    let links = (0..m)
        .map(|i| {
            let i = i as f64;
            Polygon::rect(i - 0.25, i + 1.25, 0.0, 1.0)
        })
        .collect();
    CircularChain::new(m as u64, links)
}

fn links_meet_on_cylinder(c: &CircularChain, bbs: &[BBox], i: usize, j: usize) -> bool {
    let per = c.period as f64;
    let (a, b) = (&bbs[i], &bbs[j]);
    let lo = ((a.min_x - b.max_x) / per).floor() as i64 - 1;
    let hi = ((a.max_x - b.min_x) / per).ceil() as i64 + 1;
    (lo..=hi).any(|k| {
        let d = k as f64 * per;
        b.shifted(d).overlaps(a, 0.0) && c.links[i].interiors_meet(&c.links[j].translated(C64::new(d, 0.0)))
    })
}

pub fn is_circular_chain(c: &CircularChain) -> (bool, ChainReport) {
    let m = c.len();
    let bbs = c.bboxes();
    let mut report = ChainReport::default();
    if m < 4 {
        return (false, report);
    }
    for i in 0..m {
        for j in i + 1..m {
            let adjacent = j == i + 1 || (i == 0 && j == m - 1);
            let meet = links_meet_on_cylinder(c, &bbs, i, j);
            if adjacent && !meet {
                report.missing.push((i, j));
            }
            if !adjacent && meet {
                report.spurious.push((i, j));
            }
        }
    }
    (report.spurious.is_empty() && report.missing.is_empty(), report)
}

/// Maximum link diameter, each measured in the cylinder metric.
pub fn link_diameter_sup(c: &CircularChain) -> f64 {
    let per = c.period as f64;
    c.links
        .iter()
        .map(|l| {
            let v = &l.vertices;
            let mut best = 0.0f64;
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    let d = v[i] - v[j];
                    let k = (d.re / per).round();
                    let mut dist = d.norm();
                    for kk in [k - 1.0, k, k + 1.0] {
                        dist = dist.min((d - C64::new(kk * per, 0.0)).norm());
                    }
                    best = best.max(dist);
                }
            }
            best
        })
        .fold(0.0, f64::max)
}

impl JordanPolyline {
    pub fn new(period: u64, vertices: Vec<C64>) -> Self {
        JordanPolyline { period, vertices, t1_invariant: false, turns: 1 }
    }

    /// Repeats a fundamental piece (from x0 up to, not including, x0 + 1) by T1.
    pub fn from_unit_piece(period: u64, piece: &[C64]) -> Self {
        let mut vertices = Vec::with_capacity(piece.len() * period as usize);
        for k in 0..period {
            vertices.extend(piece.iter().map(|v| v + k as f64));
        }
        JordanPolyline { period, vertices, t1_invariant: true, turns: 1 }
    }

    /// Horizontal circle Im(z) = y with `n` vertices per unit.
    pub fn horizontal(period: u64, y: f64, n: usize) -> Self {
        let piece: Vec<C64> = (0..n).map(|i| C64::new(i as f64 / n as f64, y)).collect();
        Self::from_unit_piece(period, &piece)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn closing_shift(&self) -> C64 {
        C64::new((self.turns * self.period as i64) as f64, 0.0)
    }

    /// Vertex k of the unrolled lift, k in Z.
    pub fn lifted(&self, k: i64) -> C64 {
        let n = self.len() as i64;
        let loops = k.div_euclid(n);
        self.vertices[k.rem_euclid(n) as usize] + self.closing_shift() * loops as f64
    }

    /// Vertices per unit piece when T1-invariant.
    pub fn piece_len(&self) -> Option<usize> {
        if self.t1_invariant && self.period > 0 && self.len().is_multiple_of(self.period as usize) {
            Some(self.len() / self.period as usize)
        } else {
            None
        }
    }

    /// Checks the stored T1-invariance flag against the vertices.
    pub fn t1_consistent(&self) -> bool {
        match self.piece_len() {
            None => !self.t1_invariant,
            Some(p) => (0..self.len() - p).all(|i| (self.vertices[i + p] - self.vertices[i] - 1.0).norm() < 1e-12),
        }
    }

    pub fn with_vertices(&self, vertices: Vec<C64>) -> Self {
        JordanPolyline { vertices, ..self.clone() }
    }

    pub fn concat(&self, other: &JordanPolyline) -> JordanPolyline {
        // Other is appended after this loop's closing translation.
        let shift = self.closing_shift() - other.vertices[0] + self.vertices[0];
        let mut v = self.vertices.clone();
        v.extend(other.vertices.iter().map(|p| p + shift));
        JordanPolyline {
            period: self.period,
            vertices: v,
            t1_invariant: false,
            turns: self.turns + other.turns,
        }
    }

    pub fn band(&self) -> (f64, f64) {
        let b = BBox::of(&self.vertices);
        (b.min_y, b.max_y)
    }

    /// No two non-adjacent edges meet on the cylinder.
    pub fn is_simple(&self) -> bool {
        let n = self.len() as i64;
        if n < 3 {
            return false;
        }
        let per = self.period as f64;
        let edges: Vec<(C64, C64)> = (0..n).map(|i| (self.lifted(i), self.lifted(i + 1))).collect();
        // bucket edges by the cells of a grid in canonical x, sized to the edges
        let mean_dx = edges.iter().map(|(a, b)| (b.re - a.re).abs()).sum::<f64>() / n as f64;
        let mean_dy = edges.iter().map(|(a, b)| (b.im - a.im).abs()).sum::<f64>() / n as f64;
        let cell = (4.0 * mean_dx).clamp(per / 65536.0, 0.05);
        let cell_y = (4.0 * mean_dy).clamp(1e-9, 0.05);
        let ncell = (per / cell).ceil() as i64;
        let boxes: Vec<BBox> = edges.iter().map(|(a, b)| BBox::of(&[*a, *b])).collect();
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (e, bb) in boxes.iter().enumerate() {
            let x0 = (bb.min_x / cell).floor() as i64;
            let x1 = (bb.max_x / cell).floor() as i64;
            let y0 = (bb.min_y / cell_y).floor() as i64;
            let y1 = (bb.max_y / cell_y).floor() as i64;
            for x in x0..=x1 {
                for y in y0..=y1 {
                    buckets.entry((x.rem_euclid(ncell), y)).or_default().push(e);
                }
            }
        }
        for list in buckets.values() {
            for (ii, &e) in list.iter().enumerate() {
                for &f in &list[ii + 1..] {
                    let (e, f) = (e.min(f), e.max(f));
                    if f == e + 1 || (e == 0 && f as i64 == n - 1) {
                        continue;
                    }
                    let (a, b) = edges[e];
                    let (c, d) = edges[f];
                    let k = ((a.re + b.re - c.re - d.re) / (2.0 * per)).round();
                    let (be, bf) = (&boxes[e], &boxes[f]);
                    for kk in [k - 1.0, k, k + 1.0] {
                        let s = C64::new(kk * per, 0.0);
                        if be.overlaps(&bf.shifted(kk * per), 1e-12) && crate::geom::segments_touch(a, b, c + s, d + s) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Total length of one loop.
    pub fn length(&self) -> f64 {
        let n = self.len() as i64;
        (0..n).map(|i| (self.lifted(i + 1) - self.lifted(i)).norm()).sum()
    }
}

/// Winding number of the curve in the chain by the piece-lifting procedure.
pub fn winding_number(curve: &JordanPolyline, chain: &CircularChain) -> Result<i64, ChainError> {
    if curve.period != chain.period {
        return Err(ChainError::PeriodMismatch { curve: curve.period, chain: chain.period });
    }
    let m = chain.len() as i64;
    let bbs = chain.bboxes();
    let mut classes: Vec<usize> = Vec::new();
    for i in 0..curve.len() as i64 {
        let (a, b) = (curve.lifted(i), curve.lifted(i + 1));
        let mut stack = vec![(0.0f64, 1.0f64, 0u32)];
        // pieces are processed in order: stack holds the pending tail reversed
        while let Some((t0, t1, depth)) = stack.pop() {
            let p = a + (b - a) * t0;
            let q = a + (b - a) * t1;
            let cls = chain.segment_classes(&bbs, p, q);
            if let Some(g) = pick_class(&cls, chain.len()) {
                classes.push(g);
            } else if depth >= 40 {
                return Err(ChainError::PieceNotInAnyLink(p));
            } else {
                let tm = (t0 + t1) / 2.0;
                stack.push((tm, t1, depth + 1));
                stack.push((t0, tm, depth + 1));
            }
        }
    }
    let mut total = 0i64;
    for i in 0..classes.len() {
        let g0 = classes[i] as i64;
        let g1 = classes[(i + 1) % classes.len()] as i64;
        let d = (g1 - g0).rem_euclid(m);
        let step = match d {
            0 => 0,
            1 => 1,
            x if x == m - 1 => -1,
            _ => return Err(ChainError::NonAdjacentPieces(g0 as usize, g1 as usize)),
        };
        total += step;
    }
    Ok(total.div_euclid(m))
}

/// The smaller of at most two admissible classes in the cyclic order.
fn pick_class(cls: &[usize], m: usize) -> Option<usize> {
    match cls {
        [] => None,
        [a] => Some(*a),
        [a, b, ..] => {
            let (a, b) = (*a.min(b), *a.max(b));
            if a == 0 && b == m - 1 {
                Some(b)
            } else {
                Some(a)
            }
        }
    }
}

struct Samples {
    closure: Vec<Vec<i64>>,
    open: Vec<Vec<i64>>,
    /// Samples per loop.
    loop_len: usize,
    /// Samples in the first unit piece, when the shift optimisation applies.
    piece_len: Option<usize>,
}

/// Cut parameters of the edge [a,b] at crossings with link boundaries.
fn edge_cuts(chain: &CircularChain, bbs: &[BBox], a: C64, b: C64, delta: f64) -> Vec<f64> {
    let mut cuts = Vec::new();
    let seg = BBox::of(&[a, b]);
    let per = chain.period as f64;
    for (j, bb) in bbs.iter().enumerate() {
        let lo = ((seg.min_x - bb.max_x - delta) / per).floor() as i64;
        let hi = ((seg.max_x - bb.min_x + delta) / per).ceil() as i64;
        for k in lo..=hi {
            let d = C64::new(k as f64 * per, 0.0);
            if !bb.shifted(k as f64 * per).overlaps(&seg, delta) {
                continue;
            }
            for (c, e) in chain.links[j].edges() {
                if let Some(t) = segment_crossing(a, b, c + d, e + d) {
                    cuts.push(t);
                }
            }
        }
    }
    if delta > 0.0 {
        // offset boundaries are not polygonal; resolve them by uniform refinement
        let n = ((b - a).norm() / (delta / 4.0)).ceil().min(10_000.0) as usize;
        cuts.extend((1..n).map(|i| i as f64 / n as f64));
    }
    cuts.retain(|t| *t > 0.0 && *t < 1.0);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    cuts
}

fn build_samples(curve: &JordanPolyline, chain: &CircularChain, delta: f64) -> Samples {
    let bbs = chain.bboxes();
    let n = curve.len() as i64;
    let mut pts: Vec<C64> = Vec::new();
    let mut piece_samples = None;
    let piece = if chain.unit_shift_invariant() { curve.piece_len() } else { None };
    for i in 0..n {
        if Some(i as usize) == piece {
            piece_samples = Some(pts.len());
        }
        let (a, b) = (curve.lifted(i), curve.lifted(i + 1));
        let mut ts = vec![0.0];
        ts.extend(edge_cuts(chain, &bbs, a, b, delta));
        ts.push(1.0);
        for w in ts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            pts.push(a + (b - a) * t0);
            pts.push(a + (b - a) * (2.0 * t0 + t1) / 3.0);
            pts.push(a + (b - a) * (t0 + 2.0 * t1) / 3.0);
        }
    }
    let loop_len = pts.len();
    let lm = curve.turns * chain.len() as i64;
    let mut closure = Vec::with_capacity(2 * loop_len + 1);
    let mut open = Vec::with_capacity(2 * loop_len + 1);
    for p in &pts {
        closure.push(chain.closure_members(&bbs, *p, delta));
        open.push(chain.open_members(&bbs, *p, delta));
    }
    for i in 0..=loop_len {
        let c: Vec<i64> = closure[i % loop_len].iter().map(|u| u + lm * (1 + (i / loop_len) as i64)).collect();
        let o: Vec<i64> = open[i % loop_len].iter().map(|u| u + lm * (1 + (i / loop_len) as i64)).collect();
        closure.push(c);
        open.push(o);
    }
    Samples { closure, open, loop_len, piece_len: piece_samples }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrookViolation {
    pub reversed: bool,
    pub start_sample: usize,
    pub u: i64,
    pub v: i64,
}

fn next_after(list: Option<&Vec<usize>>, i: usize) -> Option<usize> {
    let l = list?;
    let k = l.partition_point(|&x| x <= i);
    l.get(k).copied()
}

/// The back-and-forth condition scanning forward in sample order.
fn crooked_scan(
    closure: &[Vec<i64>],
    open: &[Vec<i64>],
    loop_len: usize,
    starts: usize,
    m: i64,
) -> Option<(usize, i64, i64)> {
    let mut occ_c: HashMap<i64, Vec<usize>> = HashMap::new();
    let mut occ_o: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, (c, o)) in closure.iter().zip(open).enumerate() {
        for &u in c {
            occ_c.entry(u).or_default().push(i);
        }
        for &u in o {
            occ_o.entry(u).or_default().push(i);
        }
    }
    for s1 in 0..starts {
        for &u in &closure[s1] {
            for v in u + 3..u + m {
                let s2 = match next_after(occ_c.get(&v), s1) {
                    Some(s) if s < s1 + loop_len => s,
                    _ => continue,
                };
                let ok = next_after(occ_o.get(&(v - 1)), s1)
                    .and_then(|a| next_after(occ_o.get(&(u + 1)), a))
                    .is_some_and(|b| b < s2);
                if !ok {
                    return Some((s1, u, v));
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrookReport {
    pub contained: bool,
    pub winding: Option<i64>,
    pub violation: Option<CrookViolation>,
}

impl CrookReport {
    pub fn passed(&self) -> bool {
        self.contained && self.winding == Some(1) && self.violation.is_none()
    }
}

/// The three stably-crooked bullets; the back-and-forth condition is checked
/// in both parameter directions. With `delta > 0` closures are dilated and open
/// links eroded by delta, which certifies the property for every curve within
/// delta of this one.
pub fn crook_report(curve: &JordanPolyline, chain: &CircularChain, delta: f64) -> Result<CrookReport, ChainError> {
    if curve.period != chain.period {
        return Err(ChainError::PeriodMismatch { curve: curve.period, chain: chain.period });
    }
    let s = build_samples(curve, chain, delta);
    let contained = s.open[..s.loop_len].iter().all(|o| !o.is_empty());
    let winding = if contained { winding_number(curve, chain).ok() } else { None };
    let mut report = CrookReport { contained, winding, violation: None };
    if !report.contained || report.winding != Some(1) {
        return Ok(report);
    }
    let m = chain.len() as i64;
    let starts = s.piece_len.unwrap_or(s.loop_len);
    if let Some((s1, u, v)) = crooked_scan(&s.closure, &s.open, s.loop_len, starts, m) {
        report.violation = Some(CrookViolation { reversed: false, start_sample: s1, u, v });
        return Ok(report);
    }
    let rc: Vec<Vec<i64>> = s.closure.iter().rev().cloned().collect();
    let ro: Vec<Vec<i64>> = s.open.iter().rev().cloned().collect();
    if let Some((s1, u, v)) = crooked_scan(&rc, &ro, s.loop_len, starts, m) {
        report.violation = Some(CrookViolation { reversed: true, start_sample: s1, u, v });
    }
    Ok(report)
}

pub fn is_stably_crooked(curve: &JordanPolyline, chain: &CircularChain) -> Result<bool, ChainError> {
    Ok(crook_report(curve, chain, 0.0)?.passed())
}

/// Half the largest delta (to 1e-4 relative bisection) for which the dilated
/// check passes; zero if the curve is not stably crooked.
pub fn crook_clearance(curve: &JordanPolyline, chain: &CircularChain) -> Result<f64, ChainError> {
    if !is_stably_crooked(curve, chain)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 0.5;
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        if crook_report(curve, chain, mid)?.passed() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo / 2.0)
}

/// Condition (4) on a periodic f, scanning pairs in one direction.
fn back_and_forth_ok(f: &dyn Fn(i64) -> i64, i: i64, reach: i64, dir: i64, m: i64) -> bool {
    let fi = f(i);
    let mut first_hit: HashMap<i64, i64> = HashMap::new();
    let mut last_low: Option<i64> = None;
    for step in 1..=reach {
        let j = i + dir * step;
        let v = f(j);
        let d = v - fi;
        if d > 2 && d < m {
            let a = match first_hit.get(&(v - 1)) {
                Some(a) => *a,
                None => return false,
            };
            if !last_low.is_some_and(|k| k * dir > a * dir) {
                return false;
            }
        }
        first_hit.entry(v).or_insert(j);
        if v == fi + 1 {
            last_low = Some(j);
        }
    }
    true
}

fn periodic_f(f: &[i64], m: i64) -> impl Fn(i64) -> i64 + '_ {
    let mp = f.len() as i64;
    move |j: i64| f[j.rem_euclid(mp) as usize] + j.div_euclid(mp) * m
}

/// Checks conditions (2)-(4) for a full period of f.
pub fn witness_conditions_hold(f: &[i64], m: usize) -> bool {
    let mp = f.len() as i64;
    let m = m as i64;
    if mp == 0 {
        return false;
    }
    for i in 0..mp {
        let next = if i + 1 < mp { f[i as usize + 1] } else { f[0] + m };
        if (next - f[i as usize]).abs() > 1 {
            return false;
        }
    }
    let g = periodic_f(f, m);
    let span = f.iter().max().unwrap() - f.iter().min().unwrap();
    let reach = mp * ((span + m) / m + 2);
    (0..mp).all(|i| back_and_forth_ok(&g, i, reach, 1, m) && back_and_forth_ok(&g, i, reach, -1, m))
}

/// Checks condition (4) for all pairs inside the prefix that end at its last index.
fn prefix_ok(f: &[i64], m: i64) -> bool {
    let t = f.len() - 1;
    let ft = f[t];
    for i in 0..t {
        let fi = f[i];
        if ft - fi > 2 && ft - fi < m {
            // forward pair (i, t)
            let mut ok = false;
            if let Some(a) = (i + 1..t).find(|&a| f[a] == ft - 1) {
                ok = (a + 1..t).any(|b| f[b] == fi + 1);
            }
            if !ok {
                return false;
            }
        }
    }
    // pairs (t, j) with j < t scanning downward
    let mut first_hit: HashMap<i64, usize> = HashMap::new();
    let mut last_low: Option<usize> = None;
    for j in (0..t).rev() {
        let v = f[j];
        let d = v - ft;
        if d > 2 && d < m {
            let a = match first_hit.get(&(v - 1)) {
                Some(a) => *a,
                None => return false,
            };
            if !last_low.is_some_and(|k| k < a) {
                return false;
            }
        }
        first_hit.entry(v).or_insert(j);
        if v == ft + 1 {
            last_low = Some(j);
        }
    }
    true
}

/// Classes j with closure(e_i) inside some translate of d_j, for every inner link i.
pub fn containment_classes(inner: &CircularChain, outer: &CircularChain) -> Vec<Vec<usize>> {
    let per = outer.period as f64;
    let obb = outer.bboxes();
    inner
        .links
        .iter()
        .map(|e| {
            let eb = e.bbox();
            let mut out = Vec::new();
            for (j, bb) in obb.iter().enumerate() {
                let lo = ((eb.min_x - bb.max_x) / per).floor() as i64;
                let hi = ((eb.max_x - bb.min_x) / per).ceil() as i64;
                for k in lo..=hi {
                    let d = k as f64 * per;
                    if bb.shifted(d).overlaps(&eb, 0.0) && outer.links[j].translated(C64::new(d, 0.0)).contains_closure_of(e) {
                        out.push(j);
                        break;
                    }
                }
            }
            out
        })
        .collect()
}

const SEARCH_BUDGET: usize = 5_000_000;

pub fn crooked_embedding_witness(inner: &CircularChain, outer: &CircularChain) -> Option<CrookedWitness> {
    if outer.period == 0 || !inner.period.is_multiple_of(outer.period) {
        return None;
    }
    let classes = containment_classes(inner, outer);
    witness_from_classes(&classes, outer.len())
}

/// Depth-first search over class choices with prefix pruning of condition (4).
pub fn witness_from_classes(classes: &[Vec<usize>], m: usize) -> Option<CrookedWitness> {
    let mp = classes.len();
    if mp == 0 || classes.iter().any(|c| c.is_empty()) {
        return None;
    }
    let mi = m as i64;
    let mut budget = SEARCH_BUDGET;
    let mut f: Vec<i64> = Vec::with_capacity(mp);
    fn options(prev: i64, cls: &[usize], m: i64) -> Vec<i64> {
        let mut v: Vec<i64> = (-1..=1)
            .map(|d| prev + d)
            .filter(|x| cls.contains(&(x.rem_euclid(m) as usize)))
            .collect();
        v.sort_unstable();
        v
    }
    fn dfs(f: &mut Vec<i64>, classes: &[Vec<usize>], m: i64, budget: &mut usize) -> bool {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let mp = classes.len();
        let t = f.len();
        if t == mp {
            return (f[0] + m - f[mp - 1]).abs() <= 1 && witness_conditions_hold(f, m as usize);
        }
        for x in options(f[t - 1], &classes[t], m) {
            if (f[0] + m - x).abs() > (mp - t) as i64 {
                continue;
            }
            f.push(x);
            if prefix_ok(f, m) && dfs(f, classes, m, budget) {
                return true;
            }
            f.pop();
        }
        false
    }
    let mut starts: Vec<usize> = classes[0].clone();
    starts.sort_unstable();
    for s in starts {
        f.clear();
        f.push(s as i64);
        if dfs(&mut f, classes, mi, &mut budget) {
            return Some(CrookedWitness { f_values: f, m, m_prime: mp });
        }
    }
    None
}

/// Re-checks all four conditions for a witness against the chains.
pub fn verify_witness(w: &CrookedWitness, inner: &CircularChain, outer: &CircularChain) -> bool {
    if w.f_values.len() != inner.len() || w.m != outer.len() {
        return false;
    }
    let classes = containment_classes(inner, outer);
    let m = outer.len() as i64;
    let contained = w
        .f_values
        .iter()
        .zip(&classes)
        .all(|(f, c)| c.contains(&(f.rem_euclid(m) as usize)));
    contained && witness_conditions_hold(&w.f_values, w.m)
}

/// Turning points of the recursive crooked arc from a to b.
fn crook_arc(a: f64, b: f64, alpha: f64, beta: f64, lim: f64, out: &mut Vec<f64>) {
    if (b - a).abs() <= lim {
        out.push(b);
        return;
    }
    let s = if b > a { 1.0 } else { -1.0 };
    let p = b - s * alpha;
    let q = a + s * beta;
    crook_arc(a, p, alpha, beta, lim, out);
    crook_arc(p, q, alpha, beta, lim, out);
    crook_arc(q, b, alpha, beta, lim, out);
}

/// Turning points x_0 < ... of one unit piece: a crooked climb of length m - 3.2
/// followed by a crooked descent of length m - 4.2, net displacement 1.
pub fn crooked_turning_points(m: usize) -> Vec<f64> {
    let t0 = 0.1;
    let a = m as f64 - 3.2;
    let mut xs = vec![t0];
    crook_arc(t0, t0 + a, 1.0, 1.0, 2.2, &mut xs);
    crook_arc(t0 + a, t0 + 1.0, 1.0, 1.0, 2.2, &mut xs);
    xs.pop();
    xs
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Embeds turning points as a graph over a parameter s in [0,1): x = X(s) with
/// X eased between turning points and y = y0 + (X(s) - s - c)/S, which is simple
/// and T1-invariant because it is a shear of a graph.
pub fn shear_embedding(xs: &[f64], band: (f64, f64), per_segment: usize) -> Vec<C64> {
    let mut turn: Vec<f64> = xs.to_vec();
    turn.push(xs[0] + 1.0);
    let lens: Vec<f64> = turn.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let total: f64 = lens.iter().sum();
    let mut svals = vec![0.0];
    for l in &lens {
        svals.push(svals.last().unwrap() + l / total);
    }
    let mut raw: Vec<(f64, f64)> = Vec::new();
    for k in 0..lens.len() {
        for i in 0..per_segment {
            let t = i as f64 / per_segment as f64;
            let s = svals[k] + (svals[k + 1] - svals[k]) * t;
            let x = turn[k] + (turn[k + 1] - turn[k]) * smoothstep(t);
            raw.push((s, x));
        }
    }
    let g: Vec<f64> = raw.iter().map(|(s, x)| x - s).collect();
    let gmin = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = band;
    let scale = if gmax > gmin { (y1 - y0) / (gmax - gmin) } else { 0.0 };
    raw.iter()
        .zip(&g)
        .map(|((_, x), gv)| C64::new(*x, y0 + (gv - gmin) * scale))
        .collect()
}

pub fn generate_crooked_curve(m: usize) -> Result<JordanPolyline, ChainError> {
    if m < 5 {
        return Err(ChainError::GenerationFailed(format!("length {m} is not supported; need m >= 5")));
    }
    let xs = crooked_turning_points(m);
    let piece = shear_embedding(&xs, (0.1, 0.9), 4);
    let curve = JordanPolyline::from_unit_piece(m as u64, &piece);
    let chain = standard_chain(m)?;
    if !is_stably_crooked(&curve, &chain)? {
        return Err(ChainError::GenerationFailed(format!("pattern for m = {m} is not stably crooked")));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_chain_shape() {
        let c = standard_chain(5).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.links[0], Polygon::rect(-0.25, 1.25, 0.0, 1.0));
        assert!((link_diameter_sup(&c) - 13f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(matches!(standard_chain(3), Err(ChainError::LengthTooSmall(3))));
        assert!(is_circular_chain(&c).0);
        let c4 = standard_chain(4).unwrap();
        assert!(is_circular_chain(&c4).0);
        assert!(c.unit_shift_invariant());
    }

    #[test]
    fn chain_violations_reported() {
        let mut links: Vec<Polygon> = (0..4).map(|i| Polygon::rect(i as f64 - 0.25, i as f64 + 1.25, 0.0, 1.0)).collect();
        links[2] = Polygon::rect(0.5, 3.25, 0.0, 1.0);
        let c = CircularChain::new(4, links).unwrap();
        let (ok, rep) = is_circular_chain(&c);
        assert!(!ok);
        assert!(rep.spurious.contains(&(0, 2)));

        let mut links: Vec<Polygon> = (0..5).map(|i| Polygon::rect(i as f64 - 0.25, i as f64 + 1.25, 0.0, 1.0)).collect();
        links[0] = Polygon::rect(-0.25, 0.7, 0.0, 1.0);
        let c = CircularChain::new(5, links).unwrap();
        let (ok, rep) = is_circular_chain(&c);
        assert!(!ok);
        assert!(rep.missing.contains(&(0, 1)));
    }

    #[test]
    fn unit_square_diameter() {
        let c = CircularChain::new(10, (0..4).map(|i| Polygon::rect(i as f64, i as f64 + 1.0, 0.0, 1.0)).collect()).unwrap();
        assert!((link_diameter_sup(&c) - 2f64.sqrt()).abs() < 1e-12);
        let s = standard_chain(6).unwrap().scaled(1.0 / 3.0, 2);
        assert!((link_diameter_sup(&s) - 13f64.sqrt() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_circle() {
        let c = standard_chain(5).unwrap();
        let h = JordanPolyline::horizontal(5, 0.5, 3);
        assert_eq!(winding_number(&h, &c).unwrap(), 1);
        assert_eq!(winding_number(&h.concat(&h), &c).unwrap(), 2);
        assert!(!is_stably_crooked(&h, &c).unwrap());
        assert!(h.is_simple());
        let other = JordanPolyline::horizontal(6, 0.5, 3);
        assert!(matches!(is_stably_crooked(&other, &c), Err(ChainError::PeriodMismatch { .. })));
    }

    #[test]
    fn generator_small_m() {
        for m in 5..=8 {
            let curve = generate_crooked_curve(m).unwrap();
            assert!(curve.t1_invariant && curve.t1_consistent());
            assert!(curve.is_simple(), "m = {m}");
            assert_eq!(winding_number(&curve, &standard_chain(m).unwrap()).unwrap(), 1);
        }
        assert!(generate_crooked_curve(4).is_err());
    }

    #[test]
    fn vertex_insertion_keeps_verdict() {
        let c = standard_chain(5).unwrap();
        let curve = generate_crooked_curve(5).unwrap();
        let mut v = Vec::new();
        for i in 0..curve.len() as i64 {
            let a = curve.lifted(i);
            let b = curve.lifted(i + 1);
            v.push(a);
            v.push(a + (b - a) * 0.37);
        }
        let finer = JordanPolyline { vertices: v, ..curve.clone() };
        assert!(is_stably_crooked(&finer, &c).unwrap());
    }

    #[test]
    fn zigzag_witness() {
        // f: one unit piece 0,1,2,1,2,3,2 repeated, net +1 per piece
        let piece = [0i64, 1, 2, 1, 2, 3, 2];
        let f: Vec<i64> = (0..5).flat_map(|k| piece.iter().map(move |x| x + k)).collect();
        assert!(witness_conditions_hold(&f, 5));
        let ident: Vec<i64> = (0..5).collect();
        assert!(!witness_conditions_hold(&ident, 5));
    }

    #[test]
    fn identity_refinement_is_not_crooked() {
        let c = standard_chain(5).unwrap();
        let inner = CircularChain::new(5, (0..5).map(|i| Polygon::rect(i as f64 + 0.3, i as f64 + 0.7, 0.2, 0.8)).collect()).unwrap();
        assert!(crooked_embedding_witness(&inner, &c).is_none());
        assert!(crooked_embedding_witness(&c, &c).is_none());
    }
}
