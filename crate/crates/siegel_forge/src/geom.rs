//! Planar polygon predicates used by the chain code.

use crate::cylinder::C64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of(points: &[C64]) -> BBox {
        let mut b = BBox {
            min_x: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            min_y: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in points {
            b.min_x = b.min_x.min(p.re);
            b.max_x = b.max_x.max(p.re);
            b.min_y = b.min_y.min(p.im);
            b.max_y = b.max_y.max(p.im);
        }
        b
    }

    pub fn contains(&self, p: C64, pad: f64) -> bool {
        p.re >= self.min_x - pad && p.re <= self.max_x + pad && p.im >= self.min_y - pad && p.im <= self.max_y + pad
    }

    pub fn overlaps(&self, o: &BBox, pad: f64) -> bool {
        self.min_x <= o.max_x + pad && o.min_x <= self.max_x + pad && self.min_y <= o.max_y + pad && o.min_y <= self.max_y + pad
    }

    pub fn shifted(&self, dx: f64) -> BBox {
        BBox { min_x: self.min_x + dx, max_x: self.max_x + dx, ..*self }
    }
}

/// A simple polygon; the region is its open interior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside,
    Boundary,
    Outside,
}

pub fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

fn orient(a: C64, b: C64, c: C64) -> f64 {
    cross(b - a, c - a)
}

fn on_segment(p: C64, a: C64, b: C64, tol: f64) -> bool {
    let ab = b - a;
    let len = ab.norm();
    if len == 0.0 {
        return (p - a).norm() <= tol;
    }
    if (orient(a, b, p) / len).abs() > tol {
        return false;
    }
    let t = ((p - a).re * ab.re + (p - a).im * ab.im) / (len * len);
    t >= -tol / len && t <= 1.0 + tol / len
}

/// Distance from p to the closed segment [a, b].
pub fn point_segment_distance(p: C64, a: C64, b: C64) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_sqr();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let t = (((p - a).re * ab.re + (p - a).im * ab.im) / l2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Closed segments [a,b] and [c,d] share a point.
pub fn segments_touch(a: C64, b: C64, c: C64, d: C64) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let tol = 1e-13 * (1.0 + a.norm() + b.norm() + c.norm() + d.norm());
    on_segment(a, c, d, tol) || on_segment(b, c, d, tol) || on_segment(c, a, b, tol) || on_segment(d, a, b, tol)
}

/// Parameter t in [0,1] along [a,b] where it meets the segment [c,d], if they cross.
pub fn segment_crossing(a: C64, b: C64, c: C64, d: C64) -> Option<f64> {
    let r = b - a;
    let s = d - c;
    let den = cross(r, s);
    if den == 0.0 {
        return None;
    }
    let t = cross(c - a, s) / den;
    let u = cross(c - a, r) / den;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

impl Polygon {
    pub fn new(vertices: Vec<C64>) -> Self {
        Polygon { vertices }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Polygon::new(vec![
            C64::new(x0, y0),
            C64::new(x1, y0),
            C64::new(x1, y1),
            C64::new(x0, y1),
        ])
    }

    pub fn bbox(&self) -> BBox {
        BBox::of(&self.vertices)
    }

    pub fn translated(&self, d: C64) -> Polygon {
        Polygon::new(self.vertices.iter().map(|v| v + d).collect())
    }

    pub fn scaled(&self, k: f64) -> Polygon {
        Polygon::new(self.vertices.iter().map(|v| v * k).collect())
    }

    pub fn edges(&self) -> impl Iterator<Item = (C64, C64)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn tol(&self) -> f64 {
        let b = self.bbox();
        1e-12 * (1.0 + b.max_x.abs().max(b.min_x.abs()) + b.max_y.abs().max(b.min_y.abs()))
    }

    pub fn locate(&self, p: C64) -> Location {
        let tol = self.tol();
        let mut inside = false;
        for (a, b) in self.edges() {
            if on_segment(p, a, b, tol) {
                return Location::Boundary;
            }
            if (a.im > p.im) != (b.im > p.im) {
                let x = a.re + (p.im - a.im) * (b.re - a.re) / (b.im - a.im);
                if x > p.re {
                    inside = !inside;
                }
            }
        }
        if inside {
            Location::Inside
        } else {
            Location::Outside
        }
    }

    pub fn contains_open(&self, p: C64) -> bool {
        self.locate(p) == Location::Inside
    }

    pub fn contains_closed(&self, p: C64) -> bool {
        self.locate(p) != Location::Outside
    }

    /// Distance from p to the boundary.
    pub fn boundary_distance(&self, p: C64) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed depth: positive inside, negative outside.
    pub fn depth(&self, p: C64) -> f64 {
        let d = self.boundary_distance(p);
        match self.locate(p) {
            Location::Inside => d,
            Location::Boundary => 0.0,
            Location::Outside => -d,
        }
    }

    pub fn diameter(&self) -> f64 {
        let v = &self.vertices;
        let mut best = 0.0f64;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                best = best.max((v[i] - v[j]).norm());
            }
        }
        best
    }

    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| cross(a, b)).sum::<f64>() / 2.0
    }

    /// The closed segment [a,b] lies in the open interior.
    pub fn contains_segment_open(&self, a: C64, b: C64) -> bool {
        if !self.contains_open(a) || !self.contains_open(b) {
            return false;
        }
        !self.edges().any(|(c, d)| segments_touch(a, b, c, d))
    }

    /// The closure of `other` lies in the open interior of self.
    pub fn contains_closure_of(&self, other: &Polygon) -> bool {
        if !self.bbox().overlaps(&other.bbox(), 0.0) {
            return false;
        }
        if !other.vertices.iter().all(|&p| self.contains_open(p)) {
            return false;
        }
        for (a, b) in other.edges() {
            for (c, d) in self.edges() {
                if segments_touch(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// The open interiors meet.
    pub fn interiors_meet(&self, other: &Polygon) -> bool {
        if !self.bbox().overlaps(&other.bbox(), 0.0) {
            return false;
        }
        for (a, b) in self.edges() {
            for (c, d) in other.edges() {
                let o1 = orient(c, d, a);
                let o2 = orient(c, d, b);
                let o3 = orient(a, b, c);
                let o4 = orient(a, b, d);
                if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
                    return true;
                }
            }
        }
        let probes = |p: &Polygon| -> Vec<C64> {
            let mut v = p.vertices.clone();
            v.extend(p.edges().map(|(a, b)| (a + b) / 2.0));
            v
        };
        probes(other).into_iter().any(|p| self.contains_open(p))
            || probes(self).into_iter().any(|p| other.contains_open(p))
    }
}
