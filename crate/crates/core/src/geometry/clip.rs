//! Exact intersection areas between arbitrary (multi)polygons.
//!
//! The indicator of an oriented polygon equals, almost everywhere, the signed
//! sum of indicators of the triangles `(o, p, q)` spanned by a reference point
//! `o` and each boundary edge `(p, q)`. Integrating the product of two such
//! sums gives
//!
//! ```text
//! |A ∩ B| = Σ_e Σ_f  sgn(e) sgn(f) |T_e ∩ T_f|
//! ```
//!
//! and each `T_e ∩ T_f` is a convex–convex intersection, handled with
//! Sutherland–Hodgman clipping. Holes and multi-part units need no special
//! casing since ring orientation carries the sign.


use super::{ArealUnit, Point, SupportSet};
use crate::error::{Error, Result};

/// Area of `a ∩ b`.
pub fn intersection_area(a: &ArealUnit, b: &ArealUnit) -> f64 {
    if !a.bbox().touches(&b.bbox(), 0.0) {
        return 0.0;
    }
    let o = a.bbox().center();
    let shift = |p: Point| Point::new(p.x - o.x, p.y - o.y);
    let tris_a: Vec<_> = a.edges().filter_map(|(p, q)| signed_triangle(shift(p), shift(q))).collect();
    let tris_b: Vec<_> = b.edges().filter_map(|(p, q)| signed_triangle(shift(p), shift(q))).collect();

    let mut total = 0.0;
    let mut buf_in = Vec::with_capacity(8);
    let mut buf_out = Vec::with_capacity(8);
    for ta in &tris_a {
        for tb in &tris_b {
            if !ta.bbox_touches(tb) {
                continue;
            }
            let area = convex_intersection_area(&ta.pts, &tb.pts, &mut buf_in, &mut buf_out);
            total += ta.sign * tb.sign * area;
        }
    }
    total.max(0.0)
}

/// Fractions `|A ∩ B_i| / |A|` against every unit of a disjoint partition.
pub fn overlap_fractions(a: &ArealUnit, fine: &SupportSet) -> Result<Vec<f64>> {
    if !fine.is_disjoint() {
        return Err(Error::Config("overlap fractions need a disjoint fine set".into()));
    }
    if !(a.area() > 0.0) {
        return Err(Error::Domain(format!("unit {:?} has zero area", a.id)));
    }
    Ok(fine
        .units()
        .iter()
        .map(|b| (intersection_area(a, b) / a.area()).clamp(0.0, 1.0))
        .collect())
}

/// Monte Carlo estimate of the same fractions, for geometry the exact path
/// cannot be trusted with. At least 10⁵ points are required.
pub fn overlap_fractions_mc(a: &ArealUnit, fine: &SupportSet, points: usize, seed: u64) -> Result<Vec<f64>> {
    if points < 100_000 {
        return Err(Error::Config(format!(
            "Monte Carlo overlap needs at least 100000 points, got {points}"
        )));
    }
    if !fine.is_disjoint() {
        return Err(Error::Config("overlap fractions need a disjoint fine set".into()));
    }
    let sample = super::uniform_sample(a, points, seed)?;
    let mut counts = vec![0usize; fine.len()];
    for p in &sample {
        if let Some(i) = fine.units().iter().position(|b| b.contains(*p)) {
            counts[i] += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / points as f64).collect())
}

struct SignedTriangle {
    pts: [Point; 3],
    sign: f64,
    lo: Point,
    hi: Point,
}

impl SignedTriangle {
    fn bbox_touches(&self, other: &SignedTriangle) -> bool {
        self.lo.x <= other.hi.x && other.lo.x <= self.hi.x && self.lo.y <= other.hi.y && other.lo.y <= self.hi.y
    }
}

fn signed_triangle(p: Point, q: Point) -> Option<SignedTriangle> {
    let cross = p.x * q.y - q.x * p.y;
    if cross == 0.0 {
        return None;
    }
    let o = Point::new(0.0, 0.0);
    // Stored counter-clockwise; the orientation is kept in `sign`.
    let (pts, sign) = if cross > 0.0 { ([o, p, q], 1.0) } else { ([o, q, p], -1.0) };
    let lo = Point::new(p.x.min(q.x).min(0.0), p.y.min(q.y).min(0.0));
    let hi = Point::new(p.x.max(q.x).max(0.0), p.y.max(q.y).max(0.0));
    Some(SignedTriangle { pts, sign, lo, hi })
}

/// Sutherland–Hodgman clip of a convex CCW subject by a convex CCW clip
/// polygon; returns the area of the result.
fn convex_intersection_area(subject: &[Point], clip: &[Point], cur: &mut Vec<Point>, next: &mut Vec<Point>) -> f64 {
    cur.clear();
    cur.extend_from_slice(subject);
    let n = clip.len();
    for k in 0..n {
        let a = clip[k];
        let b = clip[(k + 1) % n];
        let side = |p: Point| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        next.clear();
        let m = cur.len();
        for i in 0..m {
            let p = cur[i];
            let q = cur[(i + 1) % m];
            let sp = side(p);
            let sq = side(q);
            if sp >= 0.0 {
                next.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                next.push(Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)));
            }
        }
        std::mem::swap(cur, next);
        if cur.len() < 3 {
            return 0.0;
        }
    }
    let m = cur.len();
    let twice: f64 = (0..m)
        .map(|i| {
            let p = cur[i];
            let q = cur[(i + 1) % m];
            p.x * q.y - q.x * p.y
        })
        .sum();
    (0.5 * twice).max(0.0)
}
