//! Planar areal units and the geometric operations the model needs:
//! overlap fractions against the fine partition, uniform sampling inside a
//! unit, rook adjacency and space-filling knot placement.
//!
//! Coordinates are assumed to be in a planar projection. Nothing here does
//! geodesic math.

mod adjacency;
mod clip;
mod knots;
mod sample;

pub use adjacency::{build_adjacency, AdjacencyMatrix};
pub use clip::{intersection_area, overlap_fractions, overlap_fractions_mc};
pub use knots::{space_filling_knots, KnotSet};
pub use sample::{uniform_sample, UnitSampler};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    fn empty() -> Self {
        BBox {
            min: Point::new(f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn extend(&mut self, p: Point) {
        self.min.x = self.min.x.min(p.x);
        self.min.y = self.min.y.min(p.y);
        self.max.x = self.max.x.max(p.x);
        self.max.y = self.max.y.max(p.y);
    }

    fn union(&self, other: &BBox) -> BBox {
        let mut b = *self;
        b.extend(other.min);
        b.extend(other.max);
        b
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// Overlap test with an absolute slack `tol`.
    pub fn touches(&self, other: &BBox, tol: f64) -> bool {
        self.min.x <= other.max.x + tol
            && other.min.x <= self.max.x + tol
            && self.min.y <= other.max.y + tol
            && other.min.y <= self.max.y + tol
    }
}

/// Signed shoelace area of a closed ring (positive when counter-clockwise).
pub fn ring_signed_area(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].x * w[1].y - w[1].x * w[0].y)
        .sum::<f64>()
        * 0.5
}

/// A polygon with one outer ring and zero or more holes. Rings are stored
/// closed, the outer ring counter-clockwise and holes clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    /// Validates ring closure and normalizes orientation.
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let exterior = orient(check_ring(exterior, "outer ring")?, true);
        let holes = holes
            .into_iter()
            .enumerate()
            .map(|(k, h)| check_ring(h, &format!("hole {k}")).map(|h| orient(h, false)))
            .collect::<Result<Vec<_>>>()?;
        let poly = Polygon { exterior, holes };
        let outer = ring_bbox(&poly.exterior);
        for (k, h) in poly.holes.iter().enumerate() {
            let hb = ring_bbox(h);
            let contained = hb.min.x >= outer.min.x
                && hb.min.y >= outer.min.y
                && hb.max.x <= outer.max.x
                && hb.max.y <= outer.max.y
                && h.iter().all(|&p| point_in_ring(p, &poly.exterior) || on_ring(p, &poly.exterior));
            if !contained {
                return Err(Error::Geometry(format!("hole {k} is not inside its outer ring")));
            }
        }
        Ok(poly)
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        Polygon {
            exterior: vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
                Point::new(x0, y0),
            ],
            holes: Vec::new(),
        }
    }

    pub fn area(&self) -> f64 {
        ring_signed_area(&self.exterior).abs()
            - self.holes.iter().map(|h| ring_signed_area(h).abs()).sum::<f64>()
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    /// Even-odd rule over all rings, so holes are excluded.
    pub fn contains(&self, p: Point) -> bool {
        self.rings().filter(|r| point_in_ring(p, r)).count() % 2 == 1
    }
}

fn check_ring(ring: Vec<Point>, what: &str) -> Result<Vec<Point>> {
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Geometry(format!("{what} has non-finite coordinates")));
    }
    if ring.len() < 4 {
        return Err(Error::Geometry(format!(
            "{what} needs at least 4 positions (closed triangle), got {}",
            ring.len()
        )));
    }
    if ring.first() != ring.last() {
        return Err(Error::Geometry(format!("{what} is not closed")));
    }
    Ok(ring)
}

fn orient(mut ring: Vec<Point>, ccw: bool) -> Vec<Point> {
    if (ring_signed_area(&ring) > 0.0) != ccw {
        ring.reverse();
    }
    ring
}

fn ring_bbox(ring: &[Point]) -> BBox {
    let mut b = BBox::empty();
    for &p in ring {
        b.extend(p);
    }
    b
}

/// Crossing-number test against a single closed ring.
pub(crate) fn point_in_ring(p: Point, ring: &[Point]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_ring(p: Point, ring: &[Point]) -> bool {
    ring.windows(2).any(|w| {
        let (a, b) = (w[0], w[1]);
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let len = a.dist(b).max(f64::MIN_POSITIVE);
        cross.abs() / len <= 1e-12 * len.max(1.0)
            && p.x >= a.x.min(b.x) - 1e-12
            && p.x <= a.x.max(b.x) + 1e-12
            && p.y >= a.y.min(b.y) - 1e-12
            && p.y <= a.y.max(b.y) + 1e-12
    })
}

/// One areal unit: an identifier and a (multi)polygon boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealUnit {
    pub id: String,
    polygons: Vec<Polygon>,
    area: f64,
    bbox: BBox,
}

impl ArealUnit {
    pub fn new(id: impl Into<String>, polygons: Vec<Polygon>) -> Result<Self> {
        let id = id.into();
        if polygons.is_empty() {
            return Err(Error::Geometry(format!("unit {id:?} has no polygons")));
        }
        let area: f64 = polygons.iter().map(Polygon::area).sum();
        if !(area > 0.0) {
            return Err(Error::Domain(format!("unit {id:?} has non-positive area {area}")));
        }
        let mut bbox = BBox::empty();
        for p in polygons.iter().flat_map(|p| p.exterior.iter()) {
            bbox.extend(*p);
        }
        Ok(ArealUnit {
            id,
            polygons,
            area,
            bbox,
        })
    }

    pub fn rect(id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        ArealUnit::new(id, vec![Polygon::rect(x0, y0, x1, y1)])
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        self.polygons.iter().flat_map(Polygon::rings)
    }

    pub(crate) fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings().flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> ArealUnit {
        let shift = |ring: &Vec<Point>| -> Vec<Point> {
            ring.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect()
        };
        let polygons = self
            .polygons
            .iter()
            .map(|p| Polygon {
                exterior: shift(&p.exterior),
                holes: p.holes.iter().map(shift).collect(),
            })
            .collect();
        ArealUnit::new(self.id.clone(), polygons).expect("translation preserves validity")
    }

    /// Stable fingerprint of the boundary coordinates, used to decide whether
    /// two units describe the same support.
    pub fn geometry_fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for ring in self.rings() {
            h.write_u64(ring.len() as u64);
            for p in ring {
                h.write_u64(p.x.to_bits());
                h.write_u64(p.y.to_bits());
            }
        }
        h.finish()
    }
}

/// Ordered collection of units with unique ids.
#[derive(Debug, Clone)]
pub struct SupportSet {
    units: Vec<ArealUnit>,
    disjoint: bool,
}

impl SupportSet {
    pub fn new(units: Vec<ArealUnit>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in &units {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Config(format!("duplicate unit id {:?}", u.id)));
            }
        }
        Ok(SupportSet {
            units,
            disjoint: false,
        })
    }

    /// Builds a set and verifies that pairwise intersection areas stay below
    /// `1e-9` times the total area.
    pub fn new_disjoint(units: Vec<ArealUnit>) -> Result<Self> {
        let mut set = SupportSet::new(units)?;
        let total = set.total_area();
        let tol = 1e-9 * total;
        for i in 0..set.units.len() {
            for j in (i + 1)..set.units.len() {
                let (a, b) = (&set.units[i], &set.units[j]);
                if !a.bbox.touches(&b.bbox, 0.0) {
                    continue;
                }
                let inter = intersection_area(a, b);
                if inter > tol {
                    return Err(Error::Geometry(format!(
                        "units {:?} and {:?} overlap by area {inter:.3e}",
                        a.id, b.id
                    )));
                }
            }
        }
        set.disjoint = true;
        Ok(set)
    }

    pub fn units(&self) -> &[ArealUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn is_disjoint(&self) -> bool {
        self.disjoint
    }

    pub fn get(&self, id: &str) -> Option<&ArealUnit> {
        self.units.iter().find(|u| u.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.id == id)
    }

    pub fn total_area(&self) -> f64 {
        self.units.iter().map(ArealUnit::area).sum()
    }

    pub fn bbox(&self) -> Option<BBox> {
        self.units.iter().map(ArealUnit::bbox).reduce(|a, b| a.union(&b))
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for u in &self.units {
            h.write_bytes(u.id.as_bytes());
            h.write_u64(u.geometry_fingerprint());
        }
        h.finish()
    }
}

/// FNV-1a, used for seed derivation and fingerprints. Stable across Rust
/// releases, unlike `DefaultHasher`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

/// Derives an independent stream seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Fnv64::new();
    h.write_u64(seed);
    h.write_bytes(label.as_bytes());
    splitmix64(h.finish())
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_orientation_is_normalized() {
        let cw = vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 0.0),
        ];
        let p = Polygon::new(cw, vec![]).unwrap();
        assert!(ring_signed_area(&p.exterior) > 0.0);
        assert!((p.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unclosed_ring_is_rejected() {
        let open = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        assert!(matches!(Polygon::new(open, vec![]), Err(Error::Geometry(_))));
    }

    #[test]
    fn hole_reduces_area_and_excludes_points() {
        let outer = Polygon::rect(0.0, 0.0, 4.0, 4.0).exterior;
        let hole = Polygon::rect(1.0, 1.0, 2.0, 2.0).exterior;
        let p = Polygon::new(outer, vec![hole]).unwrap();
        assert!((p.area() - 15.0).abs() < 1e-12);
        assert!(ring_signed_area(&p.holes[0]) < 0.0);
        assert!(!p.contains(Point::new(1.5, 1.5)));
        assert!(p.contains(Point::new(3.0, 3.0)));
    }

    #[test]
    fn hole_outside_is_rejected() {
        let outer = Polygon::rect(0.0, 0.0, 1.0, 1.0).exterior;
        let hole = Polygon::rect(2.0, 2.0, 3.0, 3.0).exterior;
        assert!(Polygon::new(outer, vec![hole]).is_err());
    }

    #[test]
    fn zero_area_unit_is_a_domain_error() {
        let flat = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(0.0, 0.0),
        ];
        let poly = Polygon::new(flat, vec![]).unwrap();
        assert!(matches!(ArealUnit::new("flat", vec![poly]), Err(Error::Domain(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = ArealUnit::rect("a", 0.0, 0.0, 1.0, 1.0).unwrap();
        let b = ArealUnit::rect("a", 1.0, 0.0, 2.0, 1.0).unwrap();
        assert!(SupportSet::new(vec![a, b]).is_err());
    }

    #[test]
    fn overlapping_units_fail_disjoint_check() {
        let a = ArealUnit::rect("a", 0.0, 0.0, 1.0, 1.0).unwrap();
        let b = ArealUnit::rect("b", 0.5, 0.0, 1.5, 1.0).unwrap();
        assert!(SupportSet::new_disjoint(vec![a.clone(), b]).is_err());
        let c = ArealUnit::rect("c", 1.0, 0.0, 2.0, 1.0).unwrap();
        assert!(SupportSet::new_disjoint(vec![a, c]).unwrap().is_disjoint());
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
        assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
    }
}
