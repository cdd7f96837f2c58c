use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArealUnit, Point};
use crate::error::{Error, Result};

/// Rejection sampler drawing uniform points inside one unit.
pub struct UnitSampler<'a> {
    unit: &'a ArealUnit,
    max_tries_per_point: usize,
}

impl<'a> UnitSampler<'a> {
    pub fn new(unit: &'a ArealUnit) -> Result<Self> {
        let b = unit.bbox();
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(Error::Geometry(format!(
                "unit {:?} has a degenerate bounding box",
                unit.id
            )));
        }
        // Expected tries per point is bbox_area / area; allow a generous margin.
        let ratio = b.width() * b.height() / unit.area();
        let max_tries_per_point = ((ratio * 1000.0).ceil() as usize).max(10_000);
        Ok(UnitSampler {
            unit,
            max_tries_per_point,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Point> {
        let b = self.unit.bbox();
        for _ in 0..self.max_tries_per_point {
            let p = Point::new(
                b.min.x + rng.random::<f64>() * b.width(),
                b.min.y + rng.random::<f64>() * b.height(),
            );
            if self.unit.contains(p) {
                return Ok(p);
            }
        }
        Err(Error::Geometry(format!(
            "rejection sampling in unit {:?} failed after {} tries",
            self.unit.id, self.max_tries_per_point
        )))
    }
}

/// `count` i.i.d. uniform points on `unit`, reproducible for a given seed.
pub fn uniform_sample(unit: &ArealUnit, count: usize, seed: u64) -> Result<Vec<Point>> {
    if count == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let sampler = UnitSampler::new(unit)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sampler.draw(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::super::Polygon;
    use super::*;

    #[test]
    fn unit_square_is_reproducible() {
        let sq = ArealUnit::rect("s", 0.0, 0.0, 1.0, 1.0).unwrap();
        let a = uniform_sample(&sq, 4, 42).unwrap();
        let b = uniform_sample(&sq, 4, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
    }

    #[test]
    fn unit_square_mean_is_centroid() {
        let sq = ArealUnit::rect("s", 0.0, 0.0, 1.0, 1.0).unwrap();
        let pts = uniform_sample(&sq, 100_000, 1).unwrap();
        let mx = pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.y).sum::<f64>() / pts.len() as f64;
        assert!((mx - 0.5).abs() < 0.01 && (my - 0.5).abs() < 0.01);
    }

    #[test]
    fn l_shape_arms_get_area_share() {
        // Horizontal arm [0,2]x[0,1] (area 2) and vertical arm [0,1]x[1,3] (area 2)
        // → total 4, each arm 1/2.
        let ring = vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 3.0),
            Point::new(0.0, 3.0),
            Point::new(0.0, 0.0),
        ];
        let l = ArealUnit::new("L", vec![Polygon::new(ring, vec![]).unwrap()]).unwrap();
        assert!((l.area() - 4.0).abs() < 1e-12);
        let pts = uniform_sample(&l, 100_000, 9).unwrap();
        assert!(pts.iter().all(|p| l.contains(*p)));
        let horizontal = pts.iter().filter(|p| p.y < 1.0).count() as f64 / pts.len() as f64;
        assert!((horizontal - 0.5).abs() < 0.01, "{horizontal}");
    }

    #[test]
    fn zero_count_rejected() {
        let sq = ArealUnit::rect("s", 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(uniform_sample(&sq, 0, 1).is_err());
    }
}
