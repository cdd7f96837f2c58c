use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Point, SupportSet, UnitSampler};
use crate::error::{Error, Result};

/// Spatial and temporal knot locations of the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    pub spatial: Vec<Point>,
    pub temporal: Vec<f64>,
}

impl KnotSet {
    pub fn new(spatial: Vec<Point>, temporal: Vec<f64>) -> Result<Self> {
        if spatial.is_empty() || temporal.is_empty() {
            return Err(Error::Config("knot set needs at least one spatial and one temporal knot".into()));
        }
        for i in 0..spatial.len() {
            for j in (i + 1)..spatial.len() {
                if spatial[i] == spatial[j] {
                    return Err(Error::Config(format!("spatial knots {i} and {j} coincide")));
                }
            }
        }
        if temporal.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("temporal knots must be strictly increasing".into()));
        }
        Ok(KnotSet { spatial, temporal })
    }

    pub fn spatial_count(&self) -> usize {
        self.spatial.len()
    }

    pub fn temporal_count(&self) -> usize {
        self.temporal.len()
    }

    /// Smallest distance between two distinct spatial knots, or `None` with
    /// a single knot.
    pub fn min_spatial_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.spatial.len() {
            for j in (i + 1)..self.spatial.len() {
                let d = self.spatial[i].dist(self.spatial[j]);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    /// `m` equally spaced temporal knots covering `[first, last]`.
    pub fn equispaced_times(first: f64, last: f64, m: usize) -> Result<Vec<f64>> {
        match m {
            0 => Err(Error::Config("need at least one temporal knot".into())),
            1 => Ok(vec![0.5 * (first + last)]),
            _ if !(last > first) => Err(Error::Config("temporal range is empty".into())),
            _ => Ok((0..m)
                .map(|k| first + (last - first) * k as f64 / (m - 1) as f64)
                .collect()),
        }
    }

    /// Distinct mid-points of the covered years of each `(t, ℓ)` period,
    /// `t − (ℓ − 1)/2`, sorted.
    pub fn period_midpoints(groups: &[(i32, u32)]) -> Vec<f64> {
        let mut mids: Vec<f64> = groups
            .iter()
            .map(|&(t, l)| t as f64 - (l as f64 - 1.0) / 2.0)
            .collect();
        mids.sort_by(|a, b| a.partial_cmp(b).expect("finite midpoints"));
        mids.dedup();
        mids
    }
}

/// Seeded space-filling selection of `count` spatial knots from
/// `candidates` uniform points over the union of the domain units.
///
/// Starts from a farthest-point traversal, then repeatedly moves every knot
/// to the candidate nearest its cluster centroid, keeping a move only while
/// the mean squared candidate-to-nearest-knot distance decreases. Knots are
/// always candidates, so they lie inside the domain.
pub fn space_filling_knots(domain: &SupportSet, count: usize, candidates: usize, seed: u64) -> Result<Vec<Point>> {
    if count == 0 {
        return Err(Error::Config("need at least one spatial knot".into()));
    }
    if count > candidates {
        return Err(Error::Config(format!(
            "cannot select {count} knots from {candidates} candidates"
        )));
    }
    if domain.is_empty() {
        return Err(Error::Config("knot domain is empty".into()));
    }
    let pool = candidate_points(domain, candidates, seed)?;

    let mut knots = farthest_point_init(&pool, count);
    let mut assign = vec![0usize; pool.len()];
    let mut crit = assign_nearest(&pool, &knots, &mut assign);
    for _ in 0..100 {
        let mut sum = vec![(0.0, 0.0, 0usize); count];
        for (p, &k) in pool.iter().zip(&assign) {
            sum[k].0 += p.x;
            sum[k].1 += p.y;
            sum[k].2 += 1;
        }
        let mut proposal = knots.clone();
        for (k, &(sx, sy, n)) in sum.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let centroid = Point::new(sx / n as f64, sy / n as f64);
            let best = pool
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == k)
                .map(|(p, _)| *p)
                .min_by(|a, b| a.dist2(centroid).partial_cmp(&b.dist2(centroid)).unwrap())
                .expect("cluster is non-empty");
            proposal[k] = best;
        }
        let mut trial_assign = vec![0usize; pool.len()];
        let trial = assign_nearest(&pool, &proposal, &mut trial_assign);
        if trial < crit * (1.0 - 1e-12) {
            knots = proposal;
            assign = trial_assign;
            crit = trial;
        } else {
            break;
        }
    }
    Ok(knots)
}

pub(crate) fn candidate_points(domain: &SupportSet, candidates: usize, seed: u64) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samplers = domain
        .units()
        .iter()
        .map(UnitSampler::new)
        .collect::<Result<Vec<_>>>()?;
    let total = domain.total_area();
    let cumulative: Vec<f64> = domain
        .units()
        .iter()
        .scan(0.0, |acc, u| {
            *acc += u.area() / total;
            Some(*acc)
        })
        .collect();
    (0..candidates)
        .map(|_| {
            let u: f64 = rng.random();
            let idx = cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1);
            samplers[idx].draw(&mut rng)
        })
        .collect()
}

fn farthest_point_init(pool: &[Point], count: usize) -> Vec<Point> {
    let n = pool.len() as f64;
    let centroid = Point::new(
        pool.iter().map(|p| p.x).sum::<f64>() / n,
        pool.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let first = (0..pool.len())
        .min_by(|&a, &b| pool[a].dist2(centroid).partial_cmp(&pool[b].dist2(centroid)).unwrap())
        .expect("non-empty pool");
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = pool.iter().map(|p| p.dist2(pool[first])).collect();
    while chosen.len() < count {
        let next = (0..pool.len())
            .max_by(|&a, &b| nearest[a].partial_cmp(&nearest[b]).unwrap().then(b.cmp(&a)))
            .expect("non-empty pool");
        chosen.push(next);
        for (d, p) in nearest.iter_mut().zip(pool) {
            *d = d.min(p.dist2(pool[next]));
        }
    }
    chosen.into_iter().map(|i| pool[i]).collect()
}

/// Writes nearest-knot indices into `assign` and returns the mean squared
/// distance (the coverage criterion).
fn assign_nearest(pool: &[Point], knots: &[Point], assign: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (p, a) in pool.iter().zip(assign.iter_mut()) {
        let (k, d) = knots
            .iter()
            .enumerate()
            .map(|(k, q)| (k, p.dist2(*q)))
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .expect("at least one knot");
        *a = k;
        total += d;
    }
    total / pool.len() as f64
}
