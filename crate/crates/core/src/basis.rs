//! Space-time bisquare basis, Monte Carlo areal averages and period
//! aggregation into design rows.
//!
//! ```text
//! ψ_j(u; t) = max(0, 1 − (‖u − c_j‖/w_s)² − (|t − g_j|/w_t)²)²
//! ψ_j(A; k) = (1/|A|) ∫_A ψ_j(u; k) du        (Monte Carlo average)
//! ψ_{j,t}^{(ℓ)}(A) = (1/ℓ) Σ_{k=t−ℓ+1}^{t} ψ_j(A; k)
//! ```
//!
//! Basis index `j` enumerates (spatial knot, temporal knot) pairs with the
//! temporal index varying fastest: `j = s · m_t + τ`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{derive_seed, overlap_fractions, uniform_sample, ArealUnit, KnotSet, Point, SupportSet};

/// Multiplier applied to the smallest inter-knot distance for the default
/// spatial radius.
pub const DEFAULT_RADIUS_MULTIPLIER: f64 = 1.1;
/// Default temporal radius in years.
pub const DEFAULT_TEMPORAL_RADIUS: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    pub knots: KnotSet,
    pub w_s: f64,
    pub w_t: f64,
}

impl BasisSystem {
    pub fn new(knots: KnotSet, w_s: f64, w_t: f64) -> Result<Self> {
        if !(w_s > 0.0 && w_s.is_finite()) || !(w_t > 0.0 && w_t.is_finite()) {
            return Err(Error::Config(format!("basis radii must be positive (w_s={w_s}, w_t={w_t})")));
        }
        Ok(BasisSystem { knots, w_s, w_t })
    }

    /// `w_s = multiplier × min inter-knot distance`. A single spatial knot has
    /// no such distance, so `fallback_w_s` is used.
    pub fn with_radius_multiplier(knots: KnotSet, multiplier: f64, w_t: f64, fallback_w_s: f64) -> Result<Self> {
        let w_s = knots
            .min_spatial_distance()
            .map(|d| multiplier * d)
            .unwrap_or(fallback_w_s);
        BasisSystem::new(knots, w_s, w_t)
    }

    pub fn dim(&self) -> usize {
        self.knots.spatial_count() * self.knots.temporal_count()
    }

    pub fn knot_of(&self, j: usize) -> (Point, f64) {
        let m_t = self.knots.temporal_count();
        (self.knots.spatial[j / m_t], self.knots.temporal[j % m_t])
    }

    pub fn eval_point(&self, j: usize, u: Point, t: f64) -> f64 {
        let (c, g) = self.knot_of(j);
        let ds = u.dist(c) / self.w_s;
        let dt = (t - g).abs() / self.w_t;
        bisquare(ds * ds, dt * dt)
    }

    /// Averages of every basis function over the sample points at integer
    /// year `k`. Both single-year integrals and period aggregates go through
    /// here so that they agree to the last bit.
    fn year_average(&self, points: &[Point], k: i32) -> DVector<f64> {
        let m_t = self.knots.temporal_count();
        let dt2: Vec<f64> = self
            .knots
            .temporal
            .iter()
            .map(|g| {
                let d = (k as f64 - g) / self.w_t;
                d * d
            })
            .collect();
        let mut acc = DVector::zeros(self.dim());
        if dt2.iter().all(|&d| d >= 1.0) {
            return acc;
        }
        let inv_ws2 = 1.0 / (self.w_s * self.w_s);
        for p in points {
            for (s, c) in self.knots.spatial.iter().enumerate() {
                let ds2 = p.dist2(*c) * inv_ws2;
                if ds2 >= 1.0 {
                    continue;
                }
                for (tau, &d) in dt2.iter().enumerate() {
                    acc[s * m_t + tau] += bisquare(ds2, d);
                }
            }
        }
        acc / points.len() as f64
    }

    fn period_average(&self, points: &[Point], year: i32, period: u32) -> DVector<f64> {
        let first = year - period as i32 + 1;
        let mut acc = DVector::zeros(self.dim());
        for k in first..=year {
            acc += self.year_average(points, k);
        }
        acc / period as f64
    }

    /// Monte Carlo areal average `ψ_j(A; k)` with `h` uniform points.
    pub fn integrate_area(&self, j: usize, unit: &ArealUnit, k: i32, h: usize, seed: u64) -> Result<f64> {
        self.check_index(j)?;
        let pts = uniform_sample(unit, h, seed)?;
        Ok(self.year_average(&pts, k)[j])
    }

    /// Period-aggregated basis vector `ψ_t^{(ℓ)}(A)`; one point set is shared
    /// across all basis functions and years.
    pub fn aggregate_period(&self, unit: &ArealUnit, year: i32, period: u32, h: usize, seed: u64) -> Result<DVector<f64>> {
        if period == 0 {
            return Err(Error::Config("period length must be at least 1".into()));
        }
        let pts = uniform_sample(unit, h, seed)?;
        Ok(self.period_average(&pts, year, period))
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.dim() {
            return Err(Error::Config(format!("basis index {j} out of range (r = {})", self.dim())));
        }
        Ok(())
    }
}

#[inline]
fn bisquare(ds2: f64, dt2: f64) -> f64 {
    let b = 1.0 - ds2 - dt2;
    if b > 0.0 {
        b * b
    } else {
        0.0
    }
}

/// Per-unit seed for Monte Carlo point sets. Depends on the unit identity and
/// geometry only, so every row touching the same unit sees the same points
/// regardless of evaluation order.
pub fn unit_seed(seed: u64, unit: &ArealUnit) -> u64 {
    derive_seed(seed, &format!("mc-unit:{}:{:016x}", unit.id, unit.geometry_fingerprint()))
}

/// One support requested in a design: a unit and a `(t, ℓ)` period.
#[derive(Debug, Clone, Copy)]
pub struct SupportQuery<'a> {
    pub unit: &'a ArealUnit,
    pub year: i32,
    pub period: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub unit_id: String,
    pub year: i32,
    pub period: u32,
    pub basis: DVector<f64>,
    pub overlap: Vec<f64>,
}

/// Design rows for a list of supports.
pub fn build_design(
    sys: &BasisSystem,
    queries: &[SupportQuery<'_>],
    fine: &SupportSet,
    h: usize,
    seed: u64,
) -> Result<Vec<DesignRow>> {
    if fine.is_empty() {
        return Err(Error::Config("fine support set is empty".into()));
    }
    if queries.is_empty() {
        return Err(Error::Config("no supports to build a design for".into()));
    }
    // Group queries by unit so that sampling and clipping happen once per unit.
    let mut by_unit: HashMap<(&str, u64), Vec<usize>> = HashMap::new();
    let mut order: Vec<(&str, u64)> = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        if q.period == 0 {
            return Err(Error::Config(format!("period length 0 for unit {:?}", q.unit.id)));
        }
        let key = (q.unit.id.as_str(), q.unit.geometry_fingerprint());
        by_unit
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }

    let per_unit: Vec<Vec<(usize, DesignRow)>> = order
        .par_iter()
        .map(|key| -> Result<Vec<(usize, DesignRow)>> {
            let idx = &by_unit[key];
            let unit = queries[idx[0]].unit;
            let overlap = overlap_fractions(unit, fine)?;
            let pts = uniform_sample(unit, h, unit_seed(seed, unit))?;
            Ok(idx
                .iter()
                .map(|&i| {
                    let q = &queries[i];
                    (
                        i,
                        DesignRow {
                            unit_id: unit.id.clone(),
                            year: q.year,
                            period: q.period,
                            basis: sys.period_average(&pts, q.year, q.period),
                            overlap: overlap.clone(),
                        },
                    )
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<Option<DesignRow>> = vec![None; queries.len()];
    for (i, row) in per_unit.into_iter().flatten() {
        rows[i] = Some(row);
    }
    Ok(rows.into_iter().map(|r| r.expect("every query produced a row")).collect())
}

/// Fine-resolution target design: one `ℓ = 1` row per `(t, B_i)`, row index
/// `(t − first_year)·n_B + i`.
pub fn build_target_psi(
    sys: &BasisSystem,
    fine: &SupportSet,
    first_year: i32,
    last_year: i32,
    h: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if fine.is_empty() {
        return Err(Error::Config("fine support set is empty".into()));
    }
    if last_year < first_year {
        return Err(Error::Config(format!("empty year range {first_year}..={last_year}")));
    }
    let n_b = fine.len();
    let years = (last_year - first_year + 1) as usize;
    let cols: Vec<Vec<DVector<f64>>> = fine
        .units()
        .par_iter()
        .map(|unit| -> Result<Vec<DVector<f64>>> {
            let pts = uniform_sample(unit, h, unit_seed(seed, unit))?;
            Ok((first_year..=last_year).map(|k| sys.period_average(&pts, k, 1)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut psi = DMatrix::zeros(n_b * years, sys.dim());
    for (i, per_year) in cols.iter().enumerate() {
        for (t, row) in per_year.iter().enumerate() {
            psi.set_row(t * n_b + i, &row.transpose());
        }
    }
    Ok(psi)
}
