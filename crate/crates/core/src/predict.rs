//! Change-of-support prediction from stored draws, the hold-out ratio
//! diagnostic and the basis-configuration grid search.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, BasisSystem, SupportQuery};
use crate::diagnostics::quantile_sorted;
use crate::error::{Error, Result};
use crate::geometry::{derive_seed, SupportSet};
use crate::io::canonical_hash;
use crate::model::{DatumKey, ModelConfig, SurveyDatum};
use crate::pipeline::{fit, Problem};
use crate::sampler::PosteriorDraws;

/// An observed support of the fitted data, in datum order (the index of the
/// matching ξ entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSupport {
    pub unit_id: String,
    pub geometry: u64,
    pub year: i32,
    pub period: u32,
}

/// Everything prediction needs from the fit besides the draws.
#[derive(Debug, Clone)]
pub struct FittedStructure {
    pub basis: BasisSystem,
    pub fine: SupportSet,
    pub first_year: i32,
    pub last_year: i32,
    pub mc_points: usize,
    pub mc_seed: u64,
    pub observed: Vec<ObservedSupport>,
}

impl FittedStructure {
    /// Hash identifying the basis, fine partition, year range and data
    /// supports; stored with the draws and checked before prediction.
    pub fn fingerprint(&self) -> String {
        canonical_hash(&serde_json::json!({
            "basis": self.basis,
            "fine": format!("{:016x}", self.fine.fingerprint()),
            "years": [self.first_year, self.last_year],
            "mc_points": self.mc_points,
            "mc_seed": self.mc_seed,
            "observed": self.observed,
        }))
    }
}

/// Treatment of the fine-scale term `ξ*` for predicted supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FineScale {
    /// Fresh `ξ* ~ N(0, σ_ξ²)` per draw, reusing the fitted ξ on observed supports.
    #[default]
    Sample,
    /// `ξ* = 0`: predicts the smooth part `h'μ_B + ψ'η` only.
    Omit,
}

#[derive(Debug, Clone)]
pub struct TargetQuery {
    pub targets: SupportSet,
    /// `(t, ℓ)` requests, applied to every target.
    pub periods: Vec<(i32, u32)>,
    pub mc_points: usize,
    pub seed: u64,
    pub fine_scale: FineScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub target_id: String,
    pub year: i32,
    pub period: u32,
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFailure {
    pub target_id: String,
    pub year: i32,
    pub period: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub records: Vec<PredictionRecord>,
    pub failures: Vec<PredictionFailure>,
}

/// Per-draw values of `Y(A)` for one support, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSample {
    pub target_id: String,
    pub year: i32,
    pub period: u32,
    pub values: Vec<f64>,
}

impl PredictiveSample {
    pub fn summarize(&self) -> PredictionRecord {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let sd = if self.values.len() > 1 {
            (self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = self.values.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        PredictionRecord {
            target_id: self.target_id.clone(),
            year: self.year,
            period: self.period,
            mean,
            sd,
            lo95: quantile_sorted(&sorted, 0.025).min(mean),
            hi95: quantile_sorted(&sorted, 0.975).max(mean),
        }
    }
}

/// Draw-level predictive values for every valid (target, period) pair, in
/// target-major order, plus per-record failures.
pub fn predictive_samples(
    draws: &PosteriorDraws,
    query: &TargetQuery,
    fitted: &FittedStructure,
) -> Result<(Vec<PredictiveSample>, Vec<PredictionFailure>)> {
    if draws.is_empty() {
        return Err(Error::Config("no posterior draws to predict from".into()));
    }
    let expected = fitted.fingerprint();
    if draws.meta.config_hash != expected {
        return Err(Error::ArtifactMismatch(format!(
            "draws were produced for structure {} but prediction uses {}",
            draws.meta.config_hash, expected
        )));
    }
    if query.mc_points == 0 {
        return Err(Error::Config("prediction needs at least one Monte Carlo point".into()));
    }
    let first = &draws.draws[0];
    if first.mu.len() != fitted.fine.len() || first.eta.len() != fitted.basis.dim() {
        return Err(Error::ArtifactMismatch("draw dimensions do not match the fitted structure".into()));
    }

    let mut failures = Vec::new();
    let mut requests = Vec::new();
    for unit in query.targets.units() {
        for &(year, period) in &query.periods {
            let fail = |message: String| PredictionFailure {
                target_id: unit.id.clone(),
                year,
                period,
                message,
            };
            if period == 0 {
                failures.push(fail("period length must be at least 1".into()));
            } else if year - period as i32 + 1 < fitted.first_year || year > fitted.last_year {
                failures.push(fail(format!(
                    "years {}..={year} fall outside the fitted range {}..={}",
                    year - period as i32 + 1,
                    fitted.first_year,
                    fitted.last_year
                )));
            } else {
                requests.push(SupportQuery { unit, year, period });
            }
        }
    }
    if requests.is_empty() {
        return Ok((Vec::new(), failures));
    }
    let rows = build_design(&fitted.basis, &requests, &fitted.fine, query.mc_points, query.seed)?;

    let observed: HashMap<(&str, u64, i32, u32), usize> = fitted
        .observed
        .iter()
        .enumerate()
        .map(|(i, o)| ((o.unit_id.as_str(), o.geometry, o.year, o.period), i))
        .collect();

    let samples = requests
        .par_iter()
        .zip(rows.par_iter())
        .map(|(req, row)| {
            let overlap = DVector::from_column_slice(&row.overlap);
            let key = (req.unit.id.as_str(), req.unit.geometry_fingerprint(), req.year, req.period);
            let reuse = observed.get(&key).copied();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                query.seed,
                &format!("xi:{}:{}:{}", req.unit.id, req.year, req.period),
            ));
            let values = draws
                .draws
                .iter()
                .map(|d| {
                    let smooth = overlap.dot(&d.mu) + row.basis.dot(&d.eta);
                    let xi = match (query.fine_scale, reuse) {
                        (FineScale::Omit, _) => 0.0,
                        (FineScale::Sample, Some(i)) => d.xi[i],
                        (FineScale::Sample, None) => {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            d.sigma2_xi.sqrt() * z
                        }
                    };
                    smooth + xi
                })
                .collect();
            PredictiveSample {
                target_id: req.unit.id.clone(),
                year: req.year,
                period: req.period,
                values,
            }
        })
        .collect();
    Ok((samples, failures))
}

/// Posterior mean, sd and equal-tailed 95% interval of `Y` on each target.
pub fn predict(draws: &PosteriorDraws, query: &TargetQuery, fitted: &FittedStructure) -> Result<Predictions> {
    let (samples, failures) = predictive_samples(draws, query, fitted)?;
    Ok(Predictions {
        records: samples.iter().map(PredictiveSample::summarize).collect(),
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub unit_id: String,
    pub year: i32,
    pub period: u32,
    pub estimate: f64,
    pub prediction: f64,
    /// `None` when |Ŷ| < 1e-12.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub count: usize,
    pub flagged: usize,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub entries: Vec<RatioEntry>,
    pub summary: RatioSummary,
}

impl RatioReport {
    pub fn ratios(&self) -> Vec<f64> {
        self.entries.iter().filter_map(|e| e.ratio).collect()
    }
}

/// `R(A) = Z / Ŷ` for every held-out datum with a matching prediction.
pub fn ratio_diagnostic(held_out: &[SurveyDatum], preds: &[PredictionRecord]) -> Result<RatioReport> {
    let by_key: HashMap<DatumKey, &PredictionRecord> = preds
        .iter()
        .map(|p| {
            (
                DatumKey {
                    unit_id: p.target_id.clone(),
                    year: p.year,
                    period: p.period,
                },
                p,
            )
        })
        .collect();
    let entries: Vec<RatioEntry> = held_out
        .iter()
        .filter_map(|d| {
            by_key.get(&d.key()).map(|p| RatioEntry {
                unit_id: d.unit_id.clone(),
                year: d.year,
                period: d.period,
                estimate: d.estimate,
                prediction: p.mean,
                ratio: (p.mean.abs() >= 1e-12).then(|| d.estimate / p.mean),
            })
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::Config("no held-out datum has a matching prediction".into()));
    }
    let mut r: Vec<f64> = entries.iter().filter_map(|e| e.ratio).collect();
    r.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| if r.is_empty() { f64::NAN } else { quantile_sorted(&r, p) };
    let summary = RatioSummary {
        count: r.len(),
        flagged: entries.len() - r.len(),
        min: q(0.0),
        q05: q(0.05),
        q25: q(0.25),
        median: q(0.5),
        q75: q(0.75),
        q95: q(0.95),
        max: q(1.0),
    };
    Ok(RatioReport { entries, summary })
}

/// One basis configuration in the grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub spatial_knots: usize,
    pub radius_multiplier: f64,
    pub w_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub point: GridPoint,
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Option<GridPoint>,
    pub table: Vec<GridRow>,
}

/// Held-out groups: every datum whose `(t, ℓ)` is listed leaves the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutSpec {
    pub groups: Vec<(i32, u32)>,
}

impl HoldoutSpec {
    pub fn split(&self, data: &[SurveyDatum]) -> (Vec<SurveyDatum>, Vec<SurveyDatum>) {
        data.iter()
            .cloned()
            .partition(|d| !self.groups.contains(&(d.year, d.period)))
    }
}

/// Hold-out squared prediction error for one configuration.
pub fn holdout_error(problem: &Problem, config: &ModelConfig, holdout: &HoldoutSpec) -> Result<f64> {
    let (train, test) = holdout.split(&problem.data);
    if test.is_empty() {
        return Err(Error::Config("hold-out selects no data".into()));
    }
    if train.is_empty() {
        return Err(Error::Config("hold-out leaves no training data".into()));
    }
    let training = Problem {
        data: train,
        ..problem.clone()
    };
    let fitted = fit(&training, config)?;
    let mut units = Vec::new();
    for d in &test {
        if !units.iter().any(|u: &crate::geometry::ArealUnit| u.id == d.unit_id) {
            let unit = problem
                .supports
                .get(&d.unit_id)
                .ok_or_else(|| Error::Config(format!("held-out unit {:?} has no geometry", d.unit_id)))?;
            units.push(unit.clone());
        }
    }
    let mut periods: Vec<(i32, u32)> = test.iter().map(|d| (d.year, d.period)).collect();
    periods.sort_unstable();
    periods.dedup();
    let query = TargetQuery {
        targets: SupportSet::new(units)?,
        periods,
        mc_points: config.mc_points,
        seed: fitted.structure.mc_seed,
        fine_scale: FineScale::Sample,
    };
    let preds = predict(&fitted.draws, &query, &fitted.structure)?;
    let by_key: HashMap<DatumKey, f64> = preds
        .records
        .iter()
        .map(|p| {
            (
                DatumKey {
                    unit_id: p.target_id.clone(),
                    year: p.year,
                    period: p.period,
                },
                p.mean,
            )
        })
        .collect();
    test.iter()
        .map(|d| {
            by_key
                .get(&d.key())
                .map(|yhat| (d.estimate - yhat).powi(2))
                .ok_or_else(|| Error::Config(format!("no prediction for held-out datum {}", d.key())))
        })
        .sum()
}

/// Fits every grid configuration and returns the one with the smallest
/// hold-out squared error. Ties go to fewer spatial knots; failed fits are
/// recorded and skipped.
pub fn holdout_search(problem: &Problem, base: &ModelConfig, grid: &[GridPoint], holdout: &HoldoutSpec) -> Result<SearchResult> {
    if grid.is_empty() {
        return Err(Error::Config("grid search needs at least one configuration".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, GridPoint)> = None;
    for &point in grid {
        let mut cfg = base.clone();
        cfg.basis.spatial_knots = point.spatial_knots;
        cfg.basis.radius_multiplier = point.radius_multiplier;
        cfg.basis.w_t = point.w_t;
        cfg.basis.w_s = None;
        match holdout_error(problem, &cfg, holdout) {
            Ok(err) => {
                let better = match best {
                    None => true,
                    Some((e, p)) => err < e || (err == e && point.spatial_knots < p.spatial_knots),
                };
                if better {
                    best = Some((err, point));
                }
                table.push(GridRow {
                    point,
                    error: Some(err),
                    failure: None,
                });
            }
            Err(e) => table.push(GridRow {
                point,
                error: None,
                failure: Some(e.to_string()),
            }),
        }
    }
    Ok(SearchResult {
        best: best.map(|(_, p)| p),
        table,
    })
}
