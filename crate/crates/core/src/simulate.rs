//! Synthetic data drawn from the model itself, on a regular grid.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, SupportQuery};
use crate::error::{Error, Result};
use crate::geometry::{derive_seed, ArealUnit, SupportSet};
use crate::model::{ModelConfig, SurveyDatum};
use crate::pipeline::{build_basis, build_process, mc_seed, year_range, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geography {
    /// The grid cells themselves.
    Fine,
    /// Square blocks of `block × block` cells (clipped at the edge).
    Coarse,
}

/// Every year in `first_year..=last_year` gets a `period`-year estimate on
/// each unit of `geography`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub period: u32,
    pub first_year: i32,
    pub last_year: i32,
    pub geography: Geography,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthParams {
    pub sigma2_xi: f64,
    pub sigma2_k: f64,
    pub sigma2_mu: f64,
    /// Common offset added to every μ_B entry.
    pub mu_mean: f64,
}

impl Default for TruthParams {
    fn default() -> Self {
        TruthParams {
            sigma2_xi: 0.1,
            sigma2_k: 1.0,
            sigma2_mu: 4.0,
            mu_mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Cells per side of the fine grid.
    pub grid: usize,
    pub cell_size: f64,
    /// Cells per side of a coarse block.
    pub block: usize,
    pub groups: Vec<GroupSpec>,
    pub truth: TruthParams,
    /// Sampling sd of a 1-year estimate; an ℓ-year estimate gets `sd/√ℓ`.
    pub survey_sd: f64,
    /// Relative spread of a per-unit multiplier on the sampling sd, drawn
    /// uniformly from `[1 − jitter, 1 + jitter]`.
    pub sd_jitter: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let fine = |period, first_year| GroupSpec {
            period,
            first_year,
            last_year: 2015,
            geography: Geography::Fine,
        };
        SimulationConfig {
            grid: 5,
            cell_size: 1.0,
            block: 2,
            groups: vec![fine(1, 2010), fine(3, 2012), fine(5, 2014)],
            truth: TruthParams::default(),
            survey_sd: 0.5,
            sd_jitter: 0.25,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.block == 0 || !(self.cell_size > 0.0) {
            return Err(Error::Config("grid, block and cell_size must be positive".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("simulation needs at least one period group".into()));
        }
        for g in &self.groups {
            if g.period == 0 || g.last_year < g.first_year {
                return Err(Error::Config(format!("invalid period group {g:?}")));
            }
        }
        if !(self.survey_sd > 0.0 && self.survey_sd.is_finite()) {
            return Err(Error::Domain(format!("sampling sd must be positive, got {}", self.survey_sd)));
        }
        if !(0.0..1.0).contains(&self.sd_jitter) {
            return Err(Error::Config("sd_jitter must lie in [0, 1)".into()));
        }
        let t = self.truth;
        if !(t.sigma2_xi > 0.0 && t.sigma2_k > 0.0 && t.sigma2_mu > 0.0) {
            return Err(Error::Domain("true variances must be positive".into()));
        }
        Ok(())
    }

    /// Default layout, but with 1-year, 3-year and 5-year groups covering
    /// 2006–2013, 2007–2012 and 2009–2013.
    pub fn nineteen_period_layout() -> Self {
        let g = |period, first_year, last_year, geography| GroupSpec {
            period,
            first_year,
            last_year,
            geography,
        };
        SimulationConfig {
            groups: vec![
                g(1, 2006, 2013, Geography::Coarse),
                g(3, 2007, 2012, Geography::Fine),
                g(5, 2009, 2013, Geography::Fine),
            ],
            ..SimulationConfig::default()
        }
    }
}

pub fn fine_grid(cfg: &SimulationConfig) -> Result<SupportSet> {
    let s = cfg.cell_size;
    let mut units = Vec::with_capacity(cfg.grid * cfg.grid);
    for r in 0..cfg.grid {
        for c in 0..cfg.grid {
            let (x, y) = (c as f64 * s, r as f64 * s);
            units.push(ArealUnit::rect(format!("cell_{r}_{c}"), x, y, x + s, y + s)?);
        }
    }
    SupportSet::new_disjoint(units)
}

pub fn coarse_blocks(cfg: &SimulationConfig) -> Result<Vec<ArealUnit>> {
    let (s, n, b) = (cfg.cell_size, cfg.grid, cfg.block);
    let mut units = Vec::new();
    for r in (0..n).step_by(b) {
        for c in (0..n).step_by(b) {
            let (r1, c1) = ((r + b).min(n), (c + b).min(n));
            units.push(ArealUnit::rect(
                format!("block_{}_{}", r / b, c / b),
                c as f64 * s,
                r as f64 * s,
                c1 as f64 * s,
                r1 as f64 * s,
            )?);
        }
    }
    Ok(units)
}

/// Generated parameters and latent values.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub mu: DVector<f64>,
    pub eta: DVector<f64>,
    pub sigma2_xi: f64,
    pub sigma2_k: f64,
    pub sigma2_mu: f64,
    /// `Y` on each datum's support, aligned with the data.
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub problem: Problem,
    pub truth: Truth,
}

/// Draws μ_B, η, ξ and the survey errors from the model whose structure
/// (knots, `K_0`, Monte Carlo points) a fit with `model` would build.
pub fn simulate(cfg: &SimulationConfig, model: &ModelConfig) -> Result<Simulation> {
    cfg.validate()?;
    model.validate()?;
    let fine = fine_grid(cfg)?;
    let coarse = coarse_blocks(cfg)?;

    let mut supports: Vec<ArealUnit> = Vec::new();
    let mut keys: Vec<(usize, i32, u32)> = Vec::new();
    let uses = |g: Geography| cfg.groups.iter().any(|s| s.geography == g);
    if uses(Geography::Fine) {
        supports.extend(fine.units().iter().cloned());
    }
    let coarse_offset = supports.len();
    if uses(Geography::Coarse) {
        supports.extend(coarse.iter().cloned());
    }
    for g in &cfg.groups {
        let range = match g.geography {
            Geography::Fine => 0..fine.len(),
            Geography::Coarse => coarse_offset..coarse_offset + coarse.len(),
        };
        for year in g.first_year..=g.last_year {
            for u in range.clone() {
                keys.push((u, year, g.period));
            }
        }
    }
    let supports = SupportSet::new(supports)?;

    let mut groups: Vec<(i32, u32)> = keys.iter().map(|&(_, t, l)| (t, l)).collect();
    groups.sort_unstable();
    groups.dedup();
    let (first_year, last_year) = year_range(&groups)?;
    let basis = build_basis(&fine, &groups, first_year, last_year, model)?;
    let process = build_process(&fine, None, &basis, first_year, last_year, model)?;
    let queries: Vec<SupportQuery> = keys
        .iter()
        .map(|&(u, year, period)| SupportQuery {
            unit: &supports.units()[u],
            year,
            period,
        })
        .collect();
    let designs = build_design(&basis, &queries, &fine, model.mc_points, mc_seed(model))?;

    let t = cfg.truth;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model.chain.seed, "simulate"));
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mu = DVector::from_fn(fine.len(), |_, _| t.mu_mean + t.sigma2_mu.sqrt() * normal());
    let kp = crate::linalg::PositivePart::new(&process.k0.k0, crate::model::K0_EIGEN_FLOOR);
    let alpha = DVector::from_fn(kp.rank(), |k, _| (t.sigma2_k * kp.values[k]).sqrt() * normal());
    let eta = &kp.vectors * alpha;

    let mut data = Vec::with_capacity(keys.len());
    let mut latent = Vec::with_capacity(keys.len());
    let unit_jitter: Vec<f64> = (0..supports.len())
        .map(|_| 1.0 + cfg.sd_jitter * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    for (&(u, year, period), row) in keys.iter().zip(&designs) {
        let z: f64 = StandardNormal.sample(&mut rng);
        let xi = t.sigma2_xi.sqrt() * z;
        let y = row.overlap.iter().zip(mu.iter()).map(|(h, m)| h * m).sum::<f64>() + row.basis.dot(&eta) + xi;
        let sd = cfg.survey_sd * unit_jitter[u] / (period as f64).sqrt();
        let eps: f64 = StandardNormal.sample(&mut rng);
        latent.push(y);
        data.push(SurveyDatum::new(supports.units()[u].id.clone(), year, period, y + sd * eps, sd)?);
    }

    Ok(Simulation {
        problem: Problem {
            fine,
            supports,
            adjacency: None,
            data,
        },
        truth: Truth {
            mu,
            eta,
            sigma2_xi: t.sigma2_xi,
            sigma2_k: t.sigma2_k,
            sigma2_mu: t.sigma2_mu,
            latent,
        },
    })
}
