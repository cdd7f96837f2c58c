//! End-to-end fitting: geometry → basis → target covariance → design →
//! Gibbs chain.

use crate::basis::{build_design, build_target_psi, BasisSystem, SupportQuery};
use crate::covariance::{target_process, TargetProcess};
use crate::error::{Error, Result};
use crate::geometry::{build_adjacency, derive_seed, space_filling_knots, AdjacencyMatrix, KnotSet, SupportSet};
use crate::model::{assemble, FittedModelInputs, ModelConfig, SurveyDatum, TemporalKnots};
use crate::predict::{FittedStructure, ObservedSupport};
use crate::sampler::{run_chain, PosteriorDraws};

/// Inputs of one fit.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Disjoint fine partition `B`.
    pub fine: SupportSet,
    /// Geometry of every unit referenced by `data`.
    pub supports: SupportSet,
    /// Replaces the rook adjacency of `fine` when given.
    pub adjacency: Option<AdjacencyMatrix>,
    pub data: Vec<SurveyDatum>,
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub structure: FittedStructure,
    pub process: TargetProcess,
    pub inputs: FittedModelInputs,
    pub draws: PosteriorDraws,
}

/// Seed of the Monte Carlo point sets, derived from the chain seed.
pub fn mc_seed(config: &ModelConfig) -> u64 {
    derive_seed(config.chain.seed, "basis-mc")
}

/// `[T_L, T_U]` spanned by the data after period expansion.
pub fn year_range(groups: &[(i32, u32)]) -> Result<(i32, i32)> {
    let first = groups.iter().map(|&(t, l)| t - l as i32 + 1).min();
    let last = groups.iter().map(|&(t, _)| t).max();
    match (first, last) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Config("no data periods".into())),
    }
}

pub fn build_basis(fine: &SupportSet, groups: &[(i32, u32)], first_year: i32, last_year: i32, config: &ModelConfig) -> Result<BasisSystem> {
    let b = &config.basis;
    let spatial = space_filling_knots(fine, b.spatial_knots, b.candidates, derive_seed(config.chain.seed, "knots"))?;
    let temporal = match &b.temporal {
        TemporalKnots::PeriodMidpoints => KnotSet::period_midpoints(groups),
        TemporalKnots::Equispaced { count } => KnotSet::equispaced_times(first_year as f64, last_year as f64, *count)?,
        TemporalKnots::Explicit { times } => times.clone(),
    };
    let knots = KnotSet::new(spatial, temporal)?;
    match b.w_s {
        Some(w_s) => BasisSystem::new(knots, w_s, b.w_t),
        None => {
            let fallback = fine.bbox().map(|bb| bb.diagonal()).unwrap_or(1.0);
            BasisSystem::with_radius_multiplier(knots, b.radius_multiplier, b.w_t, fallback)
        }
    }
}

pub fn build_process(
    fine: &SupportSet,
    adjacency: Option<&AdjacencyMatrix>,
    basis: &BasisSystem,
    first_year: i32,
    last_year: i32,
    config: &ModelConfig,
) -> Result<TargetProcess> {
    let adj = match adjacency {
        Some(a) if a.len() != fine.len() => {
            return Err(Error::Config(format!(
                "adjacency has {} units, fine set has {}",
                a.len(),
                fine.len()
            )))
        }
        Some(a) => a.clone(),
        None => build_adjacency(fine)?,
    };
    let psi = build_target_psi(basis, fine, first_year, last_year, config.mc_points, mc_seed(config))?;
    target_process(&adj, &psi, (last_year - first_year + 1) as usize, &config.target)
}

fn distinct_groups(data: &[SurveyDatum]) -> Vec<(i32, u32)> {
    let mut g: Vec<(i32, u32)> = data.iter().map(|d| (d.year, d.period)).collect();
    g.sort_unstable();
    g.dedup();
    g
}

/// Builds everything up to the stacked model inputs, without sampling.
pub fn prepare(problem: &Problem, config: &ModelConfig) -> Result<(FittedStructure, TargetProcess, FittedModelInputs)> {
    config.validate()?;
    if problem.data.is_empty() {
        return Err(Error::Config("no survey data to fit".into()));
    }
    if !problem.fine.is_disjoint() {
        return Err(Error::Config("fine support set must be disjoint".into()));
    }
    let mut missing = Vec::new();
    let mut queries = Vec::with_capacity(problem.data.len());
    for d in &problem.data {
        match problem.supports.get(&d.unit_id) {
            Some(unit) => queries.push(SupportQuery {
                unit,
                year: d.year,
                period: d.period,
            }),
            None => missing.push(d.unit_id.clone()),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::Config(format!("estimates reference unknown units: {}", missing.join(", "))));
    }

    let groups = distinct_groups(&problem.data);
    let (first_year, last_year) = year_range(&groups)?;
    let basis = build_basis(&problem.fine, &groups, first_year, last_year, config)?;
    let process = build_process(&problem.fine, problem.adjacency.as_ref(), &basis, first_year, last_year, config)?;
    let seed = mc_seed(config);
    let designs = build_design(&basis, &queries, &problem.fine, config.mc_points, seed)?;
    let inputs = assemble(&problem.data, &designs, &process.k0)?;
    let structure = FittedStructure {
        basis,
        fine: problem.fine.clone(),
        first_year,
        last_year,
        mc_points: config.mc_points,
        mc_seed: seed,
        observed: queries
            .iter()
            .map(|q| ObservedSupport {
                unit_id: q.unit.id.clone(),
                geometry: q.unit.geometry_fingerprint(),
                year: q.year,
                period: q.period,
            })
            .collect(),
    };
    Ok((structure, process, inputs))
}

pub fn fit(problem: &Problem, config: &ModelConfig) -> Result<Fit> {
    let (structure, process, inputs) = prepare(problem, config)?;
    let draws = run_chain(&inputs, config, &structure.fingerprint())?;
    Ok(Fit {
        structure,
        process,
        inputs,
        draws,
    })
}
