//! Command-line front end: `simulate | fit | predict | validate`.
//!
//! Exit codes: 0 success, 1 usage, 2 input, 3 artifact mismatch,
//! 4 numerical failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::geometry::SupportSet;
use crate::io::{self, fmt_f64, RunManifest};
use crate::model::{ModelConfig, SurveyDatum};
use crate::pipeline::{fit, Problem};
use crate::predict::{
    holdout_search, predict, ratio_diagnostic, FineScale, FittedStructure, GridPoint, HoldoutSpec, ObservedSupport,
    PredictionFailure, PredictionRecord, TargetQuery,
};
use crate::sampler::{ChainMeta, PosteriorDraws};
use crate::simulate::{simulate, SimulationConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "stcos", version, about = "Spatio-temporal change of support for areal survey estimates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `model.chain.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; overrides `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate a synthetic dataset from the model.
    Simulate,
    /// Fit the model and write the posterior draws.
    Fit,
    /// Predict on target supports from a fitted artifact.
    Predict,
    /// Grid search over basis configurations by hold-out error.
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodRef {
    pub year: i32,
    pub period: u32,
}

impl PeriodRef {
    fn pair(self) -> (i32, u32) {
        (self.year, self.period)
    }
}

fn default_moe_level() -> f64 {
    0.90
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub fine: PathBuf,
    pub supports: PathBuf,
    pub estimates: PathBuf,
    #[serde(default = "default_moe_level")]
    pub moe_level: f64,
    /// Optional CSV of 0-based index pairs replacing the rook adjacency.
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default)]
    pub config: SimulationConfig,
    /// Groups written to `holdout.csv` instead of `estimates.csv`.
    #[serde(default)]
    pub holdout_groups: Vec<PeriodRef>,
    /// Extra target geography written to `targets.geojson`: the coarse blocks.
    #[serde(default)]
    pub write_targets: bool,
}

fn default_bins() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Fitted artifact directory; defaults to the output directory.
    #[serde(default)]
    pub artifact: Option<PathBuf>,
    pub targets: PathBuf,
    #[serde(default)]
    pub periods: Vec<PeriodRef>,
    /// Held-out estimates for the ratio diagnostic; their units must be in `targets`.
    #[serde(default)]
    pub holdout: Option<PathBuf>,
    #[serde(default)]
    pub mc_points: Option<usize>,
    #[serde(default)]
    pub fine_scale: FineScale,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub grid: Vec<GridPoint>,
    pub holdout_groups: Vec<PeriodRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub validate: Option<ValidateConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            data: None,
            simulate: None,
            predict: None,
            validate: None,
            output: None,
            threads: None,
        }
    }
}

impl CliConfig {
    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: CliConfig = io::read_json(path)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.data.as_mut() {
            fix(&mut d.fine);
            fix(&mut d.supports);
            fix(&mut d.estimates);
            if let Some(a) = d.adjacency.as_mut() {
                fix(a);
            }
        }
        if let Some(p) = cfg.predict.as_mut() {
            fix(&mut p.targets);
            if let Some(a) = p.artifact.as_mut() {
                fix(a);
            }
            if let Some(h) = p.holdout.as_mut() {
                fix(h);
            }
        }
        if let Some(o) = cfg.output.as_mut() {
            fix(o);
        }
        Ok(cfg)
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.chain.seed = seed;
    }
    if let Some(t) = cli.threads.or(cfg.threads) {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Only the first call per process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("stcos-out"));
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &out),
        Command::Fit => cmd_fit(&cfg, &out),
        Command::Predict => cmd_predict(&cfg, &out),
        Command::Validate => cmd_validate(&cfg, &out),
    }
}

fn require<'a, T>(v: &'a Option<T>, section: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("configuration has no `{section}` section")))
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &CliConfig, out: &Path) -> Result<()> {
    let section = cfg.simulate.clone().unwrap_or_default();
    let sim = simulate(&section.config, &cfg.model)?;
    let p = &sim.problem;
    io::write_supports(&out.join("fine.geojson"), &p.fine)?;
    io::write_supports(&out.join("supports.geojson"), &p.supports)?;

    let held: BTreeSet<(i32, u32)> = section.holdout_groups.iter().map(|g| g.pair()).collect();
    let (test, train): (Vec<SurveyDatum>, Vec<SurveyDatum>) =
        p.data.iter().cloned().partition(|d| held.contains(&(d.year, d.period)));
    io::write_estimates(&out.join("estimates.csv"), &train)?;
    if !held.is_empty() {
        io::write_estimates(&out.join("holdout.csv"), &test)?;
    }
    if section.write_targets {
        let blocks = crate::simulate::coarse_blocks(&section.config)?;
        io::write_supports(&out.join("targets.geojson"), &SupportSet::new(blocks)?)?;
    }

    let t = &sim.truth;
    let mut text = String::from("name,value\n");
    for (name, v) in [("sigma2_xi", t.sigma2_xi), ("sigma2_k", t.sigma2_k), ("sigma2_mu", t.sigma2_mu)] {
        text += &format!("{name},{}\n", fmt_f64(v));
    }
    for (i, v) in t.mu.iter().enumerate() {
        text += &format!("mu_{i},{}\n", fmt_f64(*v));
    }
    for (i, v) in t.eta.iter().enumerate() {
        text += &format!("eta_{i},{}\n", fmt_f64(*v));
    }
    io::write_text(&out.join("truth.csv"), &text)?;
    let mut latent = String::from("unit_id,year,period,value\n");
    for (d, y) in p.data.iter().zip(&t.latent) {
        latent += &format!("{},{},{},{}\n", d.unit_id, d.year, d.period, fmt_f64(*y));
    }
    io::write_text(&out.join("truth_latent.csv"), &latent)?;
    eprintln!(
        "simulated {} estimates on {} supports ({} fine units) into {}",
        p.data.len(),
        p.supports.len(),
        p.fine.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- fit

fn load_problem(data: &DataConfig) -> Result<(Problem, BTreeMap<String, String>)> {
    let fine = io::load_fine_set(&data.fine)?;
    let supports = io::load_supports(&data.supports)?;
    let estimates = io::load_estimates(&data.estimates, data.moe_level)?;
    let adjacency = match &data.adjacency {
        Some(p) => Some(io::load_edge_list(p, fine.len())?),
        None => None,
    };
    let mut digests = BTreeMap::new();
    digests.insert("fine".to_string(), io::file_digest(&data.fine)?);
    digests.insert("supports".to_string(), io::file_digest(&data.supports)?);
    digests.insert("estimates".to_string(), io::file_digest(&data.estimates)?);
    if let Some(p) = &data.adjacency {
        digests.insert("adjacency".to_string(), io::file_digest(p)?);
    }
    Ok((
        Problem {
            fine,
            supports,
            adjacency,
            data: estimates,
        },
        digests,
    ))
}

/// Fit-time structure persisted next to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub config_hash: String,
    pub structure_fingerprint: String,
    pub fine_fingerprint: String,
    pub basis: BasisSystem,
    pub first_year: i32,
    pub last_year: i32,
    pub mc_points: usize,
    pub mc_seed: u64,
    pub observed: Vec<ObservedSupport>,
    pub chain: ChainMeta,
}

fn config_hash(model: &ModelConfig, digests: &BTreeMap<String, String>) -> String {
    RunManifest::compute_hash(model, digests)
}

pub fn cmd_fit(cfg: &CliConfig, out: &Path) -> Result<()> {
    let data = require(&cfg.data, "data")?;
    let start = Instant::now();
    let (problem, digests) = load_problem(data)?;
    let fitted = fit(&problem, &cfg.model)?;
    let elapsed = start.elapsed().as_secs_f64();

    io::write_draws(&out.join("draws.csv"), &fitted.draws)?;
    io::write_matrix(out, "k0", &fitted.process.k0.k0)?;
    io::write_matrix(out, "sigma0", &fitted.process.sigma0)?;
    io::write_matrix(out, "sigma_joint", &fitted.process.joint)?;

    let mut seeds = BTreeMap::new();
    seeds.insert("chain".to_string(), cfg.model.chain.seed);
    seeds.insert("basis_mc".to_string(), fitted.structure.mc_seed);
    let mut manifest = RunManifest::new(&cfg.model, seeds, digests.clone());
    manifest.timing_seconds.insert("fit".into(), elapsed);
    io::write_json(&out.join("manifest.json"), &manifest)?;

    let s = &fitted.structure;
    let artifact = FitArtifact {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash(&cfg.model, &digests),
        structure_fingerprint: s.fingerprint(),
        fine_fingerprint: format!("{:016x}", s.fine.fingerprint()),
        basis: s.basis.clone(),
        first_year: s.first_year,
        last_year: s.last_year,
        mc_points: s.mc_points,
        mc_seed: s.mc_seed,
        observed: s.observed.clone(),
        chain: fitted.draws.meta.clone(),
    };
    io::write_json(&out.join("fitted.json"), &artifact)?;
    io::write_json(
        &out.join("chain.json"),
        &serde_json::json!({
            "meta": fitted.draws.meta,
            "config": cfg.model,
            "diagnostics": fitted.draws.diagnostics.iter().map(|d| serde_json::json!({
                "name": d.name,
                "mean": finite_or_null(d.mean),
                "sd": finite_or_null(d.sd),
                "ess": finite_or_null(d.ess),
                "split_rhat": finite_or_null(d.split_rhat),
            })).collect::<Vec<_>>(),
            "warnings": fitted.draws.warnings,
        }),
    )?;
    for w in &fitted.draws.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "fitted {} estimates, {} draws kept, artifacts in {}",
        problem.data.len(),
        fitted.draws.len(),
        out.display()
    );
    Ok(())
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

// ---------------------------------------------------------------- predict

fn load_fitted(cfg: &CliConfig, dir: &Path) -> Result<(FittedStructure, PosteriorDraws)> {
    let data = require(&cfg.data, "data")?;
    let artifact: FitArtifact = io::read_json(&dir.join("fitted.json"))?;
    if artifact.schema_version != SCHEMA_VERSION {
        return Err(Error::ArtifactMismatch(format!(
            "artifact schema {} is not {SCHEMA_VERSION}",
            artifact.schema_version
        )));
    }
    let (_, digests) = load_problem(data)?;
    let hash = config_hash(&cfg.model, &digests);
    if hash != artifact.config_hash {
        return Err(Error::ArtifactMismatch(format!(
            "configuration hash {hash} differs from the fitted artifact's {}",
            artifact.config_hash
        )));
    }
    let structure = FittedStructure {
        basis: artifact.basis,
        fine: io::load_fine_set(&data.fine)?,
        first_year: artifact.first_year,
        last_year: artifact.last_year,
        mc_points: artifact.mc_points,
        mc_seed: artifact.mc_seed,
        observed: artifact.observed,
    };
    if structure.fingerprint() != artifact.structure_fingerprint {
        return Err(Error::ArtifactMismatch("fine partition or basis differs from the fitted artifact".into()));
    }
    let draws = PosteriorDraws {
        draws: io::read_draws(&dir.join("draws.csv"))?,
        meta: artifact.chain,
        diagnostics: Vec::new(),
        warnings: Vec::new(),
    };
    Ok((structure, draws))
}

fn write_failures(path: &Path, failures: &[PredictionFailure]) -> Result<()> {
    let mut text = String::from("target_id,year,period,message\n");
    for f in failures {
        text += &format!("{},{},{},\"{}\"\n", f.target_id, f.year, f.period, f.message.replace('"', "'"));
    }
    io::write_text(path, &text)
}

pub fn cmd_predict(cfg: &CliConfig, out: &Path) -> Result<()> {
    let pc = require(&cfg.predict, "predict")?;
    let dir = pc.artifact.clone().unwrap_or_else(|| out.to_path_buf());
    let (structure, draws) = load_fitted(cfg, &dir)?;
    let targets = io::load_supports(&pc.targets)?;
    let mc_points = pc.mc_points.unwrap_or(structure.mc_points);
    let query = |targets: SupportSet, periods: Vec<(i32, u32)>| TargetQuery {
        targets,
        periods,
        mc_points,
        seed: structure.mc_seed,
        fine_scale: pc.fine_scale,
    };

    let mut failures = Vec::new();
    let mut records: Vec<PredictionRecord> = Vec::new();
    if !pc.periods.is_empty() {
        let preds = predict(&draws, &query(targets.clone(), pc.periods.iter().map(|p| p.pair()).collect()), &structure)?;
        records = preds.records;
        failures.extend(preds.failures);
    }
    io::write_predictions(&out.join("predictions.csv"), &records)?;

    match &pc.holdout {
        None => eprintln!("notice: no hold-out estimates configured; ratio diagnostics skipped"),
        Some(path) => {
            let held = io::load_estimates(path, cfg.data.as_ref().map_or(0.90, |d| d.moe_level))?;
            let mut by_group: BTreeMap<(i32, u32), Vec<crate::geometry::ArealUnit>> = BTreeMap::new();
            for d in &held {
                let unit = targets.get(&d.unit_id).ok_or_else(|| {
                    Error::Config(format!("held-out unit {:?} is not among the targets", d.unit_id))
                })?;
                let units = by_group.entry((d.year, d.period)).or_default();
                if !units.iter().any(|u| u.id == unit.id) {
                    units.push(unit.clone());
                }
            }
            let mut held_records = Vec::new();
            for (group, units) in by_group {
                let preds = predict(&draws, &query(SupportSet::new(units)?, vec![group]), &structure)?;
                held_records.extend(preds.records);
                failures.extend(preds.failures);
            }
            io::write_predictions(&out.join("holdout_predictions.csv"), &held_records)?;
            let report = ratio_diagnostic(&held, &held_records)?;
            let mut text = String::from("unit_id,year,period,estimate,prediction,ratio\n");
            for e in &report.entries {
                text += &format!(
                    "{},{},{},{},{},{}\n",
                    e.unit_id,
                    e.year,
                    e.period,
                    fmt_f64(e.estimate),
                    fmt_f64(e.prediction),
                    e.ratio.map(fmt_f64).unwrap_or_default()
                );
            }
            io::write_text(&out.join("ratios.csv"), &text)?;
            io::write_json(&out.join("ratio_summary.json"), &report.summary)?;
            io::write_text(
                &out.join("ratio_histogram.svg"),
                &io::histogram_svg(&report.ratios(), pc.histogram_bins, "Hold-out ratio R(A)"),
            )?;
            eprintln!(
                "hold-out ratio: median {:.4} over {} supports ({} flagged)",
                report.summary.median, report.summary.count, report.summary.flagged
            );
        }
    }
    if !failures.is_empty() {
        write_failures(&out.join("prediction_errors.csv"), &failures)?;
        eprintln!("warning: {} prediction request(s) failed; see prediction_errors.csv", failures.len());
    }
    eprintln!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- validate

pub fn cmd_validate(cfg: &CliConfig, out: &Path) -> Result<()> {
    let data = require(&cfg.data, "data")?;
    let vc = require(&cfg.validate, "validate")?;
    let (problem, _) = load_problem(data)?;
    let holdout = HoldoutSpec {
        groups: vc.holdout_groups.iter().map(|g| g.pair()).collect(),
    };
    let result = holdout_search(&problem, &cfg.model, &vc.grid, &holdout)?;
    let mut text = String::from("spatial_knots,radius_multiplier,w_t,holdout_error,failure\n");
    for row in &result.table {
        text += &format!(
            "{},{},{},{},\"{}\"\n",
            row.point.spatial_knots,
            fmt_f64(row.point.radius_multiplier),
            fmt_f64(row.point.w_t),
            row.error.map(fmt_f64).unwrap_or_default(),
            row.failure.as_deref().unwrap_or("").replace('"', "'")
        );
    }
    io::write_text(&out.join("grid_search.csv"), &text)?;
    match result.best {
        Some(b) => eprintln!(
            "best configuration: {} spatial knots, radius multiplier {}, w_t {}",
            b.spatial_knots, b.radius_multiplier, b.w_t
        ),
        None => eprintln!("warning: every configuration failed"),
    }
    Ok(())
}
