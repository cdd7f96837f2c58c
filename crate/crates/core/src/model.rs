//! Data containers, priors and the joint Gaussian model
//!
//! ```text
//! Z = H μ_B + Ψ η + ξ + ε,   ε ~ N(0, V),  V = diag(σ²_{t,ℓ}(A)) known
//! ξ ~ N(0, σ_ξ² I),  η ~ N(0, σ_K² K_0),  μ_B ~ N(0, σ_μ² I)
//! σ_ξ², σ_K², σ_μ² ~ inverse-gamma
//! ```

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::DesignRow;
use crate::covariance::{RandomEffectsCov, TargetProcessConfig};
use crate::error::{Error, Result};
use crate::linalg::PositivePart;

/// Relative eigenvalue floor used wherever `K_0` is pseudo-inverted.
pub const K0_EIGEN_FLOOR: f64 = 1e-8;

/// One published estimate with its sampling standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDatum {
    pub unit_id: String,
    pub year: i32,
    pub period: u32,
    pub estimate: f64,
    pub sd: f64,
}

impl SurveyDatum {
    pub fn new(unit_id: impl Into<String>, year: i32, period: u32, estimate: f64, sd: f64) -> Result<Self> {
        let d = SurveyDatum {
            unit_id: unit_id.into(),
            year,
            period,
            estimate,
            sd,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0 && self.sd.is_finite()) {
            return Err(Error::Domain(format!(
                "datum {} has non-positive or non-finite sd {}",
                self.key(),
                self.sd
            )));
        }
        if self.period == 0 {
            return Err(Error::Domain(format!("datum {} has period 0", self.key())));
        }
        if !self.estimate.is_finite() {
            return Err(Error::Domain(format!("datum {} has a non-finite estimate", self.key())));
        }
        Ok(())
    }

    pub fn key(&self) -> DatumKey {
        DatumKey {
            unit_id: self.unit_id.clone(),
            year: self.year,
            period: self.period,
        }
    }

    /// First calendar year covered by the period.
    pub fn first_year(&self) -> i32 {
        self.year - self.period as i32 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatumKey {
    pub unit_id: String,
    pub year: i32,
    pub period: u32,
}

impl std::fmt::Display for DatumKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.unit_id, self.year, self.period)
    }
}

/// Prior on one variance parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariancePrior {
    InverseGamma { shape: f64, scale: f64 },
    /// Point mass; the sampler never updates the parameter.
    Fixed { value: f64 },
}

impl Default for VariancePrior {
    fn default() -> Self {
        VariancePrior::InverseGamma { shape: 1.0, scale: 1.0 }
    }
}

impl VariancePrior {
    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            VariancePrior::InverseGamma { shape, scale } => shape > 0.0 && scale > 0.0,
            VariancePrior::Fixed { value } => value > 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior for {name}: {self:?}")))
        }
    }

    /// Log density at `x`; zero for a point mass.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            VariancePrior::InverseGamma { shape, scale } => {
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
            VariancePrior::Fixed { .. } => 0.0,
        }
    }
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for x > 0.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Priors {
    pub sigma2_xi: VariancePrior,
    pub sigma2_k: VariancePrior,
    pub sigma2_mu: VariancePrior,
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        self.sigma2_xi.validate("sigma2_xi")?;
        self.sigma2_k.validate("sigma2_k")?;
        self.sigma2_mu.validate("sigma2_mu")
    }
}

/// How temporal knots are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemporalKnots {
    /// Distinct mid-points of the observed `(t, ℓ)` periods.
    PeriodMidpoints,
    /// `count` equally spaced knots over the observed year range.
    Equispaced { count: usize },
    Explicit { times: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    /// Number of spatial knots r_s.
    pub spatial_knots: usize,
    /// Candidate points for the space-filling design.
    pub candidates: usize,
    /// `w_s = radius_multiplier × min inter-knot distance`, unless `w_s` is set.
    pub radius_multiplier: f64,
    pub w_s: Option<f64>,
    pub w_t: f64,
    pub temporal: TemporalKnots,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            spatial_knots: 5,
            candidates: 2000,
            radius_multiplier: crate::basis::DEFAULT_RADIUS_MULTIPLIER,
            w_s: None,
            w_t: crate::basis::DEFAULT_TEMPORAL_RADIUS,
            temporal: TemporalKnots::PeriodMidpoints,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 10_000,
            burn_in: 2_000,
            thin: 4,
            seed: 1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub priors: Priors,
    pub target: TargetProcessConfig,
    /// Monte Carlo points per areal unit for basis integration.
    pub mc_points: usize,
    pub basis: BasisConfig,
    pub chain: ChainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            priors: Priors::default(),
            target: TargetProcessConfig::default(),
            mc_points: 1000,
            basis: BasisConfig::default(),
            chain: ChainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.chain.validate()?;
        if self.mc_points == 0 {
            return Err(Error::Config("mc_points must be at least 1".into()));
        }
        if self.basis.spatial_knots == 0 || self.basis.spatial_knots > self.basis.candidates {
            return Err(Error::Config(format!(
                "need 1 ≤ spatial_knots ≤ candidates (got {} and {})",
                self.basis.spatial_knots, self.basis.candidates
            )));
        }
        if !(self.basis.radius_multiplier > 0.0) || !(self.basis.w_t > 0.0) {
            return Err(Error::Config("basis radii must be positive".into()));
        }
        if let Some(w) = self.basis.w_s {
            if !(w > 0.0) {
                return Err(Error::Config("w_s must be positive".into()));
            }
        }
        if !(self.target.propagator_scale >= 0.0 && self.target.propagator_scale < 1.0) {
            return Err(Error::Config("propagator_scale must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Stacked model inputs: responses, known variances and both design blocks.
#[derive(Debug, Clone)]
pub struct FittedModelInputs {
    pub keys: Vec<DatumKey>,
    pub z: DVector<f64>,
    /// Known sampling variances (diagonal of V).
    pub v: DVector<f64>,
    /// N × n_B overlap fractions.
    pub h: DMatrix<f64>,
    /// N × r aggregated basis rows.
    pub psi: DMatrix<f64>,
    pub k0: DMatrix<f64>,
    pub k0_positive: PositivePart,
}

impl FittedModelInputs {
    pub fn n_data(&self) -> usize {
        self.z.len()
    }

    pub fn n_fine(&self) -> usize {
        self.h.ncols()
    }

    pub fn basis_dim(&self) -> usize {
        self.psi.ncols()
    }

    /// Inputs with no observations (prior-only chains).
    pub fn without_data(n_fine: usize, k0: &RandomEffectsCov) -> Self {
        let r = k0.dim();
        FittedModelInputs {
            keys: Vec::new(),
            z: DVector::zeros(0),
            v: DVector::zeros(0),
            h: DMatrix::zeros(0, n_fine),
            psi: DMatrix::zeros(0, r),
            k0: k0.k0.clone(),
            k0_positive: PositivePart::new(&k0.k0, K0_EIGEN_FLOOR),
        }
    }
}

/// Stacks data and design rows, checking alignment and uniqueness.
pub fn assemble(data: &[SurveyDatum], designs: &[DesignRow], k0: &RandomEffectsCov) -> Result<FittedModelInputs> {
    if data.len() != designs.len() {
        return Err(Error::Config(format!(
            "{} data rows but {} design rows",
            data.len(),
            designs.len()
        )));
    }
    let r = k0.dim();
    if k0.k0.ncols() != r {
        return Err(Error::Config("K_0 is not square".into()));
    }
    let n_fine = designs.first().map(|d| d.overlap.len()).unwrap_or(0);
    let mut seen = HashSet::new();
    for (i, (d, row)) in data.iter().zip(designs).enumerate() {
        d.validate()?;
        if !seen.insert(d.key()) {
            return Err(Error::Config(format!("duplicate datum {}", d.key())));
        }
        if row.unit_id != d.unit_id || row.year != d.year || row.period != d.period {
            return Err(Error::Config(format!(
                "design row {i} ({}, {}, {}) does not match datum {}",
                row.unit_id,
                row.year,
                row.period,
                d.key()
            )));
        }
        if row.basis.len() != r || row.overlap.len() != n_fine {
            return Err(Error::Config(format!(
                "design row {i} has dimensions ({}, {}), expected ({r}, {n_fine})",
                row.basis.len(),
                row.overlap.len()
            )));
        }
        if row.basis.iter().chain(&row.overlap).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("design row {i} has non-finite entries")));
        }
    }
    let n = data.len();
    Ok(FittedModelInputs {
        keys: data.iter().map(SurveyDatum::key).collect(),
        z: DVector::from_iterator(n, data.iter().map(|d| d.estimate)),
        v: DVector::from_iterator(n, data.iter().map(|d| d.sd * d.sd)),
        h: DMatrix::from_fn(n, n_fine, |i, j| designs[i].overlap[j]),
        psi: DMatrix::from_fn(n, r, |i, j| designs[i].basis[j]),
        k0: k0.k0.clone(),
        k0_positive: PositivePart::new(&k0.k0, K0_EIGEN_FLOOR),
    })
}

/// State of every unknown in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessParams {
    pub mu: DVector<f64>,
    pub eta: DVector<f64>,
    pub xi: DVector<f64>,
    pub sigma2_xi: f64,
    pub sigma2_k: f64,
    pub sigma2_mu: f64,
}

impl ProcessParams {
    pub fn validate(&self, inputs: &FittedModelInputs) -> Result<()> {
        for (name, v) in [
            ("sigma2_xi", self.sigma2_xi),
            ("sigma2_k", self.sigma2_k),
            ("sigma2_mu", self.sigma2_mu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} = {v} is not a positive variance")));
            }
        }
        if self.mu.len() != inputs.n_fine() || self.eta.len() != inputs.basis_dim() || self.xi.len() != inputs.n_data() {
            return Err(Error::Config(format!(
                "parameter dimensions (μ {}, η {}, ξ {}) do not match inputs (n_B {}, r {}, N {})",
                self.mu.len(),
                self.eta.len(),
                self.xi.len(),
                inputs.n_fine(),
                inputs.basis_dim(),
                inputs.n_data()
            )));
        }
        Ok(())
    }

    /// Moment-based starting point: weighted least squares for μ_B, unit
    /// variances rescaled to the data spread.
    pub fn initial(inputs: &FittedModelInputs, priors: &Priors) -> Self {
        let n_b = inputs.n_fine();
        let n = inputs.n_data();
        let mu = if n == 0 {
            DVector::zeros(n_b)
        } else {
            let w = inputs.v.map(|v| 1.0 / v);
            let hw = DMatrix::from_fn(n, n_b, |i, j| inputs.h[(i, j)] * w[i]);
            let ridge = inputs.h.transpose() * &hw + DMatrix::identity(n_b, n_b) * 1e-6;
            let rhs = hw.transpose() * &inputs.z;
            ridge.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| DVector::zeros(n_b))
        };
        let resid = if n == 0 { DVector::zeros(0) } else { &inputs.z - &inputs.h * &mu };
        let resid_var = if n > 1 { resid.variance().max(1e-12) } else { 1.0 };
        let basis_scale = if n == 0 {
            1.0
        } else {
            let kpsi = &inputs.psi * &inputs.k0 * inputs.psi.transpose();
            (kpsi.trace() / n as f64).max(1e-12)
        };
        let pick = |prior: VariancePrior, guess: f64| match prior {
            VariancePrior::Fixed { value } => value,
            VariancePrior::InverseGamma { .. } => guess,
        };
        let mu_sq = if n_b > 0 { mu.norm_squared() / n_b as f64 } else { 0.0 };
        ProcessParams {
            sigma2_xi: pick(priors.sigma2_xi, (0.25 * resid_var).max(1e-6)),
            sigma2_k: pick(priors.sigma2_k, (resid_var / basis_scale).max(1e-6)),
            sigma2_mu: pick(priors.sigma2_mu, mu_sq.max(1.0)),
            mu,
            eta: DVector::zeros(inputs.basis_dim()),
            xi: DVector::zeros(n),
        }
    }
}

fn ln_normal_iid(x: &DVector<f64>, var: f64) -> f64 {
    let n = x.len() as f64;
    -0.5 * n * (2.0 * PI * var).ln() - 0.5 * x.norm_squared() / var
}

/// Log of the joint density of data, latent effects and variances.
pub fn log_joint(params: &ProcessParams, inputs: &FittedModelInputs, priors: &Priors) -> Result<f64> {
    params.validate(inputs)?;
    let mean = &inputs.h * &params.mu + &inputs.psi * &params.eta + &params.xi;
    let data: f64 = (0..inputs.n_data())
        .map(|i| {
            let r = inputs.z[i] - mean[i];
            -0.5 * (2.0 * PI * inputs.v[i]).ln() - 0.5 * r * r / inputs.v[i]
        })
        .sum();
    let xi = ln_normal_iid(&params.xi, params.sigma2_xi);
    let mu = ln_normal_iid(&params.mu, params.sigma2_mu);

    // η lives on the range of K_0; degenerate Gaussian with pseudo-determinant.
    let kp = &inputs.k0_positive;
    let rank = kp.rank() as f64;
    let eta = -0.5 * rank * (2.0 * PI * params.sigma2_k).ln()
        - 0.5 * kp.log_pdet()
        - 0.5 * kp.quad_form(&params.eta) / params.sigma2_k;

    let variances = priors.sigma2_xi.ln_pdf(params.sigma2_xi)
        + priors.sigma2_k.ln_pdf(params.sigma2_k)
        + priors.sigma2_mu.ln_pdf(params.sigma2_mu);
    let total = data + xi + mu + eta + variances;
    if !total.is_finite() {
        return Err(Error::Domain("log joint density is not finite".into()));
    }
    Ok(total)
}

/// Log density of `Z ~ N(Hμ + Ψη, V + σ_ξ² I)` (ξ and ε integrated out).
pub fn collapsed_log_density(inputs: &FittedModelInputs, mu: &DVector<f64>, eta: &DVector<f64>, sigma2_xi: f64) -> f64 {
    let mean = &inputs.h * mu + &inputs.psi * eta;
    (0..inputs.n_data())
        .map(|i| {
            let var = inputs.v[i] + sigma2_xi;
            let r = inputs.z[i] - mean[i];
            -0.5 * (2.0 * PI * var).ln() - 0.5 * r * r / var
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(id: &str, year: i32, period: u32, basis: &[f64], overlap: &[f64]) -> DesignRow {
        DesignRow {
            unit_id: id.into(),
            year,
            period,
            basis: DVector::from_column_slice(basis),
            overlap: overlap.to_vec(),
        }
    }

    fn k0(m: DMatrix<f64>) -> RandomEffectsCov {
        RandomEffectsCov { k0: m }
    }

    #[test]
    fn singleton_passes_through() {
        let d = [SurveyDatum::new("a", 2010, 1, 5.0, 2.0).unwrap()];
        let rows = [row("a", 2010, 1, &[0.5], &[1.0])];
        let inp = assemble(&d, &rows, &k0(DMatrix::identity(1, 1))).unwrap();
        assert_eq!(inp.z[0], 5.0);
        assert_eq!(inp.v[0], 4.0);
        assert_eq!(inp.h[(0, 0)], 1.0);
        assert_eq!(inp.psi[(0, 0)], 0.5);
    }

    #[test]
    fn duplicates_and_misalignment_rejected() {
        let d = [
            SurveyDatum::new("a", 2010, 1, 5.0, 2.0).unwrap(),
            SurveyDatum::new("a", 2010, 1, 6.0, 2.0).unwrap(),
        ];
        let rows = [row("a", 2010, 1, &[0.5], &[1.0]), row("a", 2010, 1, &[0.5], &[1.0])];
        assert!(matches!(assemble(&d, &rows, &k0(DMatrix::identity(1, 1))), Err(Error::Config(_))));

        let rows = [row("b", 2010, 1, &[0.5], &[1.0])];
        assert!(assemble(&d[..1], &rows, &k0(DMatrix::identity(1, 1))).is_err());
    }

    #[test]
    fn nonpositive_sd_rejected() {
        assert!(matches!(SurveyDatum::new("a", 2010, 1, 5.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(SurveyDatum::new("a", 2010, 1, 5.0, -1.0), Err(Error::Domain(_))));
    }

    fn three_row_inputs() -> FittedModelInputs {
        let d = [
            SurveyDatum::new("a", 2010, 1, 1.0, 1.0).unwrap(),
            SurveyDatum::new("b", 2010, 1, -0.5, 0.5).unwrap(),
            SurveyDatum::new("c", 2011, 3, 2.0, 2.0).unwrap(),
        ];
        let rows = [
            row("a", 2010, 1, &[0.2, 0.7], &[1.0, 0.0]),
            row("b", 2010, 1, &[0.9, 0.1], &[0.0, 1.0]),
            row("c", 2011, 3, &[0.4, 0.4], &[0.5, 0.5]),
        ];
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assemble(&d, &rows, &k0(k)).unwrap()
    }

    #[test]
    fn collapsed_density_matches_hand_computation() {
        let inp = three_row_inputs();
        let mu = DVector::from_column_slice(&[0.3, -0.2]);
        let eta = DVector::from_column_slice(&[1.0, -1.0]);
        let s2 = 0.7;
        // mean = Hμ + Ψη
        let means: [f64; 3] = [0.3 + 0.2 - 0.7, -0.2 + 0.9 - 0.1, 0.05 + 0.0];
        let z = [1.0, -0.5, 2.0];
        let v = [1.0, 0.25, 4.0];
        let mut oracle = 0.0;
        for i in 0..3 {
            let var = v[i] + s2;
            oracle += -0.5 * (2.0 * PI * var).ln() - (z[i] - means[i]).powi(2) / (2.0 * var);
        }
        assert!((collapsed_log_density(&inp, &mu, &eta, s2) - oracle).abs() < 1e-10);
    }

    fn unit_params(inp: &FittedModelInputs) -> ProcessParams {
        ProcessParams {
            mu: DVector::zeros(inp.n_fine()),
            eta: DVector::zeros(inp.basis_dim()),
            xi: DVector::zeros(inp.n_data()),
            sigma2_xi: 1.0,
            sigma2_k: 1.0,
            sigma2_mu: 1.0,
        }
    }

    #[test]
    fn standard_normal_bookkeeping() {
        let d: Vec<SurveyDatum> = (0..4).map(|i| SurveyDatum::new(format!("u{i}"), 2010, 1, 0.0, 1.0).unwrap()).collect();
        let rows: Vec<DesignRow> = (0..4).map(|i| row(&format!("u{i}"), 2010, 1, &[0.1, 0.2, 0.3], &[0.5, 0.5])).collect();
        let inp = assemble(&d, &rows, &k0(DMatrix::identity(3, 3))).unwrap();
        let lj = log_joint(&unit_params(&inp), &inp, &Priors::default()).unwrap();
        // data 4 + ξ 4 + μ 2 + η 3 standard-normal terms at zero, plus three IG(1,1) at 1 (= −1 each)
        let expected = -0.5 * 13.0 * (2.0 * PI).ln() - 3.0;
        assert!((lj - expected).abs() < 1e-12);
    }

    #[test]
    fn doubling_xi_variance_delta() {
        let inp = three_row_inputs();
        let p = unit_params(&inp);
        let mut q = p.clone();
        q.sigma2_xi = 2.0;
        let delta = log_joint(&q, &inp, &Priors::default()).unwrap() - log_joint(&p, &inp, &Priors::default()).unwrap();
        // normalizing constant: −(N/2) ln 2; IG(1,1): ln p(2) − ln p(1) = −2 ln 2 − 1/2 + 1
        let expected = -1.5 * 2f64.ln() + (-2.0 * 2f64.ln() + 0.5);
        assert!((delta - expected).abs() < 1e-12);
    }

    #[test]
    fn boundary_continuity_in_xi_variance() {
        let inp = three_row_inputs();
        let mut p = unit_params(&inp);
        p.mu = DVector::from_column_slice(&[0.1, 0.2]);
        let priors = Priors {
            sigma2_xi: VariancePrior::Fixed { value: 1e-12 },
            ..Priors::default()
        };
        p.sigma2_xi = 1e-12;
        let lj = log_joint(&p, &inp, &priors).unwrap();
        // remove the ξ prior term: −(N/2) ln(2π σ²)
        let without_xi = lj + 1.5 * (2.0 * PI * 1e-12).ln();
        let mean = &inp.h * &p.mu;
        let data: f64 = (0..3)
            .map(|i| -0.5 * (2.0 * PI * inp.v[i]).ln() - (inp.z[i] - mean[i]).powi(2) / (2.0 * inp.v[i]))
            .sum();
        let mut no_fine = data + ln_normal_iid(&p.mu, 1.0);
        no_fine += -0.5 * 2.0 * (2.0 * PI).ln() - 0.5 * inp.k0_positive.log_pdet();
        no_fine += Priors::default().sigma2_k.ln_pdf(1.0) + Priors::default().sigma2_mu.ln_pdf(1.0);
        assert!((without_xi - no_fine).abs() < 1e-9);
        assert!((collapsed_log_density(&inp, &p.mu, &p.eta, 1e-12) - data).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_variance_is_domain_error() {
        let inp = three_row_inputs();
        let mut p = unit_params(&inp);
        p.sigma2_k = 0.0;
        assert!(matches!(log_joint(&p, &inp, &Priors::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn ln_gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn chain_config_validation() {
        assert!(ChainConfig { iterations: 10, burn_in: 11, thin: 1, seed: 0 }.validate().is_err());
        assert!(ChainConfig { iterations: 10, burn_in: 0, thin: 0, seed: 0 }.validate().is_err());
        assert_eq!(ChainConfig { iterations: 10, burn_in: 2, thin: 3, seed: 0 }.kept_draws(), 2);
    }

    proptest! {
        #[test]
        fn log_joint_is_permutation_invariant(seed in 0u64..1000, rot in 0usize..3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let mut data = Vec::new();
            let mut rows = Vec::new();
            for i in 0..n {
                let id = format!("u{i}");
                data.push(SurveyDatum::new(&id, 2010, 1, rng.random::<f64>() * 4.0 - 2.0, 0.5 + rng.random::<f64>()).unwrap());
                rows.push(row(&id, 2010, 1, &[rng.random(), rng.random()], &[rng.random(), rng.random()]));
            }
            let k = k0(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]));
            let inp = assemble(&data, &rows, &k).unwrap();
            let params = ProcessParams {
                mu: DVector::from_fn(2, |_, _| rng.random::<f64>()),
                eta: DVector::from_fn(2, |_, _| rng.random::<f64>()),
                xi: DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5),
                sigma2_xi: 0.3, sigma2_k: 1.7, sigma2_mu: 2.0,
            };
            let base = log_joint(&params, &inp, &Priors::default()).unwrap();

            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let pdata: Vec<_> = perm.iter().map(|&i| data[i].clone()).collect();
            let prows: Vec<_> = perm.iter().map(|&i| rows[i].clone()).collect();
            let pinp = assemble(&pdata, &prows, &k).unwrap();
            let mut pp = params.clone();
            pp.xi = DVector::from_iterator(n, perm.iter().map(|&i| params.xi[i]));
            let permuted = log_joint(&pp, &pinp, &Priors::default()).unwrap();
            prop_assert!((base - permuted).abs() < 1e-10);
        }
    }
}
