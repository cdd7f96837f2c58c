//! Conjugate Gibbs sampler.
//!
//! η is drawn in the eigen-coordinates of the positive part of `K_0`
//! (`η = U₊α`, `α ~ N(0, σ_K² Λ₊)`), so a singular `K_0` never needs
//! inverting and η stays in its support.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize, ScalarSummary};
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::model::{FittedModelInputs, ModelConfig, Priors, ProcessParams, VariancePrior};

/// Gaussian full conditional, stored as mean and the Cholesky factor of the
/// precision.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    pub precision_chol: DMatrix<f64>,
}

impl GaussianConditional {
    fn from_precision(precision: &DMatrix<f64>, linear: &DVector<f64>, what: &str) -> Result<Self> {
        let chol = cholesky(precision, what)?;
        let mean = chol.solve(linear);
        Ok(GaussianConditional {
            mean,
            precision_chol: chol.l(),
        })
    }

    /// `mean + L'^{-1} z` has covariance `(LL')^{-1}`.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        let offset = self
            .precision_chol
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + offset
    }
}

/// Data-dependent products reused by every Gibbs step.
#[derive(Debug, Clone)]
pub struct GibbsKernel<'a> {
    inputs: &'a FittedModelInputs,
    priors: Priors,
    v_inv: DVector<f64>,
    /// Ψ U₊ (N × r⁺).
    psi_u: DMatrix<f64>,
    /// (ΨU₊)' V⁻¹ (ΨU₊).
    eta_gram: DMatrix<f64>,
    /// H' V⁻¹ H.
    mu_gram: DMatrix<f64>,
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
    x.transpose() * xw
}

fn draw_inverse_gamma(shape: f64, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    scale / g
}

impl<'a> GibbsKernel<'a> {
    pub fn new(inputs: &'a FittedModelInputs, priors: Priors) -> Result<Self> {
        priors.validate()?;
        let v_inv = inputs.v.map(|v| 1.0 / v);
        let psi_u = &inputs.psi * &inputs.k0_positive.vectors;
        Ok(GibbsKernel {
            eta_gram: weighted_gram(&psi_u, &v_inv),
            mu_gram: weighted_gram(&inputs.h, &v_inv),
            inputs,
            priors,
            v_inv,
            psi_u,
        })
    }

    pub fn inputs(&self) -> &FittedModelInputs {
        self.inputs
    }

    /// Full conditional of α = U₊'η given everything else.
    pub fn alpha_conditional(&self, state: &ProcessParams) -> Result<GaussianConditional> {
        let inp = self.inputs;
        let resid = &inp.z - &inp.h * &state.mu - &state.xi;
        let mut precision = self.eta_gram.clone();
        for (k, lam) in inp.k0_positive.values.iter().enumerate() {
            precision[(k, k)] += 1.0 / (state.sigma2_k * lam);
        }
        let linear = self.psi_u.transpose() * resid.component_mul(&self.v_inv);
        GaussianConditional::from_precision(&precision, &linear, "η full-conditional precision")
    }

    /// Mean of the η full conditional (in the original coordinates).
    pub fn eta_conditional_mean(&self, state: &ProcessParams) -> Result<DVector<f64>> {
        Ok(&self.inputs.k0_positive.vectors * self.alpha_conditional(state)?.mean)
    }

    pub fn mu_conditional(&self, state: &ProcessParams) -> Result<GaussianConditional> {
        let inp = self.inputs;
        let resid = &inp.z - &inp.psi * &state.eta - &state.xi;
        let mut precision = self.mu_gram.clone();
        for i in 0..precision.nrows() {
            precision[(i, i)] += 1.0 / state.sigma2_mu;
        }
        let linear = inp.h.transpose() * resid.component_mul(&self.v_inv);
        GaussianConditional::from_precision(&precision, &linear, "μ_B full-conditional precision")
    }

    /// One sweep η → μ_B → ξ → (σ_ξ², σ_μ², σ_K²).
    pub fn step(&self, state: &ProcessParams, rng: &mut ChaCha8Rng) -> Result<ProcessParams> {
        let inp = self.inputs;
        let mut next = state.clone();

        let alpha = self.alpha_conditional(&next)?.draw(rng);
        next.eta = &inp.k0_positive.vectors * &alpha;

        next.mu = self.mu_conditional(&next)?.draw(rng);

        let fitted = &inp.h * &next.mu + &inp.psi * &next.eta;
        for i in 0..inp.n_data() {
            let prec = self.v_inv[i] + 1.0 / next.sigma2_xi;
            let mean = (inp.z[i] - fitted[i]) * self.v_inv[i] / prec;
            let z: f64 = StandardNormal.sample(rng);
            next.xi[i] = mean + z / prec.sqrt();
        }

        let update = |prior: VariancePrior, count: f64, ss: f64, current: f64, rng: &mut ChaCha8Rng| match prior {
            VariancePrior::InverseGamma { shape, scale } => {
                draw_inverse_gamma(shape + 0.5 * count, scale + 0.5 * ss, rng)
            }
            VariancePrior::Fixed { .. } => current,
        };
        next.sigma2_xi = update(
            self.priors.sigma2_xi,
            inp.n_data() as f64,
            next.xi.norm_squared(),
            next.sigma2_xi,
            rng,
        );
        next.sigma2_mu = update(
            self.priors.sigma2_mu,
            inp.n_fine() as f64,
            next.mu.norm_squared(),
            next.sigma2_mu,
            rng,
        );
        let alpha_ss: f64 = alpha
            .iter()
            .zip(inp.k0_positive.values.iter())
            .map(|(a, l)| a * a / l)
            .sum();
        next.sigma2_k = update(
            self.priors.sigma2_k,
            inp.k0_positive.rank() as f64,
            alpha_ss,
            next.sigma2_k,
            rng,
        );
        Ok(next)
    }
}

/// Single sweep without a prebuilt kernel.
pub fn gibbs_step(
    state: &ProcessParams,
    inputs: &FittedModelInputs,
    priors: &Priors,
    rng: &mut ChaCha8Rng,
) -> Result<ProcessParams> {
    state.validate(inputs)?;
    GibbsKernel::new(inputs, *priors)?.step(state, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub config_hash: String,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<ProcessParams>,
    pub meta: ChainMeta,
    pub diagnostics: Vec<ScalarSummary>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Named scalar traces: variances, then μ_B, then η.
    pub fn scalar_traces(&self) -> Vec<(String, Vec<f64>)> {
        let Some(first) = self.draws.first() else {
            return Vec::new();
        };
        let mut out = vec![
            ("sigma2_xi".to_string(), self.draws.iter().map(|d| d.sigma2_xi).collect()),
            ("sigma2_k".to_string(), self.draws.iter().map(|d| d.sigma2_k).collect()),
            ("sigma2_mu".to_string(), self.draws.iter().map(|d| d.sigma2_mu).collect()),
        ];
        for i in 0..first.mu.len() {
            out.push((format!("mu_{i}"), self.draws.iter().map(|d| d.mu[i]).collect()));
        }
        for j in 0..first.eta.len() {
            out.push((format!("eta_{j}"), self.draws.iter().map(|d| d.eta[j]).collect()));
        }
        out
    }
}

/// Runs one chain from the moment-based starting point.
pub fn run_chain(inputs: &FittedModelInputs, config: &ModelConfig, config_hash: &str) -> Result<PosteriorDraws> {
    config.validate()?;
    let chain = config.chain;
    let kernel = GibbsKernel::new(inputs, config.priors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(chain.seed);
    let mut state = ProcessParams::initial(inputs, &config.priors);
    state.validate(inputs)?;

    let mut draws = Vec::with_capacity(chain.kept_draws());
    for it in 0..chain.iterations {
        state = kernel.step(&state, &mut rng)?;
        if let Some(detail) = non_finite(&state) {
            return Err(Error::NonFinite { iteration: it, detail });
        }
        if it >= chain.burn_in && (it - chain.burn_in + 1).is_multiple_of(chain.thin) {
            draws.push(state.clone());
        }
    }

    let mut warnings = Vec::new();
    if draws.is_empty() {
        warnings.push(format!(
            "no draws retained: iterations {} with burn-in {} and thin {}",
            chain.iterations, chain.burn_in, chain.thin
        ));
    }
    let mut out = PosteriorDraws {
        draws,
        meta: ChainMeta {
            seed: chain.seed,
            config_hash: config_hash.to_string(),
            iterations: chain.iterations,
            burn_in: chain.burn_in,
            thin: chain.thin,
        },
        diagnostics: Vec::new(),
        warnings,
    };
    out.diagnostics = out
        .scalar_traces()
        .into_iter()
        .map(|(name, trace)| summarize(name, &trace))
        .collect();
    for d in &out.diagnostics {
        if d.split_rhat > 1.1 {
            out.warnings.push(format!("{}: split R-hat {:.3} exceeds 1.1", d.name, d.split_rhat));
        }
    }
    Ok(out)
}

fn non_finite(p: &ProcessParams) -> Option<String> {
    let bad = |name: &str, v: &DVector<f64>| v.iter().position(|x| !x.is_finite()).map(|i| format!("{name}[{i}]"));
    bad("mu", &p.mu)
        .or_else(|| bad("eta", &p.eta))
        .or_else(|| bad("xi", &p.xi))
        .or_else(|| {
            [("sigma2_xi", p.sigma2_xi), ("sigma2_k", p.sigma2_k), ("sigma2_mu", p.sigma2_mu)]
                .into_iter()
                .find(|(_, v)| !(v.is_finite() && *v > 0.0))
                .map(|(n, v)| format!("{n} = {v}"))
        })
}
