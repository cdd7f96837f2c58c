//! Random-effects covariance from a target VAR(1) process on the fine
//! partition.
//!
//! The chain of constructions is
//!
//! ```text
//! P    = I − H(H'H)⁻¹H'                      (fixed-effect projector)
//! PWP  = Φ Λ Φ'                               (Moran's I eigenbasis)
//! ν_t  = M ν_{t−1} + b_t,  b_t ~ N(0, Σ_b)    (target dynamics)
//! Σ⁰   = M Σ⁰ M' + Σ_b                        (stationary covariance)
//! Σ_y* = [M^{s−t} Σ⁰]_{s≥t}                   (joint over years)
//! K_0  = argmin_{C ⪰ 0} ‖Σ_y* − Ψ C Ψ'‖_F
//! ```
//!
//! `Σ_b` is computed with unit scale; the sampler applies `σ_K²`, which is
//! valid because every step above is linear in `Σ_b` and the PSD projection
//! commutes with positive scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AdjacencyMatrix;
use crate::linalg::{self, frobenius, psd_floor, symmetrize};

/// Dimension up to which the Lyapunov equation is solved through the dense
/// Kronecker system. The system has `n⁴` entries.
pub const KRONECKER_CUTOFF: usize = 30;

/// Leading eigenvectors of `P W P` (`P` projects onto the orthogonal
/// complement of `col(H)`).
#[derive(Debug, Clone)]
pub struct MiPropagator {
    /// n_B × rank, orthonormal columns, each orthogonal to `col(H)`.
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl MiPropagator {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// The n_B × n_B propagator used in the VAR: `Φ_r Λ_r Φ_r'` rescaled to
    /// spectral radius `scale`.
    pub fn var_operator(&self, scale: f64) -> DMatrix<f64> {
        let g = &self.basis * DMatrix::from_diagonal(&self.eigenvalues) * self.basis.transpose();
        let radius = self.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if radius <= 0.0 {
            return DMatrix::zeros(g.nrows(), g.ncols());
        }
        symmetrize(&(g * (scale / radius)))
    }
}

pub fn mi_propagator(h: &DMatrix<f64>, w: &DMatrix<f64>, rank: usize) -> Result<MiPropagator> {
    let n = h.nrows();
    let p = h.ncols();
    if w.shape() != (n, n) {
        return Err(Error::Config(format!(
            "weight matrix is {:?}, expected {n}×{n}",
            w.shape()
        )));
    }
    if p > n {
        return Err(Error::LinAlg(format!("H has more columns ({p}) than rows ({n})")));
    }
    if rank > n - p {
        return Err(Error::Config(format!("propagator rank {rank} exceeds n_B − p = {}", n - p)));
    }
    let projector = if p == 0 {
        DMatrix::identity(n, n)
    } else {
        let svd = h.clone().svd(true, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::LinAlg(format!(
                "H is rank deficient (singular values {smin:.3e} .. {smax:.3e})"
            )));
        }
        let u = svd.u.expect("u requested");
        DMatrix::identity(n, n) - &u * u.transpose()
    };
    // W need not be symmetric (e.g. row-standardized adjacency); the
    // symmetric part of PWP carries the same quadratic form.
    let pwp = symmetrize(&(&projector * w * &projector));
    let (values, vectors) = linalg::sym_eigen_desc(&pwp);
    Ok(MiPropagator {
        basis: vectors.columns(0, rank).into_owned(),
        eigenvalues: values.rows(0, rank).into_owned(),
    })
}

/// Unit-scale innovation covariance `(I − ρ D^{-1/2} A D^{-1/2})⁻¹`.
///
/// The precision has the spectrum of `I − ρ A_row` and is symmetric positive
/// definite for `|ρ| < 1`.
pub fn innovation_cov(adj: &AdjacencyMatrix, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!("CAR dependence ρ = {rho} must satisfy |ρ| < 1")));
    }
    let n = adj.len();
    let precision = DMatrix::identity(n, n) - adj.symmetric_normalized() * rho;
    let chol = linalg::cholesky(&precision, "innovation precision")?;
    Ok(symmetrize(&chol.inverse()))
}

/// Stationary covariance of `ν_t = M ν_{t−1} + b_t`.
pub fn stationary_cov(m: &DMatrix<f64>, sigma_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n || sigma_b.shape() != (n, n) {
        return Err(Error::Config(format!(
            "propagator {:?} and innovation covariance {:?} must be square and equal size",
            m.shape(),
            sigma_b.shape()
        )));
    }
    if !linalg::is_symmetric(sigma_b, 1e-10) {
        return Err(Error::Domain("innovation covariance is not symmetric".into()));
    }
    let (lo, hi) = linalg::min_max_eigenvalue(sigma_b);
    if lo < -1e-10 * hi.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "innovation covariance is not PSD (min eigenvalue {lo:.3e})"
        )));
    }
    let radius = linalg::spectral_radius(m);
    if !(radius < 1.0) {
        return Err(Error::Stability { spectral_radius: radius });
    }

    let sigma0 = if n <= KRONECKER_CUTOFF {
        kronecker_solve(m, sigma_b)?
    } else {
        doubling_solve(m, sigma_b)?
    };
    Ok(symmetrize(&sigma0))
}

fn kronecker_solve(m: &DMatrix<f64>, sigma_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let system = DMatrix::identity(n * n, n * n) - m.kronecker(m);
    let rhs = DVector::from_column_slice(sigma_b.as_slice());
    let vec = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::LinAlg("I − M⊗M is singular".into()))?;
    Ok(DMatrix::from_column_slice(n, n, vec.as_slice()))
}

/// Doubling form of the fixed-point iteration `Σ ← MΣM' + Σ_b`: after k
/// rounds the partial sum covers `2^k` terms of the series.
fn doubling_solve(m: &DMatrix<f64>, sigma_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = sigma_b.clone();
    let mut a = m.clone();
    for _ in 0..200 {
        let inc = &a * &x * a.transpose();
        let done = frobenius(&inc) <= 1e-13 * frobenius(&x).max(f64::MIN_POSITIVE);
        x += inc;
        if done {
            return Ok(x);
        }
        a = &a * &a;
    }
    Err(Error::LinAlg("stationary covariance iteration did not converge".into()))
}

/// Joint covariance over `years` consecutive years: block `(s, t)` with
/// `s ≥ t` is `M^{s−t} Σ⁰`, the upper blocks are transposes.
pub fn assemble_joint(m: &DMatrix<f64>, sigma0: &DMatrix<f64>, years: usize) -> Result<DMatrix<f64>> {
    if years == 0 {
        return Err(Error::Config("joint covariance needs at least one year".into()));
    }
    let n = sigma0.nrows();
    let mut lag_blocks = Vec::with_capacity(years);
    let mut block = sigma0.clone();
    for _ in 0..years {
        lag_blocks.push(block.clone());
        block = m * block;
    }
    let mut joint = DMatrix::zeros(n * years, n * years);
    for s in 0..years {
        for t in 0..=s {
            let b = &lag_blocks[s - t];
            joint.view_mut((s * n, t * n), (n, n)).copy_from(b);
            if s != t {
                joint.view_mut((t * n, s * n), (n, n)).copy_from(&b.transpose());
            }
        }
    }
    // Diagonal blocks are Σ⁰, already symmetrized; off-diagonal blocks are
    // exact transposes, so `joint` is symmetric bit for bit.
    Ok(joint)
}

#[derive(Debug, Clone)]
pub struct RandomEffectsCov {
    /// r × r symmetric PSD base matrix; the model uses `K = σ_K² K_0`.
    pub k0: DMatrix<f64>,
}

impl RandomEffectsCov {
    pub fn dim(&self) -> usize {
        self.k0.nrows()
    }
}

/// Frobenius-nearest `Ψ C Ψ'` to `sigma` over PSD `C`.
///
/// With the thin SVD `Ψ = U S V'`, the objective separates into
/// `‖U'ΣU − S V'CV S‖_F` plus a constant, so the optimum is
/// `C = V S⁻¹ ⌊U'ΣU⌋₊ S⁻¹ V'` where `⌊·⌋₊` floors eigenvalues at zero. When
/// `U'ΣU` is already PSD this is `Ψ⁺ Σ (Ψ⁺)'`.
pub fn solve_k0(sigma: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<RandomEffectsCov> {
    let (rows, r) = psi.shape();
    if sigma.shape() != (rows, rows) {
        return Err(Error::Config(format!(
            "target covariance {:?} does not match Ψ with {rows} rows",
            sigma.shape()
        )));
    }
    if psi.iter().all(|&v| v == 0.0) {
        return Err(Error::Config("Ψ has no nonzero column".into()));
    }
    let svd = psi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (rows.max(r) as f64) * f64::EPSILON;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > tol)
        .collect();
    let u_full = svd.u.as_ref().expect("u requested");
    let vt_full = svd.v_t.as_ref().expect("v_t requested");
    let u = DMatrix::from_fn(rows, keep.len(), |i, c| u_full[(i, keep[c])]);
    // columns of V scaled by 1/s
    let vs = DMatrix::from_fn(r, keep.len(), |i, c| vt_full[(keep[c], i)] / svd.singular_values[keep[c]]);
    let inner = psd_floor(&(u.transpose() * sigma * &u));
    let k0 = symmetrize(&(&vs * inner * vs.transpose()));
    Ok(RandomEffectsCov { k0 })
}

/// How the Moran's I weight matrix is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorWeights {
    #[default]
    Identity,
    RowStandardizedAdjacency,
}

/// Settings for the target process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetProcessConfig {
    pub rho: f64,
    pub propagator_scale: f64,
    pub weights: PropagatorWeights,
}

impl Default for TargetProcessConfig {
    fn default() -> Self {
        TargetProcessConfig {
            rho: 0.9,
            propagator_scale: 0.8,
            weights: PropagatorWeights::Identity,
        }
    }
}

/// Every intermediate of the target-process construction, kept for dumps and
/// diagnostics.
#[derive(Debug, Clone)]
pub struct TargetProcess {
    pub propagator: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    pub joint: DMatrix<f64>,
    pub k0: RandomEffectsCov,
}

/// Builds `K_0` for a fine partition with adjacency `adj`, fixed-effect
/// design `H` (intercept column) and the ℓ = 1 target design `psi`.
pub fn target_process(
    adj: &AdjacencyMatrix,
    psi: &DMatrix<f64>,
    years: usize,
    cfg: &TargetProcessConfig,
) -> Result<TargetProcess> {
    let n = adj.len();
    if n == 0 {
        return Err(Error::Config("fine support set is empty".into()));
    }
    if psi.nrows() != n * years {
        return Err(Error::Config(format!(
            "Ψ has {} rows, expected n_B·T = {}",
            psi.nrows(),
            n * years
        )));
    }
    let h = DMatrix::from_element(n, 1, 1.0);
    let w = match cfg.weights {
        PropagatorWeights::Identity => DMatrix::identity(n, n),
        PropagatorWeights::RowStandardizedAdjacency => adj.row_standardized(),
    };
    let propagator = mi_propagator(&h, &w, n - 1)?.var_operator(cfg.propagator_scale);
    let sigma_b = innovation_cov(adj, cfg.rho)?;
    let sigma0 = stationary_cov(&propagator, &sigma_b)?;
    let joint = assemble_joint(&propagator, &sigma0, years)?;
    let k0 = solve_k0(&joint, psi)?;
    Ok(TargetProcess {
        propagator,
        sigma_b,
        sigma0,
        joint,
        k0,
    })
}
