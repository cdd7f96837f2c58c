//! Small dense linear-algebra helpers shared by the covariance, model and
//! sampler modules. Everything operates on `nalgebra` dynamic matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// and eigenvectors permuted to match.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        // Fix the sign so the largest-magnitude entry is positive; keeps output
        // stable across runs and makes comparisons easier.
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (i, v)| if v.abs() > acc.1 + 1e-12 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub fn min_max_eigenvalue(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Nearest positive semidefinite matrix in Frobenius norm: symmetrize, then
/// floor negative eigenvalues at zero.
pub fn psd_floor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let floored = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&floored) * v.transpose()))
}

/// Positive part of a PSD matrix: eigenvectors whose eigenvalue exceeds
/// `rel_floor * lambda_max`, with those eigenvalues. Used for pseudo-inverses
/// and degenerate Gaussian densities.
#[derive(Debug, Clone)]
pub struct PositivePart {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl PositivePart {
    pub fn new(m: &DMatrix<f64>, rel_floor: f64) -> Self {
        let (values, vectors) = sym_eigen_desc(m);
        let lmax = values.iter().cloned().fold(0.0_f64, f64::max);
        let keep: Vec<usize> = (0..values.len())
            .filter(|&i| lmax > 0.0 && values[i] > rel_floor * lmax)
            .collect();
        let n = m.nrows();
        let mut vecs = DMatrix::zeros(n, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            vecs.set_column(c, &vectors.column(i));
        }
        PositivePart {
            values: DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i])),
            vectors: vecs,
        }
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn pinv(&self) -> DMatrix<f64> {
        let inv = self.values.map(|v| 1.0 / v);
        &self.vectors * DMatrix::from_diagonal(&inv) * self.vectors.transpose()
    }

    pub fn log_pdet(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }

    /// x' M⁺ x
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let proj = self.vectors.transpose() * x;
        proj.iter()
            .zip(self.values.iter())
            .map(|(p, v)| p * p / v)
            .sum()
    }
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| {
        let (lo, hi) = min_max_eigenvalue(m);
        Error::LinAlg(format!(
            "{what} is not positive definite (dim {}, eigenvalue range [{lo:.3e}, {hi:.3e}])",
            m.nrows()
        ))
    })
}

/// Moore–Penrose pseudo-inverse via SVD with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    out
}

/// Largest eigenvalue modulus of a general square matrix.
///
/// Symmetric input uses the symmetric eigensolver. Otherwise a bounded
/// Schur iteration is tried, falling back to Gelfand's formula
/// `ρ = lim ‖M^(2^k)‖^(1/2^k)` when it does not converge.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if is_symmetric(m, 0.0) {
        return m.clone().symmetric_eigenvalues().iter().map(|v| v.abs()).fold(0.0, f64::max);
    }
    if let Some(schur) = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        return schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    gelfand_radius(m)
}

fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut a = m.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    let mut estimate = frobenius(&a);
    for _ in 0..60 {
        let norm = frobenius(&a);
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale += norm.ln() / power;
        a = &a * &a;
        power *= 2.0;
        let next = (log_scale + frobenius(&a).ln() / power).exp();
        if (next - estimate).abs() <= 1e-14 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_desc_is_sorted() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!(frobenius(&(recon - m)) < 1e-12);
    }

    #[test]
    fn psd_floor_removes_negative_part() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = psd_floor(&m);
        // eigenvalues 3 and -1; the floor keeps only the 3 component.
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 1.5, 1.5, 1.5]);
        assert!(frobenius(&(p - expected)) < 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m);
        let back = &m * &p * &m;
        assert!(frobenius(&(back - &m)) < 1e-12);
        assert!((p[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gelfand_agrees_with_schur_and_projectors() {
        let m = DMatrix::from_row_slice(3, 3, &[0.2, 0.7, -0.1, 0.0, 0.5, 0.3, 0.4, -0.2, 0.1]);
        let schur = spectral_radius(&m);
        assert!((gelfand_radius(&m) - schur).abs() < 1e-6 * schur);
        // repeated eigenvalues of a scaled projector
        let u = DMatrix::from_fn(25, 1, |_, _| 0.2);
        let p = (DMatrix::identity(25, 25) - &u * u.transpose()) * 0.8;
        assert!((spectral_radius(&p) - 0.8).abs() < 1e-12);
    }
}
