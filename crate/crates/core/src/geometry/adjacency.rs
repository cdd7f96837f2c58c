use nalgebra::DMatrix;

use super::{Point, SupportSet};
use crate::error::{Error, Result};

/// Symmetric binary rook adjacency over the fine partition.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    matrix: DMatrix<f64>,
}

impl AdjacencyMatrix {
    /// Builds the matrix directly from index pairs, bypassing geometry.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut matrix = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Config(format!("edge ({i},{j}) out of range for {n} units")));
            }
            if i == j {
                return Err(Error::Config(format!("self-loop ({i},{i}) in edge list")));
            }
            matrix[(i, j)] = 1.0;
            matrix[(j, i)] = 1.0;
        }
        Ok(AdjacencyMatrix { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.matrix.row(i).iter().filter(|&&v| v != 0.0).count()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.matrix[(i, j)] != 0.0).collect()
    }

    /// Each row divided by its degree; isolated units keep a zero row.
    pub fn row_standardized(&self) -> DMatrix<f64> {
        let mut out = self.matrix.clone();
        for i in 0..self.len() {
            let d = self.degree(i);
            if d > 0 {
                out.row_mut(i).scale_mut(1.0 / d as f64);
            }
        }
        out
    }

    /// `D^{-1/2} A D^{-1/2}`, the symmetric matrix similar to the
    /// row-standardized adjacency.
    pub fn symmetric_normalized(&self) -> DMatrix<f64> {
        let n = self.len();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| match self.degree(i) {
                0 => 0.0,
                d => 1.0 / (d as f64).sqrt(),
            })
            .collect();
        DMatrix::from_fn(n, n, |i, j| self.matrix[(i, j)] * inv_sqrt[i] * inv_sqrt[j])
    }
}

/// Rook adjacency: units are neighbours iff they share a boundary segment of
/// positive length. Corner contact does not count.
pub fn build_adjacency(fine: &SupportSet) -> Result<AdjacencyMatrix> {
    if !fine.is_disjoint() {
        return Err(Error::Config("adjacency needs a disjoint fine set".into()));
    }
    let n = fine.len();
    let scale = fine.bbox().map(|b| b.diagonal()).unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;
    let units = fine.units();
    let edges: Vec<Vec<(Point, Point)>> = units.iter().map(|u| u.edges().collect()).collect();

    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if !units[i].bbox().touches(&units[j].bbox(), tol) {
                continue;
            }
            let shared = edges[i]
                .iter()
                .any(|&(a, b)| edges[j].iter().any(|&(c, d)| shared_length(a, b, c, d, tol) > tol));
            if shared {
                matrix[(i, j)] = 1.0;
                matrix[(j, i)] = 1.0;
            }
        }
    }
    Ok(AdjacencyMatrix { matrix })
}

/// Length of the common part of two segments when they are collinear
/// (within `tol`), else zero.
fn shared_length(a: Point, b: Point, c: Point, d: Point, tol: f64) -> f64 {
    let len = a.dist(b);
    if len <= tol {
        return 0.0;
    }
    let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
    let off = |p: Point| ((p.x - a.x) * uy - (p.y - a.y) * ux).abs();
    if off(c) > tol || off(d) > tol {
        return 0.0;
    }
    let proj = |p: Point| (p.x - a.x) * ux + (p.y - a.y) * uy;
    let (s0, s1) = (proj(c).min(proj(d)), proj(c).max(proj(d)));
    (s1.min(len) - s0.max(0.0)).max(0.0)
}
