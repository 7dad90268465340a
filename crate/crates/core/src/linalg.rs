//! Small dense kernels used by the delegate solve: a row-major matrix,
//! a cyclic Jacobi eigensolver for symmetric matrices and Gram-Schmidt
//! completion of an orthonormal basis.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(alloc::format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (c, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    for (o, &b) in orow.iter_mut().zip(other.row(c)) {
                        *o += a * b;
                    }
                }
            }
        }
        out
    }

    /// `self * self^T`.
    pub fn gram(&self) -> DenseMatrix {
        let mut out = Self::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let v = dot(self.row(i), self.row(j));
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }
}

impl core::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector for `values[j]`.
    pub vectors: DenseMatrix,
    pub sweeps: usize,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until every off-diagonal entry is below
/// `1e-12 * ||A||_F`.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(alloc::format!("eigen of a {}x{} matrix", n, a.cols())));
    }
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let threshold = 1e-12 * a.frobenius();
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS {
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                max_off = max_off.max(libm::fabs(m[(p, q)]));
            }
        }
        if max_off <= threshold {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (m[(r, p)], m[(r, q)]);
                    m[(r, p)] = c * arp - s * arq;
                    m[(r, q)] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (m[(p, r)], m[(q, r)]);
                    m[(p, r)] = c * apr - s * aqr;
                    m[(q, r)] = s * apr + c * aqr;
                }
                for r in 0..n {
                    let (vrp, vrq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors, sweeps })
}

/// Vectors whose norm drops below this after projection are rejected.
pub const GS_REJECT_NORM: f64 = 1e-8;
const GS_MAX_DRAWS: usize = 1000;

/// Removes the components along every vector of `basis` from `v`, twice.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
}

/// Orthonormalizes `candidate` against `basis` (assumed orthonormal).
/// Returns `None` when the remainder is numerically zero.
pub fn orthonormalize_against(candidate: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut v = candidate.to_vec();
    let before = norm(&v);
    if before == 0.0 {
        return None;
    }
    for x in v.iter_mut() {
        *x /= before;
    }
    project_out(&mut v, basis);
    let nv = norm(&v);
    if nv < GS_REJECT_NORM {
        return None;
    }
    for x in v.iter_mut() {
        *x /= nv;
    }
    Some(v)
}

/// Draws `count` random unit vectors of length `dim`, each orthogonal to
/// `basis` and to the previously drawn ones.
pub fn complete_orthonormal<R: Rng + ?Sized>(
    basis: &[Vec<f64>],
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if basis.len() + count > dim {
        return Err(Error::Dimension(alloc::format!(
            "cannot fit {} orthonormal vectors in dimension {dim}",
            basis.len() + count
        )));
    }
    let mut all: Vec<Vec<f64>> = basis.to_vec();
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count {
        draws += 1;
        if draws > GS_MAX_DRAWS {
            return Err(Error::Dimension("Gram-Schmidt failed to find a fresh direction".into()));
        }
        let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(u) = orthonormalize_against(&cand, &all) {
            all.push(u.clone());
            out.push(u);
        }
    }
    Ok(out)
}
