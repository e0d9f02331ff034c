//! Dense real matrix kernels shared by the numeric modules.
//!
//! Everything funnels through the square-root-free LDL^T factorisation:
//! log-determinants are pivot sums and solves are two triangular sweeps.
//! The secure engine mirrors this exact recurrence so that plaintext vs
//! secure comparisons isolate fixed-point error rather than algorithmic
//! differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative symmetry tolerance for operations that require symmetric input.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric: max|A - A^T| = {asym:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { asym: f64, tol: f64 },
    #[error("matrix is not positive semi-definite: pivot {pivot:.6e} at index {index}")]
    NotPsd { pivot: f64, index: usize },
    #[error("zero or negative pivot {pivot:.6e} at index {index} in log-determinant")]
    ZeroPivot { pivot: f64, index: usize },
    #[error("matrix is singular at pivot index {index}")]
    Singular { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in add");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in sub");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch in matmul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch in matvec");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Extract the square sub-block with row and column indices in `idx`.
    pub fn sub_block(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    /// Copy `block` into `self` with its (0,0) entry at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn symmetry_gap(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                gap = gap.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        gap
    }

    fn check_symmetric(&self) -> Result<(), LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let tol = SYMMETRY_TOL * self.max_abs().max(1e-300);
        let gap = self.symmetry_gap();
        if gap > tol {
            return Err(LinalgError::NotSymmetric { asym: gap, tol });
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit lower-triangular factor and pivot vector of A = L D L^T.
#[derive(Debug, Clone)]
pub struct LdlFactors {
    pub l: Matrix,
    pub d: Vec<f64>,
}

impl LdlFactors {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Reassemble L D L^T.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            (0..=i.min(j)).map(|k| self.l[(i, k)] * self.d[k] * self.l[(j, k)]).sum()
        })
    }

    /// Solve L D L^T x = b by forward substitution, pivot division and
    /// back substitution.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs length {} does not match dimension {}",
                b.len(),
                n
            )));
        }
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[(i, k)] * x[k];
            }
        }
        for i in 0..n {
            if self.d[i] <= 0.0 {
                return Err(LinalgError::Singular { index: i });
            }
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[(k, i)] * x[k];
            }
        }
        Ok(x)
    }
}

/// Default pivot tolerance: `1e-10 * max|A|`, which separates PSD
/// rank-deficiency from roundoff at double precision.
pub fn default_pivot_tol(a: &Matrix) -> f64 {
    1e-10 * a.max_abs().max(1.0)
}

/// Square-root-free LDL^T of a symmetric matrix.
///
/// No pivoting is performed; callers are expected to pass regularised PSD
/// inputs (a prior precision is always added upstream). A pivot below
/// `-pivot_tol` rejects the matrix as not PSD.
pub fn ldl_decompose(a: &Matrix, pivot_tol: f64) -> Result<LdlFactors, LinalgError> {
    a.check_symmetric()?;
    let n = a.rows();
    let mut work = a.clone();
    let mut l = Matrix::identity(n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let pivot = work[(j, j)];
        if pivot < -pivot_tol {
            return Err(LinalgError::NotPsd { pivot, index: j });
        }
        d[j] = pivot;
        if pivot.abs() <= pivot_tol {
            // Rank-deficient column: a genuinely PSD input must have a zero
            // row/column of the Schur complement here.
            for i in (j + 1)..n {
                if work[(i, j)].abs() > pivot_tol.max(1e-12) {
                    return Err(LinalgError::NotPsd { pivot, index: j });
                }
                l[(i, j)] = 0.0;
            }
            continue;
        }
        let inv = 1.0 / pivot;
        for i in (j + 1)..n {
            l[(i, j)] = work[(i, j)] * inv;
        }
        for i in (j + 1)..n {
            let lij = l[(i, j)];
            if lij == 0.0 {
                continue;
            }
            for k in (j + 1)..=i {
                let delta = lij * work[(k, j)];
                work[(i, k)] -= delta;
                if i != k {
                    work[(k, i)] -= delta;
                }
            }
        }
    }
    Ok(LdlFactors { l, d })
}

/// log det A for symmetric positive definite A, via the LDL pivot sum.
pub fn log_det_psd(a: &Matrix) -> Result<f64, LinalgError> {
    let factors = ldl_decompose(a, default_pivot_tol(a))?;
    let mut acc = 0.0;
    for (i, &pivot) in factors.d.iter().enumerate() {
        if pivot <= 0.0 {
            return Err(LinalgError::ZeroPivot { pivot, index: i });
        }
        acc += pivot.ln();
    }
    Ok(acc)
}

/// Solve A X = B for symmetric positive definite A.
pub fn solve_psd(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows() != b.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "lhs is {}x{} but rhs has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let factors = ldl_decompose(a, default_pivot_tol(a))?;
    let mut out = Matrix::zeros(b.rows(), b.cols());
    let mut col = vec![0.0; b.rows()];
    for j in 0..b.cols() {
        for i in 0..b.rows() {
            col[i] = b[(i, j)];
        }
        let x = factors.solve_vec(&col)?;
        for i in 0..b.rows() {
            out[(i, j)] = x[i];
        }
    }
    Ok(out)
}

pub fn solve_psd_vec(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let factors = ldl_decompose(a, default_pivot_tol(a))?;
    factors.solve_vec(b)
}

/// Phi^T Phi, exactly symmetric by construction.
pub fn gram(phi: &Matrix) -> Matrix {
    let p = phi.cols();
    let mut g = Matrix::zeros(p, p);
    for r in 0..phi.rows() {
        let row = phi.row(r);
        for i in 0..p {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..p {
                g[(i, j)] += ri * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn small_matrix(n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0f64..3.0, n * n)
            .prop_map(move |data| Matrix::from_fn(n, n, |i, j| data[i * n + j]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gram_is_psd(rows in 1usize..12, cols in 1usize..6, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let phi = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-5.0..5.0));
            let g = gram(&phi);
            let f = ldl_decompose(&g, default_pivot_tol(&g)).unwrap();
            let floor = -1e-9 * g.max_abs().max(1.0);
            prop_assert!(f.d.iter().all(|&d| d >= floor), "pivots {:?}", f.d);
        }

        #[test]
        fn ldl_reconstruction_idempotent(b in small_matrix(4)) {
            let a = gram(&b).add(&Matrix::identity(4));
            let f = ldl_decompose(&a, default_pivot_tol(&a)).unwrap();
            let err = f.reconstruct().sub(&a).frobenius_norm();
            prop_assert!(err <= 1e-9 * a.frobenius_norm().max(1.0));
        }

        #[test]
        fn log_det_scaling_property(b in small_matrix(3), c in 0.1f64..10.0) {
            let a = gram(&b).add(&Matrix::identity(3));
            let lhs = log_det_psd(&a.scale(c)).unwrap();
            let rhs = 3.0 * c.ln() + log_det_psd(&a).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
    }
}
