//! Dense/sparse linear algebra sized for problems with a few thousand
//! variables: CSR matrices, Gram products, Cholesky solves and power-iteration
//! spectral estimates.
//!
//! Everything here is deterministic: power iterations start from a fixed
//! vector and fall back to seeded noise only when stagnation is detected, so
//! repeated calls on the same matrix give bit-identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ops::{Deref, DerefMut};
use thiserror::Error;

/// Relative tolerance used by the power iterations; chosen so the final
/// estimate is well inside the 1e-6 relative accuracy contract.
const POWER_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid sparse structure: {0}")]
    InvalidStructure(String),
    #[error("matrix is not positive definite: pivot {pivot:.6e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric: |M - M^T| reaches {max_asym:.6e}")]
    NotSymmetric { max_asym: f64 },
    #[error("sigma_A = 0: assumption 4 violated for this orientation")]
    SingularGram,
}

/// Dense vector of f64 with the handful of BLAS-1 style operations the
/// solvers need. Derefs to a slice, so indexing and iteration work directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(n: usize) -> Self {
        DenseVector {
            values: vec![0.0; n],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        DenseVector { values }
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &DenseVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// self += a * x
    pub fn axpy(&mut self, a: f64, x: &DenseVector) {
        debug_assert_eq!(self.len(), x.len());
        for (s, v) in self.values.iter_mut().zip(x.values.iter()) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in self.values.iter_mut() {
            *v *= a;
        }
    }

    /// Returns self - other as a new vector.
    pub fn minus(&self, other: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.len(), other.len());
        DenseVector::from_vec(
            self.values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        DenseVector { values }
    }
}

/// Compressed-row sparse matrix. Column indices are strictly increasing
/// within each row; `row_offsets` has `rows + 1` monotone entries and the
/// last one equals the number of stored values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        if row_offsets.len() != rows + 1 {
            return Err(LinalgError::InvalidStructure(format!(
                "row_offsets has {} entries, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != values.len() {
            return Err(LinalgError::InvalidStructure(
                "row offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(LinalgError::InvalidStructure(
                "col_indices and values length differ".into(),
            ));
        }
        for r in 0..rows {
            if row_offsets[r] > row_offsets[r + 1] {
                return Err(LinalgError::InvalidStructure(format!(
                    "row offsets not monotone at row {r}"
                )));
            }
            let idx = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            for w in idx.windows(2) {
                if w[0] >= w[1] {
                    return Err(LinalgError::InvalidStructure(format!(
                        "column indices not strictly increasing in row {r}"
                    )));
                }
            }
            if let Some(&last) = idx.last() {
                if last >= cols {
                    return Err(LinalgError::InvalidStructure(format!(
                        "column index {last} out of bounds in row {r}"
                    )));
                }
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from per-row (column, value) lists; each list must already be
    /// sorted by column with no duplicates.
    pub fn from_rows(rows_data: &[Vec<(usize, f64)>], cols: usize) -> Result<Self, LinalgError> {
        let rows = rows_data.len();
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for row in rows_data {
            for &(c, v) in row {
                indices.push(c);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        SparseMatrix::new(rows, cols, offsets, indices, values)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .zip(self.values[span].iter())
            .map(|(&c, &v)| (c, v))
    }

    /// y = A x, accumulated row-major in ascending column order.
    pub fn spmv(&self, x: &DenseVector) -> Result<DenseVector, LinalgError> {
        if self.cols != x.len() {
            return Err(LinalgError::DimensionMismatch {
                op: "spmv",
                left: self.cols,
                right: x.len(),
            });
        }
        let mut y = DenseVector::zeros(self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// y = A^T v.
    pub fn spmv_transpose(&self, v: &DenseVector) -> Result<DenseVector, LinalgError> {
        if self.rows != v.len() {
            return Err(LinalgError::DimensionMismatch {
                op: "spmv_transpose",
                left: self.rows,
                right: v.len(),
            });
        }
        let mut y = DenseVector::zeros(self.cols);
        for r in 0..self.rows {
            let vr = v[r];
            if vr == 0.0 {
                continue;
            }
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                y[self.col_indices[k]] += self.values[k] * vr;
            }
        }
        Ok(y)
    }

    /// Dense A^T A. Symmetric by construction: each off-diagonal pair is
    /// written from the same accumulated value.
    pub fn gram(&self) -> DenseMatrix {
        let d = self.cols;
        let mut m = DenseMatrix::zeros(d);
        for r in 0..self.rows {
            let span = self.row_offsets[r]..self.row_offsets[r + 1];
            let idx = &self.col_indices[span.clone()];
            let val = &self.values[span];
            for a in 0..idx.len() {
                for b in a..idx.len() {
                    let contrib = val[a] * val[b];
                    *m.at_mut(idx[a], idx[b]) += contrib;
                }
            }
        }
        // mirror the upper triangle
        for i in 0..d {
            for j in (i + 1)..d {
                let v = m.at(i, j);
                *m.at_mut(j, i) = v;
            }
        }
        m
    }

    /// Dense A A^T, entry (i, j) = <row_i, row_j>.
    pub fn gram_transpose(&self) -> DenseMatrix {
        let d = self.rows;
        let mut m = DenseMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let v = self.row_dot(i, j);
                *m.at_mut(i, j) = v;
                *m.at_mut(j, i) = v;
            }
        }
        m
    }

    fn row_dot(&self, i: usize, j: usize) -> f64 {
        let (mut a, enda) = (self.row_offsets[i], self.row_offsets[i + 1]);
        let (mut b, endb) = (self.row_offsets[j], self.row_offsets[j + 1]);
        let mut acc = 0.0;
        while a < enda && b < endb {
            let (ca, cb) = (self.col_indices[a], self.col_indices[b]);
            if ca == cb {
                acc += self.values[a] * self.values[b];
                a += 1;
                b += 1;
            } else if ca < cb {
                a += 1;
            } else {
                b += 1;
            }
        }
        acc
    }

    /// Applies x -> A^T (A x); used as the operator for spectral estimates.
    fn gram_apply(&self, x: &DenseVector) -> DenseVector {
        let ax = self.spmv(x).expect("dimension checked by caller");
        self.spmv_transpose(&ax).expect("dimension checked")
    }

    fn gram_transpose_apply(&self, x: &DenseVector) -> DenseVector {
        let atx = self.spmv_transpose(x).expect("dimension checked");
        self.spmv(&atx).expect("dimension checked")
    }
}

/// Square dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        DenseMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = DenseMatrix::zeros(dim);
        for i in 0..dim {
            *m.at_mut(i, i) = 1.0;
        }
        m
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = DenseMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                *m.at_mut(i, j) = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }

    pub fn matvec(&self, x: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.dim, x.len());
        let mut y = DenseVector::zeros(self.dim);
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            y[i] = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        }
        y
    }

    /// y = M^T x; for the symmetric matrices used here this equals matvec,
    /// but eigenvector bases need the genuine transpose product.
    pub fn matvec_transpose(&self, x: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.dim, x.len());
        let mut y = DenseVector::zeros(self.dim);
        for i in 0..self.dim {
            let xi = x[i];
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            for (yj, m) in y.iter_mut().zip(row.iter()) {
                *yj += m * xi;
            }
        }
        y
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                m = m.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// self += a * I
    pub fn add_diagonal(&mut self, a: f64) {
        for i in 0..self.dim {
            *self.at_mut(i, i) += a;
        }
    }

    /// self * a, in place.
    pub fn scale(&mut self, a: f64) {
        for v in self.data.iter_mut() {
            *v *= a;
        }
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    dim: usize,
    lower: Vec<f64>,
}

/// Cholesky factorization M = L L^T. Rejects matrices whose symmetry error
/// is visible or whose pivots fall at or below 1e-12.
pub fn factor_spd(m: &DenseMatrix) -> Result<SpdFactor, LinalgError> {
    let asym = m.max_asymmetry();
    if asym > 1e-8 * (1.0 + m.frobenius_norm()) {
        return Err(LinalgError::NotSymmetric { max_asym: asym });
    }
    let d = m.dim();
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = m.at(i, j);
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 1e-12 {
                    return Err(LinalgError::NotPositiveDefinite {
                        index: i,
                        pivot: sum,
                    });
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(SpdFactor { dim: d, lower: l })
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Reconstructs L L^T; used by the reconstruction-error invariant tests.
    pub fn reconstruct(&self) -> DenseMatrix {
        let d = self.dim;
        DenseMatrix::from_fn(d, |i, j| {
            let mut acc = 0.0;
            for k in 0..=i.min(j) {
                acc += self.lower[i * d + k] * self.lower[j * d + k];
            }
            acc
        })
    }
}

/// Solves M x = rhs given the Cholesky factor of M.
pub fn solve_spd(f: &SpdFactor, rhs: &DenseVector) -> Result<DenseVector, LinalgError> {
    if f.dim != rhs.len() {
        return Err(LinalgError::DimensionMismatch {
            op: "solve_spd",
            left: f.dim,
            right: rhs.len(),
        });
    }
    let d = f.dim;
    let l = &f.lower;
    // forward: L z = rhs
    let mut z = rhs.clone();
    for i in 0..d {
        let mut sum = z[i];
        for k in 0..i {
            sum -= l[i * d + k] * z[k];
        }
        z[i] = sum / l[i * d + i];
    }
    // backward: L^T x = z
    for i in (0..d).rev() {
        let mut sum = z[i];
        for k in (i + 1)..d {
            sum -= l[k * d + i] * z[k];
        }
        z[i] = sum / l[i * d + i];
    }
    Ok(z)
}

/// Power iteration for the largest eigenvalue of a symmetric PSD operator.
/// Starts from the normalized all-ones vector. That start can be an exact
/// non-dominant eigenvector (for graph-structured A^T A the ones vector
/// sits in the Laplacian null direction), where the iteration converges
/// with zero residual at the wrong eigenvalue; so after the first
/// convergence the iterate is perturbed once with seeded noise and the
/// iteration continues until it settles again within the same cap.
fn power_iteration(dim: usize, cap: usize, apply: impl Fn(&DenseVector) -> DenseVector) -> f64 {
    let mut x = DenseVector::from_vec(vec![1.0 / (dim as f64).sqrt(); dim]);
    let mut lambda = 0.0f64;
    let mut perturbed = false;
    for _ in 0..cap {
        let y = apply(&x);
        let new_lambda = x.dot(&y);
        let ynorm = y.norm();
        if ynorm == 0.0 {
            if perturbed {
                return 0.0;
            }
            // ones happens to span the null space; restart from noise
            perturb(&mut x);
            perturbed = true;
            continue;
        }
        let moved = (new_lambda - lambda).abs();
        lambda = new_lambda;
        x = y;
        x.scale(1.0 / ynorm);
        if moved <= POWER_TOL * (1.0 + lambda.abs()) {
            if perturbed {
                break;
            }
            perturb(&mut x);
            perturbed = true;
        }
    }
    lambda
}

fn perturb(x: &mut DenseVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    for v in x.iter_mut() {
        *v += 1e-3 * (rng.gen::<f64>() - 0.5);
    }
    let n = x.norm();
    if n > 0.0 {
        x.scale(1.0 / n);
    } else {
        *x = DenseVector::from_vec(vec![1.0 / (x.len() as f64).sqrt(); x.len()]);
    }
}

/// Largest eigenvalue of A^T A, i.e. the squared spectral norm of A.
/// Returns 0 (with a warning) for the zero matrix.
pub fn spectral_norm_sq(a: &SparseMatrix) -> f64 {
    if a.values.iter().all(|&v| v == 0.0) {
        log::warn!("spectral_norm_sq called on a zero matrix; returning 0");
        return 0.0;
    }
    let cap = 10 * a.cols().max(1);
    power_iteration(a.cols(), cap, |x| a.gram_apply(x))
}

/// Smallest eigenvalue of the Gram matrix in the better-conditioned
/// orientation: A^T A when rows >= cols, A A^T otherwise. The convergence
/// analysis defines sigma_A on A A^T under a full-row-rank assumption; for
/// tall matrices like [G; I] that Gram is singular, so the A^T A orientation
/// is substituted (and logged) to keep the parameter formulas positive.
pub fn sigma_a(a: &SparseMatrix) -> Result<f64, LinalgError> {
    let tall = a.rows() >= a.cols();
    if a.rows() > a.cols() {
        log::warn!(
            "sigma_a: A is {}x{} (tall); using lambda_min(A^T A) in place of lambda_min(A A^T)",
            a.rows(),
            a.cols()
        );
    }
    let dim = if tall { a.cols() } else { a.rows() };
    let apply: Box<dyn Fn(&DenseVector) -> DenseVector> = if tall {
        Box::new(|x| a.gram_apply(x))
    } else {
        Box::new(|x| a.gram_transpose_apply(x))
    };
    let cap = 10 * dim.max(1);
    let lambda_max = power_iteration(dim, cap, &apply);
    if lambda_max <= 0.0 {
        return Err(LinalgError::SingularGram);
    }
    // largest eigenvalue of (s I - Gram) is s - lambda_min
    let shift = lambda_max + 1.0;
    let mu = power_iteration(dim, cap, |x| {
        let gx = apply(x);
        let mut y = x.clone();
        y.scale(shift);
        y.axpy(-1.0, &gx);
        y
    });
    let lambda_min = shift - mu;
    if lambda_min <= 1e-10 * lambda_max.max(1.0) {
        return Err(LinalgError::SingularGram);
    }
    Ok(lambda_min)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: M = V diag(w) V^T
/// with V's columns the eigenvectors. Used to solve the shifted systems
/// (eta_t I + rho A^T A) x = b that the sqrt-t stepsize schedule produces.
pub fn jacobi_eigh(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    let asym = m.max_asymmetry();
    if asym > 1e-8 * (1.0 + m.frobenius_norm()) {
        return Err(LinalgError::NotSymmetric { max_asym: asym });
    }
    let d = m.dim();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(d);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a.at(i, j) * a.at(i, j);
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + a.frobenius_norm()) {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.at(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    *a.at_mut(k, p) = c * akp - s * akq;
                    *a.at_mut(k, q) = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    *a.at_mut(p, k) = c * apk - s * aqk;
                    *a.at_mut(q, k) = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let w = (0..d).map(|i| a.at(i, i)).collect();
    Ok((w, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dense_from_sparse(a: &SparseMatrix) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; a.cols()]; a.rows()];
        for r in 0..a.rows() {
            for (c, v) in a.row(r) {
                m[r][c] = v;
            }
        }
        m
    }

    fn naive_matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().zip(x.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn random_sparse(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> SparseMatrix {
        let mut data = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut row = Vec::new();
            for c in 0..cols {
                if rng.gen::<f64>() < density {
                    row.push((c, rng.gen::<f64>() * 2.0 - 1.0));
                }
            }
            data.push(row);
        }
        SparseMatrix::from_rows(&data, cols).unwrap()
    }

    /// Test-local Jacobi eigensolver, written independently of the production
    /// one so the spectral estimates have a genuine oracle.
    fn oracle_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
        let d = m.len();
        let mut a: Vec<Vec<f64>> = m.to_vec();
        for _ in 0..200 {
            let mut largest = (0usize, 1usize, 0.0f64);
            for i in 0..d {
                for j in (i + 1)..d {
                    if a[i][j].abs() > largest.2 {
                        largest = (i, j, a[i][j].abs());
                    }
                }
            }
            let (p, q, big) = largest;
            if big < 1e-14 {
                break;
            }
            let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut b = a.clone();
            for k in 0..d {
                b[k][p] = c * a[k][p] - s * a[k][q];
                b[k][q] = s * a[k][p] + c * a[k][q];
            }
            let tmp = b.clone();
            for k in 0..d {
                b[p][k] = c * tmp[p][k] - s * tmp[q][k];
                b[q][k] = s * tmp[p][k] + c * tmp[q][k];
            }
            a = b;
        }
        (0..d).map(|i| a[i][i]).collect()
    }

    #[test]
    fn spmv_identity() {
        let a = SparseMatrix::identity(3);
        let x = DenseVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(a.spmv(&x).unwrap().as_ref() as &[f64], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn spmv_zero_matrix() {
        let a = SparseMatrix::from_rows(&[vec![], vec![]], 3).unwrap();
        let x = DenseVector::from_vec(vec![4.0, 5.0, 6.0]);
        assert_eq!(a.spmv(&x).unwrap().as_ref() as &[f64], &[0.0, 0.0]);
    }

    #[test]
    fn spmv_two_by_two() {
        // [[1,2],[0,3]] * [1,1] = [3,3], checked against a hand dense multiply
        let a = SparseMatrix::from_rows(&[vec![(0, 1.0), (1, 2.0)], vec![(1, 3.0)]], 2).unwrap();
        let x = DenseVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(a.spmv(&x).unwrap().as_ref() as &[f64], &[3.0, 3.0]);
    }

    #[test]
    fn csr_structure_validation() {
        // non-monotone offsets
        assert!(matches!(
            SparseMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]),
            Err(LinalgError::InvalidStructure(_))
        ));
        // duplicate / unsorted column indices within a row
        assert!(matches!(
            SparseMatrix::new(1, 3, vec![0, 2], vec![1, 1], vec![1.0, 2.0]),
            Err(LinalgError::InvalidStructure(_))
        ));
        assert!(matches!(
            SparseMatrix::new(1, 3, vec![0, 2], vec![2, 0], vec![1.0, 2.0]),
            Err(LinalgError::InvalidStructure(_))
        ));
        // column index out of bounds
        assert!(matches!(
            SparseMatrix::new(1, 2, vec![0, 1], vec![5], vec![1.0]),
            Err(LinalgError::InvalidStructure(_))
        ));
        // offsets must end at nnz
        assert!(matches!(
            SparseMatrix::new(1, 2, vec![0, 2], vec![0], vec![1.0]),
            Err(LinalgError::InvalidStructure(_))
        ));
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let a = SparseMatrix::identity(3);
        let x = DenseVector::zeros(2);
        assert!(matches!(
            a.spmv(&x),
            Err(LinalgError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            a.spmv_transpose(&x),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spmv_transpose_identity_and_broadcast() {
        let a = SparseMatrix::identity(3);
        let x = DenseVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(
            a.spmv_transpose(&x).unwrap().as_ref() as &[f64],
            &[1.0, 2.0, 3.0]
        );
        let row = SparseMatrix::from_rows(&[vec![(0, 1.0), (1, 1.0), (2, 1.0)]], 3).unwrap();
        let v = DenseVector::from_vec(vec![2.0]);
        assert_eq!(
            row.spmv_transpose(&v).unwrap().as_ref() as &[f64],
            &[2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn spmv_transpose_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_sparse(&mut rng, 4, 3, 0.8);
        let dense = dense_from_sparse(&a);
        let v: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let got = a.spmv_transpose(&DenseVector::from_vec(v.clone())).unwrap();
        for c in 0..3 {
            let want: f64 = (0..4).map(|r| dense[r][c] * v[r]).sum();
            assert!((got[c] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn gram_cases() {
        let eye = SparseMatrix::identity(2);
        let g = eye.gram();
        assert_eq!(g, DenseMatrix::identity(2));

        // A = [[1],[2]] -> A^T A = [[5]]
        let a = SparseMatrix::from_rows(&[vec![(0, 1.0)], vec![(0, 2.0)]], 1).unwrap();
        assert_eq!(a.gram().at(0, 0), 5.0);
    }

    #[test]
    fn gram_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_sparse(&mut rng, 8, 6, 0.5);
        assert_eq!(a.gram().max_asymmetry(), 0.0);
        assert_eq!(a.gram_transpose().max_asymmetry(), 0.0);
    }

    #[test]
    fn factor_solve_diagonal() {
        let m = DenseMatrix::identity(2);
        let f = factor_spd(&m).unwrap();
        let sol = solve_spd(&f, &DenseVector::from_vec(vec![5.0, 6.0])).unwrap();
        assert_eq!(sol.as_ref() as &[f64], &[5.0, 6.0]);

        let mut m = DenseMatrix::zeros(2);
        *m.at_mut(0, 0) = 2.0;
        *m.at_mut(1, 1) = 4.0;
        let f = factor_spd(&m).unwrap();
        let sol = solve_spd(&f, &DenseVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert!((sol[0] - 1.0).abs() <= 1e-15 && (sol[1] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn factor_rejects_indefinite() {
        let mut m = DenseMatrix::identity(2);
        *m.at_mut(1, 1) = -3.0;
        match factor_spd(&m) {
            Err(LinalgError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn factor_reconstruction_error_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sparse(&mut rng, 10, 6, 0.7);
        let mut m = a.gram();
        m.add_diagonal(1.0);
        let f = factor_spd(&m).unwrap();
        let rec = f.reconstruct();
        let mut err = 0.0f64;
        for i in 0..6 {
            for j in 0..6 {
                err += (rec.at(i, j) - m.at(i, j)).powi(2);
            }
        }
        assert!(err.sqrt() <= 1e-8 * m.frobenius_norm());
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm_sq(&SparseMatrix::identity(4)) - 1.0).abs() <= 1e-9);
        let d = SparseMatrix::from_rows(&[vec![(0, 3.0)], vec![(1, 1.0)]], 2).unwrap();
        assert!((spectral_norm_sq(&d) - 9.0).abs() <= 1e-6 * 9.0);
    }

    #[test]
    fn spectral_norm_zero_matrix_flagged() {
        let z = SparseMatrix::from_rows(&[vec![], vec![]], 2).unwrap();
        assert_eq!(spectral_norm_sq(&z), 0.0);
    }

    #[test]
    fn spectral_norm_matches_dense_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_sparse(&mut rng, 10, 5, 0.8);
        let dense = dense_from_sparse(&a);
        let mut gram = vec![vec![0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                gram[i][j] = (0..10).map(|r| dense[r][i] * dense[r][j]).sum();
            }
        }
        let mut eigs = oracle_eigenvalues(&gram);
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = eigs[4];
        let got = spectral_norm_sq(&a);
        assert!(
            (got - want).abs() <= 1e-6 * want,
            "got {got}, oracle {want}"
        );
        let sig = sigma_a(&a).unwrap();
        assert!(
            (sig - eigs[0]).abs() <= 1e-6 * want.max(1.0),
            "sigma {sig}, oracle {}",
            eigs[0]
        );
    }

    #[test]
    fn sigma_a_cases() {
        assert!((sigma_a(&SparseMatrix::identity(3)).unwrap() - 1.0).abs() <= 1e-9);
        let d = SparseMatrix::from_rows(&[vec![(0, 3.0)], vec![(1, 1.0)]], 2).unwrap();
        assert!((sigma_a(&d).unwrap() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn sigma_a_stacked_graph_at_least_one() {
        // A = [G; I] with an arbitrary difference row: A^T A = G^T G + I >= I
        let mut rows = vec![vec![(0, 1.0), (2, -1.0)], vec![(1, 1.0), (3, -1.0)]];
        for i in 0..4 {
            rows.push(vec![(i, 1.0)]);
        }
        let a = SparseMatrix::from_rows(&rows, 4).unwrap();
        let s = sigma_a(&a).unwrap();
        assert!(s >= 1.0 - 1e-9, "sigma_a = {s}");
    }

    #[test]
    fn sigma_a_singular_rejected() {
        // two identical rows -> rank 1 Gram on the 2x2 orientation
        let a = SparseMatrix::from_rows(&[vec![(0, 1.0)], vec![(0, 1.0)]], 1).unwrap();
        // 2x1: rows > cols, uses A^T A = [[2]] which is fine
        assert!((sigma_a(&a).unwrap() - 2.0).abs() <= 1e-9);
        // 1x2 wide with a zero column in A A^T orientation is still fine;
        // a genuinely singular case: zero matrix
        let z = SparseMatrix::from_rows(&[vec![], vec![]], 2).unwrap();
        assert!(matches!(sigma_a(&z), Err(LinalgError::SingularGram)));
    }

    #[test]
    fn spectral_norm_graph_stack_not_fooled_by_ones_start() {
        // path graph on 3 nodes: A = [G; I] has A^T A = Laplacian + I with
        // eigenvalues {1, 2, 4}, and the all-ones start vector is exactly
        // the eigenvector of the smallest one
        let rows = vec![
            vec![(0, 1.0), (1, -1.0)],
            vec![(1, 1.0), (2, -1.0)],
            vec![(0, 1.0)],
            vec![(1, 1.0)],
            vec![(2, 1.0)],
        ];
        let a = SparseMatrix::from_rows(&rows, 3).unwrap();
        let got = spectral_norm_sq(&a);
        assert!((got - 4.0).abs() <= 1e-6 * 4.0, "got {got}");
        assert!((sigma_a(&a).unwrap() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn spectral_estimates_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_sparse(&mut rng, 12, 7, 0.6);
        let s1 = spectral_norm_sq(&a);
        let s2 = spectral_norm_sq(&a);
        assert_eq!(s1.to_bits(), s2.to_bits());
        let g1 = sigma_a(&a).unwrap();
        let g2 = sigma_a(&a).unwrap();
        assert_eq!(g1.to_bits(), g2.to_bits());
    }

    #[test]
    fn jacobi_eigh_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_sparse(&mut rng, 9, 6, 0.7);
        let mut m = a.gram();
        m.add_diagonal(0.5);
        let (w, v) = jacobi_eigh(&m).unwrap();
        // V diag(w) V^T == M
        let mut err = 0.0f64;
        for i in 0..6 {
            for j in 0..6 {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += v.at(i, k) * w[k] * v.at(j, k);
                }
                err = err.max((acc - m.at(i, j)).abs());
            }
        }
        assert!(err <= 1e-9 * (1.0 + m.frobenius_norm()));
    }

    proptest! {
        #[test]
        fn prop_spmv_matches_dense(seed in 0u64..500, rows in 1usize..50, cols in 1usize..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sparse(&mut rng, rows, cols, 0.3);
            let dense = dense_from_sparse(&a);
            let x: Vec<f64> = (0..cols).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let got = a.spmv(&DenseVector::from_vec(x.clone())).unwrap();
            let want = naive_matvec(&dense, &x);
            for r in 0..rows {
                prop_assert!((got[r] - want[r]).abs() <= 1e-12 * (1.0 + want[r].abs()));
            }

            let v: Vec<f64> = (0..rows).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let got = a.spmv_transpose(&DenseVector::from_vec(v.clone())).unwrap();
            for c in 0..cols {
                let want: f64 = (0..rows).map(|r| dense[r][c] * v[r]).sum();
                prop_assert!((got[c] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }

        #[test]
        fn prop_factor_solve_roundtrip(seed in 0u64..200, dim in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sparse(&mut rng, dim + 3, dim, 0.6);
            let mut m = a.gram();
            m.add_diagonal(1.0); // R^T R + I is SPD
            let f = factor_spd(&m).unwrap();
            let b = DenseVector::from_vec((0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
            let sol = solve_spd(&f, &b).unwrap();
            let residual = m.matvec(&sol).minus(&b).norm_inf();
            prop_assert!(residual <= 1e-8 * (1.0 + b.norm_inf()));
        }
    }
}
