//! The composite problem: a smooth finite sum of sigmoid losses with an
//! optional ridge term, an L1 regularizer with its proximal map and
//! subdifferential distance, and the linear constraint A x + B y = c.
//!
//! The sigmoid loss of a labelled sample (a, b) is 1 / (1 + exp(b a^T x)),
//! which is smooth but nonconvex; its curvature is bounded by
//! max |sigma''| = 1/(6 sqrt(3)), which gives a closed-form Lipschitz
//! constant for the component gradients.

use crate::linalg::{DenseVector, SparseMatrix};
use thiserror::Error;

/// max_z |sigma''(z)| for sigma(z) = 1/(1+e^z), attained at p = (3±sqrt(3))/6.
pub const SIGMOID_CURVATURE_MAX: f64 = 0.09622504486493764; // = sqrt(3)/18

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sample index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("negative threshold {0} passed to soft_threshold")]
    NegativeThreshold(f64),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("no closed-form y-step for this (B, c, g) combination")]
    NoClosedFormYStep,
}

/// One labelled training sample with sparse features. Indices are strictly
/// increasing and the label is -1 or +1.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    indices: Vec<usize>,
    values: Vec<f64>,
    label: f64,
}

impl Sample {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, label: f64) -> Result<Self, ModelError> {
        if label != -1.0 && label != 1.0 {
            return Err(ModelError::InvalidSample(format!(
                "label must be -1 or +1, got {label}"
            )));
        }
        if indices.len() != values.len() {
            return Err(ModelError::InvalidSample(
                "index and value lists differ in length".into(),
            ));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(ModelError::InvalidSample(
                    "feature indices must be strictly increasing".into(),
                ));
            }
        }
        Ok(Sample {
            indices,
            values,
            label,
        })
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn features(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(self.values.iter())
            .map(|(&i, &v)| (i, v))
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn feature_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    fn dot(&self, x: &DenseVector) -> f64 {
        self.indices
            .iter()
            .zip(self.values.iter())
            .map(|(&i, &v)| v * x[i])
            .sum()
    }
}

/// sigma(z) = 1/(1 + e^z), evaluated so exp only ever sees a non-positive
/// argument; |z| in the hundreds is routine on real data.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// The smooth part f(x) = (1/n) sum_i sigma(b_i a_i^T x) + (lambda2/2)||x||^2.
/// The ridge share is folded into every component so all gradient estimators
/// see the same component functions.
#[derive(Debug, Clone)]
pub struct SmoothSum {
    samples: Vec<Sample>,
    ridge_weight: f64,
    dimension: usize,
}

impl SmoothSum {
    pub fn new(
        samples: Vec<Sample>,
        ridge_weight: f64,
        dimension: usize,
    ) -> Result<Self, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::InvalidSample("need at least one sample".into()));
        }
        if !(ridge_weight >= 0.0 && ridge_weight.is_finite()) {
            return Err(ModelError::InvalidSample(format!(
                "ridge weight must be finite and >= 0, got {ridge_weight}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if let Some(&last) = s.indices.last() {
                if last >= dimension {
                    return Err(ModelError::InvalidSample(format!(
                        "sample {i} has feature index {last} >= dimension {dimension}"
                    )));
                }
            }
        }
        Ok(SmoothSum {
            samples,
            ridge_weight,
            dimension,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.dimension
    }

    pub fn ridge_weight(&self) -> f64 {
        self.ridge_weight
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// f_i(x) = sigma(b_i a_i^T x) + (lambda2/2)||x||^2.
    pub fn component_value(&self, i: usize, x: &DenseVector) -> Result<f64, ModelError> {
        let s = self.samples.get(i).ok_or(ModelError::IndexOutOfRange {
            index: i,
            n: self.n(),
        })?;
        let z = s.label * s.dot(x);
        Ok(sigmoid(z) + 0.5 * self.ridge_weight * x.norm_sq())
    }

    /// grad f_i(x) = sigma'(z) b_i a_i + lambda2 x with z = b_i a_i^T x and
    /// sigma'(z) = -sigma(z)(1 - sigma(z)).
    pub fn component_grad(&self, i: usize, x: &DenseVector) -> Result<DenseVector, ModelError> {
        let mut g = DenseVector::zeros(self.dimension);
        self.component_grad_into(i, x, &mut g)?;
        Ok(g)
    }

    /// Accumulator-free variant for the hot loop: overwrites `out`.
    pub fn component_grad_into(
        &self,
        i: usize,
        x: &DenseVector,
        out: &mut DenseVector,
    ) -> Result<(), ModelError> {
        let s = self.samples.get(i).ok_or(ModelError::IndexOutOfRange {
            index: i,
            n: self.n(),
        })?;
        let z = s.label * s.dot(x);
        let p = sigmoid(z);
        let coeff = -p * (1.0 - p) * s.label;
        if self.ridge_weight == 0.0 {
            for v in out.iter_mut() {
                *v = 0.0;
            }
        } else {
            for (o, xv) in out.iter_mut().zip(x.iter()) {
                *o = self.ridge_weight * xv;
            }
        }
        for (idx, val) in s.features() {
            out[idx] += coeff * val;
        }
        Ok(())
    }

    /// (1/n) sum_i grad f_i(x), accumulated in index order i = 0..n-1.
    pub fn full_grad(&self, x: &DenseVector) -> DenseVector {
        let mut acc = DenseVector::zeros(self.dimension);
        let mut g = DenseVector::zeros(self.dimension);
        for i in 0..self.n() {
            self.component_grad_into(i, x, &mut g)
                .expect("index in range");
            acc.axpy(1.0, &g);
        }
        acc.scale(1.0 / self.n() as f64);
        acc
    }

    /// Mean sigmoid loss over a sample set; the "test loss" axis of the
    /// benchmark plots (no ridge share).
    pub fn mean_loss(samples: &[Sample], x: &DenseVector) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples.iter().map(|s| sigmoid(s.label * s.dot(x))).sum();
        total / samples.len() as f64
    }

    /// f(x) = mean sigmoid loss + ridge.
    pub fn value(&self, x: &DenseVector) -> f64 {
        SmoothSum::mean_loss(&self.samples, x) + 0.5 * self.ridge_weight * x.norm_sq()
    }

    /// L = max_i ||a_i||^2 * max|sigma''| + lambda2; a true upper bound on
    /// every component-gradient Lipschitz constant.
    pub fn lipschitz_bound(&self) -> f64 {
        let max_feat = self
            .samples
            .iter()
            .map(Sample::feature_norm_sq)
            .fold(0.0f64, f64::max);
        max_feat * SIGMOID_CURVATURE_MAX + self.ridge_weight
    }
}

/// g(y) = lambda1 ||y||_1.
#[derive(Debug, Clone, Copy)]
pub struct Regularizer {
    l1_weight: f64,
}

impl Regularizer {
    pub fn new(l1_weight: f64) -> Result<Self, ModelError> {
        if !(l1_weight >= 0.0 && l1_weight.is_finite()) {
            return Err(ModelError::InvalidSample(format!(
                "l1 weight must be finite and >= 0, got {l1_weight}"
            )));
        }
        Ok(Regularizer { l1_weight })
    }

    pub fn l1_weight(&self) -> f64 {
        self.l1_weight
    }

    pub fn value(&self, y: &DenseVector) -> f64 {
        self.l1_weight * y.norm_l1()
    }
}

/// Coordinate-wise sign(v) * max(|v| - tau, 0).
pub fn soft_threshold(v: &DenseVector, tau: f64) -> Result<DenseVector, ModelError> {
    if tau < 0.0 {
        return Err(ModelError::NegativeThreshold(tau));
    }
    Ok(DenseVector::from_vec(
        v.iter()
            .map(|&x| {
                if x > tau {
                    x - tau
                } else if x < -tau {
                    x + tau
                } else {
                    0.0
                }
            })
            .collect(),
    ))
}

/// Euclidean distance from u to the subdifferential of lambda1 ||.||_1 at y:
/// per coordinate |u_j - lambda1 sign(y_j)| where y_j != 0, and
/// max(|u_j| - lambda1, 0) on the dead zone.
pub fn l1_subdiff_dist(u: &DenseVector, y: &DenseVector, lambda1: f64) -> f64 {
    debug_assert_eq!(u.len(), y.len());
    let mut acc = 0.0f64;
    for (&uj, &yj) in u.iter().zip(y.iter()) {
        let d = if yj != 0.0 {
            uj - lambda1 * yj.signum()
        } else {
            (uj.abs() - lambda1).max(0.0)
        };
        acc += d * d;
    }
    acc.sqrt()
}

/// The B block of the constraint A x + B y = c. The built-in solvers only
/// support B = -I; a general sparse B is carried for diagnostics and the
/// user-supplied y-step hook.
#[derive(Debug, Clone)]
pub enum BMatrix {
    NegIdentity,
    General(SparseMatrix),
}

impl BMatrix {
    pub fn apply(&self, y: &DenseVector) -> DenseVector {
        match self {
            BMatrix::NegIdentity => {
                let mut out = y.clone();
                out.scale(-1.0);
                out
            }
            BMatrix::General(b) => b.spmv(y).expect("dimension checked at construction"),
        }
    }

    pub fn apply_transpose(&self, v: &DenseVector) -> DenseVector {
        match self {
            BMatrix::NegIdentity => {
                let mut out = v.clone();
                out.scale(-1.0);
                out
            }
            BMatrix::General(b) => b.spmv_transpose(v).expect("dimension checked"),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            BMatrix::NegIdentity => 1.0,
            BMatrix::General(b) => crate::linalg::spectral_norm_sq(b),
        }
    }

    pub fn is_neg_identity(&self) -> bool {
        matches!(self, BMatrix::NegIdentity)
    }
}

/// Constraint A x + B y = c with rows(A) = rows(B) = len(c).
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub a: SparseMatrix,
    pub b: BMatrix,
    pub c: DenseVector,
}

impl ConstraintSpec {
    pub fn new(a: SparseMatrix, b: BMatrix, c: DenseVector) -> Result<Self, ModelError> {
        if let BMatrix::General(bm) = &b {
            if bm.rows() != a.rows() {
                return Err(ModelError::InvalidSample(format!(
                    "B has {} rows, A has {}",
                    bm.rows(),
                    a.rows()
                )));
            }
        }
        if c.len() != a.rows() {
            return Err(ModelError::InvalidSample(format!(
                "c has length {}, A has {} rows",
                c.len(),
                a.rows()
            )));
        }
        Ok(ConstraintSpec { a, b, c })
    }

    /// A x - y = 0, the shape of the graph-guided experiments.
    pub fn graph_guided(a: SparseMatrix) -> Self {
        let rows = a.rows();
        ConstraintSpec {
            a,
            b: BMatrix::NegIdentity,
            c: DenseVector::zeros(rows),
        }
    }

    /// Primal residual A x + B y - c.
    pub fn residual(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
        let mut r = self.a.spmv(x).expect("dimension checked");
        r.axpy(1.0, &self.b.apply(y));
        r.axpy(-1.0, &self.c);
        r
    }

    /// True when the built-in closed-form y-step applies (B = -I, c = 0).
    pub fn supports_closed_form_y(&self) -> bool {
        self.b.is_neg_identity() && self.c.iter().all(|&v| v == 0.0)
    }
}

/// The full composite problem plus its Lipschitz constant.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub smooth: SmoothSum,
    pub reg: Regularizer,
    pub constraint: ConstraintSpec,
    lipschitz: f64,
}

impl ProblemSpec {
    pub fn new(
        smooth: SmoothSum,
        reg: Regularizer,
        constraint: ConstraintSpec,
    ) -> Result<Self, ModelError> {
        if constraint.a.cols() != smooth.dim() {
            return Err(ModelError::InvalidSample(format!(
                "A has {} columns, problem dimension is {}",
                constraint.a.cols(),
                smooth.dim()
            )));
        }
        let lipschitz = smooth.lipschitz_bound();
        Ok(ProblemSpec {
            smooth,
            reg,
            constraint,
            lipschitz,
        })
    }

    /// Overrides the computed Lipschitz constant; must still be an upper
    /// bound for the lemma checks to be meaningful.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = l;
        self
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn n(&self) -> usize {
        self.smooth.n()
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    /// Composite objective (1/n) sum f_i(x) + lambda1 ||A x||_1
    /// + (lambda2/2)||x||^2, evaluated at x alone.
    pub fn objective(&self, x: &DenseVector) -> f64 {
        let ax = self.constraint.a.spmv(x).expect("dimension checked");
        self.smooth.value(x) + self.reg.l1_weight() * ax.norm_l1()
    }

    /// Augmented Lagrangian
    /// f(x) + g(y) - <lambda, Ax + By - c> + (rho/2)||Ax + By - c||^2.
    pub fn augmented_lagrangian(
        &self,
        x: &DenseVector,
        y: &DenseVector,
        lambda: &DenseVector,
        rho: f64,
    ) -> f64 {
        let r = self.constraint.residual(x, y);
        self.smooth.value(x) + self.reg.value(y) - lambda.dot(&r) + 0.5 * rho * r.norm_sq()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_sum(rng: &mut ChaCha8Rng, n: usize, d: usize, ridge: f64) -> SmoothSum {
        let samples = (0..n)
            .map(|_| {
                let idx: Vec<usize> = (0..d).collect();
                let vals: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let label = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                Sample::new(idx, vals, label).unwrap()
            })
            .collect();
        SmoothSum::new(samples, ridge, d).unwrap()
    }

    #[test]
    fn component_at_origin() {
        let s = Sample::new(vec![0, 2], vec![1.0, -2.0], -1.0).unwrap();
        let sum = SmoothSum::new(vec![s], 0.0, 3).unwrap();
        let x = DenseVector::zeros(3);
        assert_eq!(sum.component_value(0, &x).unwrap(), 0.5);
        // grad = sigma'(0) * b * a = -0.25 * (-1) * a
        let g = sum.component_grad(0, &x).unwrap();
        assert_eq!(g.as_ref() as &[f64], &[0.25, 0.0, -0.5]);
    }

    #[test]
    fn component_saturates() {
        let s = Sample::new(vec![0], vec![1.0], 1.0).unwrap();
        let sum = SmoothSum::new(vec![s], 0.0, 1).unwrap();
        // still finite (no overflow) deep into the tail, vanishing in the limit
        let x = DenseVector::from_vec(vec![700.0]);
        assert!(sum.component_value(0, &x).unwrap() <= 1e-300);
        assert!(sum.component_grad(0, &x).unwrap()[0].abs() <= 1e-300);
        let x = DenseVector::from_vec(vec![800.0]);
        assert_eq!(sum.component_value(0, &x).unwrap(), 0.0);
        assert_eq!(sum.component_grad(0, &x).unwrap()[0], 0.0);
        let xm = DenseVector::from_vec(vec![-700.0]);
        assert!((sum.component_value(0, &xm).unwrap() - 1.0).abs() < 1e-300);
        assert!(sum.component_grad(0, &xm).unwrap()[0].abs() < 1e-300);
    }

    #[test]
    fn component_index_out_of_range() {
        let s = Sample::new(vec![0], vec![1.0], 1.0).unwrap();
        let sum = SmoothSum::new(vec![s], 0.0, 1).unwrap();
        assert!(matches!(
            sum.component_value(3, &DenseVector::zeros(1)),
            Err(ModelError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sum = toy_sum(&mut rng, 8, 5, 0.3);
        let h = 1e-5;
        for trial in 0..100 {
            let i = trial % sum.n();
            let x = DenseVector::from_vec((0..5).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect());
            let g = sum.component_grad(i, &x).unwrap();
            for j in 0..5 {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let fd = (sum.component_value(i, &xp).unwrap()
                    - sum.component_value(i, &xm).unwrap())
                    / (2.0 * h);
                assert!(
                    (g[j] - fd).abs() <= 1e-6,
                    "component {i} coord {j}: grad {} vs fd {}",
                    g[j],
                    fd
                );
            }
        }
    }

    #[test]
    fn full_grad_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sum = toy_sum(&mut rng, 3, 4, 0.1);
        let x = DenseVector::from_vec(vec![0.3, -0.7, 1.1, 0.0]);
        let g = sum.full_grad(&x);
        let mut manual = DenseVector::zeros(4);
        for i in 0..3 {
            manual.axpy(1.0, &sum.component_grad(i, &x).unwrap());
        }
        manual.scale(1.0 / 3.0);
        for j in 0..4 {
            assert!((g[j] - manual[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_grad_single_and_identical_samples() {
        let s = Sample::new(vec![0, 1], vec![1.0, 2.0], 1.0).unwrap();
        let sum1 = SmoothSum::new(vec![s.clone()], 0.2, 2).unwrap();
        let x = DenseVector::from_vec(vec![0.5, -0.5]);
        let g1 = sum1.full_grad(&x);
        let c1 = sum1.component_grad(0, &x).unwrap();
        assert_eq!(g1, c1);

        let sum3 = SmoothSum::new(vec![s.clone(), s.clone(), s], 0.2, 2).unwrap();
        let g3 = sum3.full_grad(&x);
        for j in 0..2 {
            assert!((g3[j] - c1[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn soft_threshold_cases() {
        let v = DenseVector::from_vec(vec![3.0, -1.0, 0.5]);
        let out = soft_threshold(&v, 1.0).unwrap();
        assert_eq!(out.as_ref() as &[f64], &[2.0, 0.0, 0.0]);
        let same = soft_threshold(&v, 0.0).unwrap();
        assert_eq!(same, v);
        let dead = soft_threshold(&DenseVector::from_vec(vec![-0.2]), 0.5).unwrap();
        assert_eq!(dead.as_ref() as &[f64], &[0.0]);
        assert!(matches!(
            soft_threshold(&v, -0.1),
            Err(ModelError::NegativeThreshold(_))
        ));
    }

    #[test]
    fn l1_subdiff_dist_cases() {
        let lam = 0.7;
        // y = 0 everywhere, |u|_inf <= lambda -> 0
        let y = DenseVector::zeros(3);
        let u = DenseVector::from_vec(vec![0.5, -0.7, 0.0]);
        assert_eq!(l1_subdiff_dist(&u, &y, lam), 0.0);
        // y > 0 with u = lambda * 1 -> exact subgradient
        let y = DenseVector::from_vec(vec![1.0, 2.0]);
        let u = DenseVector::from_vec(vec![lam, lam]);
        assert_eq!(l1_subdiff_dist(&u, &y, lam), 0.0);
        // y = [1, 0], u = [2 lam, 2 lam] -> sqrt(lam^2 + lam^2)
        let y = DenseVector::from_vec(vec![1.0, 0.0]);
        let u = DenseVector::from_vec(vec![2.0 * lam, 2.0 * lam]);
        let want = (2.0 * lam * lam).sqrt();
        assert!((l1_subdiff_dist(&u, &y, lam) - want).abs() <= 1e-15);
    }

    #[test]
    fn lipschitz_bound_constant() {
        // numerically maximize |sigma''(z)| on a grid as the oracle
        let sigma = |z: f64| 1.0 / (1.0 + z.exp());
        let mut smax = 0.0f64;
        let mut z = -10.0;
        while z <= 10.0 {
            let p = sigma(z);
            smax = smax.max((p * (1.0 - p) * (1.0 - 2.0 * p)).abs());
            z += 1e-4;
        }
        assert!((SIGMOID_CURVATURE_MAX - smax).abs() <= 1e-8);

        let s = Sample::new(vec![0], vec![1.0], 1.0).unwrap();
        let sum = SmoothSum::new(vec![s], 0.0, 1).unwrap();
        assert!((sum.lipschitz_bound() - SIGMOID_CURVATURE_MAX).abs() <= 1e-12);

        let zero_feat = Sample::new(vec![], vec![], 1.0).unwrap();
        let ridge_only = SmoothSum::new(vec![zero_feat], 1.0, 2).unwrap();
        assert_eq!(ridge_only.lipschitz_bound(), 1.0);
    }

    #[test]
    fn lipschitz_dominates_gradient_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sum = toy_sum(&mut rng, 12, 6, 0.05);
        let l = sum.lipschitz_bound();
        for _ in 0..1000 {
            let i = rng.gen_range(0..sum.n());
            let x1 = DenseVector::from_vec((0..6).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect());
            let x2 = DenseVector::from_vec((0..6).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect());
            let g1 = sum.component_grad(i, &x1).unwrap();
            let g2 = sum.component_grad(i, &x2).unwrap();
            let num = g1.minus(&g2).norm();
            let den = x1.minus(&x2).norm();
            if den > 1e-12 {
                assert!(
                    num / den <= l * (1.0 + 1e-9),
                    "ratio {} > L {}",
                    num / den,
                    l
                );
            }
        }
    }

    #[test]
    fn lipschitz_dominates_on_sparse_binary_data() {
        // same random-pair oracle on one-hot data in the adult-dataset shape
        let ds = crate::io::synth_a9a_like(200, 31);
        let sum = SmoothSum::new(ds.samples.clone(), 1.2e-4, ds.dimension).unwrap();
        let l = sum.lipschitz_bound();
        let d = ds.dimension;
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..1000 {
            let i = rng.gen_range(0..sum.n());
            let x1 = DenseVector::from_vec((0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
            let x2 = DenseVector::from_vec((0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
            let num = sum
                .component_grad(i, &x1)
                .unwrap()
                .minus(&sum.component_grad(i, &x2).unwrap())
                .norm();
            let den = x1.minus(&x2).norm();
            assert!(
                num / den <= l * (1.0 + 1e-9),
                "ratio {} > L {}",
                num / den,
                l
            );
        }
    }

    #[test]
    fn objective_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sum = toy_sum(&mut rng, 4, 3, 0.2);
        let a = SparseMatrix::identity(3);
        let problem = ProblemSpec::new(
            sum.clone(),
            Regularizer::new(0.4).unwrap(),
            ConstraintSpec::graph_guided(a.clone()),
        )
        .unwrap();
        // x = 0 -> mean sigmoid at zero = 0.5, no L1, no ridge
        assert!((problem.objective(&DenseVector::zeros(3)) - 0.5).abs() <= 1e-15);

        // term-wise recomputation at a random point
        let x = DenseVector::from_vec(vec![0.7, -0.3, 0.4]);
        let ax = a.spmv(&x).unwrap();
        let want = sum.value(&x) + 0.4 * ax.norm_l1();
        assert!((problem.objective(&x) - want).abs() <= 1e-12);

        // lambda1 = lambda2 = 0 -> pure mean sigmoid loss
        let pure = ProblemSpec::new(
            SmoothSum::new(sum.samples().to_vec(), 0.0, 3).unwrap(),
            Regularizer::new(0.0).unwrap(),
            ConstraintSpec::graph_guided(a),
        )
        .unwrap();
        let want_pure = SmoothSum::mean_loss(sum.samples(), &x);
        assert!((pure.objective(&x) - want_pure).abs() <= 1e-15);
    }

    proptest! {
        /// 0 in d(tau||.||_1)(p) + (p - v) for p = soft_threshold(v, tau),
        /// checked through the subdifferential distance.
        #[test]
        fn prop_prox_optimality(seed in 0u64..300, tau in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = DenseVector::from_vec((0..6).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect());
            let p = soft_threshold(&v, tau).unwrap();
            let residual = l1_subdiff_dist(&v.minus(&p), &p, tau);
            prop_assert!(residual <= 1e-12);
        }
    }
}
