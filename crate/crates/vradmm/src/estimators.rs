//! The stochastic gradient constructions used by the four solvers and their
//! state: a snapshot (x~, grad f(x~)) for SVRG and a per-sample gradient
//! table with running average psi for SAG/SAGA.
//!
//! Alongside the estimators live exact enumeration oracles: the expectation
//! and variance over the index draw are computed by brute force over all n
//! components, which is what makes the variance-bound inequalities
//! checkable without sampling error.

use crate::linalg::DenseVector;
use crate::model::SmoothSum;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator kind {kind:?} does not match the provided state")]
    KindStateMismatch { kind: EstimatorKind },
    #[error("no variance bound available for the plain stochastic gradient")]
    NoVarianceBound,
    #[error("gradient table was built lean; stored points are required here")]
    PointsDropped,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Which stochastic gradient the solver uses. `Plain` is the baseline with a
/// sqrt-t stepsize schedule, `PlainFixed` the same estimator with a constant
/// stepsize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Plain,
    PlainFixed,
    Svrg,
    Sag,
    Saga,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Plain => "s-admm",
            EstimatorKind::PlainFixed => "s-admm-f",
            EstimatorKind::Svrg => "svrg-admm",
            EstimatorKind::Sag => "sag-admm",
            EstimatorKind::Saga => "saga-admm",
        }
    }

    pub fn uses_table(&self) -> bool {
        matches!(self, EstimatorKind::Sag | EstimatorKind::Saga)
    }

    pub fn uses_snapshot(&self) -> bool {
        matches!(self, EstimatorKind::Svrg)
    }
}

/// SVRG snapshot: a frozen point with its full gradient.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub x_tilde: DenseVector,
    pub grad_tilde: DenseVector,
}

/// Recomputes the snapshot at `x`; costs n component evaluations.
pub fn snapshot_refresh(x: &DenseVector, smooth: &SmoothSum) -> Snapshot {
    Snapshot {
        x_tilde: x.clone(),
        grad_tilde: smooth.full_grad(x),
    }
}

/// SAG/SAGA state: stored evaluation points z_i, their gradients
/// g_i = grad f_i(z_i), and the running average psi = (1/n) sum g_i.
/// psi is maintained incrementally and rebuilt from scratch every n updates
/// to bound floating-point drift.
#[derive(Debug, Clone)]
pub struct GradientTable {
    points: Option<Vec<DenseVector>>,
    grads: Vec<DenseVector>,
    psi: DenseVector,
    updates_since_rebuild: usize,
}

impl GradientTable {
    /// Fills every slot at `x0` (z_i = x0, g_i = grad f_i(x0)); psi then
    /// equals the full gradient at x0. `lean` drops the stored points, which
    /// disables the variance-bound diagnostics but halves the memory.
    pub fn new(x0: &DenseVector, smooth: &SmoothSum, lean: bool) -> Self {
        let n = smooth.n();
        let mut grads = Vec::with_capacity(n);
        let mut psi = DenseVector::zeros(smooth.dim());
        for i in 0..n {
            let g = smooth.component_grad(i, x0).expect("index in range");
            psi.axpy(1.0, &g);
            grads.push(g);
        }
        psi.scale(1.0 / n as f64);
        let points = if lean {
            None
        } else {
            Some(vec![x0.clone(); n])
        };
        GradientTable {
            points,
            grads,
            psi,
            updates_since_rebuild: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.grads.len()
    }

    pub fn psi(&self) -> &DenseVector {
        &self.psi
    }

    pub fn grad(&self, i: usize) -> &DenseVector {
        &self.grads[i]
    }

    pub fn points(&self) -> Option<&[DenseVector]> {
        self.points.as_deref()
    }

    pub fn is_lean(&self) -> bool {
        self.points.is_none()
    }

    /// (1/n) sum_i ||x - z_i||^2, the quantity the Lemma 2/3 bounds and the
    /// theta variables are built from.
    pub fn mean_point_dist_sq(&self, x: &DenseVector) -> Result<f64, EstimatorError> {
        let points = self.points.as_ref().ok_or(EstimatorError::PointsDropped)?;
        let total: f64 = points.iter().map(|z| x.dist_sq(z)).sum();
        Ok(total / points.len() as f64)
    }

    /// Recomputes psi as the exact mean of the stored gradients.
    pub fn recompute_psi(&mut self) {
        let n = self.n();
        let mut psi = DenseVector::zeros(self.grads[0].len());
        for g in &self.grads {
            psi.axpy(1.0, g);
        }
        psi.scale(1.0 / n as f64);
        self.psi = psi;
        self.updates_since_rebuild = 0;
    }
}

/// Replaces slot j with `new_point` and folds the gradient change into psi:
/// psi <- psi - (1/n)(g_j_old - grad f_j(new_point)).
pub fn table_update(
    table: &mut GradientTable,
    j: usize,
    new_point: &DenseVector,
    smooth: &SmoothSum,
) -> Result<(), EstimatorError> {
    let n = table.n();
    if j >= n {
        return Err(crate::model::ModelError::IndexOutOfRange { index: j, n }.into());
    }
    let g_new = smooth.component_grad(j, new_point)?;
    let scale = 1.0 / n as f64;
    {
        let g_old = &table.grads[j];
        for ((p, old), new) in table.psi.iter_mut().zip(g_old.iter()).zip(g_new.iter()) {
            *p -= scale * (old - new);
        }
    }
    table.grads[j] = g_new;
    if let Some(points) = table.points.as_mut() {
        points[j] = new_point.clone();
    }
    table.updates_since_rebuild += 1;
    if table.updates_since_rebuild >= n {
        table.recompute_psi();
    }
    Ok(())
}

/// Per-algorithm estimator state.
#[derive(Debug, Clone)]
pub enum EstimatorState {
    Plain,
    Snapshot(Snapshot),
    Table(GradientTable),
}

impl EstimatorState {
    fn check(&self, kind: EstimatorKind) -> Result<(), EstimatorError> {
        let ok = match kind {
            EstimatorKind::Plain | EstimatorKind::PlainFixed => {
                matches!(self, EstimatorState::Plain)
            }
            EstimatorKind::Svrg => matches!(self, EstimatorState::Snapshot(_)),
            EstimatorKind::Sag | EstimatorKind::Saga => matches!(self, EstimatorState::Table(_)),
        };
        if ok {
            Ok(())
        } else {
            Err(EstimatorError::KindStateMismatch { kind })
        }
    }
}

/// The stochastic gradient at `x` for component draw `i`:
///
/// * plain:  grad f_i(x)
/// * SVRG:   grad f_i(x) - grad f_i(x~) + grad f(x~)
/// * SAG:    (1/n)(grad f_i(x) - g_i) + psi
/// * SAGA:   grad f_i(x) - g_i + psi
pub fn estimate(
    kind: EstimatorKind,
    i: usize,
    x: &DenseVector,
    state: &EstimatorState,
    smooth: &SmoothSum,
) -> Result<DenseVector, EstimatorError> {
    state.check(kind)?;
    match (kind, state) {
        (EstimatorKind::Plain | EstimatorKind::PlainFixed, _) => Ok(smooth.component_grad(i, x)?),
        (EstimatorKind::Svrg, EstimatorState::Snapshot(snap)) => {
            let mut g = smooth.component_grad(i, x)?;
            let g_tilde = smooth.component_grad(i, &snap.x_tilde)?;
            g.axpy(-1.0, &g_tilde);
            g.axpy(1.0, &snap.grad_tilde);
            Ok(g)
        }
        (EstimatorKind::Sag, EstimatorState::Table(table)) => {
            let n = table.n() as f64;
            let mut g = smooth.component_grad(i, x)?;
            g.axpy(-1.0, table.grad(i));
            g.scale(1.0 / n);
            g.axpy(1.0, table.psi());
            Ok(g)
        }
        (EstimatorKind::Saga, EstimatorState::Table(table)) => {
            let mut g = smooth.component_grad(i, x)?;
            g.axpy(-1.0, table.grad(i));
            g.axpy(1.0, table.psi());
            Ok(g)
        }
        _ => unreachable!("state checked above"),
    }
}

/// Exact expectation of the estimator over the uniform draw i in 0..n-1,
/// computed by averaging all n estimates.
pub fn expectation_over_i(
    kind: EstimatorKind,
    x: &DenseVector,
    state: &EstimatorState,
    smooth: &SmoothSum,
) -> Result<DenseVector, EstimatorError> {
    state.check(kind)?;
    let n = smooth.n();
    let mut acc = DenseVector::zeros(smooth.dim());
    for i in 0..n {
        acc.axpy(1.0, &estimate(kind, i, x, state, smooth)?);
    }
    acc.scale(1.0 / n as f64);
    Ok(acc)
}

/// Exact variance E||estimate - grad f(x)||^2 over the uniform draw,
/// i.e. (1/n) sum_i ||estimate(i) - grad f(x)||^2.
pub fn exact_variance(
    kind: EstimatorKind,
    x: &DenseVector,
    state: &EstimatorState,
    smooth: &SmoothSum,
) -> Result<f64, EstimatorError> {
    state.check(kind)?;
    let n = smooth.n();
    let full = smooth.full_grad(x);
    let mut acc = 0.0f64;
    for i in 0..n {
        let est = estimate(kind, i, x, state, smooth)?;
        acc += est.dist_sq(&full);
    }
    Ok(acc / n as f64)
}

/// The variance upper bounds:
///
/// * SVRG: L^2 ||x - x~||^2
/// * SAG:  (1 - 1/n)^2 (L^2/n) sum_i ||x - z_i||^2
/// * SAGA: (L^2/n) sum_i ||x - z_i||^2
///
/// The plain estimator has no bound.
pub fn variance_bound(
    kind: EstimatorKind,
    x: &DenseVector,
    state: &EstimatorState,
    l: f64,
) -> Result<f64, EstimatorError> {
    state.check(kind)?;
    match (kind, state) {
        (EstimatorKind::Plain | EstimatorKind::PlainFixed, _) => {
            Err(EstimatorError::NoVarianceBound)
        }
        (EstimatorKind::Svrg, EstimatorState::Snapshot(snap)) => {
            Ok(l * l * x.dist_sq(&snap.x_tilde))
        }
        (EstimatorKind::Sag, EstimatorState::Table(table)) => {
            let n = table.n() as f64;
            let factor = (1.0 - 1.0 / n) * (1.0 - 1.0 / n);
            Ok(factor * l * l * table.mean_point_dist_sq(x)?)
        }
        (EstimatorKind::Saga, EstimatorState::Table(table)) => {
            Ok(l * l * table.mean_point_dist_sq(x)?)
        }
        _ => unreachable!("state checked above"),
    }
}
