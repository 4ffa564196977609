//! The ADMM machinery: proximal y-step, exact and linearized x-updates,
//! multiplier ascent, and the solver loops for the plain and
//! variance-reduced stochastic variants.
//!
//! Every run enforces two cheap identities each iteration (the y-step
//! optimality residual and the dual identity
//! A^T lambda_{t+1} = v_t - eta_t Q (x_t - x_{t+1})) and, with diagnostics
//! enabled, records the full theory trace: stationarity residuals, theta,
//! realized deviation of the gradient estimate, and the Lyapunov value.

use crate::analysis::{
    self, lyapunov_lower_bound, AnalysisError, LyapunovWindow, TheoryParams, ThetaParts, VrKind,
};
use crate::estimators::{
    estimate, snapshot_refresh, table_update, EstimatorError, EstimatorKind, EstimatorState,
    GradientTable,
};
use crate::linalg::{
    factor_spd, jacobi_eigh, sigma_a, solve_spd, spectral_norm_sq, DenseMatrix, DenseVector,
    LinalgError, SpdFactor,
};
use crate::model::{l1_subdiff_dist, soft_threshold, ModelError, ProblemSpec, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("non-finite iterate at iteration {t}; last good state is in the partial trace")]
    NonFinite { t: usize, trace: Box<RunTrace> },
    #[error("rho floor fixed point did not converge in {} steps", history.len())]
    FloorNoConvergence { history: Vec<f64> },
}

/// Which Q the approximated x-subproblem uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QMode {
    /// Q = I; the x-step solves (eta I + rho A^T A) x = rhs exactly.
    Identity,
    /// Q = I - (rho/eta) A^T A; the x-step is one explicit formula.
    UzawaLinearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsizeSchedule {
    Constant,
    /// eta_t = eta_0 sqrt(t), t starting at 1 on the first iteration.
    SqrtT,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: EstimatorKind,
    pub rho: f64,
    pub eta: f64,
    pub q_mode: QMode,
    /// SVRG epoch length; defaults to n when absent.
    pub epoch_length: Option<usize>,
    pub total_iterations: usize,
    pub seed: u64,
    pub schedule: StepsizeSchedule,
    /// Cauchy-Schwarz knob of the decrease lemmas; only used by diagnostics.
    pub beta: f64,
    /// SAG-specific knob of the decrease lemma; only used by diagnostics.
    pub vartheta: f64,
    pub diagnostics: bool,
    pub record_every: usize,
    /// Drop stored table points (halves SAG/SAGA memory, disables the
    /// variance-bound and theta diagnostics).
    pub lean_table: bool,
    /// Record wall-clock times in the trace. Off by default so traces are
    /// byte-reproducible.
    pub timing: bool,
}

impl SolverConfig {
    /// Paper-experiment defaults: rho = 6, eta = 2, Q = I.
    pub fn new(algorithm: EstimatorKind, seed: u64) -> Self {
        SolverConfig {
            algorithm,
            rho: 6.0,
            eta: 2.0,
            q_mode: QMode::Identity,
            epoch_length: None,
            total_iterations: 1000,
            seed,
            schedule: match algorithm {
                EstimatorKind::Plain => StepsizeSchedule::SqrtT,
                _ => StepsizeSchedule::Constant,
            },
            beta: 1.0,
            vartheta: 1.0,
            diagnostics: false,
            record_every: 1,
            lean_table: false,
            timing: false,
        }
    }

    pub fn epoch_length_for(&self, n: usize) -> usize {
        self.epoch_length.unwrap_or(n)
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<(), EngineError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(EngineError::Config(format!(
                "rho must be > 0, got {}",
                self.rho
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(EngineError::Config(format!(
                "eta must be > 0, got {}",
                self.eta
            )));
        }
        if self.record_every == 0 {
            return Err(EngineError::Config("record_every must be >= 1".into()));
        }
        match (self.algorithm, self.schedule) {
            (EstimatorKind::Plain, StepsizeSchedule::SqrtT) => {}
            (EstimatorKind::Plain, _) => {
                return Err(EngineError::Config(
                    "the plain S-ADMM uses the sqrt-t stepsize schedule; use s-admm-f for a constant eta".into(),
                ))
            }
            (_, StepsizeSchedule::SqrtT) => {
                return Err(EngineError::Config(
                    "the sqrt-t schedule is only defined for the plain S-ADMM".into(),
                ))
            }
            _ => {}
        }
        if self.schedule == StepsizeSchedule::SqrtT && self.q_mode != QMode::Identity {
            return Err(EngineError::Config(
                "the sqrt-t schedule requires Q = I".into(),
            ));
        }
        if self.algorithm == EstimatorKind::Svrg {
            let m = self.epoch_length_for(problem.n());
            if m == 0 {
                return Err(EngineError::Config("epoch length must be >= 1".into()));
            }
            if !self.total_iterations.is_multiple_of(m) {
                return Err(EngineError::Config(format!(
                    "total iterations {} must be divisible by the epoch length {m}",
                    self.total_iterations
                )));
            }
        }
        if self.q_mode == QMode::UzawaLinearized {
            let a_norm_sq = spectral_norm_sq(&problem.constraint.a);
            if self.eta <= self.rho * a_norm_sq {
                return Err(EngineError::Config(format!(
                    "linearized mode needs eta > rho ||A||^2 = {:.6e} for Q > 0, got eta = {}",
                    self.rho * a_norm_sq,
                    self.eta
                )));
            }
        }
        Ok(())
    }
}

/// eta* = sigma_A rho phi_min / (20 phi_max^2), the maximizer of the
/// decrease margin as a function of eta.
pub fn select_eta(rho: f64, sigma_a: f64, phi_min: f64, phi_max: f64) -> f64 {
    sigma_a * rho * phi_min / (20.0 * phi_max * phi_max)
}

/// Inputs of the penalty floor. `horizon` is the epoch length m for SVRG and
/// the iteration count T for SAG/SAGA (their coefficient recursion runs over
/// the whole horizon).
#[derive(Debug, Clone)]
pub struct FloorInputs {
    pub l: f64,
    pub sigma_a: f64,
    pub chi: f64,
    pub beta: f64,
    pub vartheta: f64,
    pub n: usize,
    pub horizon: usize,
}

/// Smallest rho satisfying the per-variant penalty inequality, found by the
/// fixed-point iteration rho <- RHS(rho) from rho_0 = 1/sigma_A (the
/// right-hand side depends on rho through h_1 or alpha_1), with
/// sigma_A rho > 1 enforced throughout.
pub fn rho_floor(kind: VrKind, inp: &FloorInputs) -> Result<f64, EngineError> {
    let chi2 = inp.chi * inp.chi;
    let c = 40.0 * chi2 / ((1.0 + 20.0 * chi2) * inp.sigma_a);
    let n = inp.n as f64;
    let lower = (1.0 + 1e-9) / inp.sigma_a;
    let rhs = |rho: f64| -> Result<f64, EngineError> {
        let p = TheoryParams {
            l: inp.l,
            sigma_a: inp.sigma_a,
            phi_min: 1.0,
            phi_max: inp.chi,
            rho,
            eta: 0.0,
            beta: inp.beta,
            vartheta: inp.vartheta,
            n: inp.n,
            m: inp.horizon,
        };
        let coupling = match kind {
            VrKind::Svrg => (1.0 + 1.0 / inp.beta) * analysis::h_sequence(&p)[0],
            VrKind::Sag => {
                let a = analysis::alpha_sequence(VrKind::Sag, &p, inp.horizon)?;
                let w = (1.0 - 1.0 / n) * (1.0 - 1.0 / n);
                w * (1.0 + 1.0 / inp.beta - 1.0 / (n * inp.beta)) * a[0]
            }
            VrKind::Saga => {
                let a = analysis::alpha_sequence(VrKind::Saga, &p, inp.horizon)?;
                (1.0 + 1.0 / inp.beta - 1.0 / (n * inp.beta)) * a[0]
            }
        };
        let sag_extra = match kind {
            VrKind::Sag => 0.5 / inp.vartheta,
            _ => 0.0,
        };
        Ok(c * (0.5 * inp.l + sag_extra + 5.0 * inp.l * inp.l + coupling))
    };
    let mut rho = 1.0 / inp.sigma_a;
    let mut history = vec![rho];
    for _ in 0..1000 {
        let next = rhs(rho)?.max(lower);
        history.push(next);
        if (next - rho).abs() <= 1e-10 * next.abs() {
            return Ok(next);
        }
        rho = next;
    }
    Err(EngineError::FloorNoConvergence { history })
}

/// Closed-form y-step for B = -I, c = 0, g = lambda1 ||.||_1:
/// y = soft_threshold(A x - lambda / rho, lambda1 / rho).
pub fn y_step(
    x: &DenseVector,
    lambda: &DenseVector,
    rho: f64,
    problem: &ProblemSpec,
) -> Result<DenseVector, EngineError> {
    let ax = problem.constraint.a.spmv(x)?;
    y_step_from_ax(&ax, lambda, rho, problem)
}

fn y_step_from_ax(
    ax: &DenseVector,
    lambda: &DenseVector,
    rho: f64,
    problem: &ProblemSpec,
) -> Result<DenseVector, EngineError> {
    if !problem.constraint.supports_closed_form_y() {
        return Err(ModelError::NoClosedFormYStep.into());
    }
    let mut target = ax.clone();
    target.axpy(-1.0 / rho, lambda);
    Ok(soft_threshold(&target, problem.reg.l1_weight() / rho)?)
}

/// lambda_{t+1} = lambda_t - rho (A x + B y - c).
pub fn lambda_step(
    lambda: &DenseVector,
    x: &DenseVector,
    y: &DenseVector,
    rho: f64,
    problem: &ProblemSpec,
) -> DenseVector {
    let r = problem.constraint.residual(x, y);
    let mut out = lambda.clone();
    out.axpy(-rho, &r);
    out
}

enum XSolver {
    /// Cholesky factor of (eta I + rho A^T A); constant eta only.
    Cholesky(SpdFactor),
    /// Eigendecomposition A^T A = V diag(w) V^T, for shifted solves under
    /// the sqrt-t schedule.
    Eigen { vals: Vec<f64>, vecs: DenseMatrix },
    /// Uzawa-linearized explicit step; nothing to factor.
    Explicit,
}

/// Prepared x-update: the factorization (or eigenbasis) is built once per
/// run since rho and Q are fixed.
pub struct XUpdater {
    rho: f64,
    eta_base: f64,
    q_mode: QMode,
    solver: XSolver,
}

impl XUpdater {
    pub fn new(problem: &ProblemSpec, config: &SolverConfig) -> Result<Self, EngineError> {
        let solver = match (config.q_mode, config.schedule) {
            (QMode::UzawaLinearized, _) => XSolver::Explicit,
            (QMode::Identity, StepsizeSchedule::Constant) => {
                let mut m = problem.constraint.a.gram();
                m.scale(config.rho);
                m.add_diagonal(config.eta);
                XSolver::Cholesky(factor_spd(&m)?)
            }
            (QMode::Identity, StepsizeSchedule::SqrtT) => {
                let gram = problem.constraint.a.gram();
                let (vals, vecs) = jacobi_eigh(&gram)?;
                XSolver::Eigen { vals, vecs }
            }
        };
        Ok(XUpdater {
            rho: config.rho,
            eta_base: config.eta,
            q_mode: config.q_mode,
            solver,
        })
    }

    /// rhs common to both modes: the A^T part of the subproblem gradient,
    /// u = rho (B y - c) - lambda mapped through A^T.
    fn constraint_pull(
        &self,
        y: &DenseVector,
        lambda: &DenseVector,
        problem: &ProblemSpec,
    ) -> Result<DenseVector, EngineError> {
        let mut u = problem.constraint.b.apply(y);
        u.axpy(-1.0, &problem.constraint.c);
        u.scale(self.rho);
        u.axpy(-1.0, lambda);
        Ok(problem.constraint.a.spmv_transpose(&u)?)
    }

    /// Exact minimizer of the approximated Lagrangian with Q = I:
    /// x = (eta I + rho A^T A)^{-1} (eta x_bar - v - A^T(rho (B y - c) - lambda)).
    pub fn exact(
        &self,
        x_bar: &DenseVector,
        v: &DenseVector,
        y: &DenseVector,
        lambda: &DenseVector,
        eta_t: f64,
        problem: &ProblemSpec,
    ) -> Result<DenseVector, EngineError> {
        let mut rhs = x_bar.clone();
        rhs.scale(eta_t);
        rhs.axpy(-1.0, v);
        rhs.axpy(-1.0, &self.constraint_pull(y, lambda, problem)?);
        match &self.solver {
            XSolver::Cholesky(f) => {
                debug_assert_eq!(eta_t, self.eta_base);
                Ok(solve_spd(f, &rhs)?)
            }
            XSolver::Eigen { vals, vecs } => {
                let mut z = vecs.matvec_transpose(&rhs);
                for (zi, w) in z.iter_mut().zip(vals.iter()) {
                    *zi /= eta_t + self.rho * w;
                }
                Ok(vecs.matvec(&z))
            }
            XSolver::Explicit => Err(EngineError::Config("exact x-step requires Q = I".into())),
        }
    }

    /// One-step update under Q = I - (rho/eta) A^T A:
    /// x = x_bar - (1/eta)(v + rho A^T(A x_bar + B y - c - lambda/rho)).
    pub fn linearized(
        &self,
        x_bar: &DenseVector,
        v: &DenseVector,
        y: &DenseVector,
        lambda: &DenseVector,
        problem: &ProblemSpec,
    ) -> Result<DenseVector, EngineError> {
        let a = &problem.constraint.a;
        let mut r = a.spmv(x_bar)?;
        r.axpy(1.0, &problem.constraint.b.apply(y));
        r.axpy(-1.0, &problem.constraint.c);
        r.scale(self.rho);
        r.axpy(-1.0, lambda);
        let pull = a.spmv_transpose(&r)?;
        let mut x = x_bar.clone();
        x.axpy(-1.0 / self.eta_base, v);
        x.axpy(-1.0 / self.eta_base, &pull);
        Ok(x)
    }

    fn step_x(
        &self,
        x_bar: &DenseVector,
        v: &DenseVector,
        y: &DenseVector,
        lambda: &DenseVector,
        eta_t: f64,
        problem: &ProblemSpec,
    ) -> Result<DenseVector, EngineError> {
        match self.q_mode {
            QMode::Identity => self.exact(x_bar, v, y, lambda, eta_t, problem),
            QMode::UzawaLinearized => self.linearized(x_bar, v, y, lambda, problem),
        }
    }

    /// Q w for the dual-identity check.
    pub fn apply_q(
        &self,
        w: &DenseVector,
        problem: &ProblemSpec,
    ) -> Result<DenseVector, EngineError> {
        match self.q_mode {
            QMode::Identity => Ok(w.clone()),
            QMode::UzawaLinearized => {
                let a = &problem.constraint.a;
                let aw = a.spmv(w)?;
                let ataw = a.spmv_transpose(&aw)?;
                let mut out = w.clone();
                out.axpy(-self.rho / self.eta_base, &ataw);
                Ok(out)
            }
        }
    }

    /// Gradient of the approximated subproblem at x:
    /// v + eta_t Q (x - x_bar) - A^T lambda + rho A^T (A x + B y - c).
    pub fn subproblem_gradient(
        &self,
        x: &DenseVector,
        x_bar: &DenseVector,
        v: &DenseVector,
        y: &DenseVector,
        lambda: &DenseVector,
        eta_t: f64,
        problem: &ProblemSpec,
    ) -> Result<DenseVector, EngineError> {
        let diff = x.minus(x_bar);
        let qdiff = self.apply_q(&diff, problem)?;
        let a = &problem.constraint.a;
        let mut r = a.spmv(x)?;
        r.axpy(1.0, &problem.constraint.b.apply(y));
        r.axpy(-1.0, &problem.constraint.c);
        r.scale(self.rho);
        r.axpy(-1.0, lambda);
        let pull = a.spmv_transpose(&r)?;
        let mut g = v.clone();
        g.axpy(eta_t, &qdiff);
        g.axpy(1.0, &pull);
        Ok(g)
    }
}

/// User-supplied y-minimizer for constraint shapes without a built-in
/// closed form; receives A x_t, the current multiplier and rho.
pub type YStepHook = dyn Fn(&DenseVector, &DenseVector, f64, &ProblemSpec) -> DenseVector + Sync;

/// lambda_0 = argmin_lambda ||A^T lambda - grad f(x_0)||, via normal
/// equations on whichever Gram matrix is nonsingular for the shape of A.
/// Falls back to zero (with a warning) if that Gram is singular.
pub fn init_lambda(problem: &ProblemSpec) -> DenseVector {
    let x0 = DenseVector::zeros(problem.dim());
    let g0 = problem.smooth.full_grad(&x0);
    let a = &problem.constraint.a;
    let attempt = || -> Result<DenseVector, EngineError> {
        if a.rows() >= a.cols() {
            let f = factor_spd(&a.gram())?;
            let z = solve_spd(&f, &g0)?;
            Ok(a.spmv(&z)?)
        } else {
            let f = factor_spd(&a.gram_transpose())?;
            let rhs = a.spmv(&g0)?;
            Ok(solve_spd(&f, &rhs)?)
        }
    };
    match attempt() {
        Ok(lambda) => lambda,
        Err(e) => {
            log::warn!("lambda_0 least-squares init failed ({e}); starting from zero");
            DenseVector::zeros(a.rows())
        }
    }
}

/// One per-iteration trace row. Fields that are undefined at a given row
/// (insufficient history, diagnostics disabled, thinned trace) hold NaN.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub t: usize,
    pub epoch: usize,
    pub effective_passes: f64,
    pub objective: f64,
    pub r_grad: f64,
    pub r_subgrad: f64,
    pub r_feas: f64,
    pub theta: f64,
    pub lyapunov: f64,
    /// ||v_t - grad f(x_t)||^2 for the estimate drawn at this iterate.
    pub realized_variance: f64,
    pub wall_ms: f64,
    /// Stepsize used to move from this iterate to the next.
    pub eta_t: f64,
    /// ||x_t - x_{t-1}||^2.
    pub step_sq: f64,
    /// Snapshot or table-mean squared distance at t.
    pub ref_curr_sq: f64,
    /// Same at t-1, measured against this iterate's reference.
    pub ref_prev_sq: f64,
    pub aug_lagrangian: f64,
    pub lambda_norm_sq: f64,
    pub lambda_prev_norm_sq: f64,
    pub test_loss: f64,
}

impl IterationRecord {
    fn blank(t: usize) -> Self {
        IterationRecord {
            t,
            epoch: 0,
            effective_passes: f64::NAN,
            objective: f64::NAN,
            r_grad: f64::NAN,
            r_subgrad: f64::NAN,
            r_feas: f64::NAN,
            theta: f64::NAN,
            lyapunov: f64::NAN,
            realized_variance: f64::NAN,
            wall_ms: 0.0,
            eta_t: f64::NAN,
            step_sq: f64::NAN,
            ref_curr_sq: f64::NAN,
            ref_prev_sq: f64::NAN,
            aug_lagrangian: f64::NAN,
            lambda_norm_sq: f64::NAN,
            lambda_prev_norm_sq: f64::NAN,
            test_loss: f64::NAN,
        }
    }
}

/// Running maxima/minima of the per-iteration identity and inequality
/// checks. "Violation" fields are signed, normalized as
/// (lhs - rhs)/(1 + |rhs|); anything at rounding scale means the inequality
/// held. NaN means the check did not run (diagnostics off or thinned trace).
#[derive(Debug, Clone)]
pub struct CheckSummary {
    pub dual_identity_max_rel: f64,
    pub y_opt_max_residual: f64,
    pub feas_identity_max_abs: f64,
    pub rgrad_bound_max_violation: f64,
    pub rfeas_bound_max_violation: f64,
    pub rsubgrad_bound_max_violation: f64,
    pub rsubgrad_theta_max_violation: f64,
    pub lyapunov_lower_bound_min_slack: f64,
    pub iterations: usize,
}

impl CheckSummary {
    fn new() -> Self {
        CheckSummary {
            dual_identity_max_rel: 0.0,
            y_opt_max_residual: 0.0,
            feas_identity_max_abs: 0.0,
            rgrad_bound_max_violation: f64::NAN,
            rfeas_bound_max_violation: f64::NAN,
            rsubgrad_bound_max_violation: f64::NAN,
            rsubgrad_theta_max_violation: f64::NAN,
            lyapunov_lower_bound_min_slack: f64::NAN,
            iterations: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectedIterate {
    pub t: usize,
    pub x: DenseVector,
    pub y: DenseVector,
}

/// The three output-iterate selection rules. The uniform draw is the rule
/// the analysis states; argmin-theta is its certificate; final is the raw
/// last iterate.
#[derive(Debug, Clone)]
pub struct SelectionRecord {
    pub uniform: Option<SelectedIterate>,
    pub argmin_theta: Option<SelectedIterate>,
    pub final_iterate: SelectedIterate,
}

/// Spectral context of a diagnostic run.
#[derive(Debug, Clone)]
pub struct RunTheory {
    pub params: TheoryParams,
    pub a_norm_sq: f64,
    pub b_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algorithm: EstimatorKind,
    pub records: Vec<IterationRecord>,
    pub selection: SelectionRecord,
    pub checks: CheckSummary,
    pub theory: Option<RunTheory>,
    pub total_iterations: usize,
    pub n: usize,
    /// Set when the run stopped early on a non-finite iterate.
    pub aborted_at: Option<usize>,
}

#[derive(Default)]
pub struct RunExtras<'a> {
    pub y_hook: Option<&'a YStepHook>,
    pub test_samples: Option<&'a [Sample]>,
}

pub fn run(config: &SolverConfig, problem: &ProblemSpec) -> Result<RunTrace, EngineError> {
    run_with_extras(config, problem, &RunExtras::default())
}

#[derive(Clone)]
pub(crate) struct LoopState {
    pub(crate) x: DenseVector,
    pub(crate) x_prev: DenseVector,
    pub(crate) y: DenseVector,
    pub(crate) y_prev: DenseVector,
    pub(crate) lambda: DenseVector,
    pub(crate) lambda_prev: DenseVector,
    pub(crate) estimator: EstimatorState,
    pub(crate) t: usize,
}

pub(crate) struct LoopCtx<'a> {
    problem: &'a ProblemSpec,
    config: &'a SolverConfig,
    xupd: XUpdater,
    m: usize,
    y_hook: Option<&'a YStepHook>,
}

pub(crate) struct StepArtifacts {
    pub v: DenseVector,
    pub eta_t: f64,
    pub y_opt_residual: f64,
    pub dual_identity_rel: f64,
}

impl<'a> LoopCtx<'a> {
    pub(crate) fn new(
        config: &'a SolverConfig,
        problem: &'a ProblemSpec,
        y_hook: Option<&'a YStepHook>,
    ) -> Result<Self, EngineError> {
        config.validate(problem)?;
        if y_hook.is_none() && !problem.constraint.supports_closed_form_y() {
            return Err(ModelError::NoClosedFormYStep.into());
        }
        Ok(LoopCtx {
            problem,
            config,
            xupd: XUpdater::new(problem, config)?,
            m: config.epoch_length_for(problem.n()),
            y_hook,
        })
    }

    pub(crate) fn init_state(&self) -> (LoopState, f64) {
        let problem = self.problem;
        let d = problem.dim();
        let rows = problem.constraint.a.rows();
        let x0 = DenseVector::zeros(d);
        let y0 = DenseVector::zeros(rows);
        let lambda0 = init_lambda(problem);
        let mut units = 0.0f64;
        let estimator = match self.config.algorithm {
            EstimatorKind::Plain | EstimatorKind::PlainFixed => EstimatorState::Plain,
            EstimatorKind::Svrg => {
                units += problem.n() as f64;
                EstimatorState::Snapshot(snapshot_refresh(&x0, &problem.smooth))
            }
            EstimatorKind::Sag | EstimatorKind::Saga => {
                units += problem.n() as f64;
                EstimatorState::Table(GradientTable::new(
                    &x0,
                    &problem.smooth,
                    self.config.lean_table,
                ))
            }
        };
        (
            LoopState {
                x: x0.clone(),
                x_prev: x0.clone(),
                y: y0.clone(),
                y_prev: y0,
                lambda: lambda0.clone(),
                lambda_prev: lambda0,
                estimator,
                t: 0,
            },
            units,
        )
    }

    /// Refreshes the SVRG snapshot at epoch starts (t = m, 2m, ...; the
    /// initial snapshot is built with the state). Returns true when a
    /// refresh happened, which costs one effective pass.
    pub(crate) fn refresh_snapshot_if_due(&self, state: &mut LoopState) -> bool {
        if self.config.algorithm != EstimatorKind::Svrg {
            return false;
        }
        if state.t == 0 || !state.t.is_multiple_of(self.m) {
            return false;
        }
        state.estimator =
            EstimatorState::Snapshot(snapshot_refresh(&state.x, &self.problem.smooth));
        true
    }

    fn eta_at(&self, t: usize) -> f64 {
        match self.config.schedule {
            StepsizeSchedule::Constant => self.config.eta,
            StepsizeSchedule::SqrtT => self.config.eta * ((t + 1) as f64).sqrt(),
        }
    }

    /// One full iteration: y-step, gradient estimate, x-step, lambda-step,
    /// table update. `i` drives the estimate, `j` the table slot.
    pub(crate) fn step(
        &self,
        state: &mut LoopState,
        i: usize,
        j: usize,
    ) -> Result<StepArtifacts, EngineError> {
        let problem = self.problem;
        let rho = self.config.rho;
        let eta_t = self.eta_at(state.t);

        let ax = problem.constraint.a.spmv(&state.x)?;
        let y_new = match self.y_hook {
            Some(hook) => hook(&ax, &state.lambda, rho, problem),
            None => y_step_from_ax(&ax, &state.lambda, rho, problem)?,
        };
        // optimality of the y-step: rho(Ax - y) - lambda must lie in the
        // subdifferential of g at y (closed-form shape only)
        let y_opt_residual = if problem.constraint.supports_closed_form_y() {
            let mut u = ax.clone();
            u.axpy(-1.0, &y_new);
            u.scale(rho);
            u.axpy(-1.0, &state.lambda);
            l1_subdiff_dist(&u, &y_new, problem.reg.l1_weight())
        } else {
            f64::NAN
        };

        let v = estimate(
            self.config.algorithm,
            i,
            &state.x,
            &state.estimator,
            &problem.smooth,
        )?;

        let x_new = self
            .xupd
            .step_x(&state.x, &v, &y_new, &state.lambda, eta_t, problem)?;

        let residual = problem.constraint.residual(&x_new, &y_new);
        let mut lambda_new = state.lambda.clone();
        lambda_new.axpy(-rho, &residual);

        // dual identity: A^T lambda_{t+1} = v - eta_t Q (x_t - x_{t+1})
        let at_lambda = problem.constraint.a.spmv_transpose(&lambda_new)?;
        let mut diff = state.x.minus(&x_new);
        diff = self.xupd.apply_q(&diff, problem)?;
        let mut expect = v.clone();
        expect.axpy(-eta_t, &diff);
        let dual_identity_rel = at_lambda.minus(&expect).norm_inf() / (1.0 + v.norm_inf());

        if let EstimatorState::Table(table) = &mut state.estimator {
            // slot j takes the pre-update iterate x_t
            table_update(table, j, &state.x, &problem.smooth)?;
        }

        state.x_prev = std::mem::replace(&mut state.x, x_new);
        state.y_prev = std::mem::replace(&mut state.y, y_new);
        state.lambda_prev = std::mem::replace(&mut state.lambda, lambda_new);
        state.t += 1;

        Ok(StepArtifacts {
            v,
            eta_t,
            y_opt_residual,
            dual_identity_rel,
        })
    }

    /// Snapshot/table reference distance of the current iterate (and of the
    /// previous one against the same reference for SVRG).
    pub(crate) fn reference_dists(&self, state: &LoopState, prev_table_dist: f64) -> (f64, f64) {
        match &state.estimator {
            EstimatorState::Snapshot(snap) => (
                state.x.dist_sq(&snap.x_tilde),
                state.x_prev.dist_sq(&snap.x_tilde),
            ),
            EstimatorState::Table(table) => {
                let curr = table.mean_point_dist_sq(&state.x).unwrap_or(f64::NAN);
                (curr, prev_table_dist)
            }
            EstimatorState::Plain => (f64::NAN, f64::NAN),
        }
    }
}

pub fn run_with_extras(
    config: &SolverConfig,
    problem: &ProblemSpec,
    extras: &RunExtras,
) -> Result<RunTrace, EngineError> {
    let ctx = LoopCtx::new(config, problem, extras.y_hook)?;
    let diag = config.diagnostics;
    let t_total = config.total_iterations;
    let n = problem.n();
    let nf = n as f64;

    let theory = if diag {
        Some(build_theory(config, problem, &ctx)?)
    } else {
        None
    };
    let vr_kind = VrKind::try_from(config.algorithm).ok();
    // coefficient sequence for the Lyapunov column; may be absent when the
    // geometric growth overflows at this horizon (the value is then NaN)
    let coeff_seq: Option<Vec<f64>> = match (diag, vr_kind, &theory) {
        (true, Some(VrKind::Svrg), Some(th)) => Some(analysis::h_sequence(&th.params)),
        (true, Some(kind @ (VrKind::Sag | VrKind::Saga)), Some(th)) => {
            match analysis::alpha_sequence(kind, &th.params, t_total.max(1)) {
                Ok(seq) => Some(seq),
                Err(e) => {
                    log::warn!("lyapunov coefficients unavailable: {e}");
                    None
                }
            }
        }
        _ => None,
    };

    let mut index_rng = ChaCha8Rng::seed_from_u64(config.seed);
    index_rng.set_stream(0);
    let mut selection_rng = ChaCha8Rng::seed_from_u64(config.seed);
    selection_rng.set_stream(1);
    let uniform_target = if t_total >= 1 {
        Some(selection_rng.gen_range(1..=t_total))
    } else {
        None
    };

    let (mut state, mut units) = ctx.init_state();
    let start = Instant::now();
    let mut records: Vec<IterationRecord> = Vec::with_capacity(t_total / config.record_every + 2);
    let mut checks = CheckSummary::new();
    let mut uniform_sel: Option<SelectedIterate> = None;
    let mut best_theta = f64::INFINITY;
    let mut argmin_sel: Option<SelectedIterate> = None;
    let mut aborted_at = None;

    // rolling scalars for theta and the Lyapunov window
    let mut prev_step_sq = f64::NAN;
    let mut ref_curr_roll = f64::NAN;
    let mut ref_prev_roll = f64::NAN;

    let epoch_of = |t: usize| -> usize {
        if config.algorithm == EstimatorKind::Svrg && t > 0 {
            t.div_ceil(ctx.m)
        } else {
            0
        }
    };

    let mut record_row = |state: &LoopState,
                          t: usize,
                          units: f64,
                          step_sq: f64,
                          ref_curr: f64,
                          ref_prev: f64,
                          records: &mut Vec<IterationRecord>| {
        let mut rec = IterationRecord::blank(t);
        rec.epoch = epoch_of(t);
        rec.effective_passes = units / nf;
        rec.objective = problem.objective(&state.x);
        let res = analysis::residuals(&state.x, &state.y, &state.lambda, problem);
        rec.r_grad = res.r_grad;
        rec.r_subgrad = res.r_subgrad;
        rec.r_feas = res.r_feas;
        rec.wall_ms = if config.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        rec.step_sq = step_sq;
        rec.ref_curr_sq = ref_curr;
        rec.ref_prev_sq = ref_prev;
        rec.lambda_norm_sq = state.lambda.norm_sq();
        if t > 0 {
            rec.lambda_prev_norm_sq = state.lambda_prev.norm_sq();
            // multiplier-update identity: ||Ax+By-c|| = ||lambda_t - lambda_{t-1}||/rho
            let via_lambda = state.lambda.dist_sq(&state.lambda_prev) / (config.rho * config.rho);
            let gap = (via_lambda - rec.r_feas).abs() / (1.0 + rec.r_feas);
            checks.feas_identity_max_abs = checks.feas_identity_max_abs.max(gap);
        }
        if diag {
            rec.aug_lagrangian =
                problem.augmented_lagrangian(&state.x, &state.y, &state.lambda, config.rho);
            if t > 0 {
                if let (Some(kind), Some(th)) = (vr_kind, &theory) {
                    let coeff = coeff_seq.as_ref().and_then(|seq| {
                        let idx = match kind {
                            VrKind::Svrg => (t - 1) % ctx.m, // inner index t within the epoch
                            _ => t - 1,
                        };
                        seq.get(idx).copied()
                    });
                    if let Some(coeff) = coeff {
                        if ref_curr.is_finite() && ref_prev.is_finite() && step_sq.is_finite() {
                            let window = LyapunovWindow {
                                aug_lagrangian: rec.aug_lagrangian,
                                ref_curr_sq: ref_curr,
                                ref_prev_sq: ref_prev,
                                step_prev_sq: step_sq,
                            };
                            rec.lyapunov =
                                analysis::lyapunov(kind, &window, coeff, &th.params).total();
                        }
                    }
                }
                let bound =
                    lyapunov_lower_bound(rec.lambda_norm_sq, rec.lambda_prev_norm_sq, config.rho);
                let slack = rec.aug_lagrangian - bound;
                checks.lyapunov_lower_bound_min_slack =
                    if checks.lyapunov_lower_bound_min_slack.is_nan() {
                        slack
                    } else {
                        checks.lyapunov_lower_bound_min_slack.min(slack)
                    };
            }
        }
        if let Some(test) = extras.test_samples {
            rec.test_loss = crate::model::SmoothSum::mean_loss(test, &state.x);
        }
        records.push(rec);
    };

    // initial reference distances are zero by construction (snapshot and
    // table slots all sit at x_0)
    if config.algorithm.uses_snapshot() || config.algorithm.uses_table() {
        ref_curr_roll = 0.0;
    }
    record_row(
        &state,
        0,
        units,
        f64::NAN,
        ref_curr_roll,
        f64::NAN,
        &mut records,
    );

    for t in 0..t_total {
        // theta and Psi at the epoch's last iterate are measured against the
        // snapshot that produced it, so a refresh here must not touch the
        // rolling reference distances; the post-step distances below are
        // recomputed against the live snapshot anyway.
        if ctx.refresh_snapshot_if_due(&mut state) {
            units += nf;
        }
        // one shared generator per run; draw order is i_t then j_t, and
        // j_t = i_t is allowed (both draws are plain uniform)
        let i = index_rng.gen_range(0..n);
        let j = if config.algorithm.uses_table() {
            index_rng.gen_range(0..n)
        } else {
            i
        };
        let full_before = if diag {
            Some(problem.smooth.full_grad(&state.x))
        } else {
            None
        };
        let art = ctx.step(&mut state, i, j)?;
        units += 1.0;
        checks.iterations += 1;
        checks.dual_identity_max_rel = checks.dual_identity_max_rel.max(art.dual_identity_rel);
        if art.y_opt_residual.is_finite() {
            checks.y_opt_max_residual = checks.y_opt_max_residual.max(art.y_opt_residual);
        }

        let step_sq = state.x.dist_sq(&state.x_prev);
        let delta_sq = full_before
            .as_ref()
            .map(|g| art.v.dist_sq(g))
            .unwrap_or(f64::NAN);

        // backfill the row describing iterate t (the estimate and stepsize
        // belong to the move t -> t+1)
        if let Some(last) = records.last_mut() {
            if last.t == t {
                last.eta_t = art.eta_t;
                last.realized_variance = delta_sq;
            }
        }

        // theta_t becomes known now that x_{t+1} exists
        let (ref_new_curr, ref_new_prev) = if diag {
            ctx.reference_dists(&state, ref_curr_roll)
        } else {
            (f64::NAN, f64::NAN)
        };
        if diag && t >= 1 {
            if let Some(kind) = vr_kind {
                let parts = ThetaParts {
                    step_next_sq: step_sq,
                    step_prev_sq: prev_step_sq,
                    ref_curr_sq: ref_curr_roll,
                    ref_prev_sq: ref_prev_roll,
                };
                let th = analysis::theta(kind, n, &parts);
                if let Some(last) = records.last_mut() {
                    if last.t == t {
                        last.theta = th;
                    }
                }
                if th < best_theta {
                    best_theta = th;
                    argmin_sel = Some(SelectedIterate {
                        t,
                        x: state.x_prev.clone(),
                        y: state.y_prev.clone(),
                    });
                }
            }
        }

        prev_step_sq = step_sq;
        ref_prev_roll = ref_new_prev;
        ref_curr_roll = ref_new_curr;

        if Some(t + 1) == uniform_target {
            uniform_sel = Some(SelectedIterate {
                t: t + 1,
                x: state.x.clone(),
                y: state.y.clone(),
            });
        }

        if !(state.x.is_finite() && state.y.is_finite() && state.lambda.is_finite()) {
            aborted_at = Some(t + 1);
            break;
        }

        if (t + 1).is_multiple_of(config.record_every) || t + 1 == t_total {
            record_row(
                &state,
                t + 1,
                units,
                step_sq,
                ref_curr_roll,
                ref_prev_roll,
                &mut records,
            );
        }
    }

    if diag && config.record_every == 1 && aborted_at.is_none() {
        if let Some(th) = &theory {
            apply_realized_bound_checks(&mut checks, &records, config, th);
        }
    }

    let trace = RunTrace {
        algorithm: config.algorithm,
        records,
        selection: SelectionRecord {
            uniform: uniform_sel,
            argmin_theta: argmin_sel,
            final_iterate: SelectedIterate {
                t: state.t,
                x: state.x.clone(),
                y: state.y.clone(),
            },
        },
        checks,
        theory,
        total_iterations: t_total,
        n,
        aborted_at,
    };
    if let Some(t) = aborted_at {
        return Err(EngineError::NonFinite {
            t,
            trace: Box::new(trace),
        });
    }
    Ok(trace)
}

pub(crate) fn build_theory(
    config: &SolverConfig,
    problem: &ProblemSpec,
    ctx: &LoopCtx,
) -> Result<RunTheory, EngineError> {
    let a = &problem.constraint.a;
    let a_norm_sq = spectral_norm_sq(a);
    let b_norm_sq = problem.constraint.b.norm_sq();
    let sig = sigma_a(a)?;
    let (phi_min, phi_max) = match config.q_mode {
        QMode::Identity => (1.0, 1.0),
        QMode::UzawaLinearized => {
            // eigenvalues of Q = I - (rho/eta) A^T A; a wide A has a
            // rank-deficient Gram, so lambda_min(A^T A) = 0 there
            let lam_min = if a.rows() >= a.cols() { sig } else { 0.0 };
            (
                1.0 - config.rho / config.eta * a_norm_sq,
                1.0 - config.rho / config.eta * lam_min,
            )
        }
    };
    Ok(RunTheory {
        params: TheoryParams {
            l: problem.lipschitz(),
            sigma_a: sig,
            phi_min,
            phi_max,
            rho: config.rho,
            eta: config.eta,
            beta: config.beta,
            vartheta: config.vartheta,
            n: problem.n(),
            m: ctx.m,
        },
        a_norm_sq,
        b_norm_sq,
    })
}

/// Realized per-iteration forms of the residual-bound chains, with the
/// realized deviation ||Delta||^2 in place of its expectation bound:
///
/// r_grad(t)    <= 3||Delta_{t-1}||^2 + 3(L^2 + eta^2 phi_max^2)||x_t - x_{t-1}||^2
/// r_feas(t)    <= 5[||Delta_{t-1}||^2 + ||Delta_{t-2}||^2 + eta^2 phi_max^2 s_t
///                   + (L^2 + eta^2 phi_max^2) s_{t-1}] / (sigma_A rho^2)
/// r_subgrad(t) <= rho^2 ||B||^2 ||A||^2 s_t   (and hence <= kappa3 theta_{t-1})
///
/// where s_t = ||x_t - x_{t-1}||^2. Only meaningful for the constant-eta
/// variance-reduced runs.
fn apply_realized_bound_checks(
    checks: &mut CheckSummary,
    records: &[IterationRecord],
    config: &SolverConfig,
    theory: &RunTheory,
) {
    if VrKind::try_from(config.algorithm).is_err() {
        return;
    }
    let p = &theory.params;
    let e2 = p.eta * p.eta * p.phi_max * p.phi_max;
    let l2 = p.l * p.l;
    let rho2 = config.rho * config.rho;
    let kappa3 = rho2 * theory.b_norm_sq * theory.a_norm_sq;
    let mut viol_grad = f64::NEG_INFINITY;
    let mut viol_feas = f64::NEG_INFINITY;
    let mut viol_sub = f64::NEG_INFINITY;
    let mut viol_sub_theta = f64::NEG_INFINITY;
    for r in 1..records.len() {
        let rec = &records[r];
        let prev = &records[r - 1];
        if rec.t != prev.t + 1 {
            continue;
        }
        if prev.realized_variance.is_finite() && rec.step_sq.is_finite() {
            let rhs = 3.0 * prev.realized_variance + 3.0 * (l2 + e2) * rec.step_sq;
            viol_grad = viol_grad.max((rec.r_grad - rhs) / (1.0 + rhs));
        }
        if rec.step_sq.is_finite() {
            let rhs = kappa3 * rec.step_sq;
            viol_sub = viol_sub.max((rec.r_subgrad - rhs) / (1.0 + rhs));
        }
        if prev.theta.is_finite() {
            let rhs = kappa3 * prev.theta;
            viol_sub_theta = viol_sub_theta.max((rec.r_subgrad - rhs) / (1.0 + rhs));
        }
        if r >= 2 {
            let prev2 = &records[r - 2];
            if prev2.t + 1 == prev.t
                && prev2.realized_variance.is_finite()
                && prev.realized_variance.is_finite()
            {
                let rhs = 5.0
                    * (prev.realized_variance
                        + prev2.realized_variance
                        + e2 * rec.step_sq
                        + (l2 + e2) * prev.step_sq)
                    / (p.sigma_a * rho2);
                viol_feas = viol_feas.max((rec.r_feas - rhs) / (1.0 + rhs));
            }
        }
    }
    // NEG_INFINITY means no pair was checkable; report that as "did not run"
    let or_nan = |v: f64| if v.is_finite() { v } else { f64::NAN };
    checks.rgrad_bound_max_violation = or_nan(viol_grad);
    checks.rfeas_bound_max_violation = or_nan(viol_feas);
    checks.rsubgrad_bound_max_violation = or_nan(viol_sub);
    checks.rsubgrad_theta_max_violation = or_nan(viol_sub_theta);
}
