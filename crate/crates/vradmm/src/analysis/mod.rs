//! Every theoretical quantity of the convergence analysis, evaluated on
//! realized solver paths: the h/alpha coefficient recursions, the Gamma
//! decrease margins, stationarity residuals, the theta variables, Lyapunov
//! sequences with their lower bound, the residual-vs-theta constants, and
//! the divergence inequality for the plain stochastic baseline.
//!
//! The exact-expectation enumeration oracle for the decrease lemmas lives in
//! [`enumeration`].

pub mod enumeration;

use crate::engine::IterationRecord;
use crate::estimators::EstimatorKind;
use crate::linalg::DenseVector;
use crate::model::{l1_subdiff_dist, ProblemSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0:?} is not a variance-reduced estimator")]
    NotVarianceReduced(EstimatorKind),
    #[error("coefficient sequence overflowed (horizon {horizon}, growth factor {factor:.3})")]
    SequenceOverflow { horizon: usize, factor: f64 },
    #[error("insufficient history: {0}")]
    InsufficientHistory(&'static str),
    #[error("enumeration budget exceeded: {paths} paths > {budget}")]
    PathBudget { paths: u128, budget: u128 },
}

/// The variance-reduced subset of [`EstimatorKind`]; the coefficient
/// recursions and Lyapunov sequences exist only for these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VrKind {
    Svrg,
    Sag,
    Saga,
}

impl TryFrom<EstimatorKind> for VrKind {
    type Error = AnalysisError;
    fn try_from(kind: EstimatorKind) -> Result<Self, AnalysisError> {
        match kind {
            EstimatorKind::Svrg => Ok(VrKind::Svrg),
            EstimatorKind::Sag => Ok(VrKind::Sag),
            EstimatorKind::Saga => Ok(VrKind::Saga),
            other => Err(AnalysisError::NotVarianceReduced(other)),
        }
    }
}

/// The constants the convergence analysis is parameterized by.
/// `phi_min`/`phi_max` are the extreme eigenvalues of Q, `sigma_a` the
/// smallest Gram eigenvalue of A in the working orientation, `beta` and
/// `vartheta` the free Cauchy-Schwarz knobs, `m` the SVRG epoch length.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryParams {
    pub l: f64,
    pub sigma_a: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub rho: f64,
    pub eta: f64,
    pub beta: f64,
    pub vartheta: f64,
    pub n: usize,
    pub m: usize,
}

impl TheoryParams {
    pub fn chi(&self) -> f64 {
        self.phi_max / self.phi_min
    }

    /// 5(L^2 + eta^2 phi_max^2) / (sigma_A rho), the coefficient on the
    /// successive-step penalty in all three Lyapunov sequences.
    pub fn step_penalty_coeff(&self) -> f64 {
        let e = self.eta * self.phi_max;
        5.0 * (self.l * self.l + e * e) / (self.sigma_a * self.rho)
    }
}

/// The backward recursion for the SVRG epoch coefficients:
/// h_m = 10 L^2 / (sigma_A rho), h_t = (2 + beta) h_{t+1} + 5 L^2 / (sigma_A rho).
/// Entry 0 of the result is h_1.
pub fn h_sequence(p: &TheoryParams) -> Vec<f64> {
    assert!(p.m >= 1, "epoch length must be at least 1");
    let unit = 5.0 * p.l * p.l / (p.sigma_a * p.rho);
    let mut h = vec![0.0; p.m];
    h[p.m - 1] = 2.0 * unit;
    for t in (0..p.m.saturating_sub(1)).rev() {
        h[t] = (2.0 + p.beta) * h[t + 1] + unit;
    }
    h
}

/// The backward recursion for the SAG/SAGA coefficients, terminated at
/// alpha_{T+1} = 0 (the least-restrictive completion; the analysis states
/// the recursion without a terminal value):
/// alpha_t = (2 + beta - (1+beta)/n) alpha_{t+1} + 5 L^2/(sigma_A rho) [+ vartheta L^2/2 for SAG].
/// Entry 0 is alpha_1; the last entry is alpha_{T+1} = 0.
pub fn alpha_sequence(
    kind: VrKind,
    p: &TheoryParams,
    t_max: usize,
) -> Result<Vec<f64>, AnalysisError> {
    assert!(t_max >= 1, "horizon must be at least 1");
    let n = p.n as f64;
    let factor = 2.0 + p.beta - (1.0 + p.beta) / n;
    let unit = match kind {
        VrKind::Sag => 5.0 * p.l * p.l / (p.sigma_a * p.rho) + 0.5 * p.vartheta * p.l * p.l,
        VrKind::Saga => 5.0 * p.l * p.l / (p.sigma_a * p.rho),
        VrKind::Svrg => panic!("alpha_sequence is for SAG/SAGA; SVRG uses h_sequence"),
    };
    let mut alpha = vec![0.0; t_max + 1];
    for t in (0..t_max).rev() {
        alpha[t] = factor * alpha[t + 1] + unit;
        if !alpha[t].is_finite() {
            return Err(AnalysisError::SequenceOverflow {
                horizon: t_max,
                factor,
            });
        }
    }
    Ok(alpha)
}

/// The decrease margin Gamma_t (1-based t). `seq` is the matching h or
/// alpha sequence. Negative values are returned, not errored; the caller
/// decides what to do with an infeasible configuration.
pub fn gamma(kind: VrKind, t: usize, p: &TheoryParams, seq: &[f64]) -> f64 {
    let e2 = p.eta * p.eta * p.phi_max * p.phi_max;
    let base = p.eta * p.phi_min + 0.5 * p.sigma_a * p.rho
        - 0.5 * p.l
        - 5.0 * (2.0 * e2 + p.l * p.l) / (p.sigma_a * p.rho);
    let n = p.n as f64;
    match kind {
        VrKind::Svrg => {
            if t < p.m {
                base - (1.0 + 1.0 / p.beta) * seq[t] // h_{t+1}
            } else {
                base - seq[0] // h_1 of the next epoch (the sequence repeats)
            }
        }
        VrKind::Sag => {
            let w = (1.0 - 1.0 / n) * (1.0 - 1.0 / n);
            base - 0.5 / p.vartheta - w * (1.0 + 1.0 / p.beta - 1.0 / (n * p.beta)) * seq[t]
        }
        VrKind::Saga => base - (1.0 + 1.0 / p.beta - 1.0 / (n * p.beta)) * seq[t],
    }
}

/// Minimum Gamma over the whole horizon plus where it is attained; the
/// feasibility checker for a parameter choice. For SVRG the geometric growth
/// of h couples m, beta and rho, and large m can make every rho infeasible;
/// this reports that instead of clamping.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub kind: VrKind,
    pub min_gamma: f64,
    pub argmin_t: usize,
    pub feasible: bool,
}

pub fn feasibility_report(
    kind: VrKind,
    p: &TheoryParams,
    horizon: usize,
) -> Result<FeasibilityReport, AnalysisError> {
    let seq = match kind {
        VrKind::Svrg => h_sequence(p),
        _ => alpha_sequence(kind, p, horizon)?,
    };
    let t_end = match kind {
        VrKind::Svrg => p.m,
        _ => horizon,
    };
    let mut min_gamma = f64::INFINITY;
    let mut argmin_t = 1;
    for t in 1..=t_end {
        let g = gamma(kind, t, p, &seq);
        if g < min_gamma {
            min_gamma = g;
            argmin_t = t;
        }
    }
    Ok(FeasibilityReport {
        kind,
        min_gamma,
        argmin_t,
        feasible: min_gamma > 0.0,
    })
}

/// The three squared stationarity quantities of the epsilon-stationarity
/// definition: dual gradient gap, subdifferential distance, feasibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTriple {
    pub r_grad: f64,
    pub r_subgrad: f64,
    pub r_feas: f64,
}

impl ResidualTriple {
    /// The epsilon such that (x, y, lambda) is epsilon-stationary.
    pub fn stationarity(&self) -> f64 {
        self.r_grad.max(self.r_subgrad).max(self.r_feas)
    }
}

pub fn residuals(
    x: &DenseVector,
    y: &DenseVector,
    lambda: &DenseVector,
    problem: &ProblemSpec,
) -> ResidualTriple {
    let full = problem.smooth.full_grad(x);
    let at_lambda = problem
        .constraint
        .a
        .spmv_transpose(lambda)
        .expect("dimension checked");
    let r_grad = full.minus(&at_lambda).norm_sq();
    let bt_lambda = problem.constraint.b.apply_transpose(lambda);
    let d = l1_subdiff_dist(&bt_lambda, y, problem.reg.l1_weight());
    let r_subgrad = d * d;
    let r_feas = problem.constraint.residual(x, y).norm_sq();
    ResidualTriple {
        r_grad,
        r_subgrad,
        r_feas,
    }
}

/// The squared-distance ingredients of theta at one iteration:
/// `step_next_sq` = ||x_{t+1} - x_t||^2, `step_prev_sq` = ||x_t - x_{t-1}||^2,
/// and the reference distances (to the snapshot for SVRG, the table means
/// for SAG/SAGA) at t and t-1.
#[derive(Debug, Clone, Copy)]
pub struct ThetaParts {
    pub step_next_sq: f64,
    pub step_prev_sq: f64,
    pub ref_curr_sq: f64,
    pub ref_prev_sq: f64,
}

/// theta_t per variant:
/// SVRG  ||x_t-x~||^2 + ||x_{t-1}-x~||^2 + ||x_{t+1}-x_t||^2 + ||x_t-x_{t-1}||^2
/// SAG   steps + (1-1/n)^2 (mean table distances at t and t-1)
/// SAGA  steps + (mean table distances at t and t-1)
pub fn theta(kind: VrKind, n: usize, parts: &ThetaParts) -> f64 {
    let steps = parts.step_next_sq + parts.step_prev_sq;
    let refs = parts.ref_curr_sq + parts.ref_prev_sq;
    match kind {
        VrKind::Svrg => steps + refs,
        VrKind::Sag => {
            let w = 1.0 - 1.0 / n as f64;
            steps + w * w * refs
        }
        VrKind::Saga => steps + refs,
    }
}

/// The constants bounding each stationarity residual by theta:
/// kappa1 = 3(L^2 + eta^2 phi_max^2), kappa2 = 5(L^2 + eta^2 phi_max^2)/(sigma_A rho^2),
/// kappa3 = rho^2 ||B||^2 ||A||^2.
pub fn residual_theta_bounds(p: &TheoryParams, b_norm_sq: f64, a_norm_sq: f64) -> (f64, f64, f64) {
    let e2 = p.eta * p.eta * p.phi_max * p.phi_max;
    let kappa1 = 3.0 * (p.l * p.l + e2);
    let kappa2 = 5.0 * (p.l * p.l + e2) / (p.sigma_a * p.rho * p.rho);
    let kappa3 = p.rho * p.rho * b_norm_sq * a_norm_sq;
    (kappa1, kappa2, kappa3)
}

/// One realized Lyapunov evaluation: the augmented Lagrangian plus the
/// history penalties with their analysis coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub base: f64,
    pub penalty_ref: f64,
    pub penalty_step: f64,
}

impl LyapunovValue {
    pub fn total(&self) -> f64 {
        self.base + self.penalty_ref + self.penalty_step
    }
}

/// The window of realized quantities a Lyapunov evaluation needs.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovWindow {
    /// L_rho(x_t, y_t, lambda_t)
    pub aug_lagrangian: f64,
    /// snapshot/table mean distance at t
    pub ref_curr_sq: f64,
    /// same at t-1
    pub ref_prev_sq: f64,
    /// ||x_t - x_{t-1}||^2
    pub step_prev_sq: f64,
}

/// Realized Psi/Phi/Phi-hat at one iteration. `coeff_t` is h_t for SVRG or
/// alpha_t for SAG/SAGA (1-based index t into the matching sequence).
pub fn lyapunov(
    kind: VrKind,
    window: &LyapunovWindow,
    coeff_t: f64,
    p: &TheoryParams,
) -> LyapunovValue {
    let refs = window.ref_curr_sq + window.ref_prev_sq;
    let weight = match kind {
        VrKind::Svrg | VrKind::Saga => 1.0,
        VrKind::Sag => {
            let w = 1.0 - 1.0 / p.n as f64;
            w * w
        }
    };
    LyapunovValue {
        base: window.aug_lagrangian,
        penalty_ref: coeff_t * weight * refs,
        penalty_step: p.step_penalty_coeff() * window.step_prev_sq,
    }
}

/// The realized lower bound on L_rho(x_t, y_t, lambda_t) along any run:
/// f* + g* - ||lambda_{t-1}||^2 / (2 rho) + ||lambda_t||^2 / (2 rho),
/// with f* = g* = 0 for the sigmoid-plus-L1 model (both terms nonnegative).
pub fn lyapunov_lower_bound(lambda_norm_sq: f64, lambda_prev_norm_sq: f64, rho: f64) -> f64 {
    (lambda_norm_sq - lambda_prev_norm_sq) / (2.0 * rho)
}

/// Per-iteration replay of the divergence inequality for the plain
/// estimator: along any run,
/// ||A^T lambda_{t+1} - grad f(x_{t+1})|| >= ||Delta_t|| - (L + eta_t phi_max) ||x_{t+1} - x_t||,
/// where Delta_t is the realized deviation of the drawn component gradient.
/// Returns (lower_bound, residual_norm) pairs for every iteration with the
/// needed records.
pub fn theorem17_check(
    records: &[IterationRecord],
    l: f64,
    phi_max: f64,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let mut out = Vec::new();
    for w in records.windows(2) {
        let (prev, curr) = (&w[0], &w[1]);
        if curr.t != prev.t + 1 {
            continue; // thinned trace
        }
        if !prev.realized_variance.is_finite() || !prev.eta_t.is_finite() {
            return Err(AnalysisError::InsufficientHistory(
                "trace lacks realized deviation records; run with diagnostics enabled",
            ));
        }
        let deviation = prev.realized_variance.sqrt();
        let step = curr.step_sq.sqrt();
        let lower = deviation - (l + prev.eta_t * phi_max) * step;
        let residual = curr.r_grad.sqrt();
        out.push((lower, residual));
    }
    if out.is_empty() {
        return Err(AnalysisError::InsufficientHistory(
            "need at least two consecutive records",
        ));
    }
    Ok(out)
}
