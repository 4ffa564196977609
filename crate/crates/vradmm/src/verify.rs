//! The runnable invariant suite behind `check`: every inequality the
//! convergence analysis asserts, evaluated on seeded synthetic problems.
//! Each item reports pass/fail with the measured quantity so failures are
//! actionable.

use crate::analysis::{self, VrKind};
use crate::engine::{self, rho_floor, select_eta, FloorInputs, SolverConfig};
use crate::estimators::{
    exact_variance, expectation_over_i, snapshot_refresh, table_update, EstimatorKind,
    EstimatorState, GradientTable,
};
use crate::io::{problem_from_dataset, synth_a9a_like, synth_correlated};
use crate::linalg::{sigma_a, DenseVector, SparseMatrix};
use crate::model::{ConstraintSpec, ProblemSpec, Regularizer, Sample, SmoothSum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> DenseVector {
    DenseVector::from_vec((0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
}

/// Lemma 1-3 style checks on 100 seeded random states per estimator
/// (n = 50, d = 20 synthetic sigmoid problem): the exact variance never
/// exceeds its bound, and the exact expectations match their formulas.
pub fn estimator_lemma_suite(seed: u64) -> Vec<CheckOutcome> {
    let (n, d) = (50usize, 20usize);
    let ds = synth_correlated(n, d, 4, seed);
    let smooth = SmoothSum::new(ds.samples.clone(), 1e-3, d).unwrap();
    let l = smooth.lipschitz_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut out = Vec::new();

    let mut worst_gap = f64::NEG_INFINITY; // exact_variance - bound, should stay <= 0
    let mut violations = 0usize;
    let mut worst_bias_svrg = 0.0f64;
    let mut worst_bias_saga = 0.0f64;
    let mut worst_bias_sag = 0.0f64;
    for _ in 0..100 {
        let x = rand_vec(&mut rng, d);
        let full = smooth.full_grad(&x);

        let snap = EstimatorState::Snapshot(snapshot_refresh(&rand_vec(&mut rng, d), &smooth));
        let mut table = GradientTable::new(&rand_vec(&mut rng, d), &smooth, false);
        for _ in 0..n {
            let j = rng.gen_range(0..n);
            table_update(&mut table, j, &rand_vec(&mut rng, d), &smooth).unwrap();
        }
        table.recompute_psi();
        let psi = table.psi().clone();
        let tab = EstimatorState::Table(table);

        for (kind, state) in [
            (EstimatorKind::Svrg, &snap),
            (EstimatorKind::Sag, &tab),
            (EstimatorKind::Saga, &tab),
        ] {
            let v = exact_variance(kind, &x, state, &smooth).unwrap();
            let b = crate::estimators::variance_bound(kind, &x, state, l).unwrap();
            let gap = v - b;
            worst_gap = worst_gap.max(gap);
            if gap > 1e-12 * (1.0 + b) {
                violations += 1;
            }
        }

        let e = expectation_over_i(EstimatorKind::Svrg, &x, &snap, &smooth).unwrap();
        worst_bias_svrg = worst_bias_svrg.max(e.minus(&full).norm_inf());
        let e = expectation_over_i(EstimatorKind::Saga, &x, &tab, &smooth).unwrap();
        worst_bias_saga = worst_bias_saga.max(e.minus(&full).norm_inf());
        let e = expectation_over_i(EstimatorKind::Sag, &x, &tab, &smooth).unwrap();
        let nf = n as f64;
        let mut want = full.clone();
        want.scale(1.0 / nf);
        want.axpy(1.0 - 1.0 / nf, &psi);
        worst_bias_sag = worst_bias_sag.max(e.minus(&want).norm_inf());
    }
    out.push(CheckOutcome::new(
        "estimator variance bounds (lemmas 1-3)",
        violations == 0,
        format!("{violations} violations; worst variance-bound gap {worst_gap:.3e}"),
    ));
    out.push(CheckOutcome::new(
        "svrg expectation = full gradient",
        worst_bias_svrg <= 1e-12,
        format!("max deviation {worst_bias_svrg:.3e} (tol 1e-12)"),
    ));
    out.push(CheckOutcome::new(
        "saga expectation = full gradient",
        worst_bias_saga <= 1e-12,
        format!("max deviation {worst_bias_saga:.3e} (tol 1e-12)"),
    ));
    out.push(CheckOutcome::new(
        "sag expectation = (1/n) grad f + (1-1/n) psi",
        worst_bias_sag <= 1e-12,
        format!("max deviation {worst_bias_sag:.3e} (tol 1e-12)"),
    ));
    out
}

fn benchmark_problem(seed: u64) -> ProblemSpec {
    let ds = synth_correlated(200, 20, 5, seed);
    problem_from_dataset(&ds, 1e-4, 1.2e-4, 0.5).unwrap()
}

/// Runs every algorithm for 1000 iterations and checks the per-iteration
/// identities: the dual identity within 1e-8 relative, the y-step
/// optimality residual within 1e-10, and the multiplier-update identity.
pub fn dual_identity_suite(seed: u64) -> Vec<CheckOutcome> {
    let problem = benchmark_problem(seed);
    let mut out = Vec::new();
    for kind in [
        EstimatorKind::Plain,
        EstimatorKind::PlainFixed,
        EstimatorKind::Svrg,
        EstimatorKind::Sag,
        EstimatorKind::Saga,
    ] {
        let config = SolverConfig {
            total_iterations: 1000,
            diagnostics: true,
            ..SolverConfig::new(kind, seed)
        };
        let trace = engine::run(&config, &problem).unwrap();
        let c = &trace.checks;
        out.push(CheckOutcome::new(
            &format!("{}: dual identity", kind.name()),
            c.dual_identity_max_rel <= 1e-8,
            format!("max rel {:.3e} (tol 1e-8)", c.dual_identity_max_rel),
        ));
        out.push(CheckOutcome::new(
            &format!("{}: y-step optimality", kind.name()),
            c.y_opt_max_residual <= 1e-10,
            format!("max residual {:.3e} (tol 1e-10)", c.y_opt_max_residual),
        ));
        out.push(CheckOutcome::new(
            &format!("{}: multiplier-update identity", kind.name()),
            c.feas_identity_max_abs <= 1e-10,
            format!("max gap {:.3e}", c.feas_identity_max_abs),
        ));
    }
    out
}

fn tiny_problem(n: usize, seed: u64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            Sample::new(
                vec![0, 1],
                vec![rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0],
                if rng.gen::<bool>() { 1.0 } else { -1.0 },
            )
            .unwrap()
        })
        .collect();
    let smooth = SmoothSum::new(samples, 0.05, 2).unwrap();
    let a = SparseMatrix::from_rows(&[vec![(0, 1.0), (1, -1.0)], vec![(1, 1.0)]], 2).unwrap();
    ProblemSpec::new(
        smooth,
        Regularizer::new(0.1).unwrap(),
        ConstraintSpec::graph_guided(a),
    )
    .unwrap()
}

fn theory_config(
    kind: EstimatorKind,
    problem: &ProblemSpec,
    steps: usize,
    m: Option<usize>,
) -> SolverConfig {
    let sig = sigma_a(&problem.constraint.a).unwrap();
    let vr = VrKind::try_from(kind).unwrap();
    let horizon = match vr {
        VrKind::Svrg => m.unwrap_or(problem.n()),
        _ => steps,
    };
    let inp = FloorInputs {
        l: problem.lipschitz(),
        sigma_a: sig,
        chi: 1.0,
        beta: 1.0,
        vartheta: 1.0,
        n: problem.n(),
        horizon,
    };
    let rho = rho_floor(vr, &inp).unwrap();
    let eta = select_eta(rho, sig, 1.0, 1.0);
    SolverConfig {
        rho,
        eta,
        epoch_length: m,
        total_iterations: steps,
        ..SolverConfig::new(kind, 0)
    }
}

/// The exact-expectation decrease suite on tiny instances (n in {2, 3},
/// d = 2, at most 4 steps) at rho = rho_floor and eta = eta*: `E[Psi]`,
/// `E[Phi]`, `E[Phi-hat]` must be non-increasing and every enumerated path must
/// satisfy the realized Lyapunov lower bound.
pub fn enumeration_suite() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let cases: [(EstimatorKind, VrKind, usize, usize, Option<usize>, u64); 4] = [
        (EstimatorKind::Svrg, VrKind::Svrg, 2, 3, Some(3), 7),
        (EstimatorKind::Svrg, VrKind::Svrg, 2, 4, Some(2), 15),
        (EstimatorKind::Sag, VrKind::Sag, 2, 3, None, 9),
        (EstimatorKind::Saga, VrKind::Saga, 3, 2, None, 11),
    ];
    for (kind, vr, n, steps, m, seed) in cases {
        let problem = tiny_problem(n, seed);
        let config = theory_config(kind, &problem, steps, m);
        match analysis::enumeration::expected_lyapunov_oracle(vr, &problem, &config, steps) {
            Ok(report) => {
                let name = format!("{} n={n} steps={steps}: exact E decrease", kind.name());
                out.push(CheckOutcome::new(
                    &name,
                    report.monotone,
                    format!(
                        "E = {:?}, max increase {:.3e}, {} paths",
                        report
                            .expectations
                            .iter()
                            .map(|v| (v * 1e6).round() / 1e6)
                            .collect::<Vec<_>>(),
                        report.max_increase,
                        report.paths
                    ),
                ));
                out.push(CheckOutcome::new(
                    &format!("{} n={n} steps={steps}: path lower bound", kind.name()),
                    report.lower_bound_min_slack >= -1e-9,
                    format!("min slack {:.3e}", report.lower_bound_min_slack),
                ));
            }
            Err(e) => out.push(CheckOutcome::new(
                &format!("{} n={n} steps={steps}: enumeration", kind.name()),
                false,
                e.to_string(),
            )),
        }
    }
    out
}

/// Seeded diagnostic runs of the variance-reduced algorithms; the realized
/// per-iteration residual bounds and the Lyapunov lower bound must hold at
/// every iteration.
pub fn residual_bound_suite(seed: u64) -> Vec<CheckOutcome> {
    let problem = benchmark_problem(seed);
    let mut out = Vec::new();
    for kind in [EstimatorKind::Svrg, EstimatorKind::Sag, EstimatorKind::Saga] {
        let config = SolverConfig {
            total_iterations: 1000,
            diagnostics: true,
            ..SolverConfig::new(kind, seed.wrapping_add(1))
        };
        let trace = engine::run(&config, &problem).unwrap();
        let c = &trace.checks;
        let tol = 1e-9;
        out.push(CheckOutcome::new(
            &format!("{}: realized r_grad bound", kind.name()),
            c.rgrad_bound_max_violation <= tol,
            format!("max violation {:.3e}", c.rgrad_bound_max_violation),
        ));
        out.push(CheckOutcome::new(
            &format!("{}: realized r_feas bound", kind.name()),
            c.rfeas_bound_max_violation <= tol,
            format!("max violation {:.3e}", c.rfeas_bound_max_violation),
        ));
        out.push(CheckOutcome::new(
            &format!("{}: realized r_subgrad bound", kind.name()),
            c.rsubgrad_bound_max_violation <= tol && c.rsubgrad_theta_max_violation <= tol,
            format!(
                "max violation {:.3e} (step form), {:.3e} (theta form)",
                c.rsubgrad_bound_max_violation, c.rsubgrad_theta_max_violation
            ),
        ));
        out.push(CheckOutcome::new(
            &format!("{}: lyapunov lower bound", kind.name()),
            c.lyapunov_lower_bound_min_slack >= -1e-9,
            format!("min slack {:.3e}", c.lyapunov_lower_bound_min_slack),
        ));
    }
    out
}

/// A two-component problem whose component gradients are equal and opposite
/// everywhere (grad f == 0): every point is stationary for f, and the plain
/// estimator's deviation cannot vanish. Drives the divergence contrast.
pub fn adversarial_problem() -> ProblemSpec {
    let samples = vec![
        Sample::new(vec![0], vec![1.0], 1.0).unwrap(),
        Sample::new(vec![0], vec![1.0], -1.0).unwrap(),
    ];
    let smooth = SmoothSum::new(samples, 0.0, 1).unwrap();
    ProblemSpec::new(
        smooth,
        Regularizer::new(0.0).unwrap(),
        ConstraintSpec::graph_guided(SparseMatrix::identity(1)),
    )
    .unwrap()
}

/// The divergence replay: the per-iteration lower bound on the dual
/// residual holds along a fixed-stepsize plain run, the plain run's r_grad
/// never falls below half the squared minimum realized deviation, and the
/// SVRG run on the same instance reaches r_grad <= 1e-6.
pub fn theorem17_suite(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let problem = adversarial_problem();
    let iters = 10_000usize;

    let config = SolverConfig {
        total_iterations: iters,
        diagnostics: true,
        ..SolverConfig::new(EstimatorKind::PlainFixed, seed)
    };
    let trace = engine::run(&config, &problem).unwrap();
    let pairs = analysis::theorem17_check(&trace.records, problem.lipschitz(), 1.0).unwrap();
    let min_slack = pairs
        .iter()
        .map(|(lower, residual)| residual - lower)
        .fold(f64::INFINITY, f64::min);
    out.push(CheckOutcome::new(
        "s-admm-f adversarial: divergence lower bound per iteration",
        min_slack >= -1e-9,
        format!(
            "min (residual - bound) = {min_slack:.3e} over {} iterations",
            pairs.len()
        ),
    ));

    let delta_min_sq = trace.records[..trace.records.len() - 1]
        .iter()
        .map(|r| r.realized_variance)
        .fold(f64::INFINITY, f64::min);
    let min_rgrad = trace.records[1..]
        .iter()
        .map(|r| r.r_grad)
        .fold(f64::INFINITY, f64::min);
    out.push(CheckOutcome::new(
        "s-admm-f adversarial: r_grad stays above 0.5 delta^2",
        delta_min_sq > 1e-6 && min_rgrad >= 0.5 * delta_min_sq,
        format!(
            "min r_grad {min_rgrad:.3e} vs 0.5 delta_min^2 {:.3e}",
            0.5 * delta_min_sq
        ),
    ));

    let config = SolverConfig {
        total_iterations: iters,
        diagnostics: true,
        ..SolverConfig::new(EstimatorKind::Svrg, seed)
    };
    let svrg = engine::run(&config, &problem).unwrap();
    let svrg_min = svrg.records[1..]
        .iter()
        .map(|r| r.r_grad)
        .fold(f64::INFINITY, f64::min);
    out.push(CheckOutcome::new(
        "svrg adversarial: r_grad reaches 1e-6",
        svrg_min <= 1e-6,
        format!("min r_grad {svrg_min:.3e}"),
    ));

    // replay on an ordinary sparse-binary subset as well
    let ds = synth_a9a_like(500, seed ^ 0x77);
    let bench = problem_from_dataset(&ds, 1e-4, 1.2e-4, 0.5).unwrap();
    let config = SolverConfig {
        total_iterations: 1000,
        diagnostics: true,
        ..SolverConfig::new(EstimatorKind::PlainFixed, seed)
    };
    let trace = engine::run(&config, &bench).unwrap();
    let pairs = analysis::theorem17_check(&trace.records, bench.lipschitz(), 1.0).unwrap();
    let min_slack = pairs
        .iter()
        .map(|(lower, residual)| residual - lower)
        .fold(f64::INFINITY, f64::min);
    out.push(CheckOutcome::new(
        "s-admm-f sparse subset: divergence lower bound per iteration",
        min_slack >= -1e-9,
        format!("min (residual - bound) = {min_slack:.3e}"),
    ));
    out
}

/// The full suite. `tiny` restricts to the enumeration checks.
pub fn run_all(tiny: bool, seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.extend(enumeration_suite());
    if tiny {
        return out;
    }
    out.extend(estimator_lemma_suite(seed));
    out.extend(dual_identity_suite(seed));
    out.extend(residual_bound_suite(seed));
    out.extend(theorem17_suite(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_suite_passes() {
        for c in estimator_lemma_suite(1) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn enumeration_suite_passes() {
        for c in enumeration_suite() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn sanity_estimate_on_benchmark_problem() {
        // the suite problems must be well-formed for every estimator
        let problem = benchmark_problem(5);
        let x = DenseVector::zeros(problem.dim());
        let snap = EstimatorState::Snapshot(snapshot_refresh(&x, &problem.smooth));
        let est = crate::estimators::estimate(EstimatorKind::Svrg, 0, &x, &snap, &problem.smooth)
            .unwrap();
        assert!(est.is_finite());
    }
}
