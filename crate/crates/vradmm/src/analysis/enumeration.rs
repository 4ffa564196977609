//! Exact-expectation oracle for the Lyapunov decrease lemmas.
//!
//! On tiny instances the expectation over the index draws can be computed
//! literally: every draw sequence is enumerated (n branches per step for
//! SVRG, n^2 for SAG/SAGA since they draw an estimate index and a table
//! index), each path is run through the exact same single-step transition
//! the solvers use, and `E[Psi_t]` is the equally-weighted mean over paths.
//! Monotone non-increase of that sequence is the literal content of the
//! decrease lemmas, so no sampling error is involved.

use super::{lyapunov, lyapunov_lower_bound, AnalysisError, LyapunovWindow, VrKind};
use crate::engine::{self, EngineError, LoopCtx, LoopState, SolverConfig};
use crate::model::ProblemSpec;

const PATH_BUDGET: u128 = 65_536;

#[derive(Debug, Clone)]
pub struct EnumerationReport {
    /// `E[Psi_t]` (or Phi / Phi-hat) for t = 1..=steps.
    pub expectations: Vec<f64>,
    /// max over consecutive steps of `E[t+1] - E[t]`; at most rounding when the
    /// decrease lemma holds.
    pub max_increase: f64,
    pub monotone: bool,
    /// min over every path and step of L_rho - its realized lower bound.
    pub lower_bound_min_slack: f64,
    pub paths: usize,
}

struct Node {
    state: LoopState,
    ref_curr_sq: f64,
    ref_prev_sq: f64,
}

/// Runs every index path of `steps` iterations of the configured algorithm
/// and returns the exact per-step expectations of the matching Lyapunov
/// sequence. The path count (n or n^2 per step) must stay within 65536.
pub fn expected_lyapunov_oracle(
    kind: VrKind,
    problem: &ProblemSpec,
    config: &SolverConfig,
    steps: usize,
) -> Result<EnumerationReport, EngineError> {
    assert!(steps >= 1, "need at least one step");
    assert_eq!(
        VrKind::try_from(config.algorithm).ok(),
        Some(kind),
        "sequence kind must match the configured algorithm"
    );
    let n = problem.n();
    let branches: u128 = match kind {
        VrKind::Svrg => n as u128,
        VrKind::Sag | VrKind::Saga => (n * n) as u128,
    };
    let total_paths = branches.checked_pow(steps as u32).unwrap_or(u128::MAX);
    if total_paths > PATH_BUDGET {
        return Err(AnalysisError::PathBudget {
            paths: total_paths,
            budget: PATH_BUDGET,
        }
        .into());
    }

    let ctx = LoopCtx::new(config, problem, None)?;
    let theory = engine::build_theory(config, problem, &ctx)?;
    let coeff: Vec<f64> = match kind {
        VrKind::Svrg => super::h_sequence(&theory.params),
        _ => super::alpha_sequence(kind, &theory.params, steps)?,
    };
    let m = config.epoch_length_for(n);

    let (state0, _units) = ctx.init_state();
    let mut level = vec![Node {
        state: state0,
        ref_curr_sq: 0.0,
        ref_prev_sq: f64::NAN,
    }];
    let mut expectations = Vec::with_capacity(steps);
    let mut lower_bound_min_slack = f64::INFINITY;

    for depth in 0..steps {
        let mut next = Vec::with_capacity(level.len() * branches as usize);
        for node in &level {
            let pairs: Vec<(usize, usize)> = match kind {
                VrKind::Svrg => (0..n).map(|i| (i, i)).collect(),
                _ => (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect(),
            };
            for (i, j) in pairs {
                let mut state = node.state.clone();
                ctx.refresh_snapshot_if_due(&mut state);
                ctx.step(&mut state, i, j)?;
                let (ref_curr, ref_prev) = ctx.reference_dists(&state, node.ref_curr_sq);
                next.push(Node {
                    state,
                    ref_curr_sq: ref_curr,
                    ref_prev_sq: ref_prev,
                });
            }
        }
        level = next;

        // the Lyapunov coefficient for step t = depth + 1 (1-based)
        let t = depth + 1;
        let idx = match kind {
            VrKind::Svrg => (t - 1) % m,
            _ => t - 1,
        };
        let mut acc = 0.0f64;
        for node in &level {
            let s = &node.state;
            let aug = problem.augmented_lagrangian(&s.x, &s.y, &s.lambda, config.rho);
            let window = LyapunovWindow {
                aug_lagrangian: aug,
                ref_curr_sq: node.ref_curr_sq,
                ref_prev_sq: node.ref_prev_sq,
                step_prev_sq: s.x.dist_sq(&s.x_prev),
            };
            acc += lyapunov(kind, &window, coeff[idx], &theory.params).total();
            let bound =
                lyapunov_lower_bound(s.lambda.norm_sq(), s.lambda_prev.norm_sq(), config.rho);
            lower_bound_min_slack = lower_bound_min_slack.min(aug - bound);
        }
        expectations.push(acc / level.len() as f64);
    }

    let mut max_increase = f64::NEG_INFINITY;
    for w in expectations.windows(2) {
        max_increase = max_increase.max(w[1] - w[0]);
    }
    if expectations.len() < 2 {
        max_increase = 0.0;
    }
    let scale = expectations.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    Ok(EnumerationReport {
        monotone: max_increase <= 1e-9 * scale,
        expectations,
        max_increase,
        lower_bound_min_slack,
        paths: level.len(),
    })
}
