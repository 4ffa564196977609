//! Stochastic ADMM with variance reduction for nonconvex composite problems
//! of the form
//!
//! ```text
//!     min_{x,y} (1/n) sum_i f_i(x) + g(y)   s.t.  A x + B y = c
//! ```
//!
//! with nonconvex smooth components f_i (sigmoid loss plus ridge), an L1
//! block g, and a graph-guided constraint A = [G; I]. Four solvers are
//! provided: the plain stochastic baseline with a sqrt-t stepsize schedule
//! (and its fixed-stepsize variant) and the SVRG/SAG/SAGA variance-reduced
//! variants.
//!
//! Alongside the solvers, [`analysis`] evaluates the convergence theory's
//! quantities on realized runs: coefficient recursions, decrease margins,
//! stationarity residuals, theta variables, Lyapunov sequences and their
//! lower bound, and an exact-expectation enumeration oracle for the
//! decrease lemmas on tiny instances.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod model;
pub mod trace;
pub mod verify;

pub use engine::{run, run_with_extras, RunTrace, SolverConfig};
pub use estimators::EstimatorKind;
pub use model::ProblemSpec;
