//! Scenario discarding for sample-based stochastic programs via sparse
//! reduced-set approximations of kernel mean embeddings.
//!
//! A scenario program replaces a chance constraint by one constraint per
//! sampled realization. Keeping every sample makes the solution
//! conservative. This crate finds a sparse weighted expansion
//! `Σ αᵢ φ(ξᵢ)` that stays close (in RKHS norm) to the empirical embedding
//! `(1/N) Σ φ(ξᵢ)`, discards the scenarios whose weight is exactly zero, and
//! re-solves the program on what is left.
//!
//! Modules:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`kernels`] | kernels, Gram matrices, squared MMD |
//! | [`reduced_set`] | weighted-L1 reduced-set solver, index selection, scaling weights |
//! | [`scenario_lp`] | min-max robust regression benchmark |
//! | [`ode_ocp`] | Van der Pol stochastic optimal control benchmark |
//! | [`evaluate`] | Monte Carlo evaluation and λ sweeps |
//! | [`rng`] | the seeded sampling contract shared by every experiment |

pub mod error;
pub mod evaluate;
pub mod kernels;
pub mod ode_ocp;
pub mod reduced_set;
pub mod rng;
pub mod scenario_lp;

pub use error::{Error, Result};
pub use evaluate::{EvaluationReport, OcpSweep, OcpSweepConfig, RegressionSweep, RegressionSweepConfig, SweepRow};
pub use kernels::{GramMatrix, KernelSpec, ScenarioMatrix};
pub use ode_ocp::{ControlSequence, OcpConfig, OcpSolution, TrajectoryBundle};
pub use reduced_set::{ReductionConfig, ReductionResult, ScalingKind, ScalingParams};
pub use scenario_lp::{MinimaxSolution, RegressionDataSpec, RegressionScenarios};
