//! Shared fixtures for the criterion benches.

use scenario_prune::evaluate::{standardize, OcpSweepConfig};
use scenario_prune::kernels::gram;
use scenario_prune::ode_ocp::State;
use scenario_prune::reduced_set::scaling_weights;
use scenario_prune::scenario_lp::{generate, residuals, solve_minimax};
use scenario_prune::{GramMatrix, KernelSpec, RegressionDataSpec, RegressionScenarios, ScalingParams, ScenarioMatrix};

/// Training set of the regression study.
pub fn regression_scenarios(n: usize) -> RegressionScenarios {
    generate(&RegressionDataSpec { n, seed: 0 }).expect("valid regression spec")
}

/// Residual Gram matrix and softmax weights of the regression study.
pub fn regression_embedding(n: usize) -> (GramMatrix, Vec<f64>) {
    let scen = regression_scenarios(n);
    let full = solve_minimax(&scen, &scen.all_indices()).expect("non-empty subset");
    let r = residuals(&scen, full.x, &scen.all_indices());
    let w = scaling_weights(&ScalingParams::regression(), &standardize(&r)).expect("finite residuals");
    let k = gram(
        &KernelSpec::default(),
        &ScenarioMatrix::from_column(&r).expect("non-empty"),
    )
    .expect("valid kernel");
    (k, w)
}

/// Default OCP configuration and `n` training initial states.
pub fn ocp_problem(n: usize) -> (OcpSweepConfig, Vec<State>) {
    let cfg = OcpSweepConfig {
        n,
        ..OcpSweepConfig::default()
    };
    let x0 = cfg.training_states();
    (cfg, x0)
}
