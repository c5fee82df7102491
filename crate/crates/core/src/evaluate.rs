//! Out-of-sample Monte Carlo evaluation and λ sweeps over the full
//! reduce-and-resolve pipeline.
//!
//! Evaluation samples come from [`EVAL_STREAM`] of the experiment seed, so
//! they never overlap the training draws on [`TRAIN_STREAM`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::kernels::{gram, GramMatrix, KernelSpec, ScenarioMatrix};
use crate::ode_ocp::{
    constraint_values, margins, ocp_cost, rollout, solve_ocp, ControlSequence, OcpConfig, OcpSolution, State,
};
use crate::reduced_set::{kill_threshold, reduce, scaling_weights, ReductionConfig, ReductionResult, ScalingParams};
use crate::rng::{SampleStream, EVAL_STREAM, TRAIN_STREAM};
use crate::scenario_lp::{
    self, solve_minimax, worst_residual, MinimaxSolution, RegressionDataSpec, RegressionScenarios,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub violation_prob: f64,
    pub expected_cost: f64,
    pub n_mc: usize,
    pub std_err_violation: f64,
    /// Regression only: distribution of `|Ax − b|` over the fresh samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

/// Fraction of true indicators and its binomial standard error.
pub fn violation_estimate(indicators: &[bool]) -> (f64, f64) {
    let n = indicators.len() as f64;
    let p = indicators.iter().filter(|&&v| v).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(mut abs: Vec<f64>) -> ResidualSummary {
    abs.sort_by(f64::total_cmp);
    ResidualSummary {
        mean: abs.iter().sum::<f64>() / abs.len() as f64,
        q50: quantile(&abs, 0.5),
        q90: quantile(&abs, 0.9),
        q99: quantile(&abs, 0.99),
        max: abs[abs.len() - 1],
    }
}

/// Violation rate of `|Ax − b| ≤ s` on `n_mc` fresh draws around `x_star`.
///
/// The reported cost is `s` itself, the program objective.
pub fn eval_regression(x: f64, s: f64, x_star: f64, n_mc: usize, seed: u64) -> Result<EvaluationReport> {
    if n_mc == 0 {
        return input("n_mc must be at least 1");
    }
    if !(x.is_finite() && x_star.is_finite()) || s.is_nan() {
        return input("regression evaluation needs finite x, x* and a non-NaN S");
    }
    let mut rng = SampleStream::new(seed, EVAL_STREAM);
    let fresh = scenario_lp::draw(&mut rng, n_mc, x_star);
    let abs: Vec<f64> = scenario_lp::residuals(&fresh, x, &fresh.all_indices())
        .into_iter()
        .map(f64::abs)
        .collect();
    let indicators: Vec<bool> = abs.iter().map(|&r| r > s).collect();
    let (p, se) = violation_estimate(&indicators);
    Ok(EvaluationReport {
        violation_prob: p,
        expected_cost: s,
        n_mc,
        std_err_violation: se,
        residuals: Some(summarize(abs)),
    })
}

/// Fresh evaluation initial states, `n_mc` of them.
pub fn eval_initial_states(cfg: &OcpConfig, n_mc: usize, seed: u64) -> Vec<State> {
    cfg.sample_initial_states(n_mc, &mut SampleStream::new(seed, EVAL_STREAM))
}

/// Rolls `u` out from `n_mc` fresh initial states; a scenario violates when
/// any path constraint is positive at any RK4 node.
pub fn eval_ocp(cfg: &OcpConfig, u: &ControlSequence, n_mc: usize, seed: u64) -> Result<EvaluationReport> {
    if n_mc == 0 {
        return input("n_mc must be at least 1");
    }
    let x0 = eval_initial_states(cfg, n_mc, seed);
    let bundle = rollout(cfg, u, &x0)?;
    let per_scenario = 2 * cfg.nodes();
    let indicators: Vec<bool> = constraint_values(cfg, &bundle)
        .chunks(per_scenario)
        .map(|c| c.iter().any(|&v| v > 0.0))
        .collect();
    let (p, se) = violation_estimate(&indicators);
    Ok(EvaluationReport {
        violation_prob: p,
        expected_cost: ocp_cost(cfg, &bundle),
        n_mc,
        std_err_violation: se,
        residuals: None,
    })
}

/// One λ of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub kappa: usize,
    pub retained: usize,
    /// Objective of the full-scenario solve on all scenarios.
    pub full_objective: f64,
    /// Objective of the re-solve on the retained scenarios.
    pub reduced_objective: f64,
    /// Full-scenario decision scored on the retained scenarios only.
    pub reference_objective: f64,
    pub violation_prob: f64,
    pub std_err_violation: f64,
    pub expected_cost: f64,
    pub mmd_sq: f64,
    pub reduction_converged: bool,
    pub solve_converged: bool,
    /// `x` for the regression, the control sequence for the OCP.
    pub decision: Vec<f64>,
    pub evaluation: Option<EvaluationReport>,
    pub failure: Option<String>,
    #[serde(skip)]
    pub reduction: Option<ReductionResult>,
}

impl SweepRow {
    fn failed(lambda: f64, reduction: Option<ReductionResult>, full_objective: f64, message: String) -> Self {
        Self {
            lambda,
            kappa: reduction.as_ref().map_or(0, |r| r.kappa()),
            retained: reduction.as_ref().map_or(0, |r| r.retained.len()),
            full_objective,
            reduced_objective: f64::NAN,
            reference_objective: f64::NAN,
            violation_prob: f64::NAN,
            std_err_violation: f64::NAN,
            expected_cost: f64::NAN,
            mmd_sq: reduction.as_ref().map_or(f64::NAN, |r| r.mmd_sq_achieved),
            reduction_converged: reduction.as_ref().is_some_and(|r| r.converged),
            solve_converged: false,
            decision: Vec::new(),
            evaluation: None,
            failure: Some(message),
            reduction,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.failure.is_none() && self.reduction_converged && self.solve_converged
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return input("lambda_grid must not be empty");
    }
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return input(format!("lambda_grid entries must be finite and nonnegative, got {bad}"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return input("lambda_grid must be sorted ascending");
    }
    Ok(())
}

type RowFailure = Box<(Option<ReductionResult>, String)>;

fn reduce_or_fail(k: &GramMatrix, lambda: f64, weights: &[f64]) -> std::result::Result<ReductionResult, RowFailure> {
    let red =
        reduce(k, &ReductionConfig::new(lambda, weights.to_vec())).map_err(|e| Box::new((None, e.to_string())))?;
    if red.retained.is_empty() {
        return Err(Box::new((Some(red), "every scenario was discarded".into())));
    }
    Ok(red)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSweepConfig {
    pub n: usize,
    pub seed: u64,
    pub n_mc: usize,
    pub kernel: KernelSpec,
    pub scaling: ScalingParams,
    pub lambda_grid: Vec<f64>,
}

/// Default regression grid: eight values log-spaced from `0.01` to `0.3`.
pub const REGRESSION_LAMBDA_GRID: [f64; 8] = [0.01, 0.0163, 0.0264, 0.043, 0.0698, 0.114, 0.185, 0.3];

impl Default for RegressionSweepConfig {
    fn default() -> Self {
        Self {
            n: 200,
            seed: 0,
            n_mc: 1000,
            kernel: KernelSpec::default(),
            scaling: ScalingParams::regression(),
            lambda_grid: REGRESSION_LAMBDA_GRID.to_vec(),
        }
    }
}

impl RegressionSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return input("n must be at least 1");
        }
        if self.n_mc == 0 {
            return input("n_mc must be at least 1");
        }
        self.kernel.validate()?;
        self.scaling.validate()?;
        check_grid(&self.lambda_grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionSweep {
    pub scenarios: RegressionScenarios,
    pub full: MinimaxSolution,
    pub full_evaluation: EvaluationReport,
    /// Training residuals `Aᵢx − bᵢ` at the full solution.
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    pub kill_threshold: f64,
    pub rows: Vec<SweepRow>,
}

/// Residuals divided by their sample standard deviation.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    if sd > 0.0 {
        values.iter().map(|v| v / sd).collect()
    } else {
        values.to_vec()
    }
}

/// Full solve, residual embedding, reduction and re-solve for every λ.
///
/// The kernel acts on raw training residuals; the softmax scaling sees the
/// residuals standardized by their sample standard deviation.
pub fn regression_sweep(cfg: &RegressionSweepConfig) -> Result<RegressionSweep> {
    cfg.validate()?;
    let scen = scenario_lp::generate(&RegressionDataSpec {
        n: cfg.n,
        seed: cfg.seed,
    })?;
    let full = solve_minimax(&scen, &scen.all_indices())?;
    let full_evaluation = eval_regression(full.x, full.s, scen.x_star, cfg.n_mc, cfg.seed)?;
    let residuals = scenario_lp::residuals(&scen, full.x, &scen.all_indices());
    let weights = scaling_weights(&cfg.scaling, &standardize(&residuals))?;
    let k = gram(&cfg.kernel, &ScenarioMatrix::from_column(&residuals)?)?;
    let kill = kill_threshold(&k, &weights);

    let rows = cfg
        .lambda_grid
        .par_iter()
        .map(|&lambda| regression_row(cfg, &scen, &full, &k, &weights, lambda))
        .collect();
    Ok(RegressionSweep {
        scenarios: scen,
        full,
        full_evaluation,
        residuals,
        weights,
        kill_threshold: kill,
        rows,
    })
}

fn regression_row(
    cfg: &RegressionSweepConfig,
    scen: &RegressionScenarios,
    full: &MinimaxSolution,
    k: &GramMatrix,
    weights: &[f64],
    lambda: f64,
) -> SweepRow {
    let red = match reduce_or_fail(k, lambda, weights) {
        Ok(r) => r,
        Err(failure) => {
            let (red, msg) = *failure;
            return SweepRow::failed(lambda, red, full.s, msg);
        }
    };
    let solved = if red.kappa() == 0 {
        Ok(full.clone())
    } else {
        solve_minimax(scen, &red.retained)
    };
    let sol = match solved {
        Ok(s) => s,
        Err(e) => return SweepRow::failed(lambda, Some(red), full.s, e.to_string()),
    };
    let eval = match eval_regression(sol.x, sol.s, scen.x_star, cfg.n_mc, cfg.seed) {
        Ok(e) => e,
        Err(e) => return SweepRow::failed(lambda, Some(red), full.s, e.to_string()),
    };
    SweepRow {
        lambda,
        kappa: red.kappa(),
        retained: red.retained.len(),
        full_objective: full.s,
        reduced_objective: sol.s,
        reference_objective: worst_residual(scen, full.x, &red.retained),
        violation_prob: eval.violation_prob,
        std_err_violation: eval.std_err_violation,
        expected_cost: eval.expected_cost,
        mmd_sq: red.mmd_sq_achieved,
        reduction_converged: red.converged,
        solve_converged: true,
        decision: vec![sol.x],
        evaluation: Some(eval),
        failure: None,
        reduction: Some(red),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSweepConfig {
    pub n: usize,
    pub seed: u64,
    pub n_mc: usize,
    pub kernel: KernelSpec,
    pub scaling: ScalingParams,
    pub lambda_grid: Vec<f64>,
    pub ocp: OcpConfig,
}

/// Default OCP grid.
pub const OCP_LAMBDA_GRID: [f64; 6] = [0.0, 1e-5, 1e-4, 1e-3, 5e-3, 3e-2];

impl Default for OcpSweepConfig {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 0,
            n_mc: 100,
            kernel: KernelSpec::default(),
            scaling: ScalingParams::ocp(),
            lambda_grid: OCP_LAMBDA_GRID.to_vec(),
            ocp: OcpConfig::default(),
        }
    }
}

impl OcpSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return input("n must be at least 1");
        }
        if self.n_mc == 0 {
            return input("n_mc must be at least 1");
        }
        self.kernel.validate()?;
        self.scaling.validate()?;
        self.ocp.validate()?;
        check_grid(&self.lambda_grid)
    }

    /// Training initial states on [`TRAIN_STREAM`].
    pub fn training_states(&self) -> Vec<State> {
        self.ocp
            .sample_initial_states(self.n, &mut SampleStream::new(self.seed, TRAIN_STREAM))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OcpSweep {
    pub initial_states: Vec<State>,
    pub full: OcpSolution,
    pub full_evaluation: EvaluationReport,
    /// Per-scenario minimum margin to the upper state bound under the full solution.
    pub min_margins: Vec<f64>,
    pub weights: Vec<f64>,
    pub kill_threshold: f64,
    pub rows: Vec<SweepRow>,
}

/// Full solve, margin embedding, reduction and warm-started re-solve for every λ.
///
/// Each scenario is embedded by its margins at the control-grid nodes.
pub fn ocp_sweep(cfg: &OcpSweepConfig) -> Result<OcpSweep> {
    cfg.validate()?;
    let x0 = cfg.training_states();
    let full = solve_ocp(&cfg.ocp, &x0, None)?;
    let full_evaluation = eval_ocp(&cfg.ocp, &full.u, cfg.n_mc, cfg.seed)?;
    let bundle = rollout(&cfg.ocp, &full.u, &x0)?;
    let m = margins(&cfg.ocp, &bundle);
    let weights = scaling_weights(&cfg.scaling, &m.min_margin)?;
    let k = gram(&cfg.kernel, &m.control_grid()?)?;
    let kill = kill_threshold(&k, &weights);

    let rows = cfg
        .lambda_grid
        .par_iter()
        .map(|&lambda| ocp_row(cfg, &x0, &full, &k, &weights, lambda))
        .collect();
    Ok(OcpSweep {
        initial_states: x0,
        full,
        full_evaluation,
        min_margins: m.min_margin,
        weights,
        kill_threshold: kill,
        rows,
    })
}

fn ocp_row(
    cfg: &OcpSweepConfig,
    x0: &[State],
    full: &OcpSolution,
    k: &GramMatrix,
    weights: &[f64],
    lambda: f64,
) -> SweepRow {
    let red = match reduce_or_fail(k, lambda, weights) {
        Ok(r) => r,
        Err(failure) => {
            let (red, msg) = *failure;
            return SweepRow::failed(lambda, red, full.cost, msg);
        }
    };
    let kept: Vec<State> = red.retained.iter().map(|&i| x0[i]).collect();
    let solved = if red.kappa() == 0 {
        Ok(full.clone())
    } else {
        solve_ocp(&cfg.ocp, &kept, Some(&full.u))
    };
    let sol = match solved {
        Ok(s) => s,
        Err(e) => return SweepRow::failed(lambda, Some(red), full.cost, e.to_string()),
    };
    let reference = match rollout(&cfg.ocp, &full.u, &kept) {
        Ok(b) => ocp_cost(&cfg.ocp, &b),
        Err(e) => return SweepRow::failed(lambda, Some(red), full.cost, e.to_string()),
    };
    let eval = match eval_ocp(&cfg.ocp, &sol.u, cfg.n_mc, cfg.seed) {
        Ok(e) => e,
        Err(e) => return SweepRow::failed(lambda, Some(red), full.cost, e.to_string()),
    };
    SweepRow {
        lambda,
        kappa: red.kappa(),
        retained: red.retained.len(),
        full_objective: full.cost,
        reduced_objective: sol.cost,
        reference_objective: reference,
        violation_prob: eval.violation_prob,
        std_err_violation: eval.std_err_violation,
        expected_cost: eval.expected_cost,
        mmd_sq: red.mmd_sq_achieved,
        reduction_converged: red.converged,
        solve_converged: sol.converged,
        decision: sol.u.0.clone(),
        evaluation: Some(eval),
        failure: None,
        reduction: Some(red),
    }
}
