//! Scenario optimal control of a Van der Pol oscillator with uncertain
//! initial state.
//!
//! ```text
//! ẋ₁ = x₂,  ẋ₂ = −0.1(1 − x₁²)x₂ − x₁ + u
//! minimize (1/N) Σᵢ ∫₀ᵀ (x₁ⁱ(t) − 3)² dt
//! s.t. −40 ≤ u ≤ 40,  −0.25 ≤ x₁ⁱ(t) ≤ 2 + 0.1 cos(10t),  xⁱ(0) = sᵢ
//! ```
//!
//! Controls are piecewise constant on `M` equal intervals; states come from
//! fixed-step RK4 with `substeps` steps per interval (single shooting). Path
//! constraints are enforced at every RK4 node.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, numerical, Result};
use crate::kernels::ScenarioMatrix;
use crate::rng::SampleStream;

pub type State = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub horizon: f64,
    pub steps: usize,
    pub substeps: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub x1_lower: f64,
    /// Upper bound `offset + amplitude · cos(frequency · t)`.
    pub upper_offset: f64,
    pub upper_amplitude: f64,
    pub upper_frequency: f64,
    pub target: f64,
    pub initial_mean: State,
    /// Standard deviations of the diagonal initial-state covariance.
    pub initial_std: State,
    /// Drop the path constraints entirely.
    pub state_bounds: bool,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 10,
            substeps: 10,
            u_min: -40.0,
            u_max: 40.0,
            x1_lower: -0.25,
            upper_offset: 2.0,
            upper_amplitude: 0.1,
            upper_frequency: 10.0,
            target: 3.0,
            initial_mean: [0.5, 0.0],
            initial_std: [0.01, 0.1],
            state_bounds: true,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return input("horizon must be positive");
        }
        if self.steps == 0 || self.substeps == 0 {
            return input("steps and substeps must be at least 1");
        }
        if self.u_min.partial_cmp(&self.u_max) != Some(std::cmp::Ordering::Less) {
            return input("u_min must be below u_max");
        }
        if self.initial_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return input("initial-state standard deviations must be positive");
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.steps * self.substeps + 1
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / (self.steps * self.substeps) as f64
    }

    pub fn time(&self, node: usize) -> f64 {
        node as f64 * self.step_size()
    }

    pub fn upper_bound(&self, t: f64) -> f64 {
        self.upper_offset + self.upper_amplitude * (self.upper_frequency * t).cos()
    }

    /// Draws `n` initial states `N(m, Σ)`, `x₁` then `x₂` per scenario.
    pub fn sample_initial_states(&self, n: usize, rng: &mut SampleStream) -> Vec<State> {
        (0..n)
            .map(|_| {
                let x1 = rng.normal(self.initial_mean[0], self.initial_std[0]);
                let x2 = rng.normal(self.initial_mean[1], self.initial_std[1]);
                [x1, x2]
            })
            .collect()
    }
}

/// Piecewise-constant control, one value per interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence(pub Vec<f64>);

impl ControlSequence {
    pub fn zeros(steps: usize) -> Self {
        Self(vec![0.0; steps])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn check(&self, cfg: &OcpConfig) -> Result<()> {
        if self.0.len() != cfg.steps {
            return input(format!("{} controls for {} steps", self.0.len(), cfg.steps));
        }
        if self.0.iter().any(|u| !u.is_finite()) {
            return input("controls must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    /// `states[i][k]` is scenario `i` at RK4 node `k`.
    pub states: Vec<Vec<State>>,
}

impl TrajectoryBundle {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial_states(&self) -> Vec<State> {
        self.states.iter().map(|s| s[0]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OcpSolution {
    pub u: ControlSequence,
    pub cost: f64,
    pub max_violation: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub projected_gradient: f64,
    pub converged: bool,
    /// Cost after each outer iteration.
    pub cost_history: Vec<f64>,
}

/// Distance of each trajectory to the upper state bound.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginMatrix {
    /// `values[i][k] = ub(t_k) − x₁ⁱ(t_k)` on every RK4 node.
    pub values: Vec<Vec<f64>>,
    /// `min_k values[i][k]`.
    pub min_margin: Vec<f64>,
    substeps: usize,
}

impl MarginMatrix {
    /// Margins at the `M + 1` control-grid nodes, one row per scenario.
    pub fn control_grid(&self) -> Result<ScenarioMatrix> {
        let rows: Vec<Vec<f64>> = self
            .values
            .iter()
            .map(|row| row.iter().step_by(self.substeps).copied().collect())
            .collect();
        ScenarioMatrix::from_rows(&rows)
    }
}

/// Van der Pol right-hand side.
pub fn vdp_rhs(x: State, u: f64) -> State {
    [x[1], -0.1 * (1.0 - x[0] * x[0]) * x[1] - x[0] + u]
}

/// `∂f/∂x` of [`vdp_rhs`]; `∂f/∂u = (0, 1)`.
fn vdp_jacobian(x: State) -> [[f64; 2]; 2] {
    [[0.0, 1.0], [0.2 * x[0] * x[1] - 1.0, -0.1 * (1.0 - x[0] * x[0])]]
}

fn axpy(x: State, a: f64, k: State) -> State {
    [x[0] + a * k[0], x[1] + a * k[1]]
}

/// One classical RK4 step.
pub fn rk4_step<F: Fn(State, f64) -> State>(rhs: &F, x: State, u: f64, h: f64) -> State {
    let k1 = rhs(x, u);
    let k2 = rhs(axpy(x, 0.5 * h, k1), u);
    let k3 = rhs(axpy(x, 0.5 * h, k2), u);
    let k4 = rhs(axpy(x, h, k3), u);
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates from `x0` holding `controls[j]` for `substeps` steps of size `h`.
/// Returns all `controls.len() · substeps + 1` nodes.
pub fn integrate<F: Fn(State, f64) -> State>(
    rhs: &F,
    x0: State,
    controls: &[f64],
    h: f64,
    substeps: usize,
) -> Vec<State> {
    let mut out = Vec::with_capacity(controls.len() * substeps + 1);
    out.push(x0);
    let mut x = x0;
    for &u in controls {
        for _ in 0..substeps {
            x = rk4_step(rhs, x, u, h);
            out.push(x);
        }
    }
    out
}

/// Reverse-mode sweep through one RK4 step of the Van der Pol system.
/// Given `x̄' = ∂L/∂x_{k+1}`, returns `(∂L/∂x_k, ∂L/∂u)` contributions.
fn rk4_step_adjoint(x: State, u: f64, h: f64, bar_next: State) -> (State, f64) {
    let k1 = vdp_rhs(x, u);
    let x2 = axpy(x, 0.5 * h, k1);
    let k2 = vdp_rhs(x2, u);
    let x3 = axpy(x, 0.5 * h, k2);
    let k3 = vdp_rhs(x3, u);
    let x4 = axpy(x, h, k3);

    let mut bar_x = bar_next;
    let mut bar_u = 0.0;
    let scale = |a: f64| [a * bar_next[0], a * bar_next[1]];
    let bar_k4 = scale(h / 6.0);
    let mut bar_k3 = scale(h / 3.0);
    let mut bar_k2 = scale(h / 3.0);
    let mut bar_k1 = scale(h / 6.0);

    let jt = |p: State, v: State| {
        let j = vdp_jacobian(p);
        [j[0][0] * v[0] + j[1][0] * v[1], j[0][1] * v[0] + j[1][1] * v[1]]
    };

    let b4 = jt(x4, bar_k4);
    bar_u += bar_k4[1];
    bar_x = axpy(bar_x, 1.0, b4);
    bar_k3 = axpy(bar_k3, h, b4);

    let b3 = jt(x3, bar_k3);
    bar_u += bar_k3[1];
    bar_x = axpy(bar_x, 1.0, b3);
    bar_k2 = axpy(bar_k2, 0.5 * h, b3);

    let b2 = jt(x2, bar_k2);
    bar_u += bar_k2[1];
    bar_x = axpy(bar_x, 1.0, b2);
    bar_k1 = axpy(bar_k1, 0.5 * h, b2);

    let b1 = jt(x, bar_k1);
    bar_u += bar_k1[1];
    bar_x = axpy(bar_x, 1.0, b1);
    (bar_x, bar_u)
}

fn check_states(states: &[State]) -> Result<()> {
    if states.is_empty() {
        return input("need at least one initial state");
    }
    if states.iter().flatten().any(|v| !v.is_finite()) {
        return input("initial states must be finite");
    }
    Ok(())
}

fn rollout_one(cfg: &OcpConfig, u: &[f64], x0: State, scenario: usize) -> Result<Vec<State>> {
    let traj = integrate(&vdp_rhs, x0, u, cfg.step_size(), cfg.substeps);
    if let Some(step) = traj.iter().position(|x| !(x[0].is_finite() && x[1].is_finite())) {
        return numerical(format!("trajectory of scenario {scenario} diverged at step {step}"));
    }
    Ok(traj)
}

/// RK4 rollout of every initial state under `u`.
pub fn rollout(cfg: &OcpConfig, u: &ControlSequence, initial_states: &[State]) -> Result<TrajectoryBundle> {
    cfg.validate()?;
    u.check(cfg)?;
    check_states(initial_states)?;
    let states = initial_states
        .par_iter()
        .enumerate()
        .map(|(i, &x0)| rollout_one(cfg, &u.0, x0, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBundle { states })
}

fn trapezoid_weight(k: usize, nodes: usize) -> f64 {
    if k == 0 || k + 1 == nodes {
        0.5
    } else {
        1.0
    }
}

fn scenario_cost(cfg: &OcpConfig, traj: &[State]) -> f64 {
    let n = traj.len();
    let h = cfg.step_size();
    traj.iter()
        .enumerate()
        .map(|(k, x)| trapezoid_weight(k, n) * (x[0] - cfg.target).powi(2))
        .sum::<f64>()
        * h
}

/// Scenario-averaged trapezoidal cost `(1/N) Σᵢ ∫ (x₁ⁱ − target)² dt`.
pub fn ocp_cost(cfg: &OcpConfig, bundle: &TrajectoryBundle) -> f64 {
    let per: Vec<f64> = bundle.states.iter().map(|t| scenario_cost(cfg, t)).collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Stacked path constraints `c ≤ 0`: for each scenario and RK4 node,
/// `lower − x₁` then `x₁ − ub(t)`. Control bounds are not included.
pub fn constraint_values(cfg: &OcpConfig, bundle: &TrajectoryBundle) -> Vec<f64> {
    let mut out = Vec::with_capacity(bundle.len() * cfg.nodes() * 2);
    for traj in &bundle.states {
        for (k, x) in traj.iter().enumerate() {
            out.push(cfg.x1_lower - x[0]);
            out.push(x[0] - cfg.upper_bound(cfg.time(k)));
        }
    }
    out
}

/// Largest positive path-constraint value (zero when feasible or unconstrained).
pub fn max_violation(cfg: &OcpConfig, bundle: &TrajectoryBundle) -> f64 {
    if !cfg.state_bounds {
        return 0.0;
    }
    constraint_values(cfg, bundle).into_iter().fold(0.0, f64::max)
}

pub fn margins(cfg: &OcpConfig, bundle: &TrajectoryBundle) -> MarginMatrix {
    let values: Vec<Vec<f64>> = bundle
        .states
        .iter()
        .map(|traj| {
            traj.iter()
                .enumerate()
                .map(|(k, x)| cfg.upper_bound(cfg.time(k)) - x[0])
                .collect()
        })
        .collect();
    let min_margin = values
        .iter()
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    MarginMatrix {
        values,
        min_margin,
        substeps: cfg.substeps,
    }
}

/// Augmented-Lagrangian merit for inequality constraints:
/// `J(u) + (1/2ρ) Σⱼ [max(0, μⱼ + ρcⱼ)² − μⱼ²]`.
///
/// Multipliers are laid out as in [`constraint_values`].
pub struct AugmentedLagrangian<'a> {
    pub cfg: &'a OcpConfig,
    pub initial_states: &'a [State],
    pub multipliers: &'a [f64],
    pub rho: f64,
}

impl AugmentedLagrangian<'_> {
    fn per_node(&self) -> usize {
        2 * self.cfg.nodes()
    }

    /// Node sensitivities `∂(merit)/∂x₁(t_k)` and the merit contribution of one scenario.
    fn node_terms(&self, i: usize, traj: &[State]) -> (f64, Vec<f64>) {
        let cfg = self.cfg;
        let n = traj.len();
        let h = cfg.step_size();
        let inv_n = 1.0 / self.initial_states.len() as f64;
        let mu = &self.multipliers[i * self.per_node()..(i + 1) * self.per_node()];
        let mut value = 0.0;
        let mut sens = vec![0.0; n];
        for (k, x) in traj.iter().enumerate() {
            let w = trapezoid_weight(k, n) * h * inv_n;
            let e = x[0] - cfg.target;
            value += w * e * e;
            sens[k] = 2.0 * w * e;
            if cfg.state_bounds {
                let lower = cfg.x1_lower - x[0];
                let upper = x[0] - cfg.upper_bound(cfg.time(k));
                for (c, m, dc) in [(lower, mu[2 * k], -1.0), (upper, mu[2 * k + 1], 1.0)] {
                    let shifted = (m + self.rho * c).max(0.0);
                    value += (shifted * shifted - m * m) / (2.0 * self.rho);
                    sens[k] += shifted * dc;
                }
            }
        }
        (value, sens)
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        let parts = self
            .initial_states
            .par_iter()
            .enumerate()
            .map(|(i, &x0)| {
                let traj = rollout_one(self.cfg, u, x0, i)?;
                Ok(self.node_terms(i, &traj).0)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum())
    }

    /// Merit and its gradient by a discrete adjoint sweep through RK4.
    pub fn value_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cfg = self.cfg;
        let h = cfg.step_size();
        let parts = self
            .initial_states
            .par_iter()
            .enumerate()
            .map(|(i, &x0)| {
                let traj = rollout_one(cfg, u, x0, i)?;
                let (value, sens) = self.node_terms(i, &traj);
                let mut grad = vec![0.0; u.len()];
                let last = traj.len() - 1;
                let mut bar = [sens[last], 0.0];
                for k in (0..last).rev() {
                    let j = k / cfg.substeps;
                    let (bar_x, bar_u) = rk4_step_adjoint(traj[k], u[j], h, bar);
                    grad[j] += bar_u;
                    bar = [bar_x[0] + sens[k], bar_x[1]];
                }
                Ok((value, grad))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut value = 0.0;
        let mut grad = vec![0.0; u.len()];
        for (v, g) in parts {
            value += v;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((value, grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSolverSettings {
    pub feas_tol: f64,
    pub pg_tol: f64,
    pub rho_init: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for OcpSolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-4,
            pg_tol: 1e-5,
            rho_init: 10.0,
            rho_max: 1e6,
            max_outer: 60,
            max_inner: 3000,
        }
    }
}

fn project(cfg: &OcpConfig, u: &mut [f64]) {
    u.iter_mut().for_each(|v| *v = v.clamp(cfg.u_min, cfg.u_max));
}

fn projected_gradient_norm(cfg: &OcpConfig, u: &[f64], g: &[f64]) -> f64 {
    u.iter()
        .zip(g)
        .map(|(ui, gi)| ((ui - gi).clamp(cfg.u_min, cfg.u_max) - ui).abs())
        .fold(0.0, f64::max)
}

struct InnerOutcome {
    u: Vec<f64>,
    pg: f64,
    iterations: usize,
}

/// Projected quasi-Newton descent on the control box.
///
/// Each direction solves the box-constrained model
/// `min gᵀd + ½ dᵀBd  s.t.  u_min ≤ u + d ≤ u_max` by cyclic coordinate
/// descent, with `B` a dense BFGS Hessian estimate. The direction is feasible
/// for every step in `[0, 1]`, so backtracking needs no further projection.
/// `B` falls back to a scaled identity whenever the line search fails.
fn projected_quasi_newton(
    merit: &AugmentedLagrangian<'_>,
    mut u: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerOutcome> {
    const ARMIJO: f64 = 1e-4;
    let cfg = merit.cfg;
    let m = u.len();
    let (mut f, mut g) = merit.value_and_gradient(&u)?;
    let mut pg = projected_gradient_norm(cfg, &u, &g);
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut curvature = if gmax > 0.0 { gmax } else { 1.0 };
    let mut b = identity(m, curvature);
    let mut fresh = true;
    let mut iterations = 0;
    while pg > tol && iterations < max_iter {
        iterations += 1;
        let d = box_qp_direction(&b, &g, &u, cfg.u_min, cfg.u_max);
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();

        let mut step = 1.0;
        let mut accepted = None;
        if slope < 0.0 {
            for _ in 0..50 {
                let mut cand: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + step * b).collect();
                project(cfg, &mut cand);
                // A diverging trial point is simply rejected.
                let fc = merit.value(&cand).unwrap_or(f64::INFINITY);
                if fc <= f + ARMIJO * step * slope {
                    accepted = Some(cand);
                    break;
                }
                step *= 0.5;
            }
        }
        let Some(next) = accepted else {
            if fresh {
                break;
            }
            b = identity(m, curvature);
            fresh = true;
            continue;
        };
        let (fn_, gn) = merit.value_and_gradient(&next)?;
        let s: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sty: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yty: f64 = y.iter().map(|a| a * a).sum();
        let sts: f64 = s.iter().map(|a| a * a).sum();
        if sty > 1e-10 * (sts * yty).sqrt() {
            if fresh {
                curvature = yty / sty;
                b = identity(m, curvature);
            }
            bfgs_update(&mut b, &s, &y, sty);
            fresh = false;
        }
        u = next;
        f = fn_;
        g = gn;
        pg = projected_gradient_norm(cfg, &u, &g);
    }
    Ok(InnerOutcome { u, pg, iterations })
}

/// Minimizes `gᵀd + ½ dᵀBd` over `lo − u ≤ d ≤ hi − u` by coordinate descent.
fn box_qp_direction(b: &[Vec<f64>], g: &[f64], u: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let m = g.len();
    let mut d = vec![0.0; m];
    let mut bd = vec![0.0; m];
    for _ in 0..500 {
        let mut change = 0.0f64;
        for j in 0..m {
            let target = (d[j] - (g[j] + bd[j]) / b[j][j]).clamp(lo - u[j], hi - u[j]);
            let delta = target - d[j];
            if delta != 0.0 {
                for (i, v) in bd.iter_mut().enumerate() {
                    *v += b[i][j] * delta;
                }
                d[j] = target;
                change = change.max(delta.abs());
            }
        }
        if change <= 1e-14 * (1.0 + d.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
            break;
        }
    }
    d
}

fn identity(m: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { scale } else { 0.0 }).collect())
        .collect()
}

/// `B ← B − (Bs)(Bs)ᵀ/(sᵀBs) + yyᵀ/(sᵀy)`
fn bfgs_update(b: &mut [Vec<f64>], s: &[f64], y: &[f64], sty: f64) {
    let m = s.len();
    let bs: Vec<f64> = (0..m).map(|i| (0..m).map(|j| b[i][j] * s[j]).sum()).collect();
    let sbs: f64 = s.iter().zip(&bs).map(|(a, b)| a * b).sum();
    if sbs <= 0.0 {
        return;
    }
    for i in 0..m {
        for j in 0..m {
            b[i][j] += -bs[i] * bs[j] / sbs + y[i] * y[j] / sty;
        }
    }
}

pub fn solve_ocp(
    cfg: &OcpConfig,
    initial_states: &[State],
    warm_start: Option<&ControlSequence>,
) -> Result<OcpSolution> {
    solve_ocp_with(cfg, &OcpSolverSettings::default(), initial_states, warm_start)
}

/// Augmented Lagrangian on the path constraints with projection onto the
/// control box. Multipliers follow `μ ← max(0, μ + ρc)`; `ρ` grows tenfold
/// (up to `rho_max`) whenever the violation fails to drop below a quarter of
/// its previous value.
pub fn solve_ocp_with(
    cfg: &OcpConfig,
    settings: &OcpSolverSettings,
    initial_states: &[State],
    warm_start: Option<&ControlSequence>,
) -> Result<OcpSolution> {
    cfg.validate()?;
    check_states(initial_states)?;
    let mut u = match warm_start {
        Some(w) => {
            w.check(cfg)?;
            w.0.clone()
        }
        None => vec![0.0; cfg.steps],
    };
    project(cfg, &mut u);

    let mut multipliers = vec![0.0; initial_states.len() * 2 * cfg.nodes()];
    let mut rho = settings.rho_init;
    let mut previous_violation = f64::INFINITY;
    let mut cost_history = Vec::new();
    let mut inner_iterations = 0;
    let mut converged = false;
    let mut outer_iterations = 0;
    let mut pg = f64::INFINITY;
    let mut violation = f64::INFINITY;
    let mut cost = f64::NAN;

    while outer_iterations < settings.max_outer {
        outer_iterations += 1;
        let merit = AugmentedLagrangian {
            cfg,
            initial_states,
            multipliers: &multipliers,
            rho,
        };
        let inner = projected_quasi_newton(&merit, u, settings.pg_tol, settings.max_inner)?;
        u = inner.u;
        pg = inner.pg;
        inner_iterations += inner.iterations;

        let bundle = rollout(cfg, &ControlSequence(u.clone()), initial_states)?;
        cost = ocp_cost(cfg, &bundle);
        cost_history.push(cost);
        violation = max_violation(cfg, &bundle);
        if cfg.state_bounds {
            for (m, c) in multipliers.iter_mut().zip(constraint_values(cfg, &bundle)) {
                *m = (*m + rho * c).max(0.0);
            }
        }
        if violation <= settings.feas_tol && pg <= settings.pg_tol {
            converged = true;
            break;
        }
        if violation > settings.feas_tol && violation > 0.25 * previous_violation {
            rho = (rho * 10.0).min(settings.rho_max);
        }
        previous_violation = violation;
    }

    Ok(OcpSolution {
        u: ControlSequence(u),
        cost,
        max_violation: violation,
        outer_iterations,
        inner_iterations,
        projected_gradient: pg,
        converged,
        cost_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::TRAIN_STREAM;

    fn harmonic(x: State, _u: f64) -> State {
        [x[1], -x[0]]
    }

    fn endpoint_error(h: f64, steps: usize) -> f64 {
        let x = integrate(&harmonic, [1.0, 0.0], &vec![0.0; steps], h, 1);
        let t = h * steps as f64;
        let end = x[steps];
        ((end[0] - t.cos()).powi(2) + (end[1] + t.sin()).powi(2)).sqrt()
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(vdp_rhs([0.0, 0.0], 0.0), [0.0, 0.0]);
        assert_eq!(vdp_rhs([1.0, 1.0], 0.0), [1.0, -1.0]);
        assert_eq!(vdp_rhs([0.0, 0.0], 5.0), [0.0, 5.0]);
    }

    #[test]
    fn rk4_matches_rotation() {
        assert!(endpoint_error(0.01, 100) <= 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Reference at h/16 against the analytic solution; coarse errors at h and h/2.
        let h = 0.1;
        let e1 = endpoint_error(h, 10);
        let e2 = endpoint_error(h / 2.0, 20);
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rollout_starts_at_initial_state_and_is_deterministic() {
        let cfg = OcpConfig::default();
        let x0 = vec![[0.51, -0.02], [0.49, 0.1]];
        let u = ControlSequence((0..10).map(|k| k as f64).collect());
        let b1 = rollout(&cfg, &u, &x0).unwrap();
        let b2 = rollout(&cfg, &u, &x0).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(b1.states[0][0], x0[0]);
        assert_eq!(b1.states[1][0], x0[1]);
        assert_eq!(b1.states[0].len(), cfg.nodes());
    }

    #[test]
    fn rollout_reports_divergence() {
        let cfg = OcpConfig {
            horizon: 50.0,
            u_max: 1e300,
            u_min: -1e300,
            ..OcpConfig::default()
        };
        let err = rollout(&cfg, &ControlSequence(vec![1e300; 10]), &[[0.5, 0.0]]).unwrap_err();
        assert!(matches!(err, crate::Error::Numerical(ref m) if m.contains("scenario 0")));
    }

    fn constant_bundle(cfg: &OcpConfig, x1: impl Fn(f64) -> f64) -> TrajectoryBundle {
        let traj = (0..cfg.nodes()).map(|k| [x1(cfg.time(k)), 0.0]).collect();
        TrajectoryBundle { states: vec![traj] }
    }

    #[test]
    fn cost_examples() {
        let cfg = OcpConfig::default();
        assert_eq!(ocp_cost(&cfg, &constant_bundle(&cfg, |_| 3.0)), 0.0);
        assert!((ocp_cost(&cfg, &constant_bundle(&cfg, |_| 2.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_matches_independent_quadratures() {
        let x0 = [[0.5, 0.0]];
        let u = ControlSequence(vec![20.0, 15.0, 5.0, 0.0, -5.0, -5.0, 0.0, 5.0, 2.0, 0.0]);
        let cfg = OcpConfig::default();
        let b = rollout(&cfg, &u, &x0).unwrap();
        let c = ocp_cost(&cfg, &b);
        // Same nodes: mean of the left and right Riemann sums.
        let h = cfg.step_size();
        let f: Vec<f64> = b.states[0].iter().map(|x| (x[0] - 3.0).powi(2)).collect();
        let left: f64 = f[..f.len() - 1].iter().sum::<f64>() * h;
        let right: f64 = f[1..].iter().sum::<f64>() * h;
        assert!((c - 0.5 * (left + right)).abs() < 1e-12);

        // Refinement: the discrepancy to a fine-grid Riemann sum shrinks as O(h²).
        let fine = OcpConfig {
            substeps: 640,
            ..cfg.clone()
        };
        let bf = rollout(&fine, &u, &x0).unwrap();
        let hf = fine.step_size();
        let fs: Vec<f64> = bf.states[0].iter().map(|x| (x[0] - 3.0).powi(2)).collect();
        let reference = 0.5 * (fs[..fs.len() - 1].iter().sum::<f64>() + fs[1..].iter().sum::<f64>()) * hf;
        let err = |substeps: usize| {
            let c = OcpConfig {
                substeps,
                ..cfg.clone()
            };
            (ocp_cost(&c, &rollout(&c, &u, &x0).unwrap()) - reference).abs()
        };
        let ratio = err(10) / err(20);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
        assert!(err(40) < 1e-4);
    }

    #[test]
    fn constraint_examples() {
        let cfg = OcpConfig::default();
        let c = constraint_values(&cfg, &constant_bundle(&cfg, |_| 1.0));
        for k in 0..cfg.nodes() {
            assert_eq!(c[2 * k], -1.25);
            let expected = 1.0 - 2.0 - 0.1 * (10.0 * cfg.time(k)).cos();
            assert!((c[2 * k + 1] - expected).abs() <= 1e-15);
            assert!(c[2 * k + 1] < 0.0);
        }
        let c = constraint_values(&cfg, &constant_bundle(&cfg, |_| 2.1));
        assert!(c[1].abs() <= 1e-15);

        let delta = 0.125;
        let shifted = constraint_values(&cfg, &constant_bundle(&cfg, |_| 1.0 + delta));
        let base = constraint_values(&cfg, &constant_bundle(&cfg, |_| 1.0));
        for k in 0..cfg.nodes() {
            assert!((shifted[2 * k] - base[2 * k] + delta).abs() < 1e-15);
            assert!((shifted[2 * k + 1] - base[2 * k + 1] - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn margin_examples() {
        let cfg = OcpConfig::default();
        let m = margins(&cfg, &constant_bundle(&cfg, |t| 2.0 + 0.1 * (10.0 * t).cos()));
        assert!(m.values[0].iter().all(|v| *v == 0.0));
        let m = margins(&cfg, &constant_bundle(&cfg, |_| 0.0));
        assert!((m.values[0][0] - 2.1).abs() < 1e-15);
        let grid = m.control_grid().unwrap();
        assert_eq!(grid.dim(), cfg.steps + 1);
        assert!(grid.row(0).iter().all(|v| m.min_margin[0] <= *v));
    }

    fn scenarios(n: usize, seed: u64) -> Vec<State> {
        OcpConfig::default().sample_initial_states(n, &mut SampleStream::new(seed, TRAIN_STREAM))
    }

    #[test]
    fn adjoint_matches_central_differences() {
        let cfg = OcpConfig::default();
        let x0 = scenarios(5, 1);
        let mut rng = SampleStream::new(2, 0);
        let mu: Vec<f64> = (0..x0.len() * 2 * cfg.nodes()).map(|_| 0.01 * rng.uniform()).collect();
        let merit = AugmentedLagrangian {
            cfg: &cfg,
            initial_states: &x0,
            multipliers: &mu,
            rho: 100.0,
        };
        for _ in 0..5 {
            let u: Vec<f64> = (0..10).map(|_| rng.uniform_in(-40.0, 40.0)).collect();
            let (_, g) = merit.value_and_gradient(&u).unwrap();
            let fd: Vec<f64> = (0..10)
                .map(|j| {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[j] += 1e-6;
                    dn[j] -= 1e-6;
                    (merit.value(&up).unwrap() - merit.value(&dn).unwrap()) / 2e-6
                })
                .collect();
            let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err <= 1e-4 * norm, "relative error {}", err / norm);
        }
    }

    #[test]
    fn unconstrained_descent() {
        let cfg = OcpConfig {
            u_min: -1e6,
            u_max: 1e6,
            state_bounds: false,
            ..OcpConfig::default()
        };
        let x0 = scenarios(10, 3);
        let start = ocp_cost(&cfg, &rollout(&cfg, &ControlSequence::zeros(10), &x0).unwrap());
        let sol = solve_ocp(&cfg, &x0, None).unwrap();
        let mut prev = start;
        for c in &sol.cost_history {
            assert!(*c < prev);
            prev = *c;
        }
    }

    #[test]
    fn small_constrained_solve_is_feasible() {
        let cfg = OcpConfig::default();
        let x0 = scenarios(20, 4);
        let sol = solve_ocp(&cfg, &x0, None).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert!(sol.max_violation <= 1e-4);
        assert!(sol.u.0.iter().all(|u| (-40.0..=40.0).contains(u)));
        let bundle = rollout(&cfg, &sol.u, &x0).unwrap();
        assert!(constraint_values(&cfg, &bundle).iter().all(|c| *c <= 1e-4));
    }
}
