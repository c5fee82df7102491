//! Sparse reduced-set approximation of the empirical kernel mean embedding.
//!
//! Minimizes `‖Σ αᵢ φ(ξᵢ) − μ̂‖²_H + λ Σ wᵢ |αᵢ|` over `α ∈ ℝᴺ`, where
//! `μ̂ = (1/N) Σ φ(ξᵢ)`. Expanding the RKHS norm with the Gram matrix `K` and
//! `β = (1/N, …, 1/N)` gives the smooth part
//! `f(α) = αᵀKα − 2βᵀKα + βᵀKβ = (α−β)ᵀK(α−β)`, which is convex because `K`
//! is positive semidefinite. Scenarios whose coefficient is exactly zero are
//! discarded.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::kernels::{clamp_mmd, uniform_weights, GramMatrix};

pub const DEFAULT_ZERO_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;
pub const DEFAULT_GRAD_TOL: f64 = 1e-9;

/// Lower end of the λ bracket searched by [`reduce_with_budget`].
pub const BUDGET_LAMBDA_MIN: f64 = 1e-8;
const BUDGET_BISECTIONS: usize = 40;

const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-10;
const POLISH_EVERY: usize = 100;
const FINISH_STEPS_PER_SCENARIO: usize = 10;
const RIDGE: f64 = 1e-12;
const OBJECTIVE_ROUNDOFF: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct ReductionConfig {
    pub lambda: f64,
    /// Per-scenario L1 scaling, all strictly positive.
    pub weights: Vec<f64>,
    pub zero_tol: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Restrict `α ≥ 0`.
    pub nonneg: bool,
}

impl ReductionConfig {
    pub fn new(lambda: f64, weights: Vec<f64>) -> Self {
        Self {
            lambda,
            weights,
            zero_tol: DEFAULT_ZERO_TOL,
            max_iter: DEFAULT_MAX_ITER,
            grad_tol: DEFAULT_GRAD_TOL,
            nonneg: false,
        }
    }

    pub fn uniform(lambda: f64, n: usize) -> Self {
        Self::new(lambda, vec![1.0; n])
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return input(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if self.weights.len() != n {
            return input(format!("{} scaling weights for {n} scenarios", self.weights.len()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return input("scaling weights must be finite and strictly positive");
        }
        if !(self.zero_tol.is_finite() && self.zero_tol > 0.0) {
            return input("zero_tol must be positive");
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return input("grad_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionResult {
    pub lambda: f64,
    pub alpha: Vec<f64>,
    /// Zero-based indices with `|αᵢ| ≤ zero_tol`.
    pub discarded: Vec<usize>,
    pub retained: Vec<usize>,
    pub mmd_sq_achieved: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl ReductionResult {
    /// Number of discarded scenarios.
    pub fn kappa(&self) -> usize {
        self.discarded.len()
    }
}

/// Smooth part and gradient of the reduced-set objective, sharing `Kβ`.
struct Problem<'a> {
    k: &'a GramMatrix,
    k_beta: Vec<f64>,
    lambda: f64,
    weights: &'a [f64],
    nonneg: bool,
}

impl<'a> Problem<'a> {
    fn new(k: &'a GramMatrix, lambda: f64, weights: &'a [f64], nonneg: bool) -> Self {
        let beta = uniform_weights(k.len());
        Self {
            k_beta: k.apply(&beta),
            k,
            lambda,
            weights,
            nonneg,
        }
    }

    fn n(&self) -> usize {
        self.k_beta.len()
    }

    /// `f(α) = (α−β)ᵀ(Kα − Kβ)` from a precomputed `Kα`.
    fn smooth(&self, alpha: &[f64], k_alpha: &[f64]) -> f64 {
        let beta = 1.0 / self.n() as f64;
        alpha
            .iter()
            .zip(k_alpha)
            .zip(&self.k_beta)
            .map(|((a, ka), kb)| (a - beta) * (ka - kb))
            .sum()
    }

    fn penalty(&self, alpha: &[f64]) -> f64 {
        self.lambda * alpha.iter().zip(self.weights).map(|(a, w)| w * a.abs()).sum::<f64>()
    }

    fn objective(&self, alpha: &[f64], k_alpha: &[f64]) -> f64 {
        self.smooth(alpha, k_alpha) + self.penalty(alpha)
    }

    fn gradient(&self, k_alpha: &[f64]) -> Vec<f64> {
        k_alpha
            .iter()
            .zip(&self.k_beta)
            .map(|(ka, kb)| 2.0 * (ka - kb))
            .collect()
    }

    /// Weighted soft-threshold with per-coordinate threshold `λwᵢ·step`.
    fn prox(&self, v: &mut [f64], step: f64) {
        for (x, w) in v.iter_mut().zip(self.weights) {
            let tau = self.lambda * w * step;
            *x = if self.nonneg {
                (*x - tau).max(0.0)
            } else if *x > tau {
                *x - tau
            } else if *x < -tau {
                *x + tau
            } else {
                0.0
            };
        }
    }

    fn kkt(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..alpha.len() {
            let bound = self.lambda * self.weights[i];
            let r = if alpha[i] > 0.0 {
                (grad[i] + bound).abs()
            } else if alpha[i] < 0.0 {
                (grad[i] - bound).abs()
            } else if self.nonneg {
                (-grad[i] - bound).max(0.0)
            } else {
                (grad[i].abs() - bound).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }

    /// Lower objective, or equal up to round-off with a smaller KKT residual.
    fn improves(&self, x: &[f64], kx: &[f64], fx: f64, p: &[f64], kp: &[f64], fp: f64) -> bool {
        fp <= fx
            || (fp - fx <= OBJECTIVE_ROUNDOFF * fx.abs().max(1.0)
                && self.kkt(p, &self.gradient(kp)) < self.kkt(x, &self.gradient(kx)))
    }

    fn violates_zero(&self, i: usize, grad: &[f64], tol: f64) -> f64 {
        let bound = self.lambda * self.weights[i];
        if self.nonneg {
            -grad[i] - bound - tol
        } else {
            grad[i].abs() - bound - tol
        }
    }

    /// Feature-sign active-set search started from `start`.
    ///
    /// On the active set `A` with fixed signs `s`, the objective is the
    /// quadratic `f(α) + λ Σ wᵢsᵢαᵢ`. Each step solves its Newton system with a
    /// small ridge, `(2K_AA + εI) d = −(∇f + λws)_A`, then moves along `d`
    /// by the exact line-search step, cut at the first coordinate reaching
    /// zero (which leaves `A`). Along directions where `K_AA` is numerically
    /// singular the ridge turns the step into a long move that only the
    /// sign cut stops, which is how redundant coordinates are shed. Once the
    /// active set is stationary the worst violating zero joins it.
    ///
    /// Every accepted step lowers the objective. Returns the final point, `Kα`
    /// and the objective.
    fn finish_active_set(&self, start: &[f64], tol: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let n = start.len();
        let mut x = start.to_vec();
        let mut signs: Vec<f64> = x.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
        let mut kx = self.k.apply(&x);
        let ridge = RIDGE * self.k.max_eigenvalue().max(f64::MIN_POSITIVE);
        for _ in 0..FINISH_STEPS_PER_SCENARIO * n + FINISH_STEPS_PER_SCENARIO {
            let g = self.gradient(&kx);
            if self.kkt(&x, &g) <= tol {
                break;
            }
            let active: Vec<usize> = (0..n).filter(|&i| signs[i] != 0.0).collect();
            let stationary = active
                .iter()
                .all(|&i| (g[i] + self.lambda * self.weights[i] * signs[i]).abs() <= tol);
            if stationary {
                let entering = (0..n)
                    .filter(|&i| signs[i] == 0.0)
                    .map(|i| (i, self.violates_zero(i, &g, tol)))
                    .filter(|&(_, v)| v > 0.0)
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                let Some((j, _)) = entering else { break };
                signs[j] = if self.nonneg { 1.0 } else { -g[j].signum() };
                continue;
            }

            let m = active.len();
            let mut h = nalgebra::DMatrix::from_fn(m, m, |a, b| 2.0 * self.k.get(active[a], active[b]));
            for a in 0..m {
                h[(a, a)] += ridge;
            }
            let rhs = nalgebra::DVector::from_fn(m, |a, _| {
                let i = active[a];
                -(g[i] + self.lambda * self.weights[i] * signs[i])
            });
            let Some(chol) = nalgebra::Cholesky::new(h) else { break };
            let d = chol.solve(&rhs);
            if d.iter().any(|v| !v.is_finite()) {
                break;
            }

            let mut dir = vec![0.0; n];
            for (a, &i) in active.iter().enumerate() {
                dir[i] = d[a];
            }
            let kd = self.k.apply(&dir);
            // φ(t) = φ(0) + t·slope + t²·curv along d for fixed signs.
            let slope: f64 = (0..m).map(|a| -rhs[a] * d[a]).sum();
            let curv: f64 = dir.iter().zip(&kd).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                break;
            }
            let mut t = if curv > 0.0 {
                -slope / (2.0 * curv)
            } else {
                f64::INFINITY
            };
            let mut blocking = None;
            for &i in &active {
                if signs[i] * dir[i] < 0.0 {
                    let ti = -x[i] / dir[i];
                    if ti < t {
                        t = ti;
                        blocking = Some(i);
                    }
                }
            }
            if !(t.is_finite() && t > 0.0) {
                break;
            }
            let mut next = x.clone();
            for &i in &active {
                next[i] += t * dir[i];
                if next[i] * signs[i] < 0.0 {
                    next[i] = 0.0;
                }
            }
            if let Some(i) = blocking {
                next[i] = 0.0;
                signs[i] = 0.0;
            }
            let knext = self.k.apply(&next);
            if self.objective(&next, &knext) > self.objective(&x, &kx) + 1e-15 {
                break;
            }
            x = next;
            kx = knext;
        }
        let f = self.objective(&x, &kx);
        (x, kx, f)
    }
}

/// Largest eigenvalue of `K` by power iteration.
pub fn largest_eigenvalue(k: &GramMatrix) -> f64 {
    let n = k.len();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i % 7) as f64)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = k.apply(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        v = w.into_iter().map(|x| x / norm).collect();
        let done = (next - estimate).abs() <= POWER_TOL * next.abs().max(1.0);
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

/// Smallest λ at which `α = 0` is optimal for every coordinate:
/// `2 · maxᵢ |(Kβ)ᵢ| / minᵢ wᵢ`.
pub fn kill_threshold(k: &GramMatrix, weights: &[f64]) -> f64 {
    let k_beta = k.apply(&uniform_weights(k.len()));
    let g = k_beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let wmin = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    2.0 * g / wmin
}

/// Full objective `f(α) + λ Σ wᵢ|αᵢ|` at an arbitrary point.
pub fn reduction_objective(k: &GramMatrix, lambda: f64, weights: &[f64], alpha: &[f64]) -> f64 {
    let p = Problem::new(k, lambda, weights, false);
    p.objective(alpha, &k.apply(alpha))
}

/// Worst KKT violation of `α` for the weighted-L1 problem.
pub fn kkt_residual(k: &GramMatrix, cfg: &ReductionConfig, alpha: &[f64]) -> f64 {
    let p = Problem::new(k, cfg.lambda, &cfg.weights, cfg.nonneg);
    p.kkt(alpha, &p.gradient(&k.apply(alpha)))
}

pub fn reduce(k: &GramMatrix, cfg: &ReductionConfig) -> Result<ReductionResult> {
    reduce_from(k, cfg, None)
}

/// Accelerated proximal gradient with monotone restart, started from `init`
/// (default `β`).
///
/// Step `1/L` with `L = 2 λ_max(K)`. A momentum step that would increase the
/// objective is rejected and momentum restarted, so the accepted objective
/// sequence is non-increasing. Every few iterations the iterate is handed to
/// an active-set search on its support, which resolves the nearly singular
/// directions of `K` that slow proximal steps to a crawl; its result is kept
/// only if the objective does not increase beyond round-off.
pub fn reduce_from(k: &GramMatrix, cfg: &ReductionConfig, init: Option<&[f64]>) -> Result<ReductionResult> {
    solve(k, cfg, init, None)
}

/// [`reduce_from`], recording the objective after every accepted update.
fn solve(
    k: &GramMatrix,
    cfg: &ReductionConfig,
    init: Option<&[f64]>,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ReductionResult> {
    let n = k.len();
    cfg.validate(n)?;
    let problem = Problem::new(k, cfg.lambda, &cfg.weights, cfg.nonneg);

    let lipschitz = 2.0 * largest_eigenvalue(k).max(k.max_eigenvalue());
    let mut x: Vec<f64> = match init {
        Some(a) if a.len() == n && a.iter().all(|v| v.is_finite()) => a.to_vec(),
        Some(_) => return input("warm start must have length N and finite entries"),
        None => uniform_weights(n),
    };
    if cfg.nonneg {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    if lipschitz <= 0.0 {
        // K = 0: every α is optimal for f, the penalty alone decides.
        let alpha = if cfg.lambda > 0.0 { vec![0.0; n] } else { x };
        return finish(&problem, cfg, alpha, 0, true);
    }
    let step = 1.0 / lipschitz;

    let mut kx = k.apply(&x);
    let mut fx = problem.objective(&x, &kx);
    let mut record = |f: f64| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(f);
        }
    };
    record(fx);
    let mut y = x.clone();
    let mut ky = kx.clone();
    let mut t = 1.0f64;
    let mut restarted = false;
    let mut iterations = 0;
    let mut converged = problem.kkt(&x, &problem.gradient(&kx)) <= cfg.grad_tol;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let g = problem.gradient(&ky);
        let mut z: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        problem.prox(&mut z, step);
        let kz = k.apply(&z);
        let fz = problem.objective(&z, &kz);

        if fz <= fx {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let m = (t - 1.0) / t_next;
            for i in 0..n {
                y[i] = z[i] + m * (z[i] - x[i]);
                ky[i] = kz[i] + m * (kz[i] - kx[i]);
            }
            x = z;
            kx = kz;
            fx = fz;
            record(fx);
            t = t_next;
            restarted = false;
        } else {
            if restarted {
                // A plain step from x failed to descend: round-off floor.
                let (p, kp, fp) = problem.finish_active_set(&x, cfg.grad_tol);
                if problem.improves(&x, &kx, fx, &p, &kp, fp) {
                    x = p;
                    kx = kp;
                    fx = fp;
                    record(fx);
                }
                converged = problem.kkt(&x, &problem.gradient(&kx)) <= cfg.grad_tol;
                break;
            }
            y.clone_from(&x);
            ky.clone_from(&kx);
            t = 1.0;
            restarted = true;
            continue;
        }

        if iterations % POLISH_EVERY == 0 {
            let (p, kp, fp) = problem.finish_active_set(&x, cfg.grad_tol);
            if problem.improves(&x, &kx, fx, &p, &kp, fp) {
                x = p;
                kx = kp;
                fx = fp;
                record(fx);
                y.clone_from(&x);
                ky.clone_from(&kx);
                t = 1.0;
            }
        }
        converged = problem.kkt(&x, &problem.gradient(&kx)) <= cfg.grad_tol;
    }
    finish(&problem, cfg, x, iterations, converged)
}

fn finish(
    problem: &Problem<'_>,
    cfg: &ReductionConfig,
    alpha: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<ReductionResult> {
    let k_alpha = problem.k.apply(&alpha);
    let smooth = problem.smooth(&alpha, &k_alpha);
    let mmd_sq_achieved = clamp_mmd(smooth)?;
    let objective = smooth + problem.penalty(&alpha);
    let kkt_residual = problem.kkt(&alpha, &problem.gradient(&k_alpha));
    let (discarded, retained) = select_indices(&alpha, cfg.zero_tol);
    Ok(ReductionResult {
        lambda: cfg.lambda,
        alpha,
        discarded,
        retained,
        mmd_sq_achieved,
        objective,
        iterations,
        converged,
        kkt_residual,
    })
}

/// Sparsest solution on a bisected λ path whose RKHS distance stays within
/// `epsilon`. `cfg.lambda` is ignored.
///
/// If even `λ = 1e-8` misses the budget, that result is returned with
/// `converged = false`.
pub fn reduce_with_budget(k: &GramMatrix, cfg: &ReductionConfig, epsilon: f64) -> Result<ReductionResult> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return input(format!("budget must be positive, got {epsilon}"));
    }
    cfg.validate(k.len())?;
    let at = |lambda: f64, init: Option<&[f64]>| {
        let c = ReductionConfig { lambda, ..cfg.clone() };
        reduce_from(k, &c, init)
    };
    let within = |r: &ReductionResult| r.mmd_sq_achieved.sqrt() <= epsilon;

    let lambda_kill = kill_threshold(k, &cfg.weights).max(BUDGET_LAMBDA_MIN);
    let top = at(lambda_kill, None)?;
    if within(&top) {
        return Ok(top);
    }
    let bottom = at(BUDGET_LAMBDA_MIN, None)?;
    if !within(&bottom) {
        return Ok(ReductionResult {
            converged: false,
            ..bottom
        });
    }

    let (mut lo, mut hi) = (BUDGET_LAMBDA_MIN.ln(), lambda_kill.ln());
    let mut best = bottom;
    for _ in 0..BUDGET_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let r = at(mid.exp(), Some(&best.alpha))?;
        if within(&r) {
            lo = mid;
            best = r;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Splits indices into `(discarded, retained)` by `|αᵢ| ≤ zero_tol`.
pub fn select_indices(alpha: &[f64], zero_tol: f64) -> (Vec<usize>, Vec<usize>) {
    (0..alpha.len()).partition(|&i| alpha[i].abs() <= zero_tol)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    Uniform,
    /// `wᵢ ∝ exp(T·|ξ̂ᵢ|)` on regression residuals (one-sided `exp(T·ξ̂ᵢ)` when not symmetric).
    RegressionSoftmax,
    /// `wᵢ ∝ exp(C / max(ε_s, ε_s + mᵢ))` on per-trajectory minimum margins.
    OcpSoftmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingParams {
    pub kind: ScalingKind,
    /// Softness `T` of the regression softmax.
    pub softness: f64,
    /// Numerator `C` of the OCP softmax.
    pub c: f64,
    /// Denominator floor `ε_s` of the OCP softmax.
    pub eps_s: f64,
    pub symmetric: bool,
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self {
            kind: ScalingKind::Uniform,
            softness: 1.0,
            c: 0.1,
            eps_s: 0.05,
            symmetric: true,
        }
    }
}

impl ScalingParams {
    pub fn regression() -> Self {
        Self {
            kind: ScalingKind::RegressionSoftmax,
            ..Self::default()
        }
    }

    pub fn ocp() -> Self {
        Self {
            kind: ScalingKind::OcpSoftmax,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("softness", self.softness), ("c", self.c), ("eps_s", self.eps_s)] {
            if !(v.is_finite() && v > 0.0) {
                return input(format!("scaling {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Positive L1 scaling weights normalized to mean one.
///
/// `quantities` are regression residuals or per-scenario minimum margins,
/// depending on `params.kind`. Exponents are shifted by their maximum before
/// exponentiation and floored at `-700` so no weight underflows to zero.
pub fn scaling_weights(params: &ScalingParams, quantities: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    if quantities.is_empty() {
        return input("scaling weights need at least one scenario");
    }
    if quantities.iter().any(|q| !q.is_finite()) {
        return input("scaling inputs must be finite");
    }
    let exponents: Vec<f64> = match params.kind {
        ScalingKind::Uniform => return Ok(vec![1.0; quantities.len()]),
        ScalingKind::RegressionSoftmax => quantities
            .iter()
            .map(|r| params.softness * if params.symmetric { r.abs() } else { *r })
            .collect(),
        ScalingKind::OcpSoftmax => quantities
            .iter()
            .map(|m| params.c / (params.eps_s + m).max(params.eps_s))
            .collect(),
    };
    let top = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = exponents.iter().map(|e| (e - top).max(-700.0).exp()).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|r| r / mean).collect())
}
