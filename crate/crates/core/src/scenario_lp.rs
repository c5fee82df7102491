//! Min-max robust regression: `minimize S s.t. |Aᵢx − bᵢ| ≤ S` over scalar
//! data drawn as `Aᵢ = 3 + 3n₁`, `bᵢ = Aᵢx* + 5n₂`, `n₁, n₂ ~ N(0, 1)`,
//! `x* ~ Uniform[2, 3]`.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::rng::{SampleStream, TRAIN_STREAM};

const ACTIVE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionDataSpec {
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionScenarios {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Ground truth; reported, never used by the solver.
    pub x_star: f64,
}

impl RegressionScenarios {
    pub fn new(a: Vec<f64>, b: Vec<f64>, x_star: f64) -> Result<Self> {
        if a.len() != b.len() {
            return input(format!("{} coefficients but {} targets", a.len(), b.len()));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return input("regression data must be finite");
        }
        Ok(Self { a, b, x_star })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimaxSolution {
    pub x: f64,
    pub s: f64,
    /// Indices (into the full scenario set) whose residual is within `1e-8` of `S`.
    pub active: Vec<usize>,
    /// Every coefficient on the subset was zero, so `x` is arbitrary.
    pub degenerate: bool,
}

/// Draws the training set on [`TRAIN_STREAM`].
///
/// Draw order: `x*` first, then `(n₁, n₂)` per scenario.
pub fn generate(spec: &RegressionDataSpec) -> Result<RegressionScenarios> {
    if spec.n == 0 {
        return input("regression needs at least one scenario");
    }
    let mut rng = SampleStream::new(spec.seed, TRAIN_STREAM);
    let x_star = rng.uniform_in(2.0, 3.0);
    Ok(draw(&mut rng, spec.n, x_star))
}

/// Draws `n` scenarios around a fixed `x*`.
pub fn draw(rng: &mut SampleStream, n: usize, x_star: f64) -> RegressionScenarios {
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let n1 = rng.standard_normal();
        let n2 = rng.standard_normal();
        let ai = 3.0 + 3.0 * n1;
        a.push(ai);
        b.push(ai * x_star + 5.0 * n2);
    }
    RegressionScenarios { a, b, x_star }
}

/// `max_{i ∈ subset} |Aᵢx − bᵢ|`
pub fn worst_residual(scen: &RegressionScenarios, x: f64, subset: &[usize]) -> f64 {
    subset
        .iter()
        .map(|&i| (scen.a[i] * x - scen.b[i]).abs())
        .fold(0.0, f64::max)
}

/// `Aᵢx − bᵢ` for `i ∈ subset`, in subset order.
pub fn residuals(scen: &RegressionScenarios, x: f64, subset: &[usize]) -> Vec<f64> {
    subset.iter().map(|&i| scen.a[i] * x - scen.b[i]).collect()
}

/// Exact minimizer of `g(x) = max_{i ∈ subset} |Aᵢx − bᵢ|`.
///
/// `g` is convex and piecewise linear, so its minimum sits where two pieces
/// cross or where a single piece vanishes. Candidates are every root
/// `bᵢ/Aᵢ` and every crossing `Aᵢx − bᵢ = ±(Aⱼx − bⱼ)`; pairs with a zero
/// denominator are parallel and skipped. The first candidate attaining the
/// smallest `g` wins.
pub fn solve_minimax(scen: &RegressionScenarios, subset: &[usize]) -> Result<MinimaxSolution> {
    if subset.is_empty() {
        return input("minimax subset is empty");
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= scen.len()) {
        return input(format!("subset index {bad} out of range for {} scenarios", scen.len()));
    }
    let (a, b) = (&scen.a, &scen.b);
    let mut best_x = 0.0;
    let mut best_g = f64::INFINITY;
    let mut consider = |x: f64| {
        if x.is_finite() {
            let g = worst_residual(scen, x, subset);
            if g < best_g {
                best_g = g;
                best_x = x;
            }
        }
    };
    for (p, &i) in subset.iter().enumerate() {
        if a[i] != 0.0 {
            consider(b[i] / a[i]);
        }
        for &j in &subset[p + 1..] {
            let diff = a[i] - a[j];
            if diff != 0.0 {
                consider((b[i] - b[j]) / diff);
            }
            let sum = a[i] + a[j];
            if sum != 0.0 {
                consider((b[i] + b[j]) / sum);
            }
        }
    }
    let degenerate = subset.iter().all(|&i| a[i] == 0.0);
    if degenerate {
        best_x = 0.0;
        best_g = worst_residual(scen, 0.0, subset);
    }
    let active = subset
        .iter()
        .copied()
        .filter(|&i| (a[i] * best_x - b[i]).abs() >= best_g - ACTIVE_TOL)
        .collect();
    Ok(MinimaxSolution {
        x: best_x,
        s: best_g,
        active,
        degenerate,
    })
}
