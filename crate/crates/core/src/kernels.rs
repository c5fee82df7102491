//! Positive-definite kernels, Gram matrices and squared maximum mean
//! discrepancy between weighted expansions over one scenario set.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{input, numerical, Result};

/// Default Gaussian bandwidth, `1/√2`.
pub const DEFAULT_BANDWIDTH: f64 = std::f64::consts::FRAC_1_SQRT_2;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-8;
const MMD_CLAMP_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `exp(−‖x−y‖² / (2σ²))`
    Gaussian { bandwidth: f64 },
    /// `(xᵀy + c)ᵖ`
    Polynomial { degree: u32, offset: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian {
            bandwidth: DEFAULT_BANDWIDTH,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                if !(bandwidth.is_finite() && bandwidth > 0.0) {
                    return input(format!("gaussian bandwidth must be positive, got {bandwidth}"));
                }
            }
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 {
                    return input("polynomial degree must be at least 1");
                }
                if !(offset.is_finite() && offset >= 0.0) {
                    return input(format!("polynomial offset must be nonnegative, got {offset}"));
                }
            }
        }
        Ok(())
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }
}

/// Evaluates `k(x, y)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != y.len() {
        return input(format!("dimension mismatch: {} vs {}", x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return input("kernel arguments must be finite");
    }
    Ok(spec.eval_unchecked(x, y))
}

/// `N` realizations of a `d`-dimensional uncertainty, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl ScenarioMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return input("scenario matrix needs at least one row");
        }
        let d = rows[0].len();
        if d == 0 {
            return input("scenario dimension must be at least 1");
        }
        let mut data = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return input(format!("row {i} has {} entries, expected {d}", row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, n, d)
    }

    /// Row-major constructor.
    pub fn from_flat(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return input("scenario matrix must be at least 1x1");
        }
        if data.len() != n * d {
            return input(format!("expected {} entries, got {}", n * d, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return input(format!("non-finite entry in row {}", pos / d));
        }
        Ok(Self { data, n, d })
    }

    /// One-dimensional scenarios, e.g. regression residuals.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.to_vec(), values.len(), 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return input(format!("index {i} out of range for {} scenarios", self.n));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_flat(data, indices.len(), self.d)
    }
}

/// Symmetric positive semidefinite matrix of pairwise kernel values.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    k: DMatrix<f64>,
    min_eigenvalue: f64,
    max_eigenvalue: f64,
}

impl GramMatrix {
    /// Validates symmetry and positive semidefiniteness.
    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        let n = k.nrows();
        if n == 0 || k.ncols() != n {
            return input(format!(
                "gram matrix must be square and nonempty, got {}x{}",
                n,
                k.ncols()
            ));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return input("gram matrix has non-finite entries");
        }
        let scale = k.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (k[(i, j)] - k[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return numerical(format!("gram matrix not symmetric at ({i}, {j})"));
                }
            }
        }
        let eig = SymmetricEigen::new(k.clone()).eigenvalues;
        let min_eigenvalue = eig.min();
        let max_eigenvalue = eig.max();
        if min_eigenvalue < -PSD_TOL * max_eigenvalue.max(1.0) {
            return numerical(format!(
                "gram matrix not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}"
            ));
        }
        Ok(Self {
            k,
            min_eigenvalue,
            max_eigenvalue,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return input("gram matrix rows must all have length N");
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k[(i, j)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    /// `K v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let out = &self.k * DVector::from_column_slice(v);
        out.as_slice().to_vec()
    }

    /// `uᵀ K v`
    pub fn quad_form(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .enumerate()
            .map(|(i, ui)| ui * v.iter().enumerate().map(|(j, vj)| self.k[(i, j)] * vj).sum::<f64>())
            .sum()
    }
}

/// `K[i][j] = k(ξᵢ, ξⱼ)`.
pub fn gram(spec: &KernelSpec, scenarios: &ScenarioMatrix) -> Result<GramMatrix> {
    spec.validate()?;
    let n = scenarios.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = scenarios.row(i);
        k[(i, i)] = spec.eval_unchecked(xi, xi);
        for j in 0..i {
            let v = spec.eval_unchecked(xi, scenarios.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    GramMatrix::from_matrix(k)
}

/// Uniform empirical weights `(1/N, …, 1/N)`.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Squared RKHS distance `(α−β)ᵀK(α−β)` between `Σαᵢφ(ξᵢ)` and `Σβᵢφ(ξᵢ)`.
///
/// Round-off below zero down to `-1e-10` is clamped to zero; anything more
/// negative is reported as a numerical error.
pub fn mmd_sq(k: &GramMatrix, alpha: &[f64], beta: &[f64]) -> Result<f64> {
    let n = k.len();
    if alpha.len() != n || beta.len() != n {
        return input(format!(
            "weight lengths ({}, {}) must match gram size {n}",
            alpha.len(),
            beta.len()
        ));
    }
    if alpha.iter().chain(beta).any(|v| !v.is_finite()) {
        return input("embedding weights must be finite");
    }
    let diff: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| a - b).collect();
    clamp_mmd(k.quad_form(&diff, &diff))
}

pub(crate) fn clamp_mmd(value: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -MMD_CLAMP_TOL {
        Ok(0.0)
    } else {
        numerical(format!("squared MMD evaluated to {value:e}"))
    }
}
