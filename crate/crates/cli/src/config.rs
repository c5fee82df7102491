//! Experiment configuration: one JSON document, defaults per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use scenario_prune::evaluate::{OCP_LAMBDA_GRID, REGRESSION_LAMBDA_GRID};
use scenario_prune::{KernelSpec, OcpConfig, OcpSweepConfig, RegressionSweepConfig, ScalingKind, ScalingParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Regress,
    Ocp,
    Reduce,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Regress => "regress",
            Experiment::Ocp => "ocp",
            Experiment::Reduce => "reduce",
        }
    }
}

/// Scaling fields left out fall back to the experiment's default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ScalingKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetric: Option<bool>,
}

impl ScalingSection {
    fn resolve(&self, base: ScalingParams) -> ScalingParams {
        ScalingParams {
            kind: self.kind.unwrap_or(base.kind),
            softness: self.softness.unwrap_or(base.softness),
            c: self.c.unwrap_or(base.c),
            eps_s: self.eps_s.unwrap_or(base.eps_s),
            symmetric: self.symmetric.unwrap_or(base.symmetric),
        }
    }

    fn full(p: ScalingParams) -> Self {
        Self {
            kind: Some(p.kind),
            softness: Some(p.softness),
            c: Some(p.c),
            eps_s: Some(p.eps_s),
            symmetric: Some(p.symmetric),
        }
    }
}

/// Input of the `reduce` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceSection {
    /// CSV of scenarios, one row per scenario.
    pub input: PathBuf,
    #[serde(default)]
    pub header: bool,
    /// Optional one-column CSV of positive L1 weights (same `header` flag).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default = "default_reduce_lambda")]
    pub lambda: f64,
    /// When set, the sparsest reduction with RKHS distance at most `epsilon`
    /// is returned and `lambda` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub nonneg: bool,
}

fn default_reduce_lambda() -> f64 {
    0.01
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    /// Training scenarios (200 for `regress`, 100 for `ocp`).
    #[serde(default, alias = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Evaluation samples (1000 for `regress`, 100 for `ocp`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_mc: Option<usize>,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub ocp: OcpConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduce: Option<ReduceSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            n: None,
            n_mc: None,
            kernel: KernelSpec::default(),
            lambda_grid: None,
            scaling: ScalingSection::default(),
            ocp: OcpConfig::default(),
            output_dir: default_output_dir(),
            reduce: None,
        }
    }
}

fn config_err<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config {
        path: path.into(),
        message: message.into(),
    })
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        config_err(path, format!("must be positive and finite, got {v}"))
    }
}

/// Parses a config document, reporting the JSON path of any schema violation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config {
            path: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

impl ExperimentConfig {
    /// Fills every default for `experiment` and validates the result, so the
    /// returned config echoes exactly what was run.
    pub fn resolve(&self, experiment: Experiment) -> Result<ExperimentConfig, CliError> {
        if let Some(declared) = self.experiment {
            if declared != experiment {
                return config_err(
                    "experiment",
                    format!(
                        "config declares `{}` but `{}` was requested",
                        declared.name(),
                        experiment.name()
                    ),
                );
            }
        }
        let mut out = self.clone();
        out.experiment = Some(experiment);
        match experiment {
            Experiment::Regress => {
                out.n.get_or_insert(200);
                out.n_mc.get_or_insert(1000);
                out.lambda_grid.get_or_insert_with(|| REGRESSION_LAMBDA_GRID.to_vec());
                out.scaling = ScalingSection::full(self.scaling.resolve(ScalingParams::regression()));
            }
            Experiment::Ocp => {
                out.n.get_or_insert(100);
                out.n_mc.get_or_insert(100);
                out.lambda_grid.get_or_insert_with(|| OCP_LAMBDA_GRID.to_vec());
                out.scaling = ScalingSection::full(self.scaling.resolve(ScalingParams::ocp()));
            }
            Experiment::Reduce => {
                out.scaling = ScalingSection::full(self.scaling.resolve(ScalingParams::default()));
                if out.reduce.is_none() {
                    return config_err(
                        "reduce",
                        "the reduce experiment needs a `reduce` section with an `input` path",
                    );
                }
            }
        }
        out.validate(experiment)?;
        Ok(out)
    }

    fn validate(&self, experiment: Experiment) -> Result<(), CliError> {
        if self.n == Some(0) {
            return config_err("n", "must be at least 1");
        }
        if self.n_mc == Some(0) {
            return config_err("n_mc", "must be at least 1");
        }
        match self.kernel {
            KernelSpec::Gaussian { bandwidth } => positive("kernel.bandwidth", bandwidth)?,
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 {
                    return config_err("kernel.degree", "must be at least 1");
                }
                if !(offset.is_finite() && offset >= 0.0) {
                    return config_err("kernel.offset", format!("must be nonnegative, got {offset}"));
                }
            }
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return config_err("lambda_grid", "must not be empty");
            }
            for (i, l) in grid.iter().enumerate() {
                if !(l.is_finite() && *l >= 0.0) {
                    return config_err(
                        format!("lambda_grid[{i}]"),
                        format!("must be finite and nonnegative, got {l}"),
                    );
                }
            }
            if let Some(i) = grid.windows(2).position(|w| w[0] > w[1]) {
                return config_err(format!("lambda_grid[{}]", i + 1), "grid must be sorted ascending");
            }
        }
        let s = &self.scaling;
        for (name, v) in [("softness", s.softness), ("c", s.c), ("eps_s", s.eps_s)] {
            if let Some(v) = v {
                positive(&format!("scaling.{name}"), v)?;
            }
        }
        if experiment == Experiment::Ocp {
            self.validate_ocp()?;
        }
        if let Some(r) = &self.reduce {
            if !(r.lambda.is_finite() && r.lambda >= 0.0) {
                return config_err(
                    "reduce.lambda",
                    format!("must be finite and nonnegative, got {}", r.lambda),
                );
            }
            if let Some(eps) = r.epsilon {
                positive("reduce.epsilon", eps)?;
            }
        }
        Ok(())
    }

    fn validate_ocp(&self) -> Result<(), CliError> {
        let o = &self.ocp;
        positive("ocp.horizon", o.horizon)?;
        if o.steps == 0 {
            return config_err("ocp.steps", "must be at least 1");
        }
        if o.substeps == 0 {
            return config_err("ocp.substeps", "must be at least 1");
        }
        if !(o.u_min.is_finite() && o.u_max.is_finite() && o.u_min < o.u_max) {
            return config_err("ocp.u_max", format!("must exceed u_min ({} vs {})", o.u_max, o.u_min));
        }
        for (i, sd) in o.initial_std.iter().enumerate() {
            positive(&format!("ocp.initial_std[{i}]"), *sd)?;
        }
        for (name, v) in [
            ("x1_lower", o.x1_lower),
            ("upper_offset", o.upper_offset),
            ("upper_amplitude", o.upper_amplitude),
            ("upper_frequency", o.upper_frequency),
            ("target", o.target),
            ("initial_mean[0]", o.initial_mean[0]),
            ("initial_mean[1]", o.initial_mean[1]),
        ] {
            if !v.is_finite() {
                return config_err(format!("ocp.{name}"), "must be finite");
            }
        }
        Ok(())
    }

    /// Requires a config returned by [`ExperimentConfig::resolve`].
    pub fn regression_sweep(&self) -> RegressionSweepConfig {
        RegressionSweepConfig {
            n: self.n.unwrap_or(200),
            seed: self.seed,
            n_mc: self.n_mc.unwrap_or(1000),
            kernel: self.kernel,
            scaling: self.scaling.resolve(ScalingParams::regression()),
            lambda_grid: self
                .lambda_grid
                .clone()
                .unwrap_or_else(|| REGRESSION_LAMBDA_GRID.to_vec()),
        }
    }

    /// Requires a config returned by [`ExperimentConfig::resolve`].
    pub fn ocp_sweep(&self) -> OcpSweepConfig {
        OcpSweepConfig {
            n: self.n.unwrap_or(100),
            seed: self.seed,
            n_mc: self.n_mc.unwrap_or(100),
            kernel: self.kernel,
            scaling: self.scaling.resolve(ScalingParams::ocp()),
            lambda_grid: self.lambda_grid.clone().unwrap_or_else(|| OCP_LAMBDA_GRID.to_vec()),
            ocp: self.ocp.clone(),
        }
    }

    pub fn scaling_params(&self) -> ScalingParams {
        self.scaling.resolve(ScalingParams::default())
    }
}
