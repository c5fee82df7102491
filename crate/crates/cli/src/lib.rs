//! Config-driven experiment runner for `scenario-prune`.
//!
//! Each run writes plot-ready CSVs plus a `report.json` whose `config` field
//! is the fully resolved configuration; feeding it back reproduces every
//! numeric output bit for bit.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use scenario_prune::evaluate::{ocp_sweep, regression_sweep, SweepRow};
use scenario_prune::kernels::{gram, ScenarioMatrix};
use scenario_prune::ode_ocp::rollout;
use scenario_prune::reduced_set::{kill_threshold, reduce, reduce_with_budget};
use scenario_prune::rng::{EVAL_STREAM, TRAIN_STREAM};
use scenario_prune::{ControlSequence, ReductionConfig};
use serde::Serialize;
use thiserror::Error;

pub use config::{load_config, parse_config, Experiment, ExperimentConfig, ReduceSection};
use output::{create_dir, num, read_matrix, write_csv, write_json};

/// Exit status for a run that finished but had a failed row or an
/// unconverged solver.
pub const EXIT_INCOMPLETE: i32 = 3;
/// Exit status for config, input and IO errors.
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("parse error in {} at line {line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },

    #[error(transparent)]
    Core(#[from] scenario_prune::Error),

    #[error("{0}")]
    Threads(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line());
        match line {
            Some(line) => CliError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            },
            None => CliError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
        }
    }
}

/// What a finished run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Every solver converged and no row failed.
    pub complete: bool,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.complete {
            0
        } else {
            EXIT_INCOMPLETE
        }
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    config: &'a ExperimentConfig,
    seed: u64,
    rng: &'static str,
    train_stream: u64,
    eval_stream: u64,
}

fn provenance(cfg: &ExperimentConfig, experiment: Experiment) -> Provenance<'_> {
    Provenance {
        tool: "scenario-prune",
        version: env!("CARGO_PKG_VERSION"),
        experiment: experiment.name(),
        config: cfg,
        seed: cfg.seed,
        rng: "chacha20",
        train_stream: TRAIN_STREAM,
        eval_stream: EVAL_STREAM,
    }
}

fn failed_lambdas(rows: &[SweepRow]) -> Vec<f64> {
    rows.iter().filter(|r| !r.is_ok()).map(|r| r.lambda).collect()
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

/// Scenario-level columns shared by both sweeps, one block per successful λ.
fn alpha_rows<'a>(rows: &'a [SweepRow]) -> impl Iterator<Item = (&'a SweepRow, usize, f64, bool)> + 'a {
    rows.iter()
        .filter_map(|r| r.reduction.as_ref().map(|red| (r, red)))
        .flat_map(|(r, red)| {
            let mut kept = vec![false; red.alpha.len()];
            for &i in &red.retained {
                kept[i] = true;
            }
            red.alpha
                .iter()
                .enumerate()
                .map(move |(i, &a)| (r, i, a, kept[i]))
                .collect::<Vec<_>>()
        })
}

/// Min-max regression study: full solve, λ sweep, out-of-sample evaluation.
///
/// Writes `scenarios.csv`, `sweep.csv` and `report.json`.
pub fn run_regress(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let cfg = cfg.resolve(Experiment::Regress)?;
    let sweep = regression_sweep(&cfg.regression_sweep())?;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;

    let scen = &sweep.scenarios;
    let scenarios = write_csv(
        &dir.join("scenarios.csv"),
        &["lambda", "index", "a", "b", "residual", "weight", "alpha", "retained"],
        alpha_rows(&sweep.rows).map(|(r, i, alpha, kept)| {
            vec![
                num(r.lambda),
                i.to_string(),
                num(scen.a[i]),
                num(scen.b[i]),
                num(sweep.residuals[i]),
                num(sweep.weights[i]),
                num(alpha),
                bool_str(kept),
            ]
        }),
    )?;
    let table = write_csv(
        &dir.join("sweep.csv"),
        &[
            "lambda",
            "kappa",
            "retained",
            "s_full",
            "s_reduced",
            "s_full_on_retained",
            "x_reduced",
            "violation_prob",
            "std_err_violation",
            "cost",
            "mmd_sq",
            "reduction_converged",
            "solve_converged",
            "failure",
        ],
        sweep.rows.iter().map(|r| {
            vec![
                num(r.lambda),
                r.kappa.to_string(),
                r.retained.to_string(),
                num(r.full_objective),
                num(r.reduced_objective),
                num(r.reference_objective),
                num(r.decision.first().copied().unwrap_or(f64::NAN)),
                num(r.violation_prob),
                num(r.std_err_violation),
                num(r.expected_cost),
                num(r.mmd_sq),
                bool_str(r.reduction_converged),
                bool_str(r.solve_converged),
                r.failure.clone().unwrap_or_default(),
            ]
        }),
    )?;

    let failed = failed_lambdas(&sweep.rows);
    let complete = failed.is_empty();
    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        provenance: Provenance<'a>,
        x_star: f64,
        full: &'a scenario_prune::MinimaxSolution,
        full_evaluation: &'a scenario_prune::EvaluationReport,
        kill_threshold: f64,
        rows: &'a [SweepRow],
        complete: bool,
        failed_lambdas: Vec<f64>,
    }
    let report = write_json(
        &dir.join("report.json"),
        &Report {
            provenance: provenance(&cfg, Experiment::Regress),
            x_star: scen.x_star,
            full: &sweep.full,
            full_evaluation: &sweep.full_evaluation,
            kill_threshold: sweep.kill_threshold,
            rows: &sweep.rows,
            complete,
            failed_lambdas: failed,
        },
    )?;
    Ok(RunSummary {
        output_dir: dir,
        files: vec![scenarios, table, report],
        complete,
    })
}

/// Van der Pol study: full solve, λ sweep, out-of-sample evaluation.
///
/// Writes `scenarios.csv`, `sweep.csv`, `trajectories.csv` and `report.json`.
pub fn run_ocp(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let cfg = cfg.resolve(Experiment::Ocp)?;
    let sweep_cfg = cfg.ocp_sweep();
    let sweep = ocp_sweep(&sweep_cfg)?;
    let ocp = &sweep_cfg.ocp;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;

    let x0 = &sweep.initial_states;
    let scenarios = write_csv(
        &dir.join("scenarios.csv"),
        &[
            "lambda",
            "index",
            "x1_0",
            "x2_0",
            "min_margin",
            "weight",
            "alpha",
            "retained",
        ],
        alpha_rows(&sweep.rows).map(|(r, i, alpha, kept)| {
            vec![
                num(r.lambda),
                i.to_string(),
                num(x0[i][0]),
                num(x0[i][1]),
                num(sweep.min_margins[i]),
                num(sweep.weights[i]),
                num(alpha),
                bool_str(kept),
            ]
        }),
    )?;

    let mut header: Vec<String> = [
        "lambda",
        "kappa",
        "retained",
        "cost_full",
        "cost_reduced",
        "cost_full_on_retained",
        "violation_prob",
        "std_err_violation",
        "expected_cost",
        "mmd_sq",
        "reduction_converged",
        "solve_converged",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..ocp.steps).map(|k| format!("u_{k}")));
    header.push("failure".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let table = write_csv(
        &dir.join("sweep.csv"),
        &header_refs,
        sweep.rows.iter().map(|r| {
            let mut row = vec![
                num(r.lambda),
                r.kappa.to_string(),
                r.retained.to_string(),
                num(r.full_objective),
                num(r.reduced_objective),
                num(r.reference_objective),
                num(r.violation_prob),
                num(r.std_err_violation),
                num(r.expected_cost),
                num(r.mmd_sq),
                bool_str(r.reduction_converged),
                bool_str(r.solve_converged),
            ];
            row.extend((0..ocp.steps).map(|k| num(r.decision.get(k).copied().unwrap_or(f64::NAN))));
            row.push(r.failure.clone().unwrap_or_default());
            row
        }),
    )?;

    // Training trajectories under the full solution and under every reduced re-solve.
    let mut traj_rows = Vec::new();
    let full_bundle = rollout(ocp, &sweep.full.u, x0)?;
    let mut push_bundle = |solution: &str, lambda: Option<f64>, states: &[Vec<[f64; 2]>], kept: &[bool]| {
        for (i, traj) in states.iter().enumerate() {
            for (k, x) in traj.iter().enumerate() {
                traj_rows.push(vec![
                    solution.to_string(),
                    lambda.map(num).unwrap_or_default(),
                    i.to_string(),
                    k.to_string(),
                    num(ocp.time(k)),
                    num(x[0]),
                    num(x[1]),
                    bool_str(kept[i]),
                ]);
            }
        }
    };
    push_bundle("full", None, &full_bundle.states, &vec![true; x0.len()]);
    for r in sweep.rows.iter().filter(|r| r.failure.is_none()) {
        let Some(red) = &r.reduction else { continue };
        let bundle = rollout(ocp, &ControlSequence(r.decision.clone()), x0)?;
        let mut kept = vec![false; x0.len()];
        for &i in &red.retained {
            kept[i] = true;
        }
        push_bundle("reduced", Some(r.lambda), &bundle.states, &kept);
    }
    let trajectories = write_csv(
        &dir.join("trajectories.csv"),
        &["solution", "lambda", "scenario", "node", "t", "x1", "x2", "retained"],
        traj_rows,
    )?;

    let failed = failed_lambdas(&sweep.rows);
    let complete = failed.is_empty() && sweep.full.converged;
    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        provenance: Provenance<'a>,
        full: &'a scenario_prune::OcpSolution,
        full_evaluation: &'a scenario_prune::EvaluationReport,
        kill_threshold: f64,
        rows: &'a [SweepRow],
        complete: bool,
        failed_lambdas: Vec<f64>,
    }
    let report = write_json(
        &dir.join("report.json"),
        &Report {
            provenance: provenance(&cfg, Experiment::Ocp),
            full: &sweep.full,
            full_evaluation: &sweep.full_evaluation,
            kill_threshold: sweep.kill_threshold,
            rows: &sweep.rows,
            complete,
            failed_lambdas: failed,
        },
    )?;
    Ok(RunSummary {
        output_dir: dir,
        files: vec![scenarios, table, trajectories, report],
        complete,
    })
}

/// Standalone reduction of a user-supplied scenario CSV.
///
/// Writes `reduction.csv` (α per row), `retained.csv` (the retained input
/// rows) and `report.json`.
pub fn run_reduce(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let cfg = cfg.resolve(Experiment::Reduce)?;
    let section = cfg.reduce.clone().expect("resolve checks the reduce section");
    let rows = read_matrix(&section.input, section.header)?;
    let n = rows.len();
    let weights = match &section.weights {
        None => vec![1.0; n],
        Some(path) => {
            let w = read_matrix(path, section.header)?;
            if w.len() != n || w.iter().any(|r| r.len() != 1) {
                return Err(CliError::Config {
                    path: "reduce.weights".into(),
                    message: format!("expected one column with {n} rows, found {} rows", w.len()),
                });
            }
            if w.iter().any(|r| r[0] <= 0.0) {
                return Err(CliError::Config {
                    path: "reduce.weights".into(),
                    message: "weights must be strictly positive".into(),
                });
            }
            w.into_iter().map(|r| r[0]).collect()
        }
    };
    let k = gram(&cfg.kernel, &ScenarioMatrix::from_rows(&rows)?)?;
    let red_cfg = ReductionConfig {
        nonneg: section.nonneg,
        ..ReductionConfig::new(section.lambda, weights.clone())
    };
    let result = match section.epsilon {
        Some(eps) => reduce_with_budget(&k, &red_cfg, eps)?,
        None => reduce(&k, &red_cfg)?,
    };

    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let mut kept = vec![false; n];
    for &i in &result.retained {
        kept[i] = true;
    }
    let reduction = write_csv(
        &dir.join("reduction.csv"),
        &["index", "weight", "alpha", "retained"],
        (0..n).map(|i| vec![i.to_string(), num(weights[i]), num(result.alpha[i]), bool_str(kept[i])]),
    )?;
    let d = rows[0].len();
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let retained = write_csv(
        &dir.join("retained.csv"),
        &header_refs,
        result
            .retained
            .iter()
            .map(|&i| rows[i].iter().map(|v| num(*v)).collect()),
    )?;

    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        provenance: Provenance<'a>,
        scenarios: usize,
        dimension: usize,
        kill_threshold: f64,
        kappa: usize,
        #[serde(flatten)]
        result: &'a scenario_prune::ReductionResult,
    }
    let report = write_json(
        &dir.join("report.json"),
        &Report {
            provenance: provenance(&cfg, Experiment::Reduce),
            scenarios: n,
            dimension: d,
            kill_threshold: kill_threshold(&k, &weights),
            kappa: result.kappa(),
            result: &result,
        },
    )?;
    Ok(RunSummary {
        output_dir: dir,
        files: vec![reduction, retained, report],
        complete: result.converged,
    })
}

pub fn run(experiment: Experiment, cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    match experiment {
        Experiment::Regress => run_regress(cfg),
        Experiment::Ocp => run_ocp(cfg),
        Experiment::Reduce => run_reduce(cfg),
    }
}

/// Applies `SCENARIO_PRUNE_THREADS` (unset or `0` = one thread per core).
pub fn configure_threads(value: Option<&str>) -> Result<(), CliError> {
    let threads = match value.map(str::trim) {
        None | Some("") => 0,
        Some(v) => v.parse::<usize>().map_err(|_| {
            CliError::Threads(format!(
                "SCENARIO_PRUNE_THREADS must be a nonnegative integer, got {v:?}"
            ))
        })?,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Threads(e.to_string()))
}
