use std::path::{Path, PathBuf};

use isectreg_core::convergence::{alt_min_run, bcgd_run, check_descent_inequality, check_equilibrium, BiConvexProblem, IterLog};
use isectreg_core::synthgen::{read_bundle, write_bundle};
use isectreg_core::trainer::{evaluate_fidelity, fidelity_of, Representer};
use isectreg_core::{generate, split, AttributeMatrix, DenseNet, EpochReport, FidelityReport, QuantScope, QuantSpec, RefitMode};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{at, create_dir, write_json, CliError};

pub const REPORTS_FILE: &str = "reports.json";
pub const TREE_FILE: &str = "tree.json";
pub const FIDELITY_FILE: &str = "fidelity.json";
pub const MODEL_FILE: &str = "model.json";
pub const CONVERGENCE_FILE: &str = "convergence.json";

/// Seeded dataset bundle plus `spec.json` and the config echo.
pub fn gen_data(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    config.synth.validate()?;
    let data = split(&generate(&config.synth)?, config.split, config.synth.seed)?;
    create_dir(out)?;
    at(out, write_bundle(&data, Some(&config.synth), out))?;
    config.echo(out)
}

/// Command-line flags that take precedence over the `train` section.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOverrides {
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub refit: Option<RefitMode>,
    pub quant_scope: Option<QuantScope>,
}

impl TrainOverrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        let t = &mut config.train;
        t.lambda2 = self.lambda2.unwrap_or(t.lambda2);
        t.lambda3 = self.lambda3.unwrap_or(t.lambda3);
        t.refit_mode = self.refit.unwrap_or(t.refit_mode);
        t.quant_scope = self.quant_scope.unwrap_or(t.quant_scope);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergedAt {
    pub epoch: usize,
    pub batch: usize,
}

/// Contents of `reports.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// True when both the tree and the penalty term are switched off.
    pub baseline: bool,
    pub refit_mode: RefitMode,
    /// Epoch whose models were saved; absent after divergence.
    pub report_epoch: Option<usize>,
    pub stopped_early: bool,
    pub diverged: Option<DivergedAt>,
    pub reports: Vec<EpochReport>,
}

#[derive(Serialize)]
struct Model<'a> {
    feature: &'a DenseNet,
    classifier: &'a DenseNet,
}

fn representer(config: &ExperimentConfig) -> Result<Representer, CliError> {
    Ok(Representer {
        spec: config.train.quant_spec()?,
        scope: config.train.quant_scope,
        batch_size: config.train.batch_size,
    })
}

/// Trains on the bundle in `data_dir`. On divergence the reports of the
/// completed epochs are still written.
pub fn train(config: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<TrainSummary, CliError> {
    config.train.validate()?;
    let data = at(data_dir, read_bundle(data_dir))?;
    create_dir(out)?;
    config.echo(out)?;

    let outcome = match isectreg_core::train(&data, &config.train) {
        Ok(o) => o,
        Err(isectreg_core::Error::Diverged { epoch, batch, reports }) => {
            let summary = TrainSummary {
                baseline: config.train.is_baseline(),
                refit_mode: config.train.refit_mode,
                report_epoch: None,
                stopped_early: false,
                diverged: Some(DivergedAt { epoch, batch }),
                reports,
            };
            write_json(&out.join(REPORTS_FILE), &summary)?;
            return Err(CliError::Diverged(format!(
                "training diverged at epoch {epoch}, batch {batch}; {} completed epochs kept in {}",
                summary.reports.len(),
                out.join(REPORTS_FILE).display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let summary = TrainSummary {
        baseline: outcome.baseline,
        refit_mode: config.train.refit_mode,
        report_epoch: Some(outcome.report_epoch),
        stopped_early: outcome.stopped_early,
        diverged: None,
        reports: outcome.reports.clone(),
    };
    write_json(&out.join(REPORTS_FILE), &summary)?;
    let tree = outcome.tree.to_json()?;
    std::fs::write(out.join(TREE_FILE), tree + "\n").map_err(|e| CliError::io(&out.join(TREE_FILE), e))?;
    let fidelity = match data.f {
        Some(_) => Some(evaluate_fidelity(&outcome.feature, &data, &representer(config)?)?),
        None => None,
    };
    write_json(&out.join(FIDELITY_FILE), &fidelity)?;
    write_json(
        &out.join(MODEL_FILE),
        &Model {
            feature: &outcome.feature,
            classifier: &outcome.classifier,
        },
    )?;
    Ok(summary)
}

/// Reads integer representation rows, one sample per row, after a header.
pub fn read_representation(path: &Path) -> Result<Vec<Vec<u32>>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.is_io_error() {
            true => CliError::io(path, e),
            false => CliError::Validation(format!("{}: {e}", path.display())),
        })?;
        let row = record
            .iter()
            .map(|field| {
                field.trim().parse::<u32>().map_err(|_| {
                    CliError::Validation(format!("{}: row {i}: not a non-negative integer: {field:?}", path.display()))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Fidelity of a stored representation against stored attributes.
pub fn eval_fidelity(repr: &Path, truth: &Path, bits: u32) -> Result<FidelityReport, CliError> {
    let spec = QuantSpec::new(bits).map_err(|e| CliError::Validation(format!("bits: {e}")))?;
    let reps = read_representation(repr)?;
    let truth = at(truth, AttributeMatrix::load_csv(truth))?;
    if truth.n_rows() != reps.len() {
        return Err(CliError::Validation(format!(
            "truth has {} rows but the representation has {}",
            truth.n_rows(),
            reps.len()
        )));
    }
    Ok(fidelity_of(&truth, &reps, spec.bits())?)
}

/// Summary of one sandbox run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCheck {
    pub instance: String,
    pub method: String,
    pub dim_theta: usize,
    pub dim_omega: usize,
    pub iterations: usize,
    pub final_q: f64,
    pub final_gap_theta: f64,
    pub final_gap_omega: f64,
    /// `Q` never increases by more than 1e-12.
    pub monotone: bool,
    pub descent_inequality: bool,
    /// First iteration with both gaps below 1e-8.
    pub settled_at: Option<usize>,
    pub csv: PathBuf,
}

#[derive(Serialize)]
struct ConvergenceLog<'a> {
    checks: &'a [RunCheck],
    logs: &'a [IterLog],
}

pub const SETTLE_TOL: f64 = 1e-8;

fn inspect(instance: &str, problem: &BiConvexProblem, log: &IterLog, out: &Path) -> Result<RunCheck, CliError> {
    let name = format!("{instance}_{}.csv", log.method);
    let path = out.join(&name);
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    at(&path, log.write_csv(file))?;
    let q = log.q_values();
    let last = log.last();
    Ok(RunCheck {
        instance: instance.to_owned(),
        method: log.method.clone(),
        dim_theta: problem.dim_theta(),
        dim_omega: problem.dim_omega(),
        iterations: log.records.len(),
        final_q: last.q,
        final_gap_theta: last.gap_theta,
        final_gap_omega: last.gap_omega,
        monotone: q.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        descent_inequality: check_descent_inequality(log),
        settled_at: log.records.iter().position(|r| {
            let theta = DVector::from_column_slice(&r.theta);
            let omega = DVector::from_column_slice(&r.omega);
            check_equilibrium(problem, &theta, &omega, SETTLE_TOL)
        }),
        csv: PathBuf::from(name),
    })
}

/// Alternating minimization and block gradient descent on the scalar
/// instance and on one seeded random instance, at `mu = 0.5 / beta`.
pub fn convergence_demo(config: &ExperimentConfig, out: &Path, iters: usize) -> Result<Vec<RunCheck>, CliError> {
    if iters == 0 {
        return Err(CliError::Validation("iters: need at least one iteration".into()));
    }
    create_dir(out)?;
    config.echo(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let random = BiConvexProblem::random(&mut rng, 8);
    let mut start = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let random_start = (start(random.dim_theta()), start(random.dim_omega()));
    let scalar = BiConvexProblem::scalar_example();
    let one = DVector::from_element(1, 1.0);

    let mut checks = Vec::new();
    let mut logs = Vec::new();
    for (instance, problem, (theta0, omega0)) in [
        ("scalar", &scalar, (one.clone(), one)),
        ("random", &random, random_start),
    ] {
        let alt = alt_min_run(problem, &theta0, 0.5 / problem.beta_theta(), iters)?;
        let mu = 0.5 / problem.beta_theta().max(problem.beta_omega());
        let bcgd = bcgd_run(problem, &theta0, &omega0, mu, iters)?;
        for log in [alt, bcgd] {
            checks.push(inspect(instance, problem, &log, out)?);
            logs.push(log);
        }
    }
    write_json(
        &out.join(CONVERGENCE_FILE),
        &ConvergenceLog {
            checks: &checks,
            logs: &logs,
        },
    )?;
    Ok(checks)
}
