//! Method-versus-baseline comparison of feature fidelity over several seeds.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use isectreg_core::{generate, split, train, EpochReport, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{create_dir, write_json, CliError};

pub const CLAIM_FILE: &str = "claim.json";
/// Fewest seeds for which the comparison counts.
pub const MIN_SEEDS: usize = 5;
/// Required lead of the method's mean fidelity over the baseline's.
pub const REQUIRED_MARGIN: f64 = 0.02;
/// Largest tolerated difference in mean test accuracy.
pub const MAX_ACCURACY_GAP: f64 = 0.05;

/// Numbers of one training run, taken at its report epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub report_epoch: usize,
    pub fidelity: f64,
    pub fidelity_truth_to_repr: f64,
    pub fidelity_repr_to_truth: f64,
    pub test_accuracy: f64,
    pub test_tree_accuracy: f64,
    /// Mean soft-CE between `G` and `T` at the end of epoch 2.
    pub soft_ce_epoch2: Option<f64>,
    pub soft_ce_final: f64,
}

impl RunSummary {
    fn of(outcome: &TrainOutcome) -> Result<Self, CliError> {
        let at: &EpochReport = &outcome.reports[outcome.report_epoch - 1];
        let missing = || CliError::Validation("dataset has no ground-truth attributes".into());
        Ok(Self {
            report_epoch: outcome.report_epoch,
            fidelity: at.fidelity.ok_or_else(missing)?,
            fidelity_truth_to_repr: at.fidelity_truth_to_repr.ok_or_else(missing)?,
            fidelity_repr_to_truth: at.fidelity_repr_to_truth.ok_or_else(missing)?,
            test_accuracy: at.test_net_accuracy,
            test_tree_accuracy: at.test_tree_accuracy,
            soft_ce_epoch2: outcome.reports.get(1).map(|r| r.soft_ce),
            soft_ce_final: at.soft_ce,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub method: RunSummary,
    pub baseline: RunSummary,
}

/// Median soft-CE between `G` and `T` of the full method, epoch 2 vs final.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementDescent {
    pub median_soft_ce_epoch2: Option<f64>,
    pub median_soft_ce_final: f64,
    pub decreased: bool,
}

/// Contents of `claim.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub seeds: Vec<u64>,
    pub sufficient_seeds: bool,
    /// Set when fewer than [`MIN_SEEDS`] seeds were run.
    pub note: Option<String>,
    pub method_fidelity_mean: f64,
    pub baseline_fidelity_mean: f64,
    pub margin: f64,
    pub required_margin: f64,
    pub method_accuracy_mean: f64,
    pub baseline_accuracy_mean: f64,
    /// `|method - baseline|` of the mean test accuracies.
    pub accuracy_gap: f64,
    pub max_accuracy_gap: f64,
    pub agreement: AgreementDescent,
    pub pass: bool,
    pub per_seed: Vec<SeedResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedResult, CliError> {
    let mut synth = config.synth.clone();
    synth.seed = seed;
    let data = split(&generate(&synth)?, config.split, seed)?;
    let mut method = config.train.clone();
    method.seed = seed;
    let full = train(&data, &method)?;
    let base = train(&data, &method.baseline())?;
    Ok(SeedResult {
        seed,
        method: RunSummary::of(&full)?,
        baseline: RunSummary::of(&base)?,
    })
}

/// Runs every seed, spread over worker threads; results come back in seed
/// order whatever the scheduling.
fn run_seeds(config: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<SeedResult>, CliError> {
    let workers = std::thread::available_parallelism().map_or(1, usize::from).min(seeds.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SeedResult, CliError>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let result = run_seed(config, seed);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|slot| slot.expect("every seed was run"))
        .collect()
}

/// Seeds `synth.seed, synth.seed + 1, ...`; each seed drives data
/// generation, the split and both trainings.
pub fn reproduce_claim(config: &ExperimentConfig, n_seeds: usize, out: &Path) -> Result<ClaimReport, CliError> {
    if n_seeds == 0 {
        return Err(CliError::Validation("seeds: need at least one seed".into()));
    }
    config.synth.validate()?;
    config.train.validate()?;
    create_dir(out)?;
    config.echo(out)?;

    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| config.synth.seed.wrapping_add(i)).collect();
    let per_seed = run_seeds(config, &seeds)?;

    let method_fidelity_mean = mean(per_seed.iter().map(|r| r.method.fidelity));
    let baseline_fidelity_mean = mean(per_seed.iter().map(|r| r.baseline.fidelity));
    let method_accuracy_mean = mean(per_seed.iter().map(|r| r.method.test_accuracy));
    let baseline_accuracy_mean = mean(per_seed.iter().map(|r| r.baseline.test_accuracy));
    let margin = method_fidelity_mean - baseline_fidelity_mean;
    let accuracy_gap = (method_accuracy_mean - baseline_accuracy_mean).abs();

    let early: Option<Vec<f64>> = per_seed.iter().map(|r| r.method.soft_ce_epoch2).collect();
    let median_soft_ce_epoch2 = early.map(median);
    let median_soft_ce_final = median(per_seed.iter().map(|r| r.method.soft_ce_final).collect());
    let agreement = AgreementDescent {
        median_soft_ce_epoch2,
        median_soft_ce_final,
        decreased: median_soft_ce_epoch2.is_some_and(|e| median_soft_ce_final < e),
    };

    let sufficient_seeds = n_seeds >= MIN_SEEDS;
    let report = ClaimReport {
        seeds,
        sufficient_seeds,
        note: (!sufficient_seeds).then(|| format!("insufficient for claim: {n_seeds} < {MIN_SEEDS} seeds")),
        method_fidelity_mean,
        baseline_fidelity_mean,
        margin,
        required_margin: REQUIRED_MARGIN,
        method_accuracy_mean,
        baseline_accuracy_mean,
        accuracy_gap,
        max_accuracy_gap: MAX_ACCURACY_GAP,
        agreement,
        pass: sufficient_seeds && margin >= REQUIRED_MARGIN && accuracy_gap <= MAX_ACCURACY_GAP,
        per_seed,
    };
    write_json(&out.join(CLAIM_FILE), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_counts() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn mean_of_values() {
        assert_eq!(mean([1.0, 2.0, 6.0].into_iter()), 3.0);
    }
}
