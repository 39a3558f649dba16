use isectreg_core::convergence::{check_equilibrium, BiConvexProblem, IterLog};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn monotone(log: &IterLog) -> bool {
    log.q_values().windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

/// First logged iteration at which both gaps are below `tol`.
pub fn settles(problem: &BiConvexProblem, log: &IterLog, tol: f64) -> Option<usize> {
    log.records.iter().position(|r| {
        check_equilibrium(problem, &DVector::from_column_slice(&r.theta), &DVector::from_column_slice(&r.omega), tol)
    })
}
