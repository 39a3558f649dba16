//! Numerical checks of alternating minimization and block coordinate
//! gradient descent on bi-convex quadratics
//!
//! ```text
//! Q(theta, omega) = ||A theta - b||^2 + ||theta - C omega||^2
//! ```
//!
//! `Q` is convex in each block, `2(A^T A + I)`-smooth in `theta` and
//! `2 C^T C`-smooth in `omega`, and both block minimizers have closed forms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Numerical floor below which a negative gap is treated as zero.
pub const GAP_FLOOR: f64 = -1e-10;
const DESCENT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BiConvexProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DMatrix<f64>,
    beta_theta: f64,
    beta_omega: f64,
    /// `(A^T A + I)^{-1}`.
    theta_solver: DMatrix<f64>,
    /// Pseudo-inverse of `C`.
    c_pinv: DMatrix<f64>,
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.max()
}

impl BiConvexProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DMatrix<f64>) -> Result<Self> {
        let dim_theta = a.ncols();
        if dim_theta == 0 || c.ncols() == 0 {
            return invalid("both blocks need at least one coordinate");
        }
        if a.nrows() != b.len() {
            return invalid("A and b disagree on the number of rows");
        }
        if c.nrows() != dim_theta {
            return invalid("C must have one row per theta coordinate");
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return invalid("problem data must be finite");
        }
        let gram = a.transpose() * &a + DMatrix::identity(dim_theta, dim_theta);
        let beta_theta = 2.0 * lambda_max(&gram);
        let beta_omega = 2.0 * lambda_max(&(c.transpose() * &c));
        let theta_solver = gram
            .try_inverse()
            .ok_or_else(|| crate::Error::InvalidArgument("A^T A + I is singular".into()))?;
        let c_pinv = c
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        Ok(Self {
            a,
            b,
            c,
            beta_theta,
            beta_omega,
            theta_solver,
            c_pinv,
        })
    }

    /// The scalar instance `theta^2 + (theta - omega)^2`.
    pub fn scalar_example() -> Self {
        Self::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .expect("well-formed")
    }

    /// Random instance with controlled conditioning: the singular values of
    /// `A` lie in `[0.5, 2]` and those of `C` in `[0.5, 1.5]`, with
    /// `dim_omega <= dim_theta <= rows(A)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_dim: usize) -> Self {
        let max_dim = max_dim.max(1);
        let dim_theta = rng.random_range(1..=max_dim);
        let dim_omega = rng.random_range(1..=dim_theta);
        let rows = rng.random_range(dim_theta..=max_dim.max(dim_theta));
        let a = conditioned(rng, rows, dim_theta, 0.5, 2.0);
        let c = conditioned(rng, dim_theta, dim_omega, 0.5, 1.5);
        let b = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::new(a, b, c).expect("well-conditioned by construction")
    }

    pub fn dim_theta(&self) -> usize {
        self.a.ncols()
    }

    pub fn dim_omega(&self) -> usize {
        self.c.ncols()
    }

    pub fn beta_theta(&self) -> f64 {
        self.beta_theta
    }

    pub fn beta_omega(&self) -> f64 {
        self.beta_omega
    }

    pub fn value(&self, theta: &DVector<f64>, omega: &DVector<f64>) -> f64 {
        let r1 = &self.a * theta - &self.b;
        let r2 = theta - &self.c * omega;
        r1.norm_squared() + r2.norm_squared()
    }

    pub fn grad_theta(&self, theta: &DVector<f64>, omega: &DVector<f64>) -> DVector<f64> {
        2.0 * self.a.transpose() * (&self.a * theta - &self.b) + 2.0 * (theta - &self.c * omega)
    }

    pub fn grad_omega(&self, theta: &DVector<f64>, omega: &DVector<f64>) -> DVector<f64> {
        -2.0 * self.c.transpose() * (theta - &self.c * omega)
    }

    /// `argmin_theta Q(theta, omega) = (A^T A + I)^{-1} (A^T b + C omega)`.
    pub fn argmin_theta(&self, omega: &DVector<f64>) -> DVector<f64> {
        &self.theta_solver * (self.a.transpose() * &self.b + &self.c * omega)
    }

    /// Minimum-norm `argmin_omega Q(theta, omega) = C^+ theta`.
    pub fn argmin_omega(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.c_pinv * theta
    }

    pub fn gap_theta(&self, theta: &DVector<f64>, omega: &DVector<f64>) -> f64 {
        self.value(theta, omega) - self.value(&self.argmin_theta(omega), omega)
    }

    pub fn gap_omega(&self, theta: &DVector<f64>, omega: &DVector<f64>) -> f64 {
        self.value(theta, omega) - self.value(theta, &self.argmin_omega(theta))
    }
}

/// `U diag(s) V^T` with Haar-ish orthogonal factors from QR of Gaussians.
fn conditioned<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let gauss = |rng: &mut R, r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = gauss(rng, rows, cols).qr().q();
    let v = gauss(rng, cols, cols).qr().q();
    let s = DVector::from_fn(cols, |_, _| rng.random_range(lo..=hi));
    u * DMatrix::from_diagonal(&s) * v.transpose()
}

/// One gradient step on a single block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdStep {
    pub iteration: usize,
    pub q_before: f64,
    pub q_after: f64,
    /// Squared norm of the gradient at the point the step started from.
    pub grad_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub q: f64,
    /// `Q(theta_t, omega_t) - min_theta Q(theta, omega_t)`.
    pub gap_theta: f64,
    /// `Q(theta_{t+1}, omega_t) - min_omega Q(theta_{t+1}, omega)`.
    pub gap_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub method: String,
    pub mu: f64,
    pub beta: f64,
    /// `mu * (1 - beta * mu / 2)`.
    pub eta: f64,
    pub records: Vec<IterRecord>,
    pub steps: Vec<GdStep>,
}

impl IterLog {
    fn new(method: &str, mu: f64, beta: f64) -> Self {
        Self {
            method: method.to_owned(),
            mu,
            beta,
            eta: mu * (1.0 - 0.5 * beta * mu),
            records: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn q_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.q).collect()
    }

    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("runs log at least one iteration")
    }

    /// `(iteration, Q, gap_theta, gap_omega)` rows for plotting.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "q", "gap_theta", "gap_omega"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.q.to_string(),
                r.gap_theta.to_string(),
                r.gap_omega.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_step(mu: f64, beta: f64, iters: usize) -> Result<()> {
    if !mu.is_finite() || mu <= 0.0 {
        return invalid(format!("step size must be positive, got {mu}"));
    }
    if beta > 0.0 && mu >= 1.0 / beta {
        return invalid(format!("step size {mu} must be below 1/beta = {}", 1.0 / beta));
    }
    if iters == 0 {
        return invalid("need at least one iteration");
    }
    Ok(())
}

fn check_dims(problem: &BiConvexProblem, theta: &DVector<f64>, omega: Option<&DVector<f64>>) -> Result<()> {
    if theta.len() != problem.dim_theta() || omega.is_some_and(|o| o.len() != problem.dim_omega()) {
        return invalid("initial point has the wrong dimension");
    }
    Ok(())
}

fn record(problem: &BiConvexProblem, t: usize, theta: &DVector<f64>, omega: &DVector<f64>, next_theta: &DVector<f64>) -> IterRecord {
    IterRecord {
        iteration: t,
        theta: theta.as_slice().to_vec(),
        omega: omega.as_slice().to_vec(),
        q: problem.value(theta, omega),
        gap_theta: problem.gap_theta(theta, omega),
        gap_omega: problem.gap_omega(next_theta, omega),
    }
}

/// One gradient step on `theta` per iteration, each followed by the exact
/// minimization over `omega`.
pub fn alt_min_run(problem: &BiConvexProblem, theta0: &DVector<f64>, mu: f64, iters: usize) -> Result<IterLog> {
    check_dims(problem, theta0, None)?;
    let beta = problem.beta_theta();
    check_step(mu, beta, iters)?;
    let mut log = IterLog::new("alt-min", mu, beta);
    let mut theta = theta0.clone();
    let mut omega = problem.argmin_omega(&theta);
    for t in 0..iters {
        let grad = problem.grad_theta(&theta, &omega);
        let next = &theta - mu * &grad;
        log.steps.push(GdStep {
            iteration: t,
            q_before: problem.value(&theta, &omega),
            q_after: problem.value(&next, &omega),
            grad_norm_sq: grad.norm_squared(),
        });
        log.records.push(record(problem, t, &theta, &omega, &next));
        theta = next;
        omega = problem.argmin_omega(&theta);
    }
    Ok(log)
}

/// Block coordinate gradient descent: a step on `theta`, then a step on
/// `omega` at the new `theta`.
pub fn bcgd_run(
    problem: &BiConvexProblem,
    theta0: &DVector<f64>,
    omega0: &DVector<f64>,
    mu: f64,
    iters: usize,
) -> Result<IterLog> {
    check_dims(problem, theta0, Some(omega0))?;
    let beta = problem.beta_theta().max(problem.beta_omega());
    check_step(mu, beta, iters)?;
    let mut log = IterLog::new("bcgd", mu, beta);
    let mut theta = theta0.clone();
    let mut omega = omega0.clone();
    for t in 0..iters {
        let g_theta = problem.grad_theta(&theta, &omega);
        let next_theta = &theta - mu * &g_theta;
        let q_mid = problem.value(&next_theta, &omega);
        log.steps.push(GdStep {
            iteration: t,
            q_before: problem.value(&theta, &omega),
            q_after: q_mid,
            grad_norm_sq: g_theta.norm_squared(),
        });
        log.records.push(record(problem, t, &theta, &omega, &next_theta));
        let g_omega = problem.grad_omega(&next_theta, &omega);
        let next_omega = &omega - mu * &g_omega;
        log.steps.push(GdStep {
            iteration: t,
            q_before: q_mid,
            q_after: problem.value(&next_theta, &next_omega),
            grad_norm_sq: g_omega.norm_squared(),
        });
        theta = next_theta;
        omega = next_omega;
    }
    Ok(log)
}

/// True iff every logged step decreased `Q` by at least `eta * ||grad||^2`
/// (up to 1e-9).
pub fn check_descent_inequality(log: &IterLog) -> bool {
    log.steps
        .iter()
        .all(|s| s.q_after <= s.q_before - log.eta * s.grad_norm_sq + DESCENT_SLACK)
}

/// True iff neither block can lower `Q` by more than `tol` on its own.
pub fn check_equilibrium(problem: &BiConvexProblem, theta: &DVector<f64>, omega: &DVector<f64>, tol: f64) -> bool {
    problem.gap_theta(theta, omega) < tol && problem.gap_omega(theta, omega) < tol
}
