//! Lasso solver: coordinate descent for a gaussian response, iteratively
//! reweighted coordinate descent for a binomial response.
//!
//! Objective conventions: (1/2n) RSS + lambda * ||beta||_1 for gaussian and
//! (1/n) * negative log-likelihood + lambda * ||beta||_1 for binomial, so the
//! grid anchor lambda_max = max_j |x_j' y| / n zeroes every coefficient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{axpy, dot, ColMajor, LambdaGrid};
use crate::dataset::{Dataset, Family};
use crate::error::{Error, Result};

/// Convergence threshold on the largest coefficient change in a sweep.
const COEF_TOL: f64 = 1e-9;
/// Stationarity tolerance enforced on every returned solution.
const KKT_TOL: f64 = 1e-7;
/// Total sweep budget per grid point.
const MAX_SWEEPS: usize = 10_000;
/// Outer reweighting budget per grid point (binomial).
const MAX_IRLS: usize = 100;
/// Coefficient cap flagging quasi-separation in binomial fits.
const COEF_CAP: f64 = 1e3;

/// Solutions along a penalty grid: column k holds the coefficients at the
/// k-th grid value.
#[derive(Debug, Clone)]
pub struct PathFit {
    pub coefficients: Array2<f64>,
    pub active_counts: Vec<usize>,
    pub warnings: Vec<String>,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// (1/2n)||y - X beta||^2 + lambda ||beta||_1
pub fn gaussian_objective(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    beta: ArrayView1<f64>,
) -> f64 {
    let n = x.nrows() as f64;
    let eta = x.dot(&beta);
    let rss: f64 = y
        .iter()
        .zip(eta.iter())
        .map(|(yi, ei)| (yi - ei) * (yi - ei))
        .sum();
    rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Mean negative log-likelihood of the intercept-free logistic model.
pub fn binomial_nll(x: ArrayView2<f64>, y: ArrayView1<f64>, beta: ArrayView1<f64>) -> f64 {
    let n = x.nrows() as f64;
    let eta = x.dot(&beta);
    let mut total = 0.0;
    for (e, yi) in eta.iter().zip(y.iter()) {
        // log(1 + exp(e)) - y*e, computed stably
        let log1p_exp = if *e > 0.0 {
            e + (-e).exp().ln_1p()
        } else {
            e.exp().ln_1p()
        };
        total += log1p_exp - yi * e;
    }
    total / n
}

/// Largest stationarity violation of `beta` at penalty `lambda`:
/// for inactive coordinates, the excess of |gradient| over lambda; for
/// active ones, the distance of the gradient from lambda * sign(beta).
pub fn max_kkt_violation(d: &Dataset, lambda: f64, beta: ArrayView1<f64>) -> f64 {
    let n = d.n() as f64;
    let residual: Array1<f64> = match d.family() {
        Family::Gaussian => {
            let eta = d.x().dot(&beta);
            &d.y().to_owned() - &eta
        }
        Family::Binomial => {
            let eta = d.x().dot(&beta);
            let probs = eta.mapv(sigmoid);
            &d.y().to_owned() - &probs
        }
    };
    let mut worst = 0.0_f64;
    for j in 0..d.p() {
        let g = d.x().column(j).dot(&residual) / n;
        let v = if beta[j] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * beta[j].signum()).abs()
        };
        if v > worst {
            worst = v;
        }
    }
    worst
}

fn sigmoid(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let z = e.exp();
        z / (1.0 + z)
    }
}

/// Fit the whole grid with warm starts along the descending penalties.
pub fn lasso_path(d: &Dataset, grid: &LambdaGrid) -> Result<PathFit> {
    match d.family() {
        Family::Gaussian => gaussian_path(d, grid),
        Family::Binomial => binomial_path(d, grid),
    }
}

// ---------------------------------------------------------------------------
// Gaussian coordinate descent
// ---------------------------------------------------------------------------

pub(super) struct GaussianState {
    xm: ColMajor,
    col_sq_mean: Vec<f64>,
    beta: Vec<f64>,
    residual: Vec<f64>,
}

impl GaussianState {
    fn new(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Self {
        let xm = ColMajor::from_view(x);
        let n = xm.n() as f64;
        let col_sq_mean = (0..xm.p()).map(|j| dot(xm.col(j), xm.col(j)) / n).collect();
        let beta = vec![0.0; xm.p()];
        let residual = y.to_vec();
        GaussianState {
            xm,
            col_sq_mean,
            beta,
            residual,
        }
    }

    /// One pass over `subset`; returns the largest coefficient change.
    fn sweep(&mut self, lambda: f64, subset: Option<&[usize]>) -> f64 {
        let n = self.xm.n() as f64;
        let mut max_change = 0.0_f64;
        let mut update = |j: usize, state: &mut Self| {
            let cj = state.col_sq_mean[j];
            if cj <= 0.0 {
                return;
            }
            let xj = state.xm.col(j);
            let rho = dot(xj, &state.residual) / n + cj * state.beta[j];
            let new = soft_threshold(rho, lambda) / cj;
            let delta = new - state.beta[j];
            if delta != 0.0 {
                axpy(&mut state.residual, xj, -delta);
                state.beta[j] = new;
                let change = delta.abs();
                if change > max_change {
                    max_change = change;
                }
            }
        };
        match subset {
            Some(indices) => {
                for &j in indices {
                    update(j, self);
                }
            }
            None => {
                for j in 0..self.xm.p() {
                    update(j, self);
                }
            }
        }
        max_change
    }

    fn kkt_violation(&self, lambda: f64) -> f64 {
        let n = self.xm.n() as f64;
        let mut worst = 0.0_f64;
        for j in 0..self.xm.p() {
            if self.col_sq_mean[j] <= 0.0 {
                continue;
            }
            let g = dot(self.xm.col(j), &self.residual) / n;
            let v = if self.beta[j] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * self.beta[j].signum()).abs()
            };
            if v > worst {
                worst = v;
            }
        }
        worst
    }

    /// Solve at a single penalty, warm-starting from the current state.
    fn solve(&mut self, lambda: f64, sweep_budget: usize) -> Result<()> {
        let mut sweeps = 0;
        loop {
            // Full pass lets inactive coordinates enter.
            let change = self.sweep(lambda, None);
            sweeps += 1;
            if change < COEF_TOL && self.kkt_violation(lambda) <= KKT_TOL {
                return Ok(());
            }
            if sweeps >= sweep_budget {
                return Err(Error::NonConvergence {
                    lambda_index: 0,
                    sweeps,
                });
            }
            // Iterate on the active set until it stabilizes.
            let active: Vec<usize> = (0..self.xm.p()).filter(|&j| self.beta[j] != 0.0).collect();
            loop {
                let change = self.sweep(lambda, Some(&active));
                sweeps += 1;
                if change < COEF_TOL {
                    break;
                }
                if sweeps >= sweep_budget {
                    return Err(Error::NonConvergence {
                        lambda_index: 0,
                        sweeps,
                    });
                }
            }
        }
    }
}

fn gaussian_path(d: &Dataset, grid: &LambdaGrid) -> Result<PathFit> {
    let p = d.p();
    let k = grid.k();
    let mut state = GaussianState::new(d.x(), d.y());
    let mut coefficients = Array2::<f64>::zeros((p, k));
    let mut active_counts = Vec::with_capacity(k);
    for (idx, &lambda) in grid.values().iter().enumerate() {
        state.solve(lambda, MAX_SWEEPS).map_err(|e| match e {
            Error::NonConvergence { sweeps, .. } => Error::NonConvergence {
                lambda_index: idx,
                sweeps,
            },
            other => other,
        })?;
        let mut count = 0;
        for j in 0..p {
            coefficients[[j, idx]] = state.beta[j];
            if state.beta[j] != 0.0 {
                count += 1;
            }
        }
        active_counts.push(count);
    }
    Ok(PathFit {
        coefficients,
        active_counts,
        warnings: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Binomial: iteratively reweighted coordinate descent
// ---------------------------------------------------------------------------

pub(super) struct BinomialState {
    xm: ColMajor,
    y: Vec<f64>,
    beta: Vec<f64>,
    eta: Vec<f64>,
    capped: bool,
}

impl BinomialState {
    fn new(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Self {
        let xm = ColMajor::from_view(x);
        let n = xm.n();
        BinomialState {
            beta: vec![0.0; xm.p()],
            eta: vec![0.0; n],
            y: y.to_vec(),
            xm,
            capped: false,
        }
    }

    fn true_kkt_violation(&self, lambda: f64) -> f64 {
        let n = self.xm.n() as f64;
        let score: Vec<f64> = self
            .y
            .iter()
            .zip(self.eta.iter())
            .map(|(yi, ei)| yi - sigmoid(*ei))
            .collect();
        let mut worst = 0.0_f64;
        for j in 0..self.xm.p() {
            let g = dot(self.xm.col(j), &score) / n;
            let v = if self.beta[j] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * self.beta[j].signum()).abs()
            };
            if v > worst {
                worst = v;
            }
        }
        worst
    }

    /// Solve at a single penalty via IRLS over weighted least-squares
    /// subproblems, each solved by coordinate descent.
    fn solve(&mut self, lambda: f64) -> Result<()> {
        let n = self.xm.n();
        let p = self.xm.p();
        let nf = n as f64;
        for _outer in 0..MAX_IRLS {
            // Working response and weights at the current linear predictor.
            let mut weights = vec![0.0; n];
            let mut wr = vec![0.0; n]; // w * (z - eta) = y - prob
            for i in 0..n {
                let prob = sigmoid(self.eta[i]).clamp(1e-10, 1.0 - 1e-10);
                weights[i] = (prob * (1.0 - prob)).max(1e-10);
                wr[i] = self.y[i] - prob;
            }
            let col_wsq: Vec<f64> = (0..p)
                .map(|j| {
                    let xj = self.xm.col(j);
                    xj.iter()
                        .zip(weights.iter())
                        .map(|(x, w)| w * x * x)
                        .sum::<f64>()
                        / nf
                })
                .collect();

            // Coordinate descent on the quadratic subproblem. `wr` tracks
            // w * (z - eta), so rho_j = wr'x_j / n + v_j beta_j.
            let mut max_outer_change = 0.0_f64;
            let mut sweeps = 0;
            loop {
                let mut max_change = 0.0_f64;
                #[allow(clippy::needless_range_loop)]
                for j in 0..p {
                    let vj = col_wsq[j];
                    if vj <= 0.0 {
                        continue;
                    }
                    let xj = self.xm.col(j);
                    let rho = dot(xj, &wr) / nf + vj * self.beta[j];
                    let new = soft_threshold(rho, lambda) / vj;
                    let delta = new - self.beta[j];
                    if delta != 0.0 {
                        for i in 0..n {
                            wr[i] -= weights[i] * xj[i] * delta;
                            self.eta[i] += xj[i] * delta;
                        }
                        self.beta[j] = new;
                        let change = delta.abs();
                        if change > max_change {
                            max_change = change;
                        }
                        if change > max_outer_change {
                            max_outer_change = change;
                        }
                    }
                }
                sweeps += 1;
                if max_change < COEF_TOL {
                    break;
                }
                if sweeps >= MAX_SWEEPS {
                    return Err(Error::NonConvergence {
                        lambda_index: 0,
                        sweeps,
                    });
                }
            }

            // Quasi-separation: cap runaway coefficients and stop.
            if self.beta.iter().any(|b| b.abs() > COEF_CAP) {
                for b in self.beta.iter_mut() {
                    *b = b.clamp(-COEF_CAP, COEF_CAP);
                }
                self.recompute_eta();
                self.capped = true;
                return Ok(());
            }

            if max_outer_change < COEF_TOL || self.true_kkt_violation(lambda) <= KKT_TOL {
                return Ok(());
            }
        }
        // IRLS stalled without meeting the gradient tolerance.
        Err(Error::NonConvergence {
            lambda_index: 0,
            sweeps: MAX_IRLS,
        })
    }

    fn recompute_eta(&mut self) {
        let n = self.xm.n();
        self.eta = vec![0.0; n];
        for j in 0..self.xm.p() {
            if self.beta[j] != 0.0 {
                axpy(&mut self.eta, self.xm.col(j), self.beta[j]);
            }
        }
    }
}

fn binomial_path(d: &Dataset, grid: &LambdaGrid) -> Result<PathFit> {
    let p = d.p();
    let k = grid.k();
    let mut state = BinomialState::new(d.x(), d.y());
    let mut coefficients = Array2::<f64>::zeros((p, k));
    let mut active_counts = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    for (idx, &lambda) in grid.values().iter().enumerate() {
        state.capped = false;
        state.solve(lambda).map_err(|e| match e {
            Error::NonConvergence { sweeps, .. } => Error::NonConvergence {
                lambda_index: idx,
                sweeps,
            },
            other => other,
        })?;
        if state.capped {
            warnings.push(format!(
                "grid index {idx}: coefficients capped at {COEF_CAP:.0e} (quasi-separation)"
            ));
        }
        let mut count = 0;
        for j in 0..p {
            coefficients[[j, idx]] = state.beta[j];
            if state.beta[j] != 0.0 {
                count += 1;
            }
        }
        active_counts.push(count);
    }
    Ok(PathFit {
        coefficients,
        active_counts,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Lambda search support
// ---------------------------------------------------------------------------

/// Warm-started probe used by the grid search to evaluate active counts at
/// arbitrary penalties.
pub(super) enum Prober {
    Gaussian(GaussianState),
    Binomial(BinomialState),
}

impl Prober {
    pub(super) fn new(d: &Dataset) -> Self {
        match d.family() {
            Family::Gaussian => Prober::Gaussian(GaussianState::new(d.x(), d.y())),
            Family::Binomial => Prober::Binomial(BinomialState::new(d.x(), d.y())),
        }
    }

    pub(super) fn active_count_at(&mut self, lambda: f64) -> Result<usize> {
        match self {
            Prober::Gaussian(state) => {
                state.solve(lambda, MAX_SWEEPS)?;
                Ok(state.beta.iter().filter(|b| **b != 0.0).count())
            }
            Prober::Binomial(state) => {
                state.capped = false;
                state.solve(lambda)?;
                Ok(state.beta.iter().filter(|b| **b != 0.0).count())
            }
        }
    }
}

/// Test hook: run gaussian coordinate descent cold-started with a fixed
/// sweep budget, ignoring convergence failures.
#[cfg(test)]
pub(crate) fn gaussian_sweep_trajectory(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    sweeps: usize,
) -> Vec<f64> {
    let mut state = GaussianState::new(x, y);
    let mut objectives = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        state.sweep(lambda, None);
        let beta = Array1::from_vec(state.beta.clone());
        objectives.push(gaussian_objective(x, y, lambda, beta.view()));
    }
    objectives
}
