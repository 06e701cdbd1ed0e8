//! Base learners: the lasso regularization-path solver, grid construction,
//! and stepwise regression for the reference importance vector.

mod lasso;
mod stepwise;

pub use lasso::{binomial_nll, gaussian_objective, lasso_path, max_kkt_violation, PathFit};
pub use stepwise::{stepwise_reference, StepwiseFit};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};

use crate::dataset::{Dataset, Family};
use crate::error::{Error, Result};

/// Relative floor under which the lambda search gives up.
const LAMBDA_FLOOR_RATIO: f64 = 1e-8;
/// Geometric extension factor for the lambda_min search.
const PROBE_FACTOR: f64 = 0.7;
/// Relative precision of the lambda_min bisection.
const BISECT_RTOL: f64 = 0.01;

/// Column-major copy of a design matrix for cache-friendly coordinate sweeps.
pub(crate) struct ColMajor {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl ColMajor {
    pub(crate) fn from_view(x: ArrayView2<f64>) -> Self {
        let (n, p) = x.dim();
        let mut data = vec![0.0; n * p];
        for j in 0..p {
            let col = x.column(j);
            let dst = &mut data[j * n..(j + 1) * n];
            for (d, v) in dst.iter_mut().zip(col.iter()) {
                *d = *v;
            }
        }
        ColMajor { n, p, data }
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn p(&self) -> usize {
        self.p
    }

    pub(crate) fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `target += scale * source`
pub(crate) fn axpy(target: &mut [f64], source: &[f64], scale: f64) {
    for (t, s) in target.iter_mut().zip(source.iter()) {
        *t += scale * s;
    }
}

/// Descending sequence of penalties, equally spaced on the log scale.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
    /// Whether the target active count was reached at lambda_min.
    attained: bool,
}

impl LambdaGrid {
    /// Log-spaced grid with exact endpoints.
    pub fn log_spaced(lambda_max: f64, lambda_min: f64, k: usize) -> Result<LambdaGrid> {
        if k < 2 {
            return Err(Error::invalid(format!("grid needs K >= 2, got {k}")));
        }
        if !(lambda_max.is_finite() && lambda_min.is_finite())
            || lambda_min <= 0.0
            || lambda_min >= lambda_max
        {
            return Err(Error::invalid(format!(
                "grid needs 0 < lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        let log_hi = lambda_max.ln();
        let log_lo = lambda_min.ln();
        let mut values = Vec::with_capacity(k);
        for i in 0..k {
            let t = i as f64 / (k - 1) as f64;
            values.push((log_hi + t * (log_lo - log_hi)).exp());
        }
        values[0] = lambda_max;
        values[k - 1] = lambda_min;
        Ok(LambdaGrid {
            values,
            attained: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[0]
    }

    pub fn lambda_min(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// False when the lambda_min search hit its floor before the lasso could
    /// include the target number of variables.
    pub fn attained(&self) -> bool {
        self.attained
    }
}

/// Largest penalty at which the lasso keeps every coefficient at zero:
/// the maximum absolute column-response inner product scaled by 1/n.
pub fn lambda_max(x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mut best = 0.0_f64;
    for j in 0..x.ncols() {
        let g = x.column(j).dot(&y).abs() / n;
        if g > best {
            best = g;
        }
    }
    best
}

/// Family-aware grid anchor: for a binomial response the zero-coefficient
/// gradient uses y - 1/2.
fn grid_lambda_max(d: &Dataset) -> f64 {
    match d.family() {
        Family::Gaussian => lambda_max(d.x(), d.y()),
        Family::Binomial => {
            let shifted = d.y().mapv(|v| v - 0.5);
            lambda_max(d.x(), shifted.view())
        }
    }
}

/// Default per-learner selection target `ceil(sqrt(1.6 p))`.
pub fn default_q_target(p: usize) -> usize {
    (1.6 * p as f64).sqrt().ceil() as usize
}

/// Low-dimensional variant `ceil(0.8 p)`.
pub fn low_dim_q_target(p: usize) -> usize {
    (0.8 * p as f64).ceil() as usize
}

/// Build the K-point grid from lambda_max down to the largest lambda at
/// which the path first includes `q_target` variables. The search extends
/// geometrically (factor 0.7 per probe) and then bisects to 1% relative
/// precision, resolving ties toward the larger lambda.
pub fn make_grid(d: &Dataset, k: usize, q_target: usize) -> Result<LambdaGrid> {
    let n = d.n();
    let p = d.p();
    if q_target < 1 {
        return Err(Error::invalid("q_target must be at least 1"));
    }
    if q_target > (n - 1).min(p) {
        return Err(Error::invalid(format!(
            "q_target {q_target} exceeds min(n-1, p) = {}",
            (n - 1).min(p)
        )));
    }
    if k < 2 {
        return Err(Error::invalid(format!("grid needs K >= 2, got {k}")));
    }
    let lmax = grid_lambda_max(d);
    if lmax <= 0.0 {
        return Err(Error::numerical(
            "lambda_max is zero (response orthogonal to every column); grid is degenerate",
        ));
    }

    let mut prober = lasso::Prober::new(d);
    let floor = LAMBDA_FLOOR_RATIO * lmax;

    // Geometric extension until the active count reaches q_target.
    let mut hi = lmax;
    let mut lo = None;
    let mut probe = lmax * PROBE_FACTOR;
    while probe >= floor {
        let count = prober.active_count_at(probe)?;
        if count >= q_target {
            lo = Some(probe);
            break;
        }
        hi = probe;
        probe *= PROBE_FACTOR;
    }
    let mut lo = match lo {
        Some(lo) => lo,
        None => {
            // Unreachable target: truncate the grid at the floor.
            return LambdaGrid::log_spaced(lmax, floor, k).map(|mut g| {
                g.attained = false;
                g
            });
        }
    };

    // Bisection on the log scale: keep count(lo) >= q_target, count(hi) below.
    while hi / lo > 1.0 + BISECT_RTOL {
        let mid = ((lo.ln() + hi.ln()) / 2.0).exp();
        let count = prober.active_count_at(mid)?;
        if count >= q_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    LambdaGrid::log_spaced(lmax, lo, k)
}

/// Diagnostic dump of a path fit: one row per grid point with the penalty,
/// active count, and coefficients.
pub fn write_path_csv(fit: &PathFit, grid: &LambdaGrid, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let p = fit.coefficients.nrows();
    let mut header = vec!["lambda".to_string(), "active_count".to_string()];
    header.extend((0..p).map(|j| format!("beta_{}", j + 1)));
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for (k, lambda) in grid.values().iter().enumerate() {
        let mut fields = vec![format!("{lambda}"), format!("{}", fit.active_counts[k])];
        fields.extend((0..p).map(|j| format!("{}", fit.coefficients[[j, k]])));
        writeln!(w, "{}", fields.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Index of the grid point minimizing deviance + 2 * df; ties resolve to the
/// larger lambda. Used by the lasso baseline and the binomial reference fit.
pub fn aic_index(fit: &PathFit, d: &Dataset) -> usize {
    let n = d.n() as f64;
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for k in 0..fit.active_counts.len() {
        let beta = fit.coefficients.column(k);
        let df = fit.active_counts[k] as f64;
        let value = match d.family() {
            Family::Gaussian => {
                let eta = d.x().dot(&beta);
                let rss: f64 = d
                    .y()
                    .iter()
                    .zip(eta.iter())
                    .map(|(y, e)| (y - e) * (y - e))
                    .sum();
                n * (rss.max(1e-300) / n).ln() + 2.0 * df
            }
            Family::Binomial => 2.0 * n * binomial_nll(d.x(), d.y(), beta) + 2.0 * df,
        };
        if value < best_value {
            best_value = value;
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randgen::{sample_mvn, Seed};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};

    #[test]
    fn lambda_max_hand_example() {
        let x = array![[1.0], [-1.0]];
        let y = array![2.0, -2.0];
        assert_abs_diff_eq!(lambda_max(x.view(), y.view()), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn lambda_max_orthogonal_is_zero_and_grid_degenerates() {
        let x = array![[1.0], [-1.0]];
        let y = array![1.0, 1.0];
        assert_eq!(lambda_max(x.view(), y.view()), 0.0);
        let d = Dataset::new(
            array![[1.0, 0.0], [-1.0, 0.5], [0.0, -0.5]],
            array![0.0, 0.0, 0.0],
            Family::Gaussian,
        )
        .unwrap();
        let err = make_grid(&d, 10, 1).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn grid_is_log_spaced_with_constant_ratio() {
        let grid = LambdaGrid::log_spaced(2.0, 0.01, 100).unwrap();
        assert_eq!(grid.k(), 100);
        assert_eq!(grid.lambda_max(), 2.0);
        assert_eq!(grid.lambda_min(), 0.01);
        let values = grid.values();
        let r0 = values[1] / values[0];
        for w in values.windows(2) {
            assert_abs_diff_eq!(w[1] / w[0], r0, epsilon = 1e-12);
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn q_target_defaults() {
        assert_eq!(default_q_target(1000), 40);
        assert_eq!(default_q_target(50), 9);
        assert_eq!(default_q_target(200), 18);
        assert_eq!(low_dim_q_target(20), 16);
    }

    #[test]
    fn make_grid_reaches_target_count() {
        let x = sample_mvn(Array2::eye(12).view(), 60, Seed::new(3)).unwrap();
        let beta = Array1::from_vec(vec![2.0, -1.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let noise = sample_mvn(Array2::eye(1).view(), 60, Seed::new(4)).unwrap();
        let y = x.dot(&beta) + noise.column(0).to_owned();
        let d = Dataset::new(x, y, Family::Gaussian).unwrap().center();
        let grid = make_grid(&d, 50, 8).unwrap();
        assert!(grid.attained());
        assert_eq!(grid.k(), 50);
        let fit = lasso_path(&d, &grid).unwrap();
        assert!(fit.active_counts[grid.k() - 1] >= 8);
        assert_eq!(fit.active_counts[0], 0);
    }

    #[test]
    fn unreachable_target_truncates_grid_with_flag() {
        // y is exactly one column: the residual vanishes once it enters,
        // so no second variable ever becomes active.
        let x = sample_mvn(Array2::eye(3).view(), 12, Seed::new(14)).unwrap();
        let y = x.column(0).to_owned();
        let d = Dataset::new(x, y, Family::Gaussian).unwrap().center();
        let grid = make_grid(&d, 10, 2).unwrap();
        assert!(!grid.attained());
        assert!(grid.lambda_min() < 1e-7 * grid.lambda_max());
        assert_eq!(grid.k(), 10);
    }

    #[test]
    fn path_dump_is_parseable() {
        let x = sample_mvn(Array2::eye(4).view(), 25, Seed::new(8)).unwrap();
        let beta = Array1::from_vec(vec![1.0, -1.0, 0.0, 0.0]);
        let noise = sample_mvn(Array2::eye(1).view(), 25, Seed::new(9)).unwrap();
        let y = x.dot(&beta) + noise.column(0).to_owned() * 0.2;
        let d = Dataset::new(x, y, Family::Gaussian).unwrap().center();
        let grid = make_grid(&d, 12, 3).unwrap();
        let fit = lasso_path(&d, &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("path.csv");
        write_path_csv(&fit, &grid, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let mut lines = body.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lambda,active_count,beta_1,beta_2,beta_3,beta_4"
        );
        assert_eq!(lines.count(), 12);
    }

    #[test]
    fn aic_prefers_true_support_on_easy_problem() {
        let x = sample_mvn(Array2::eye(8).view(), 80, Seed::new(5)).unwrap();
        let beta = Array1::from_vec(vec![3.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let noise = sample_mvn(Array2::eye(1).view(), 80, Seed::new(6)).unwrap();
        let y = x.dot(&beta) + noise.column(0).to_owned() * 0.1;
        let d = Dataset::new(x, y, Family::Gaussian).unwrap().center();
        let grid = make_grid(&d, 60, 6).unwrap();
        let fit = lasso_path(&d, &grid).unwrap();
        let k = aic_index(&fit, &d);
        let active: Vec<usize> = (0..8)
            .filter(|&j| fit.coefficients[[j, k]] != 0.0)
            .collect();
        assert_eq!(active, vec![0, 1]);
    }
}
