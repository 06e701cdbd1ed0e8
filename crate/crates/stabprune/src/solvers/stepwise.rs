//! Forward-backward stepwise regression on F-test p-values, producing the
//! reference importance vector. For a binomial response, where the F test is
//! ill-defined beyond n predictors, the reference comes from a lasso fit at
//! the penalty minimizing deviance + 2 * df.

use ndarray::{Array1, Array2};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::{dot, ColMajor};
use crate::dataset::{Dataset, Family};
use crate::error::Result;
use crate::linalg::solve_spd;
use crate::pruning::ImportanceVector;

const P_ENTER: f64 = 0.05;
const P_REMOVE: f64 = 0.10;
const MODEL_CAP: usize = 50;
/// Relative floor on a candidate's residual projection norm, below which the
/// column is treated as collinear with the current model and skipped.
const SINGULAR_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct StepwiseFit {
    /// Model columns in inclusion order.
    pub selected: Vec<usize>,
    /// Full-length coefficient vector, zero off the selected set.
    pub coefficients: Array1<f64>,
    /// |beta_j| / sum |beta|, or the uniform fallback when nothing entered.
    pub reference: ImportanceVector,
    pub warnings: Vec<String>,
}

/// Build the reference importance vector on (centered) training data.
pub fn stepwise_reference(d: &Dataset) -> Result<StepwiseFit> {
    match d.family() {
        Family::Gaussian => gaussian_stepwise(d),
        Family::Binomial => binomial_reference(d),
    }
}

struct StepwiseState<'a> {
    xm: &'a ColMajor,
    y: &'a [f64],
    col_sq: Vec<f64>,
    xty: Vec<f64>,
    selected: Vec<usize>,
    beta: Vec<f64>,
    residual: Vec<f64>,
    rss: f64,
    warnings: Vec<String>,
}

impl<'a> StepwiseState<'a> {
    fn new(xm: &'a ColMajor, y: &'a [f64]) -> Self {
        let p = xm.p();
        let col_sq = (0..p).map(|j| dot(xm.col(j), xm.col(j))).collect();
        let xty = (0..p).map(|j| dot(xm.col(j), y)).collect();
        let rss = dot(y, y);
        StepwiseState {
            xm,
            y,
            col_sq,
            xty,
            selected: Vec::new(),
            beta: Vec::new(),
            residual: y.to_vec(),
            rss,
            warnings: Vec::new(),
        }
    }

    fn gram(&self, columns: &[usize]) -> Array2<f64> {
        let k = columns.len();
        Array2::from_shape_fn((k, k), |(a, b)| {
            dot(self.xm.col(columns[a]), self.xm.col(columns[b]))
        })
    }

    /// Refit on the current selected set, updating beta, residual, and rss.
    fn refit(&mut self) -> Result<()> {
        if self.selected.is_empty() {
            self.beta.clear();
            self.residual = self.y.to_vec();
            self.rss = dot(self.y, self.y);
            return Ok(());
        }
        let gram = self.gram(&self.selected);
        let rhs = Array1::from_iter(self.selected.iter().map(|&j| self.xty[j]));
        let beta = match solve_spd(gram.view(), rhs.view()) {
            Ok(beta) => beta,
            Err(_) => {
                // Collinearity slipped through the entry guard: stabilize.
                self.warnings
                    .push("ridge-stabilized a singular stepwise refit".to_string());
                let k = self.selected.len();
                let shifted = &gram + &(Array2::<f64>::eye(k) * 1e-10 * gram.diag().sum());
                solve_spd(shifted.view(), rhs.view())?
            }
        };
        self.beta = beta.to_vec();
        self.residual = self.y.to_vec();
        for (idx, &j) in self.selected.iter().enumerate() {
            super::axpy(&mut self.residual, self.xm.col(j), -self.beta[idx]);
        }
        self.rss = dot(&self.residual, &self.residual);
        Ok(())
    }

    /// RSS drop from adding column j, via the projection of x_j onto the
    /// orthogonal complement of the current model span.
    fn forward_candidate(&self, j: usize, gram_chol_cols: &Array2<f64>) -> Option<f64> {
        if self.col_sq[j] <= 0.0 {
            return None;
        }
        // a = X_S' x_j
        let k = self.selected.len();
        let proj_sq = if k == 0 {
            0.0
        } else {
            let a = Array1::from_iter(
                self.selected
                    .iter()
                    .map(|&s| dot(self.xm.col(s), self.xm.col(j))),
            );
            // solve L w = a; proj = w'w
            let mut w = vec![0.0; k];
            for r in 0..k {
                let mut sum = a[r];
                for c in 0..r {
                    sum -= gram_chol_cols[[r, c]] * w[c];
                }
                w[r] = sum / gram_chol_cols[[r, r]];
            }
            dot(&w, &w)
        };
        let m_j = self.col_sq[j] - proj_sq;
        if m_j <= SINGULAR_RTOL * self.col_sq[j] {
            return None;
        }
        let c_j = dot(self.xm.col(j), &self.residual);
        Some((c_j * c_j / m_j).max(0.0))
    }
}

/// p-value of a 1-df partial F test.
fn f_test_pvalue(rss_drop: f64, rss_new: f64, df2: f64) -> f64 {
    if df2 < 1.0 {
        return 1.0;
    }
    if rss_new <= 1e-12 * (rss_drop + rss_new) {
        // essentially perfect fit
        return 0.0;
    }
    let f = rss_drop / (rss_new / df2);
    if !f.is_finite() || f <= 0.0 {
        return 1.0;
    }
    match FisherSnedecor::new(1.0, df2) {
        Ok(dist) => 1.0 - dist.cdf(f),
        Err(_) => 1.0,
    }
}

fn gaussian_stepwise(d: &Dataset) -> Result<StepwiseFit> {
    let n = d.n();
    let p = d.p();
    let cap = (n.saturating_sub(2)).min(p).min(MODEL_CAP);
    let xm = ColMajor::from_view(d.x());
    let y = d.y().to_vec();
    let mut state = StepwiseState::new(&xm, &y);
    let rss_null = state.rss;
    let mut skipped_collinear = false;

    loop {
        if state.selected.len() >= cap {
            break;
        }
        if state.rss <= 1e-12 * rss_null.max(f64::MIN_POSITIVE) {
            break;
        }
        // Forward step: cholesky of the current Gram once, then score every
        // candidate's partial F p-value.
        let gram_chol = if state.selected.is_empty() {
            Array2::zeros((0, 0))
        } else {
            match crate::linalg::cholesky_lower(state.gram(&state.selected).view()) {
                Ok(l) => l,
                Err(_) => break,
            }
        };
        let k_new = state.selected.len() + 1;
        // one df charged for the implicit intercept of centered data
        let df2 = (n as f64) - (k_new as f64) - 1.0;
        let mut best: Option<(f64, usize, f64)> = None;
        for j in 0..p {
            if state.selected.contains(&j) {
                continue;
            }
            let drop = match state.forward_candidate(j, &gram_chol) {
                Some(drop) => drop,
                None => {
                    if state.col_sq[j] > 0.0 {
                        skipped_collinear = true;
                    }
                    continue;
                }
            };
            let rss_new = (state.rss - drop).max(0.0);
            let pval = f_test_pvalue(drop, rss_new, df2);
            let better = match best {
                None => true,
                Some((bp, bj, _)) => pval < bp || (pval == bp && j < bj),
            };
            if better {
                best = Some((pval, j, rss_new));
            }
        }
        let entered = match best {
            Some((pval, j, _)) if pval < P_ENTER => {
                state.selected.push(j);
                state.refit()?;
                true
            }
            _ => false,
        };
        if !entered {
            break;
        }

        // Backward steps: drop the worst removal p-value while it exceeds
        // the removal threshold.
        loop {
            let k = state.selected.len();
            if k <= 1 {
                break;
            }
            let gram = state.gram(&state.selected);
            let df2 = (n as f64) - (k as f64) - 1.0;
            // RSS increase from removing member idx: beta_idx^2 / (G^{-1})_{idx,idx}
            let mut worst: Option<(f64, usize)> = None;
            for idx in 0..k {
                let mut e = Array1::<f64>::zeros(k);
                e[idx] = 1.0;
                let col = match solve_spd(gram.view(), e.view()) {
                    Ok(col) => col,
                    Err(_) => break,
                };
                let inv_jj = col[idx];
                if inv_jj <= 0.0 {
                    continue;
                }
                let rss_inc = state.beta[idx] * state.beta[idx] / inv_jj;
                let pval = f_test_pvalue(rss_inc, state.rss, df2);
                let better = match worst {
                    None => true,
                    Some((wp, _)) => pval > wp,
                };
                if better {
                    worst = Some((pval, idx));
                }
            }
            match worst {
                Some((pval, idx)) if pval > P_REMOVE => {
                    state.selected.remove(idx);
                    state.refit()?;
                }
                _ => break,
            }
        }
    }

    let mut coefficients = Array1::<f64>::zeros(p);
    for (idx, &j) in state.selected.iter().enumerate() {
        coefficients[j] = state.beta[idx];
    }
    let reference = ImportanceVector::from_raw(coefficients.mapv(f64::abs))?;
    let mut warnings = state.warnings;
    if skipped_collinear {
        warnings.push("skipped candidates collinear with the selected model".to_string());
    }
    if reference.fallback {
        warnings.push("no variable entered; reference fell back to uniform".to_string());
    }
    Ok(StepwiseFit {
        selected: state.selected,
        coefficients,
        reference,
        warnings,
    })
}

/// Binomial reference: lasso path on the full data, penalty chosen by
/// deviance + 2 * df.
fn binomial_reference(d: &Dataset) -> Result<StepwiseFit> {
    let p = d.p();
    let q = super::default_q_target(p).min((d.n() - 1).min(p));
    let grid = super::make_grid(d, 100, q)?;
    let fit = super::lasso_path(d, &grid)?;
    let k = super::aic_index(&fit, d);
    let coefficients = fit.coefficients.column(k).to_owned();
    let selected: Vec<usize> = (0..p).filter(|&j| coefficients[j] != 0.0).collect();
    let reference = ImportanceVector::from_raw(coefficients.mapv(f64::abs))?;
    let mut warnings = vec![format!(
        "binomial reference uses the lasso at deviance+2df (grid index {k}) in place of F-test stepwise"
    )];
    if reference.fallback {
        warnings.push("aic fit was empty; reference fell back to uniform".to_string());
    }
    Ok(StepwiseFit {
        selected,
        coefficients,
        reference,
        warnings,
    })
}
