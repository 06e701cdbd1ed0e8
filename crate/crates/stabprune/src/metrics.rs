//! Selection and prediction quality over replicated runs: mean selection
//! probabilities for signal and noise variables, exact-recovery accuracy,
//! false discovery rate, and relative prediction / misclassification error.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::dataset::{Dataset, Family};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

/// One replication's outcome.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub replication: usize,
    pub selected: BTreeSet<usize>,
    pub truth: BTreeSet<usize>,
    /// Refit coefficients, full length, zero off the selected set.
    pub coefficients: Array1<f64>,
    /// False discovery fraction |S \ T| / |S|, with 0/0 := 0.
    pub fdr: f64,
    /// Relative prediction error (gaussian) or misclassification error
    /// (binomial).
    pub perr: f64,
}

impl EvalRecord {
    pub fn new(
        replication: usize,
        selected: BTreeSet<usize>,
        truth: BTreeSet<usize>,
        coefficients: Array1<f64>,
        perr: f64,
    ) -> EvalRecord {
        let false_hits = selected.difference(&truth).count();
        let fdr = if selected.is_empty() {
            0.0
        } else {
            false_hits as f64 / selected.len() as f64
        };
        EvalRecord {
            replication,
            selected,
            truth,
            coefficients,
            fdr,
            perr,
        }
    }
}

/// Replication-averaged metrics in the usual comparison-table layout.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricsSummary {
    pub p0_bar: f64,
    pub p1_bar: f64,
    pub acc: f64,
    pub fdr: f64,
    pub perr_mean: f64,
    pub perr_std: f64,
    pub m: usize,
}

impl MetricsSummary {
    pub const CSV_HEADER: &'static str = "method,p0_bar,p1_bar,acc,fdr,perr_mean,perr_std";

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            method, self.p0_bar, self.p1_bar, self.acc, self.fdr, self.perr_mean, self.perr_std
        )
    }
}

/// Reduce replication records to summary metrics. `d0` is the number of
/// truly relevant variables out of `p`.
pub fn selection_metrics(records: &[EvalRecord], d0: usize, p: usize) -> Result<MetricsSummary> {
    let m = records.len();
    if m == 0 {
        return Err(Error::invalid("need at least one replication record"));
    }
    if d0 == 0 || d0 >= p {
        return Err(Error::invalid(format!(
            "selection metrics need 0 < d0 < p, got d0={d0}, p={p}"
        )));
    }
    let mut true_hits = 0usize;
    let mut false_hits = 0usize;
    let mut exact = 0usize;
    let mut fdr_sum = 0.0;
    for r in records {
        true_hits += r.selected.intersection(&r.truth).count();
        false_hits += r.selected.difference(&r.truth).count();
        if r.selected == r.truth {
            exact += 1;
        }
        fdr_sum += r.fdr;
    }
    let mf = m as f64;
    let perr_mean = records.iter().map(|r| r.perr).sum::<f64>() / mf;
    let perr_std = if m > 1 {
        (records
            .iter()
            .map(|r| (r.perr - perr_mean).powi(2))
            .sum::<f64>()
            / (mf - 1.0))
            .sqrt()
    } else {
        0.0
    };
    Ok(MetricsSummary {
        p1_bar: true_hits as f64 / (d0 as f64 * mf),
        p0_bar: false_hits as f64 / ((p - d0) as f64 * mf),
        acc: exact as f64 / mf,
        fdr: fdr_sum / mf,
        perr_mean,
        perr_std,
        m,
    })
}

/// Ordinary least squares on the selected columns of (centered) training
/// data; the result is embedded in a full-length coefficient vector.
#[derive(Debug, Clone)]
pub struct Refit {
    pub coefficients: Array1<f64>,
    /// Set when a singular normal system needed the 1e-8 ridge.
    pub ridged: bool,
}

pub fn ols_refit(train: &Dataset, selected: &[usize]) -> Result<Refit> {
    let p = train.p();
    let mut coefficients = Array1::<f64>::zeros(p);
    if selected.is_empty() {
        return Ok(Refit {
            coefficients,
            ridged: false,
        });
    }
    if selected.iter().any(|&j| j >= p) {
        return Err(Error::invalid("selected index out of range"));
    }
    let k = selected.len();
    let gram = Array2::from_shape_fn((k, k), |(a, b)| {
        train.x().column(selected[a]).dot(&train.x().column(selected[b]))
    });
    let rhs = Array1::from_iter(
        selected
            .iter()
            .map(|&j| train.x().column(j).dot(&train.y())),
    );
    let (beta, ridged) = match solve_spd(gram.view(), rhs.view()) {
        Ok(beta) => (beta, false),
        Err(_) => {
            let shifted = &gram + &(Array2::<f64>::eye(k) * 1e-8);
            (solve_spd(shifted.view(), rhs.view())?, true)
        }
    };
    for (idx, &j) in selected.iter().enumerate() {
        coefficients[j] = beta[idx];
    }
    Ok(Refit {
        coefficients,
        ridged,
    })
}

/// Unpenalized logistic maximum likelihood on the selected columns, via
/// Newton iterations. Diverging fits (separation) stop at a saturation
/// bound and are flagged.
pub fn logistic_refit(train: &Dataset, selected: &[usize]) -> Result<Refit> {
    const MAX_NEWTON: usize = 100;
    const SATURATION: f64 = 30.0;
    let p = train.p();
    let mut coefficients = Array1::<f64>::zeros(p);
    if selected.is_empty() {
        return Ok(Refit {
            coefficients,
            ridged: false,
        });
    }
    if selected.iter().any(|&j| j >= p) {
        return Err(Error::invalid("selected index out of range"));
    }
    let n = train.n();
    let k = selected.len();
    let xs = train.x().select(ndarray::Axis(1), selected);
    let y = train.y();
    let mut beta = Array1::<f64>::zeros(k);
    let mut ridged = false;
    for _ in 0..MAX_NEWTON {
        let eta = xs.dot(&beta);
        let probs = eta.mapv(|e| 1.0 / (1.0 + (-e).exp()));
        let mut hessian = Array2::<f64>::zeros((k, k));
        let mut score = Array1::<f64>::zeros(k);
        for i in 0..n {
            let w = (probs[i] * (1.0 - probs[i])).max(1e-10);
            let r = y[i] - probs[i];
            for a in 0..k {
                score[a] += xs[[i, a]] * r;
                for b in a..k {
                    hessian[[a, b]] += w * xs[[i, a]] * xs[[i, b]];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hessian[[a, b]] = hessian[[b, a]];
            }
        }
        let step = match solve_spd(hessian.view(), score.view()) {
            Ok(step) => step,
            Err(_) => {
                ridged = true;
                let shifted = &hessian + &(Array2::<f64>::eye(k) * 1e-8);
                solve_spd(shifted.view(), score.view())?
            }
        };
        beta = &beta + &step;
        if beta.iter().any(|b| b.abs() > SATURATION) {
            // quasi-separation: predictions are already saturated
            ridged = true;
            break;
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-10 {
            break;
        }
    }
    for (idx, &j) in selected.iter().enumerate() {
        coefficients[j] = beta[idx];
    }
    Ok(Refit {
        coefficients,
        ridged,
    })
}

/// Relative prediction error (beta_hat - beta_star)' S (beta_hat - beta_star)
/// / sigma^2 with S = X_test' X_test / n_test estimated on an independent
/// test design.
pub fn relative_prediction_error(
    beta_hat: ArrayView1<f64>,
    beta_star: ArrayView1<f64>,
    sigma: f64,
    x_test: ArrayView2<f64>,
) -> Result<f64> {
    if x_test.nrows() == 0 {
        return Err(Error::invalid("test set must be nonempty"));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "noise standard deviation must be positive, got {sigma}"
        )));
    }
    if beta_hat.len() != beta_star.len() || beta_hat.len() != x_test.ncols() {
        return Err(Error::invalid("coefficient/test dimension mismatch"));
    }
    let delta = &beta_hat.to_owned() - &beta_star;
    let projected = x_test.dot(&delta);
    let quad = projected.dot(&projected) / x_test.nrows() as f64;
    Ok(quad / (sigma * sigma))
}

/// Misclassification of the sign classifier 1{x'beta > 0} on a binomial
/// test set. An all-zero coefficient vector degrades to the majority-class
/// rule and is flagged.
#[derive(Debug, Clone, Copy)]
pub struct Misclassification {
    pub error: f64,
    pub fallback: bool,
}

pub fn misclassification(beta: ArrayView1<f64>, test: &Dataset) -> Result<Misclassification> {
    if test.family() != Family::Binomial {
        return Err(Error::invalid("misclassification needs a binomial test set"));
    }
    if beta.len() != test.p() {
        return Err(Error::invalid("coefficient/test dimension mismatch"));
    }
    let n = test.n() as f64;
    let positives = test.y().sum();
    if beta.iter().all(|b| *b == 0.0) {
        let majority_rate = (positives / n).max(1.0 - positives / n);
        return Ok(Misclassification {
            error: 1.0 - majority_rate,
            fallback: true,
        });
    }
    let eta = test.x().dot(&beta);
    let mut wrong = 0usize;
    for (e, y) in eta.iter().zip(test.y().iter()) {
        let predicted = if *e > 0.0 { 1.0 } else { 0.0 };
        if predicted != *y {
            wrong += 1;
        }
    }
    Ok(Misclassification {
        error: wrong as f64 / n,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randgen::{bernoulli_from_linear, sample_mvn, ScenarioSampler, ScenarioSpec, Seed};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn record(selected: &[usize], truth: &[usize], perr: f64) -> EvalRecord {
        EvalRecord::new(
            0,
            selected.iter().copied().collect(),
            truth.iter().copied().collect(),
            Array1::zeros(4),
            perr,
        )
    }

    #[test]
    fn exact_recovery_metrics() {
        let r = record(&[0, 1], &[0, 1], 0.0);
        let s = selection_metrics(&[r], 2, 4).unwrap();
        assert_eq!(s.p1_bar, 1.0);
        assert_eq!(s.p0_bar, 0.0);
        assert_eq!(s.acc, 1.0);
        assert_eq!(s.fdr, 0.0);
    }

    #[test]
    fn half_right_metrics() {
        let r = record(&[0, 2], &[0, 1], 0.0);
        let s = selection_metrics(&[r], 2, 4).unwrap();
        assert_abs_diff_eq!(s.p1_bar, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.p0_bar, 0.5, epsilon = 1e-15);
        assert_eq!(s.acc, 0.0);
        assert_abs_diff_eq!(s.fdr, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn empty_selection_convention() {
        let r = record(&[], &[0, 1], 0.0);
        assert_eq!(r.fdr, 0.0);
        let s = selection_metrics(&[r], 2, 4).unwrap();
        assert_eq!(s.acc, 0.0);
        assert_eq!(s.fdr, 0.0);
    }

    #[test]
    fn degenerate_normalizers_rejected() {
        let r = record(&[0], &[0], 0.0);
        assert!(selection_metrics(&[r.clone()], 0, 4).is_err());
        assert!(selection_metrics(&[r], 4, 4).is_err());
        assert!(selection_metrics(&[], 2, 4).is_err());
    }

    #[test]
    fn metrics_stay_in_range_on_random_records() {
        use rand::Rng;
        let mut rng = Seed::new(64).rng();
        for _ in 0..200 {
            let p = 8;
            let truth: BTreeSet<usize> = (0..3).collect();
            let selected: BTreeSet<usize> =
                (0..p).filter(|_| rng.random::<f64>() < 0.4).collect();
            let recs = vec![EvalRecord::new(
                0,
                selected,
                truth,
                Array1::zeros(p),
                rng.random::<f64>(),
            )];
            let s = selection_metrics(&recs, 3, p).unwrap();
            for v in [s.p0_bar, s.p1_bar, s.acc, s.fdr] {
                assert!((0.0..=1.0).contains(&v));
            }
            if s.acc == 1.0 {
                assert_eq!(s.p1_bar, 1.0);
                assert_eq!(s.p0_bar, 0.0);
                assert_eq!(s.fdr, 0.0);
            }
        }
    }

    #[test]
    fn prediction_error_zero_and_unit_cases() {
        // X'X/n = I exactly: scaled identity rows
        let x_test = Array2::<f64>::eye(4) * 2.0;
        let beta_star = array![1.0, 0.0, 0.0, 0.0];
        let same = relative_prediction_error(
            beta_star.view(),
            beta_star.view(),
            1.0,
            x_test.view(),
        )
        .unwrap();
        assert_eq!(same, 0.0);
        let beta_hat = array![2.0, 0.0, 0.0, 0.0]; // displacement e1
        let one = relative_prediction_error(
            beta_hat.view(),
            beta_star.view(),
            1.0,
            x_test.view(),
        )
        .unwrap();
        assert_abs_diff_eq!(one, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_refit_recovers_coefficients() {
        let x = sample_mvn(Array2::eye(5).view(), 50, Seed::new(71)).unwrap();
        let beta = array![2.0, 0.0, -1.0, 0.0, 0.0];
        let y = x.dot(&beta);
        let d = Dataset::new(x, y, Family::Gaussian).unwrap();
        let refit = ols_refit(&d, &[0, 2]).unwrap();
        assert!(!refit.ridged);
        assert_abs_diff_eq!(refit.coefficients[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(refit.coefficients[2], -1.0, epsilon = 1e-10);
        assert_eq!(refit.coefficients[1], 0.0);
    }

    #[test]
    fn ols_refit_flags_singular_system() {
        // duplicated column makes the gram singular
        let base = sample_mvn(Array2::eye(2).view(), 20, Seed::new(72)).unwrap();
        let mut x = Array2::<f64>::zeros((20, 3));
        x.column_mut(0).assign(&base.column(0));
        x.column_mut(1).assign(&base.column(0));
        x.column_mut(2).assign(&base.column(1));
        let y = base.column(1).to_owned();
        let d = Dataset::new(x, y, Family::Gaussian).unwrap();
        let refit = ols_refit(&d, &[0, 1, 2]).unwrap();
        assert!(refit.ridged);
    }

    #[test]
    fn misclassification_complement_and_majority() {
        let spec = ScenarioSpec::from_key("s5", Some(400), Some(8), None, None).unwrap();
        let sampler = ScenarioSampler::new(spec).unwrap();
        let (test, beta_true) = sampler.sample(Seed::new(81));
        let hit = misclassification(beta_true.view(), &test).unwrap();
        assert!(!hit.fallback);
        assert!(hit.error < 0.35, "true-model error {}", hit.error);
        // flipping every prediction complements the error
        let flipped = misclassification(beta_true.mapv(|b| -b).view(), &test).unwrap();
        assert_abs_diff_eq!(flipped.error, 1.0 - hit.error, epsilon = 1e-12);
        // all-zero coefficients degrade to the majority rule
        let zero = Array1::<f64>::zeros(8);
        let fallback = misclassification(zero.view(), &test).unwrap();
        assert!(fallback.fallback);
        let ybar = test.y().mean().unwrap();
        assert_abs_diff_eq!(fallback.error, ybar.min(1.0 - ybar), epsilon = 1e-12);
    }

    #[test]
    fn logistic_refit_sane_on_generated_data() {
        let x = sample_mvn(Array2::eye(4).view(), 400, Seed::new(91)).unwrap();
        let beta = array![1.5, -1.0, 0.0, 0.0];
        let eta = x.dot(&beta);
        let y = bernoulli_from_linear(&eta, &mut Seed::new(92).rng());
        let d = Dataset::new(x, y, Family::Binomial).unwrap();
        let refit = logistic_refit(&d, &[0, 1]).unwrap();
        assert!(refit.coefficients[0] > 0.8 && refit.coefficients[0] < 2.5);
        assert!(refit.coefficients[1] < -0.5);
        assert_eq!(refit.coefficients[2], 0.0);
    }
}
