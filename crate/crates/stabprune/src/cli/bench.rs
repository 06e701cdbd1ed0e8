//! `bench`: replicate generate -> select -> evaluate M times with
//! independent substreams and report one metrics row per method.
//!
//! Stability selection and its pruned variant share member generation
//! within each replication, so their rows differ only by the reordering and
//! cut step.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{compact_json, ensure_out_dir, write_json};
use super::with_threads;
use crate::dataset::{load_csv, ColumnRef, Dataset, Family, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    logistic_refit, misclassification, ols_refit, relative_prediction_error, selection_metrics,
    EvalRecord, MetricsSummary,
};
use crate::pruning;
use crate::randgen::{
    make_semisynthetic, ScenarioSampler, ScenarioSpec, Seed, RNG_DESCRIPTION,
};
use crate::solvers;
use crate::stabsel::{self, Regime, StabSelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stabsel,
    Pruned,
    Lasso,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stabsel" => Ok(Method::Stabsel),
            "pruned" => Ok(Method::Pruned),
            "lasso" => Ok(Method::Lasso),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (expected stabsel, pruned, or lasso)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Stabsel => write!(f, "stabsel"),
            Method::Pruned => write!(f, "pruned"),
            Method::Lasso => write!(f, "lasso"),
        }
    }
}

pub fn parse_methods(raw: &str) -> Result<Vec<Method>> {
    let mut methods = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let m: Method = part.parse()?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(Error::invalid("no methods given"));
    }
    Ok(methods)
}

/// Where replication data comes from: a simulation scenario or a real design
/// matrix with synthetic responses.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum BenchSource {
    Scenario {
        key: String,
        spec: ScenarioSpec,
    },
    Semisynthetic {
        data: PathBuf,
        response: String,
        family: Family,
        /// Number of planted +-1 coefficients.
        s: usize,
        snr: Option<f64>,
        /// Draw this many design columns at random each replication.
        p_draw: Option<usize>,
        train_fraction: f64,
        scale: bool,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub source: BenchSource,
    pub methods: Vec<Method>,
    pub m: usize,
    pub b: usize,
    pub k: usize,
    pub pi_thr: f64,
    /// Per-learner selection target; default is the regime formula on p.
    pub q_target: Option<usize>,
    pub regime: Regime,
    pub fraction: f64,
    /// Test-set size for the prediction-error estimate (scenario mode).
    pub n_test: usize,
    pub seed: u64,
    /// Worker count; excluded from echoes since results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
    pub out_dir: PathBuf,
}

/// Counts of numerical fallbacks observed across all replications.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct BenchFlags {
    pub ridged_refits: usize,
    pub classifier_fallbacks: usize,
    pub grids_not_attained: usize,
}

impl BenchFlags {
    fn absorb(&mut self, other: BenchFlags) {
        self.ridged_refits += other.ridged_refits;
        self.classifier_fallbacks += other.classifier_fallbacks;
        self.grids_not_attained += other.grids_not_attained;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(flatten)]
    pub summary: MetricsSummary,
}

#[derive(Debug, Serialize)]
pub struct BenchOutcome {
    pub command: &'static str,
    pub config: BenchConfig,
    pub rng: &'static str,
    pub p: usize,
    pub d0: usize,
    pub q_used: usize,
    pub rows: Vec<BenchRow>,
    pub flags: BenchFlags,
}

struct Replication {
    records: Vec<(Method, EvalRecord)>,
    flags: BenchFlags,
}

pub fn cmd_bench(cfg: &BenchConfig) -> Result<BenchOutcome> {
    if cfg.m < 1 {
        return Err(Error::invalid("bench needs at least one replication"));
    }
    ensure_out_dir(&cfg.out_dir)?;
    let outcome = with_threads(cfg.threads, || bench_inner(cfg))??;
    write_outputs(cfg, &outcome)?;
    Ok(outcome)
}

fn bench_inner(cfg: &BenchConfig) -> Result<BenchOutcome> {
    let master = Seed::new(cfg.seed);
    let (replications, p, d0, q_used) = match &cfg.source {
        BenchSource::Scenario { spec, .. } => {
            let sampler = ScenarioSampler::new(*spec)?;
            let d0 = spec.d0();
            let q_used = cfg.q_target.unwrap_or_else(|| cfg.regime.q_target(spec.p));
            let reps: Result<Vec<Replication>> = (0..cfg.m)
                .into_par_iter()
                .map(|m| {
                    scenario_replication(cfg, q_used, &sampler, master.child(m as u64), m)
                        .map_err(|e| Error::numerical(format!("replication {m}: {e}")))
                })
                .collect();
            (reps?, spec.p, d0, q_used)
        }
        BenchSource::Semisynthetic {
            data,
            response,
            family,
            s,
            snr,
            p_draw,
            train_fraction,
            scale,
        } => {
            // Only the design matrix matters here: the file's own response
            // column is dropped (or kept as a predictor with "none"), and
            // responses are regenerated per replication.
            let raw = if response == "none" {
                crate::dataset::load_design_csv(data)?
            } else {
                load_csv(data, &ColumnRef::parse(response), Family::Gaussian)?
            };
            // Global preprocessing before responses are generated: center
            // (and optionally scale) the full design once.
            let prepared = if *scale { raw.scale_columns()? } else { raw };
            let full = prepared.center();
            let p_total = full.p();
            let p_used = p_draw.unwrap_or(p_total);
            if p_used < 2 || p_used > p_total {
                return Err(Error::invalid(format!(
                    "column draw must satisfy 2 <= p <= {p_total}, got {p_used}"
                )));
            }
            if *s >= p_used {
                return Err(Error::invalid(format!(
                    "need s < p for selection metrics, got s={s}, p={p_used}"
                )));
            }
            let q_used = cfg.q_target.unwrap_or_else(|| cfg.regime.q_target(p_used));
            let reps: Result<Vec<Replication>> = (0..cfg.m)
                .into_par_iter()
                .map(|m| {
                    semisynthetic_replication(
                        cfg,
                        q_used,
                        &full,
                        *family,
                        *s,
                        *snr,
                        p_used,
                        *train_fraction,
                        master.child(m as u64),
                        m,
                    )
                    .map_err(|e| Error::numerical(format!("replication {m}: {e}")))
                })
                .collect();
            (reps?, p_used, *s, q_used)
        }
    };

    let mut flags = BenchFlags::default();
    let mut rows = Vec::new();
    for method in &cfg.methods {
        let records: Vec<EvalRecord> = replications
            .iter()
            .flat_map(|r| {
                r.records
                    .iter()
                    .filter(|(m, _)| m == method)
                    .map(|(_, rec)| rec.clone())
            })
            .collect();
        let summary = selection_metrics(&records, d0, p)?;
        rows.push(BenchRow {
            method: method.to_string(),
            summary,
        });
    }
    for r in &replications {
        flags.absorb(r.flags);
    }
    Ok(BenchOutcome {
        command: "bench",
        config: cfg.clone(),
        rng: RNG_DESCRIPTION,
        p,
        d0,
        q_used,
        rows,
        flags,
    })
}

/// Selection step shared by both source modes: returns per-method selected
/// index sets on the centered training data.
fn select_per_method(
    cfg: &BenchConfig,
    q_used: usize,
    train_c: &Dataset,
    member_seed: Seed,
    flags: &mut BenchFlags,
) -> Result<Vec<(Method, Vec<usize>)>> {
    let stab_cfg = StabSelConfig {
        b: cfg.b,
        k: cfg.k,
        pi_thr: cfg.pi_thr,
        q_target: q_used,
        master_seed: member_seed,
    };
    let needs_members = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::Stabsel | Method::Pruned));
    let ensemble = if needs_members {
        let e = stabsel::generate_members(train_c, &stab_cfg)?;
        if !e.grid.attained() {
            flags.grids_not_attained += 1;
        }
        Some(e)
    } else {
        None
    };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for method in &cfg.methods {
        let selected: Vec<usize> = match method {
            Method::Stabsel => {
                let ensemble = ensemble.as_ref().expect("members generated");
                let freq = stabsel::aggregate(ensemble.members.iter())?;
                stabsel::select(&freq, cfg.pi_thr)?
            }
            Method::Pruned => {
                let ensemble = ensemble.as_ref().expect("members generated");
                let reference = solvers::stepwise_reference(train_c)?;
                let importances: Vec<pruning::ImportanceVector> =
                    ensemble.members.iter().map(pruning::condense).collect();
                let e = pruning::loss_matrix(&importances, &reference.reference)?;
                let ordering = pruning::greedy_order(&e);
                let subset = pruning::prune(&ensemble.members, &ordering, cfg.fraction)?;
                let freq = stabsel::aggregate(subset)?;
                stabsel::select(&freq, cfg.pi_thr)?
            }
            Method::Lasso => {
                let grid = solvers::make_grid(train_c, cfg.k, q_used)?;
                if !grid.attained() {
                    flags.grids_not_attained += 1;
                }
                let fit = solvers::lasso_path(train_c, &grid)?;
                let idx = solvers::aic_index(&fit, train_c);
                (0..train_c.p())
                    .filter(|&j| fit.coefficients[[j, idx]] != 0.0)
                    .collect()
            }
        };
        out.push((*method, selected));
    }
    Ok(out)
}

/// Gaussian evaluation: OLS refit on the selected variables, then the
/// relative prediction error against an independent test design.
#[allow(clippy::too_many_arguments)]
fn gaussian_record(
    replication: usize,
    train_c: &Dataset,
    selected: Vec<usize>,
    truth: &BTreeSet<usize>,
    beta_star: &Array1<f64>,
    sigma: f64,
    x_test: &Array2<f64>,
    flags: &mut BenchFlags,
) -> Result<EvalRecord> {
    let refit = ols_refit(train_c, &selected)?;
    if refit.ridged {
        flags.ridged_refits += 1;
    }
    let perr = relative_prediction_error(
        refit.coefficients.view(),
        beta_star.view(),
        sigma,
        x_test.view(),
    )?;
    Ok(EvalRecord::new(
        replication,
        selected.into_iter().collect(),
        truth.clone(),
        refit.coefficients,
        perr,
    ))
}

/// Binomial evaluation: logistic refit, then misclassification on the test
/// set with the training-mean centering applied to its design.
fn binomial_record(
    replication: usize,
    train_c: &Dataset,
    train_means: &Array1<f64>,
    selected: Vec<usize>,
    truth: &BTreeSet<usize>,
    test: &Dataset,
    flags: &mut BenchFlags,
) -> Result<EvalRecord> {
    let refit = logistic_refit(train_c, &selected)?;
    if refit.ridged {
        flags.ridged_refits += 1;
    }
    let mut x = test.x().to_owned();
    for (mut col, mean) in x.axis_iter_mut(ndarray::Axis(1)).zip(train_means.iter()) {
        col.mapv_inplace(|v| v - mean);
    }
    let centered_test = Dataset::new(x, test.y().to_owned(), Family::Binomial)?;
    let result = misclassification(refit.coefficients.view(), &centered_test)?;
    if result.fallback {
        flags.classifier_fallbacks += 1;
    }
    Ok(EvalRecord::new(
        replication,
        selected.into_iter().collect(),
        truth.clone(),
        refit.coefficients,
        result.error,
    ))
}

fn truth_set(beta: &Array1<f64>) -> BTreeSet<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j)
        .collect()
}

fn scenario_replication(
    cfg: &BenchConfig,
    q_used: usize,
    sampler: &ScenarioSampler,
    rep_seed: Seed,
    replication: usize,
) -> Result<Replication> {
    let (train, beta_star) = sampler.sample(rep_seed.child(0));
    let truth = truth_set(&beta_star);
    let train_means = train.column_means();
    let train_c = train.center();
    let mut flags = BenchFlags::default();
    let selections = select_per_method(cfg, q_used, &train_c, rep_seed.child(1), &mut flags)?;

    let records = match sampler.spec().family() {
        Family::Gaussian => {
            let x_test = sampler.sample_design(cfg.n_test, &mut rep_seed.child(2).rng());
            selections
                .into_iter()
                .map(|(method, selected)| {
                    gaussian_record(
                        replication,
                        &train_c,
                        selected,
                        &truth,
                        &beta_star,
                        sampler.spec().sigma,
                        &x_test,
                        &mut flags,
                    )
                    .map(|r| (method, r))
                })
                .collect::<Result<Vec<_>>>()?
        }
        Family::Binomial => {
            let (test, _) = sampler.sample_n(cfg.n_test, rep_seed.child(2));
            selections
                .into_iter()
                .map(|(method, selected)| {
                    binomial_record(
                        replication,
                        &train_c,
                        &train_means,
                        selected,
                        &truth,
                        &test,
                        &mut flags,
                    )
                    .map(|r| (method, r))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(Replication { records, flags })
}

#[allow(clippy::too_many_arguments)]
fn semisynthetic_replication(
    cfg: &BenchConfig,
    q_used: usize,
    full: &Dataset,
    family: Family,
    s: usize,
    snr: Option<f64>,
    p_used: usize,
    train_fraction: f64,
    rep_seed: Seed,
    replication: usize,
) -> Result<Replication> {
    // Fresh column draw, coefficients, responses, and split per replication.
    let p_total = full.p();
    let columns: Vec<usize> = if p_used < p_total {
        let mut rng = rep_seed.child(0).rng();
        let mut cols = rand::seq::index::sample(&mut rng, p_total, p_used).into_vec();
        cols.sort_unstable();
        cols
    } else {
        (0..p_total).collect()
    };
    let design = full.select_columns(&columns);
    let semi = make_semisynthetic(design.x(), s, snr, family, rep_seed.child(1))?;
    let truth = truth_set(&semi.beta_true);
    let (train, test) = semi.dataset.train_test_split(&SplitSpec {
        train_fraction,
        seed: rep_seed.child(2),
    })?;
    let train_means = train.column_means();
    let train_c = train.center();
    let mut flags = BenchFlags::default();
    let selections = select_per_method(cfg, q_used, &train_c, rep_seed.child(3), &mut flags)?;

    let records = match family {
        Family::Gaussian => {
            let sigma = semi.sigma.expect("gaussian semisynthetic data has sigma");
            let x_test = test.x().to_owned();
            selections
                .into_iter()
                .map(|(method, selected)| {
                    gaussian_record(
                        replication,
                        &train_c,
                        selected,
                        &truth,
                        &semi.beta_true,
                        sigma,
                        &x_test,
                        &mut flags,
                    )
                    .map(|r| (method, r))
                })
                .collect::<Result<Vec<_>>>()?
        }
        Family::Binomial => selections
            .into_iter()
            .map(|(method, selected)| {
                binomial_record(
                    replication,
                    &train_c,
                    &train_means,
                    selected,
                    &truth,
                    &test,
                    &mut flags,
                )
                .map(|r| (method, r))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(Replication { records, flags })
}

fn write_outputs(cfg: &BenchConfig, outcome: &BenchOutcome) -> Result<()> {
    let csv_path = cfg.out_dir.join("metrics.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config={}", compact_json(cfg)).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(w, "{}", MetricsSummary::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;
    for row in &outcome.rows {
        writeln!(w, "{}", row.summary.csv_row(&row.method)).map_err(|e| Error::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_json(&cfg.out_dir.join("bench.json"), outcome)
}
