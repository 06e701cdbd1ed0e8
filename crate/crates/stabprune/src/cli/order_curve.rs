//! `order-curve`: trace selection accuracy of subensembles fused one by one,
//! comparing the greedy ordering against the generation order, averaged over
//! replications. Pool sweeps reorder only the first B_i members of one large
//! generated ensemble.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{compact_json, ensure_out_dir, write_json};
use super::with_threads;
use crate::error::{Error, Result};
use crate::pruning;
use crate::randgen::{ScenarioSampler, ScenarioSpec, Seed, RNG_DESCRIPTION};
use crate::solvers;
use crate::stabsel::{self, MemberResult, Regime, StabSelConfig};

#[derive(Debug, Clone, Serialize)]
pub struct OrderCurveConfig {
    pub scenario_key: String,
    pub scenario: ScenarioSpec,
    pub m: usize,
    /// Initial pool sizes; members are generated once at the maximum and
    /// each pool reorders a prefix.
    pub pools: Vec<usize>,
    pub k: usize,
    pub pi_thr: f64,
    pub q_target: usize,
    pub regime: Regime,
    pub seed: u64,
    /// Worker count; excluded from echoes since results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub pool: usize,
    pub u: usize,
    pub acc_ordered: f64,
    pub acc_random: f64,
}

#[derive(Debug, Serialize)]
pub struct OrderCurveOutcome {
    pub command: &'static str,
    pub config: OrderCurveConfig,
    pub rng: &'static str,
    pub points: Vec<CurvePoint>,
    pub curve_file: String,
}

/// Per-replication curves: for each pool, exact-recovery flags at every
/// prefix size, for the greedy order and the generation order.
pub struct ReplicationCurves {
    pub per_pool: Vec<(Vec<bool>, Vec<bool>)>,
}

pub fn cmd_order_curve(cfg: &OrderCurveConfig) -> Result<OrderCurveOutcome> {
    validate(cfg)?;
    ensure_out_dir(&cfg.out_dir)?;
    let curves = with_threads(cfg.threads, || compute_curves(cfg))??;
    let points = average_curves(cfg, &curves);
    let outcome = OrderCurveOutcome {
        command: "order-curve",
        config: cfg.clone(),
        rng: RNG_DESCRIPTION,
        points,
        curve_file: "curve.csv".to_string(),
    };
    write_outputs(cfg, &outcome)?;
    Ok(outcome)
}

fn validate(cfg: &OrderCurveConfig) -> Result<()> {
    if cfg.m < 1 {
        return Err(Error::invalid("order-curve needs at least one replication"));
    }
    if cfg.pools.is_empty() {
        return Err(Error::invalid("order-curve needs at least one pool size"));
    }
    if cfg.pools.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("pool sizes must be strictly increasing"));
    }
    if cfg.pools[0] < 2 {
        return Err(Error::invalid("pool sizes must be at least 2"));
    }
    Ok(())
}

/// All replications, in replication order.
pub fn compute_curves(cfg: &OrderCurveConfig) -> Result<Vec<ReplicationCurves>> {
    let sampler = ScenarioSampler::new(cfg.scenario)?;
    let master = Seed::new(cfg.seed);
    (0..cfg.m)
        .into_par_iter()
        .map(|m| {
            replication_curves(cfg, &sampler, master.child(m as u64))
                .map_err(|e| Error::numerical(format!("replication {m}: {e}")))
        })
        .collect()
}

fn replication_curves(
    cfg: &OrderCurveConfig,
    sampler: &ScenarioSampler,
    rep_seed: Seed,
) -> Result<ReplicationCurves> {
    let (train, beta_star) = sampler.sample(rep_seed.child(0));
    let truth: BTreeSet<usize> = beta_star
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j)
        .collect();
    let train_c = train.center();
    let b_max = *cfg.pools.last().unwrap();
    let stab_cfg = StabSelConfig {
        b: b_max,
        k: cfg.k,
        pi_thr: cfg.pi_thr,
        q_target: cfg.q_target,
        master_seed: rep_seed.child(1),
    };
    let ensemble = stabsel::generate_members(&train_c, &stab_cfg)?;
    let reference = solvers::stepwise_reference(&train_c)?;
    let importances: Vec<pruning::ImportanceVector> =
        ensemble.members.iter().map(pruning::condense).collect();

    let mut per_pool = Vec::with_capacity(cfg.pools.len());
    for &pool in &cfg.pools {
        let e = pruning::loss_matrix(&importances[..pool], &reference.reference)?;
        let ordering = pruning::greedy_order(&e);
        let ordered_members: Vec<&MemberResult> = ordering
            .order
            .iter()
            .map(|&i| &ensemble.members[i])
            .collect();
        let random_members: Vec<&MemberResult> = ensemble.members[..pool].iter().collect();
        let ordered = prefix_recovery(&ordered_members, cfg.pi_thr, &truth);
        let random = prefix_recovery(&random_members, cfg.pi_thr, &truth);
        per_pool.push((ordered, random));
    }
    Ok(ReplicationCurves { per_pool })
}

/// Exact-recovery flag after fusing each prefix of `members`, mirroring the
/// aggregate-then-threshold arithmetic of the selection step.
pub fn prefix_recovery(
    members: &[&MemberResult],
    pi_thr: f64,
    truth: &BTreeSet<usize>,
) -> Vec<bool> {
    let (p, k) = members[0].t.dim();
    let mut counts = Array2::<f64>::zeros((p, k));
    let mut flags = Vec::with_capacity(members.len());
    for (idx, member) in members.iter().enumerate() {
        counts += &member.t.mapv(|v| v as f64);
        let u = (idx + 1) as f64;
        let mut selected = BTreeSet::new();
        for j in 0..p {
            let mut max_freq = f64::NEG_INFINITY;
            for kk in 0..k {
                let freq = counts[[j, kk]] / u;
                if freq > max_freq {
                    max_freq = freq;
                }
            }
            if max_freq >= pi_thr {
                selected.insert(j);
            }
        }
        flags.push(&selected == truth);
    }
    flags
}

fn average_curves(cfg: &OrderCurveConfig, curves: &[ReplicationCurves]) -> Vec<CurvePoint> {
    let m = curves.len() as f64;
    let mut points = Vec::new();
    for (pool_idx, &pool) in cfg.pools.iter().enumerate() {
        for u in 0..pool {
            let mut ordered = 0.0;
            let mut random = 0.0;
            for rep in curves {
                let (o, r) = &rep.per_pool[pool_idx];
                if o[u] {
                    ordered += 1.0;
                }
                if r[u] {
                    random += 1.0;
                }
            }
            points.push(CurvePoint {
                pool,
                u: u + 1,
                acc_ordered: ordered / m,
                acc_random: random / m,
            });
        }
    }
    points
}

fn write_outputs(cfg: &OrderCurveConfig, outcome: &OrderCurveOutcome) -> Result<()> {
    let csv_path = cfg.out_dir.join("curve.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config={}", compact_json(cfg)).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(w, "pool,u,acc_ordered,acc_random").map_err(|e| Error::io(&csv_path, e))?;
    for pt in &outcome.points {
        writeln!(w, "{},{},{},{}", pt.pool, pt.u, pt.acc_ordered, pt.acc_random)
            .map_err(|e| Error::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_json(&cfg.out_dir.join("ordercurve.json"), outcome)
}
