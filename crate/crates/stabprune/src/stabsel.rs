//! Stability selection: generate ensemble members on half-subsamples,
//! compute per-penalty selection frequencies, aggregate by the maximum over
//! the grid, threshold, and bound the per-family error rate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::randgen::Seed;
use crate::solvers::{self, LambdaGrid};

/// Tuning regime: the high-dimensional defaults (q = ceil(sqrt(1.6 p)),
/// threshold 0.7) or the low-dimensional variant (q = ceil(0.8 p),
/// threshold 0.6).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    HighDim,
    LowDim,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "highdim" | "high-dim" | "high" => Ok(Regime::HighDim),
            "lowdim" | "low-dim" | "low" => Ok(Regime::LowDim),
            other => Err(Error::invalid(format!(
                "unknown regime '{other}' (expected highdim or lowdim)"
            ))),
        }
    }
}

impl Regime {
    pub fn q_target(self, p: usize) -> usize {
        match self {
            Regime::HighDim => solvers::default_q_target(p),
            Regime::LowDim => solvers::low_dim_q_target(p),
        }
    }

    pub fn pi_thr(self) -> f64 {
        match self {
            Regime::HighDim => 0.7,
            Regime::LowDim => 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabSelConfig {
    /// Ensemble size.
    pub b: usize,
    /// Grid size.
    pub k: usize,
    /// Selection frequency threshold.
    pub pi_thr: f64,
    /// Per-learner selection target driving the grid's lambda_min.
    pub q_target: usize,
    pub master_seed: Seed,
}

impl StabSelConfig {
    pub fn defaults_for(p: usize, regime: Regime, master_seed: Seed) -> StabSelConfig {
        StabSelConfig {
            b: 100,
            k: 100,
            pi_thr: regime.pi_thr(),
            q_target: regime.q_target(p),
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(Error::invalid(format!("need B >= 2 members, got {}", self.b)));
        }
        if self.k < 2 {
            return Err(Error::invalid(format!("need K >= 2 grid points, got {}", self.k)));
        }
        if !(self.pi_thr > 0.5 && self.pi_thr < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must lie in (0.5, 1), got {}",
                self.pi_thr
            )));
        }
        if self.q_target < 1 {
            return Err(Error::invalid("q_target must be at least 1"));
        }
        Ok(())
    }
}

/// One ensemble member: the binary p x K selection matrix of its lasso path
/// over the shared grid.
#[derive(Debug, Clone)]
pub struct MemberResult {
    pub t: Array2<u8>,
    pub member_index: usize,
    pub subsample_seed: Seed,
}

/// A generated ensemble, carrying the shared full-data grid.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub grid: LambdaGrid,
    pub members: Vec<MemberResult>,
    pub warnings: Vec<String>,
}

/// Generate B members. The penalty grid is computed once on the full data
/// and shared by every member so the selection matrices stay column-aligned;
/// member b subsamples floor(n/2) rows with the substream (master_seed, b),
/// re-centers its subsample, and binarizes the nonzero path coefficients.
pub fn generate_members(d: &Dataset, cfg: &StabSelConfig) -> Result<Ensemble> {
    cfg.validate()?;
    if d.n() < 4 {
        return Err(Error::invalid("stability selection needs at least 4 rows"));
    }
    let grid = solvers::make_grid(d, cfg.k, cfg.q_target)?;
    let mut warnings = Vec::new();
    if !grid.attained() {
        warnings.push(format!(
            "full-data path never reached q_target={} above the lambda floor; grid truncated",
            cfg.q_target
        ));
    }

    let members: Result<Vec<MemberResult>> = (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            let subsample_seed = cfg.master_seed.child(b as u64);
            let sub = d.subsample(subsample_seed)?.center();
            let fit = solvers::lasso_path(&sub, &grid).map_err(|e| {
                Error::numerical(format!("member {b}: {e}"))
            })?;
            let p = d.p();
            let k = grid.k();
            let mut t = Array2::<u8>::zeros((p, k));
            for j in 0..p {
                for kk in 0..k {
                    if fit.coefficients[[j, kk]] != 0.0 {
                        t[[j, kk]] = 1;
                    }
                }
            }
            Ok(MemberResult {
                t,
                member_index: b,
                subsample_seed,
            })
        })
        .collect();

    Ok(Ensemble {
        grid,
        members: members?,
        warnings,
    })
}

/// Per-penalty selection frequencies and their per-variable maxima.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    /// p x K matrix of selection frequencies.
    pub per_lambda: Array2<f64>,
    /// Row-wise maximum over the grid.
    pub aggregated: Array1<f64>,
}

/// Average the selection matrices of the given members (a full ensemble or
/// any ordered prefix) and aggregate each variable by its maximum frequency
/// over the grid.
pub fn aggregate<'a, I>(members: I) -> Result<FrequencyTable>
where
    I: IntoIterator<Item = &'a MemberResult>,
{
    let mut iter = members.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty member set"))?;
    let (p, k) = first.t.dim();
    let mut counts = first.t.mapv(|v| v as f64);
    let mut total = 1usize;
    for m in iter {
        if m.t.dim() != (p, k) {
            return Err(Error::invalid(format!(
                "member {} has shape {:?}, expected {:?}",
                m.member_index,
                m.t.dim(),
                (p, k)
            )));
        }
        counts += &m.t.mapv(|v| v as f64);
        total += 1;
    }
    let per_lambda = counts / total as f64;
    let aggregated = Array1::from_shape_fn(p, |j| {
        per_lambda
            .row(j)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(FrequencyTable {
        per_lambda,
        aggregated,
    })
}

/// Variables whose aggregated selection frequency meets the threshold
/// (inclusive comparison).
pub fn select(freq: &FrequencyTable, pi_thr: f64) -> Result<Vec<usize>> {
    if !(pi_thr > 0.0 && pi_thr < 1.0) {
        return Err(Error::invalid(format!(
            "selection threshold must lie in (0,1), got {pi_thr}"
        )));
    }
    Ok(freq
        .aggregated
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= pi_thr)
        .map(|(j, _)| j)
        .collect())
}

/// Bound on the expected number of false discoveries:
/// q^2 / ((2 pi_thr - 1) p).
pub fn pfer_bound(q: usize, p: usize, pi_thr: f64) -> Result<f64> {
    if !(pi_thr > 0.5 && pi_thr < 1.0) {
        return Err(Error::invalid(format!(
            "the error bound holds for thresholds in (0.5, 1), got {pi_thr}"
        )));
    }
    if p == 0 {
        return Err(Error::invalid("p must be positive"));
    }
    Ok((q * q) as f64 / ((2.0 * pi_thr - 1.0) * p as f64))
}

/// Dump member selection matrices plus their seeds so the ensemble can be
/// re-pruned without re-solving. One CSV row per member with the matrix
/// row-major as a 0/1 string.
pub fn write_member_archive(members: &[MemberResult], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "member_index,subsample_seed,p,k,t_bits").map_err(|e| Error::io(path, e))?;
    for m in members {
        let (p, k) = m.t.dim();
        let mut bits = String::with_capacity(p * k);
        for j in 0..p {
            for kk in 0..k {
                bits.push(if m.t[[j, kk]] == 1 { '1' } else { '0' });
            }
        }
        writeln!(
            w,
            "{},{},{},{},{}",
            m.member_index,
            m.subsample_seed.value(),
            p,
            k,
            bits
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read an archive written by [`write_member_archive`].
pub fn read_member_archive(path: &Path) -> Result<Vec<MemberResult>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content.lines();
    match lines.next() {
        Some("member_index,subsample_seed,p,k,t_bits") => {}
        _ => {
            return Err(Error::invalid(format!(
                "{}: not a member archive",
                path.display()
            )))
        }
    }
    let mut members = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::invalid(format!(
                "{}: archive row {} has {} fields",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let parse_usize = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::invalid(format!("{}: bad integer '{s}'", path.display())))
        };
        let member_index = parse_usize(fields[0])?;
        let seed_value: u64 = fields[1]
            .parse()
            .map_err(|_| Error::invalid(format!("{}: bad seed '{}'", path.display(), fields[1])))?;
        let p = parse_usize(fields[2])?;
        let k = parse_usize(fields[3])?;
        if let Some(s) = shape {
            if s != (p, k) {
                return Err(Error::invalid(format!(
                    "{}: inconsistent member shapes",
                    path.display()
                )));
            }
        } else {
            shape = Some((p, k));
        }
        let bits = fields[4];
        if bits.len() != p * k {
            return Err(Error::invalid(format!(
                "{}: row {}: bit string length {} != p*k = {}",
                path.display(),
                lineno + 2,
                bits.len(),
                p * k
            )));
        }
        let mut t = Array2::<u8>::zeros((p, k));
        for (idx, ch) in bits.bytes().enumerate() {
            match ch {
                b'0' => {}
                b'1' => t[[idx / k, idx % k]] = 1,
                _ => {
                    return Err(Error::invalid(format!(
                        "{}: bit strings must be 0/1",
                        path.display()
                    )))
                }
            }
        }
        members.push(MemberResult {
            t,
            member_index,
            subsample_seed: Seed::new(seed_value),
        });
    }
    if members.is_empty() {
        return Err(Error::invalid(format!(
            "{}: archive holds no members",
            path.display()
        )));
    }
    Ok(members)
}
