//! Deterministic pseudo-random generation: seed/substream management,
//! multivariate normal sampling via Cholesky factorization, and factories
//! for the simulation scenarios and the semi-synthetic real-data protocol.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Family};
use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;

/// Generator identification embedded in output metadata. Bit-level
/// reproducibility is guaranteed per build (the lockfile pins the stream
/// implementations).
pub const RNG_DESCRIPTION: &str =
    "chacha20 streams; normal variates via ziggurat (rand_distr StandardNormal); \
     child seeds via splitmix64";

/// Master seed with cheap substream derivation.
///
/// `stream_rng(s)` opens ChaCha20 stream `s` of this seed; distinct
/// `(seed, stream)` pairs are independent by construction. `child(i)`
/// derives a fresh seed for nested scopes (replication -> member).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(u64);

impl Seed {
    pub fn new(value: u64) -> Seed {
        Seed(value)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha20Rng {
        self.stream_rng(0)
    }

    pub fn stream_rng(self, stream: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    pub fn child(self, index: u64) -> Seed {
        Seed(splitmix64(
            self.0 ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Covariance structure of a simulated design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    /// Unit diagonal, constant off-diagonal correlation.
    Compound { rho: f64 },
    /// First `d0` variables are signal: signal-signal correlation
    /// `rho_signal`, noise-noise `rho_noise`, signal-noise `rho_cross`.
    Block {
        rho_signal: f64,
        rho_noise: f64,
        rho_cross: f64,
        d0: usize,
    },
    /// Toeplitz decay `rho^|i-j|`.
    Ar1 { rho: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub p: usize,
}

/// Materialize the covariance matrix for a spec.
pub fn build_covariance(spec: &CovarianceSpec) -> Result<Array2<f64>> {
    let p = spec.p;
    if p == 0 {
        return Err(Error::invalid("covariance dimension must be positive"));
    }
    let check_rho = |rho: f64, what: &str| -> Result<()> {
        if rho.abs() >= 1.0 {
            return Err(Error::invalid(format!(
                "{what} correlation must satisfy |rho| < 1, got {rho}"
            )));
        }
        Ok(())
    };
    let sigma = match spec.kind {
        CovarianceKind::Identity => Array2::eye(p),
        CovarianceKind::Compound { rho } => {
            check_rho(rho, "compound")?;
            Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { rho })
        }
        CovarianceKind::Block {
            rho_signal,
            rho_noise,
            rho_cross,
            d0,
        } => {
            for (rho, what) in [
                (rho_signal, "signal"),
                (rho_noise, "noise"),
                (rho_cross, "cross"),
            ] {
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::invalid(format!(
                        "{what} correlation must lie in [0,1), got {rho}"
                    )));
                }
            }
            if d0 == 0 || d0 >= p {
                return Err(Error::invalid(format!(
                    "block structure needs 0 < d0 < p, got d0={d0}, p={p}"
                )));
            }
            Array2::from_shape_fn((p, p), |(i, j)| {
                if i == j {
                    1.0
                } else if i < d0 && j < d0 {
                    rho_signal
                } else if i >= d0 && j >= d0 {
                    rho_noise
                } else {
                    rho_cross
                }
            })
        }
        CovarianceKind::Ar1 { rho } => {
            check_rho(rho, "ar1")?;
            Array2::from_shape_fn((p, p), |(i, j)| rho.powi((i as i32 - j as i32).abs()))
        }
    };
    Ok(sigma)
}

/// Reusable multivariate normal sampler holding the Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    chol_lower: Array2<f64>,
}

impl MvnSampler {
    pub fn new(sigma: ArrayView2<f64>) -> Result<Self> {
        let chol_lower = cholesky_lower(sigma)?;
        Ok(MvnSampler { chol_lower })
    }

    pub fn dim(&self) -> usize {
        self.chol_lower.nrows()
    }

    /// `n` i.i.d. rows from N(0, Sigma). Standard normals are drawn
    /// row-major.
    pub fn sample(&self, n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
        let p = self.dim();
        let mut z = Array2::<f64>::zeros((n, p));
        for i in 0..n {
            for j in 0..p {
                z[[i, j]] = rng.sample(StandardNormal);
            }
        }
        z.dot(&self.chol_lower.t())
    }
}

/// One-shot multivariate normal draw.
pub fn sample_mvn(sigma: ArrayView2<f64>, n: usize, seed: Seed) -> Result<Array2<f64>> {
    let sampler = MvnSampler::new(sigma)?;
    Ok(sampler.sample(n, &mut seed.rng()))
}

/// The simulation scenarios. Coefficient patterns and noise levels are
/// hard-coded in the registry to prevent transcription drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Scenario {
    /// p=20 toy designs; only x5, x10, x15 matter (coefficients 1, 2, 3).
    S1 { variation: u8 },
    /// Compound symmetric design, 5 signals (0.5, 1.0, 1.5, 2.0, 2.5).
    S2 { rho: f64 },
    /// Block-correlated design (signal 0.25, noise 0.75, cross 0.50).
    S3,
    /// AR(1) design with two weak signals: beta = (3, 1.5, 0, 0, 2, 0.5, 0.5, 0...).
    S4 { rho: f64 },
    /// Logistic model on an AR(1) rho=0.5 design: beta = (3, 1.5, 0, 0, 2, 0...).
    S5,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
}

impl ScenarioSpec {
    /// Resolve a CLI scenario key plus optional overrides against the
    /// registry defaults.
    pub fn from_key(
        key: &str,
        n: Option<usize>,
        p: Option<usize>,
        rho: Option<f64>,
        sigma: Option<f64>,
    ) -> Result<ScenarioSpec> {
        let reject_rho = |what: &str| -> Result<()> {
            if rho.is_some() {
                return Err(Error::invalid(format!("{what} does not take --rho")));
            }
            Ok(())
        };
        let reject_sigma = |what: &str| -> Result<()> {
            if sigma.is_some() {
                return Err(Error::invalid(format!(
                    "{what} fixes the noise level; --sigma is not accepted"
                )));
            }
            Ok(())
        };
        let spec = match key {
            "s1v1" | "s1v2" | "s1v3" | "s1v4" => {
                let variation = key.as_bytes()[3] - b'0';
                reject_rho(key)?;
                reject_sigma(key)?;
                if let Some(p) = p {
                    if p != 20 {
                        return Err(Error::invalid(format!("{key} fixes p=20, got p={p}")));
                    }
                }
                ScenarioSpec {
                    scenario: Scenario::S1 { variation },
                    n: n.unwrap_or(40),
                    p: 20,
                    sigma: if variation == 4 { 2.0 } else { 1.0 },
                }
            }
            "s2" => ScenarioSpec {
                scenario: Scenario::S2 {
                    rho: rho.unwrap_or(0.0),
                },
                n: n.unwrap_or(100),
                p: p.unwrap_or(50),
                sigma: sigma.unwrap_or(1.0),
            },
            "s3" => {
                reject_rho("s3")?;
                ScenarioSpec {
                    scenario: Scenario::S3,
                    n: n.unwrap_or(200),
                    p: p.unwrap_or(1000),
                    sigma: sigma.unwrap_or(1.0),
                }
            }
            "s4" => ScenarioSpec {
                scenario: Scenario::S4 {
                    rho: rho.unwrap_or(0.5),
                },
                n: n.unwrap_or(200),
                p: p.unwrap_or(1000),
                sigma: sigma.unwrap_or(1.0),
            },
            "s5" => {
                reject_rho("s5")?;
                reject_sigma("s5")?;
                ScenarioSpec {
                    scenario: Scenario::S5,
                    n: n.unwrap_or(200),
                    p: p.unwrap_or(50),
                    sigma: 1.0,
                }
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown scenario key '{other}' (valid: s1v1 s1v2 s1v3 s1v4 s2 s3 s4 s5)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::invalid(format!(
                "scenario needs n >= 4, got {}",
                self.n
            )));
        }
        let min_p = match self.scenario {
            Scenario::S1 { .. } => 20,
            Scenario::S2 { .. } | Scenario::S3 | Scenario::S5 => 6,
            Scenario::S4 { .. } => 8,
        };
        if self.p < min_p {
            return Err(Error::invalid(format!(
                "scenario needs p >= {min_p}, got {}",
                self.p
            )));
        }
        if let Scenario::S1 { variation } = self.scenario {
            if !(1..=4).contains(&variation) {
                return Err(Error::invalid(format!(
                    "scenario 1 variation must be 1..4, got {variation}"
                )));
            }
        }
        if self.family() == Family::Gaussian && self.sigma <= 0.0 {
            return Err(Error::invalid(format!(
                "noise standard deviation must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        match self.scenario {
            Scenario::S5 => Family::Binomial,
            _ => Family::Gaussian,
        }
    }

    pub fn beta_true(&self) -> Array1<f64> {
        let mut beta = Array1::<f64>::zeros(self.p);
        match self.scenario {
            Scenario::S1 { .. } => {
                beta[4] = 1.0;
                beta[9] = 2.0;
                beta[14] = 3.0;
            }
            Scenario::S2 { .. } | Scenario::S3 => {
                for (j, v) in [0.5, 1.0, 1.5, 2.0, 2.5].into_iter().enumerate() {
                    beta[j] = v;
                }
            }
            Scenario::S4 { .. } => {
                for (j, v) in [3.0, 1.5, 0.0, 0.0, 2.0, 0.5, 0.5].into_iter().enumerate() {
                    beta[j] = v;
                }
            }
            Scenario::S5 => {
                for (j, v) in [3.0, 1.5, 0.0, 0.0, 2.0].into_iter().enumerate() {
                    beta[j] = v;
                }
            }
        }
        beta
    }

    /// Number of truly relevant variables.
    pub fn d0(&self) -> usize {
        self.beta_true().iter().filter(|v| **v != 0.0).count()
    }

    /// Scenario 1 runs the low-dimensional tuning regime.
    pub fn low_dimensional_regime(&self) -> bool {
        matches!(self.scenario, Scenario::S1 { .. })
    }

    fn covariance(&self) -> Option<CovarianceSpec> {
        let kind = match self.scenario {
            Scenario::S1 { .. } => return None,
            Scenario::S2 { rho } => {
                if rho == 0.0 {
                    CovarianceKind::Identity
                } else {
                    CovarianceKind::Compound { rho }
                }
            }
            Scenario::S3 => CovarianceKind::Block {
                rho_signal: 0.25,
                rho_noise: 0.75,
                rho_cross: 0.50,
                d0: 5,
            },
            Scenario::S4 { rho } => CovarianceKind::Ar1 { rho },
            Scenario::S5 => CovarianceKind::Ar1 { rho: 0.5 },
        };
        Some(CovarianceSpec { kind, p: self.p })
    }
}

/// Scenario instantiator; reuse it across replications to amortize the
/// Cholesky factorization.
#[derive(Debug, Clone)]
pub struct ScenarioSampler {
    spec: ScenarioSpec,
    beta: Array1<f64>,
    mvn: Option<MvnSampler>,
}

impl ScenarioSampler {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let mvn = match spec.covariance() {
            Some(cov) => Some(MvnSampler::new(build_covariance(&cov)?.view())?),
            None => None,
        };
        Ok(ScenarioSampler {
            beta: spec.beta_true(),
            spec,
            mvn,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn beta_true(&self) -> &Array1<f64> {
        &self.beta
    }

    /// Draw a design matrix with `n` rows.
    pub fn sample_design(&self, n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
        match self.spec.scenario {
            Scenario::S1 { variation } => sample_scenario1_design(n, variation, rng),
            _ => self.mvn.as_ref().expect("covariance scenario").sample(n, rng),
        }
    }

    /// Draw a dataset of `n` rows plus the true coefficients.
    pub fn sample_n(&self, n: usize, seed: Seed) -> (Dataset, Array1<f64>) {
        let mut rng = seed.rng();
        let x = self.sample_design(n, &mut rng);
        let eta = x.dot(&self.beta);
        let (y, family) = match self.spec.family() {
            Family::Gaussian => {
                let noise: Array1<f64> =
                    Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
                (&eta + &(noise * self.spec.sigma), Family::Gaussian)
            }
            Family::Binomial => (bernoulli_from_linear(&eta, &mut rng), Family::Binomial),
        };
        let d = Dataset::new(x, y, family).expect("generated data is valid");
        (d, self.beta.clone())
    }

    pub fn sample(&self, seed: Seed) -> (Dataset, Array1<f64>) {
        self.sample_n(self.spec.n, seed)
    }
}

/// Convenience wrapper building the sampler internally.
pub fn make_scenario(spec: &ScenarioSpec, seed: Seed) -> Result<(Dataset, Array1<f64>)> {
    Ok(ScenarioSampler::new(*spec)?.sample(seed))
}

/// Scenario 1 designs are built column-wise from their defining formulas
/// rather than through a covariance matrix.
fn sample_scenario1_design(n: usize, variation: u8, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let p = 20;
    let mut x = Array2::<f64>::zeros((n, p));
    let draw_col = |x: &mut Array2<f64>, j: usize, rng: &mut ChaCha20Rng| {
        for i in 0..n {
            x[[i, j]] = rng.sample(StandardNormal);
        }
    };
    match variation {
        1 => {
            for j in 0..p {
                draw_col(&mut x, j, rng);
            }
        }
        2 | 3 => {
            // x20 = x5 + 0.25 z (variation 2) or x20 = x10 + 0.25 z (variation 3)
            for j in 0..p - 1 {
                draw_col(&mut x, j, rng);
            }
            let source = if variation == 2 { 4 } else { 9 };
            for i in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                x[[i, p - 1]] = x[[i, source]] + 0.25 * z;
            }
        }
        4 => {
            // x_j = z + eps_j with a shared z
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for j in 0..p {
                for (i, zi) in z.iter().enumerate() {
                    let e: f64 = rng.sample(StandardNormal);
                    x[[i, j]] = zi + e;
                }
            }
        }
        _ => unreachable!("validated variation"),
    }
    x
}

/// Bernoulli responses from a linear predictor through the logistic link.
pub(crate) fn bernoulli_from_linear(eta: &Array1<f64>, rng: &mut ChaCha20Rng) -> Array1<f64> {
    eta.mapv(|e| {
        let prob = 1.0 / (1.0 + (-e).exp());
        let u: f64 = rng.random();
        if u < prob {
            1.0
        } else {
            0.0
        }
    })
}

/// Output of the semi-synthetic response generator.
#[derive(Debug, Clone)]
pub struct Semisynthetic {
    pub dataset: Dataset,
    pub beta_true: Array1<f64>,
    /// Noise standard deviation implied by the signal-to-noise ratio
    /// (gaussian only).
    pub sigma: Option<f64>,
}

/// Plant `s` random +-1 coefficients on a real design matrix and generate
/// responses. For a gaussian family the noise variance is chosen so that
/// the sample variance of X*beta over sigma^2 equals `snr` exactly.
pub fn make_semisynthetic(
    x: ArrayView2<f64>,
    s: usize,
    snr: Option<f64>,
    family: Family,
    seed: Seed,
) -> Result<Semisynthetic> {
    let (n, p) = x.dim();
    if s == 0 || s > p {
        return Err(Error::invalid(format!(
            "number of signals must satisfy 1 <= s <= p, got s={s}, p={p}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 rows"));
    }
    for j in 0..p {
        let col = x.column(j);
        let mean = col.mean().unwrap();
        if col.iter().all(|v| (v - mean).abs() < 1e-12) {
            return Err(Error::invalid(format!(
                "degenerate design column {} (constant)",
                j + 1
            )));
        }
    }
    let mut rng = seed.rng();
    let mut positions = rand::seq::index::sample(&mut rng, p, s).into_vec();
    positions.sort_unstable();
    let mut beta = Array1::<f64>::zeros(p);
    for &j in &positions {
        beta[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let eta = x.dot(&beta);

    let (y, sigma) = match family {
        Family::Gaussian => {
            let snr = snr.ok_or_else(|| Error::invalid("gaussian semisynthetic data needs snr"))?;
            if snr <= 0.0 {
                return Err(Error::invalid(format!("snr must be positive, got {snr}")));
            }
            let mean = eta.mean().unwrap();
            let var = eta.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            if var <= 0.0 {
                return Err(Error::invalid("X*beta has zero variance; cannot set snr"));
            }
            let sigma = (var / snr).sqrt();
            let noise: Array1<f64> =
                Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            (&eta + &(noise * sigma), Some(sigma))
        }
        Family::Binomial => (bernoulli_from_linear(&eta, &mut rng), None),
    };
    Ok(Semisynthetic {
        dataset: Dataset::new(x.to_owned(), y, family)?,
        beta_true: beta,
        sigma,
    })
}
