//! First-stage latent layer: correlated binary states, their realized
//! configurations, and the complexity measures derived from them.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::{normal_cdf, normal_pdf, normal_quantile, plogp};

/// z-score of the default 95% margin used for sample-size heuristics.
pub const DEFAULT_Z: f64 = 1.96;
/// Default margin of error for sample-size heuristics.
pub const DEFAULT_MARGIN: f64 = 0.025;

/// Qualitative correlation level among latent states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationLevel {
    None,
    Low,
    Medium,
    High,
}

impl CorrelationLevel {
    pub const ALL: [CorrelationLevel; 4] = [
        CorrelationLevel::None,
        CorrelationLevel::Low,
        CorrelationLevel::Medium,
        CorrelationLevel::High,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrelationLevel::None => "none",
            CorrelationLevel::Low => "low",
            CorrelationLevel::Medium => "medium",
            CorrelationLevel::High => "high",
        }
    }
}

/// Exchangeable latent-Gaussian correlation for each level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationLevels {
    pub none: f64,
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl Default for CorrelationLevels {
    fn default() -> Self {
        Self {
            none: 0.0,
            low: 0.2,
            medium: 0.45,
            high: 0.7,
        }
    }
}

impl CorrelationLevels {
    pub fn rho(&self, level: CorrelationLevel) -> f64 {
        match level {
            CorrelationLevel::None => self.none,
            CorrelationLevel::Low => self.low,
            CorrelationLevel::Medium => self.medium,
            CorrelationLevel::High => self.high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.none != 0.0 {
            return Err(Error::InvalidSpec("the None level must map to rho = 0".into()));
        }
        if !(self.none < self.low && self.low < self.medium && self.medium < self.high) {
            return Err(Error::InvalidSpec(
                "correlation levels must be strictly increasing".into(),
            ));
        }
        if self.high >= 1.0 {
            return Err(Error::InvalidSpec("rho must be below 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub prevalences: Vec<f64>,
    pub level: CorrelationLevel,
    /// Resolved exchangeable correlation for `level`.
    pub rho: f64,
    pub seed: u64,
}

impl LatentSpec {
    pub fn new(prevalences: Vec<f64>, level: CorrelationLevel, seed: u64) -> Result<Self> {
        Self::with_levels(prevalences, level, &CorrelationLevels::default(), seed)
    }

    pub fn with_levels(
        prevalences: Vec<f64>,
        level: CorrelationLevel,
        levels: &CorrelationLevels,
        seed: u64,
    ) -> Result<Self> {
        levels.validate()?;
        let spec = Self {
            prevalences,
            level,
            rho: levels.rho(level),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.prevalences.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.prevalences.is_empty() {
            return Err(Error::InvalidSpec("k must be at least 1".into()));
        }
        if self.prevalences.len() > 20 {
            return Err(Error::InvalidSpec("k above 20 is not supported".into()));
        }
        if let Some(p) = self.prevalences.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::InvalidSpec(format!("prevalence {p} outside (0, 1)")));
        }
        exchangeable_correlation(self.rho, self.k())?;
        Ok(())
    }

    /// Latent-Gaussian thresholds `Φ⁻¹(1 − p_i)`.
    fn thresholds(&self) -> Vec<f64> {
        self.prevalences
            .iter()
            .map(|p| normal_quantile(1.0 - p))
            .collect()
    }
}

/// Prevalences drawn uniformly from `[lo, hi]`.
pub fn draw_prevalences(k: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..k).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Exchangeable correlation matrix; rejects values that are not positive definite.
pub fn exchangeable_correlation(rho: f64, k: usize) -> Result<DMatrix<f64>> {
    // Eigenvalues are 1 + (k-1)rho (once) and 1 - rho (k-1 times).
    let lower = if k > 1 { -1.0 / (k as f64 - 1.0) } else { -1.0 };
    if k == 0 || rho >= 1.0 || rho <= lower {
        return Err(Error::InvalidSpec(format!(
            "exchangeable correlation {rho} is not positive definite for k = {k}"
        )));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho }))
}

pub fn correlation_matrix_for_level(level: CorrelationLevel, k: usize) -> Result<DMatrix<f64>> {
    exchangeable_correlation(CorrelationLevels::default().rho(level), k)
}

/// Sampled N×k latent states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMatrix {
    pub values: BinaryMatrix,
    pub spec: LatentSpec,
}

impl LatentMatrix {
    /// Wrap an explicit matrix (used for hand-built fixtures).
    pub fn from_values(values: BinaryMatrix, spec: LatentSpec) -> Result<Self> {
        if values.cols() != spec.k() {
            return Err(Error::DimensionMismatch {
                expected: spec.k(),
                found: values.cols(),
            });
        }
        Ok(Self { values, spec })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn k(&self) -> usize {
        self.values.cols()
    }

    /// Configuration code per row: bit i is latent state i.
    pub fn config_codes(&self) -> Vec<u32> {
        self.values.row_codes().expect("k <= 20")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.values.write_csv(w)
    }
}

/// Threshold an exchangeable Gaussian at `Φ⁻¹(1 − p_i)`.
pub fn sample_latent(spec: &LatentSpec, n: usize) -> Result<LatentMatrix> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidSpec("n must be at least 1".into()));
    }
    let k = spec.k();
    let thresholds = spec.thresholds();
    let shared = spec.rho.sqrt();
    let own = (1.0 - spec.rho).sqrt();
    let mut rng = seed::rng(spec.seed);
    let mut columns = vec![BitColumn::zeros(n); k];
    for row in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        for (col, t) in columns.iter_mut().zip(&thresholds) {
            let e: f64 = rng.sample(StandardNormal);
            if shared * w + own * e > *t {
                col.set(row, true);
            }
        }
    }
    Ok(LatentMatrix {
        values: BinaryMatrix::from_columns(n, columns)?,
        spec: spec.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigProbability {
    pub code: u32,
    pub probability: f64,
}

/// Realized configurations with their empirical probabilities, ordered by code.
pub fn enumerate_configs(m: &LatentMatrix) -> Vec<ConfigProbability> {
    let mut counts = vec![0usize; 1 << m.k()];
    for code in m.config_codes() {
        counts[code as usize] += 1;
    }
    let n = m.rows() as f64;
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(code, &c)| ConfigProbability {
            code: code as u32,
            probability: c as f64 / n,
        })
        .collect()
}

/// Empirical probability of every configuration code (zeros included).
pub fn empirical_config_distribution(m: &LatentMatrix) -> Vec<f64> {
    let mut dist = vec![0.0; 1 << m.k()];
    for c in enumerate_configs(m) {
        dist[c.code as usize] = c.probability;
    }
    dist
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub k_rlzd: usize,
    pub joint_entropy_bits: f64,
    pub k_eff: f64,
    pub n_target: u64,
    pub n_ballpark: u64,
}

/// Worst-case binomial sample size `ceil((z/me)² p(1−p))`.
pub fn n_target(p: f64, me: f64, z: f64) -> Result<u64> {
    if !(p > 0.0 && p < 1.0) || me <= 0.0 {
        return Err(Error::InvalidSpec(format!(
            "n_target needs 0 < p < 1 and me > 0, got p = {p}, me = {me}"
        )));
    }
    Ok(ceil_tolerant((z / me).powi(2) * p * (1.0 - p)))
}

// Guards against `ceil(1.0000000000000002) = 2`.
fn ceil_tolerant(x: f64) -> u64 {
    (x - 1e-9).ceil().max(0.0) as u64
}

pub fn complexity(m: &LatentMatrix) -> ComplexityReport {
    let configs = enumerate_configs(m);
    let h: f64 = configs.iter().map(|c| plogp(c.probability)).sum();
    let k_eff = h.exp2();
    let target = n_target(0.5, DEFAULT_MARGIN, DEFAULT_Z).expect("valid defaults");
    ComplexityReport {
        k_rlzd: configs.len(),
        joint_entropy_bits: h,
        k_eff,
        n_target: target,
        n_ballpark: ceil_tolerant(target as f64 * k_eff),
    }
}

/// Ballpark sample size `ceil(n_target × K_eff)` for the default margin.
pub fn n_ballpark(k_eff: f64) -> u64 {
    let target = n_target(0.5, DEFAULT_MARGIN, DEFAULT_Z).expect("valid defaults");
    ceil_tolerant(target as f64 * k_eff)
}

/// Exact configuration distribution implied by the Gaussian copula.
///
/// Conditioning on the shared factor `w` makes the states independent, so
/// each configuration probability is a one-dimensional integral, evaluated by
/// composite Simpson on `[-10, 10]`.
pub fn exact_config_distribution(spec: &LatentSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let k = spec.k();
    let thresholds = spec.thresholds();
    let n_configs = 1usize << k;
    if spec.rho == 0.0 {
        return Ok((0..n_configs)
            .map(|code| {
                spec.prevalences
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if code >> i & 1 == 1 { *p } else { 1.0 - p })
                    .product()
            })
            .collect());
    }
    let shared = spec.rho.sqrt();
    let own = (1.0 - spec.rho).sqrt();
    let intervals = 4000;
    let (lo, hi) = (-10.0, 10.0);
    let h = (hi - lo) / intervals as f64;
    let mut dist = vec![0.0; n_configs];
    let mut q = vec![0.0; k];
    for step in 0..=intervals {
        let w = lo + step as f64 * h;
        let weight = match step {
            0 => 1.0,
            s if s == intervals => 1.0,
            s if s % 2 == 1 => 4.0,
            _ => 2.0,
        } * h
            / 3.0
            * normal_pdf(w);
        for (qi, t) in q.iter_mut().zip(&thresholds) {
            *qi = 1.0 - normal_cdf((t - shared * w) / own);
        }
        for (code, d) in dist.iter_mut().enumerate() {
            let mut p = weight;
            for (i, qi) in q.iter().enumerate() {
                p *= if code >> i & 1 == 1 { *qi } else { 1.0 - qi };
            }
            *d += p;
        }
    }
    let total: f64 = dist.iter().sum();
    dist.iter_mut().for_each(|d| *d /= total);
    Ok(dist)
}

/// Entropy (bits) and perplexity of a configuration distribution.
pub fn entropy_and_keff(dist: &[f64]) -> (f64, f64) {
    let h: f64 = dist.iter().map(|p| plogp(*p)).sum();
    (h, h.exp2())
}
