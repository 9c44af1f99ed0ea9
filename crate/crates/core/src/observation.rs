//! Measurement error: per-predictor sensitivity/specificity plus optional
//! subject-level systematic error regimes.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{check_len, Error, Result};
use crate::generative::TrueDataset;
use crate::info::{ExactSystem, JointTable};
use crate::seed;

pub const FIDELITY_RANGE: (f64, f64) = (0.875, 0.925);

/// A systematic error regime: with probability `pi` a row enters regime
/// `L = 1`, where every affected column shares `(alpha_c, beta_c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SergSpec {
    pub pi: f64,
    pub affected: Vec<usize>,
    pub alpha_c: f64,
    pub beta_c: f64,
}

impl SergSpec {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::InvalidSpec(format!("pi = {} outside [0, 1]", self.pi)));
        }
        for v in [self.alpha_c, self.beta_c] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidSpec(format!("regime channel {v} outside [0, 1]")));
            }
        }
        let mut seen = HashSet::new();
        for &j in &self.affected {
            if j >= m {
                return Err(Error::InvalidSpec(format!("affected index {j} >= m = {m}")));
            }
            if !seen.insert(j) {
                return Err(Error::InvalidSpec(format!("affected index {j} repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    #[serde(default)]
    pub serg: Vec<SergSpec>,
    pub seed: u64,
}

impl ObservationSpec {
    pub fn m(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_len(self.alphas.len(), self.betas.len())?;
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !self.alphas.iter().chain(&self.betas).all(|&v| open(v)) {
            return Err(Error::InvalidSpec("fidelity outside (0, 1)".into()));
        }
        let mut claimed = HashSet::new();
        for s in &self.serg {
            s.validate(self.m())?;
            for &j in &s.affected {
                if !claimed.insert(j) {
                    return Err(Error::InvalidSpec(format!(
                        "column {j} affected by more than one regime source"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Channel `(alpha, beta)` of column `j` given the row's regime per source.
    fn channel(&self, j: usize, sources: &[(usize, &BitColumn)], row: usize) -> (f64, f64) {
        for &(s, regime) in sources {
            if regime.get(row) {
                let serg = &self.serg[s];
                return (serg.alpha_c, serg.beta_c);
            }
        }
        (self.alphas[j], self.betas[j])
    }
}

/// Independent `U(0.875, 0.925)` sensitivities and specificities.
pub fn default_fidelity(m: usize, seed: u64) -> Result<ObservationSpec> {
    fidelity_in_range(m, FIDELITY_RANGE, seed)
}

/// Independent uniform sensitivities and specificities on `[lo, hi)`.
pub fn fidelity_in_range(m: usize, (lo, hi): (f64, f64), seed: u64) -> Result<ObservationSpec> {
    if m == 0 {
        return Err(Error::InvalidSpec("m must be at least 1".into()));
    }
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::InvalidSpec(format!("fidelity range [{lo}, {hi}) must satisfy 0 < lo < hi < 1")));
    }
    let mut rng = seed::rng(seed);
    let alphas = (0..m).map(|_| rng.gen_range(lo..hi)).collect();
    let betas = (0..m).map(|_| rng.gen_range(lo..hi)).collect();
    Ok(ObservationSpec {
        alphas,
        betas,
        serg: Vec::new(),
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedData {
    pub values: BinaryMatrix,
    /// One per-row regime column for each systematic source.
    pub regimes: Vec<BitColumn>,
}

impl ObservedData {
    /// Observed values followed by one side-car column per regime source.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut cols = self.values.columns().to_vec();
        cols.extend(self.regimes.iter().cloned());
        BinaryMatrix::from_columns(self.values.rows(), cols)?.write_csv(w)
    }
}

/// Apply the observation channel to the true predictors.
pub fn observe(data: &TrueDataset, spec: &ObservationSpec) -> Result<ObservedData> {
    spec.validate()?;
    check_len(data.s2.cols(), spec.m())?;
    let n = data.s2.rows();
    let regimes: Vec<BitColumn> = spec
        .serg
        .iter()
        .enumerate()
        .map(|(s, serg)| {
            let mut rng = seed::rng(seed::derive_path(spec.seed, &[seed::stream::REGIME, s as u64]));
            BitColumn::from_bools((0..n).map(|_| rng.gen::<f64>() < serg.pi))
        })
        .collect();
    let columns: Vec<BitColumn> = (0..spec.m())
        .into_par_iter()
        .map(|j| {
            let sources: Vec<(usize, &BitColumn)> = spec
                .serg
                .iter()
                .enumerate()
                .filter(|(_, s)| s.affected.contains(&j))
                .map(|(s, _)| (s, &regimes[s]))
                .collect();
            let truth = data.s2.column(j);
            let mut rng = seed::rng(seed::derive_path(spec.seed, &[seed::stream::COLUMN, j as u64]));
            BitColumn::from_bools((0..n).map(|i| {
                let (alpha, beta) = spec.channel(j, &sources, i);
                let u: f64 = rng.gen();
                if truth.get(i) {
                    u < alpha
                } else {
                    u >= beta
                }
            }))
        })
        .collect();
    Ok(ObservedData {
        values: BinaryMatrix::from_columns(n, columns)?,
        regimes,
    })
}

/// Terms of `H(S⁽¹⁾|S′) = πH₁ + (1−π)H₀ + H(L|S′) − H(L|S⁽¹⁾,S′)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeDecomposition {
    pub pi: f64,
    /// `H(S⁽¹⁾ | S′)` with the regime marginalized.
    pub h_total: f64,
    pub h0: f64,
    pub h1: f64,
    pub h_regime_given_obs: f64,
    pub h_regime_given_latent_obs: f64,
    /// `I(S⁽¹⁾; L | S′)`.
    pub penalty: f64,
}

impl RegimeDecomposition {
    pub fn residual(&self) -> f64 {
        self.h_total
            - (self.pi * self.h1 + (1.0 - self.pi) * self.h0 + self.h_regime_given_obs
                - self.h_regime_given_latent_obs)
    }
}

/// Exact regime decomposition over all predictors of a small system.
pub fn regime_entropy_decomposition(system: &ExactSystem) -> Result<RegimeDecomposition> {
    let columns: Vec<usize> = (0..system.m()).collect();
    let table = JointTable::build(system, &columns)?;
    let pi = system.serg.as_ref().map_or(0.0, |s| s.pi);
    let (h0, h1) = if system.serg.is_some() {
        (
            table.h_latent_given_obs_in_regime(0),
            table.h_latent_given_obs_in_regime(1),
        )
    } else {
        (table.h_latent_given_obs(), 0.0)
    };
    let h_lg = table.h_regime_given_obs();
    let h_lsg = table.h_regime_given_latent_obs();
    Ok(RegimeDecomposition {
        pi,
        h_total: table.h_latent_given_obs(),
        h0,
        h1,
        h_regime_given_obs: h_lg,
        h_regime_given_latent_obs: h_lsg,
        penalty: (h_lg - h_lsg).max(0.0),
    })
}
