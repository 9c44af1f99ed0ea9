//! Feature-selection strategies. Every strategy returns an ordered trace whose
//! prefixes are the selections at smaller budgets.

mod residual;
mod rotation;
mod spectral_anchored;

pub use residual::{select_targeted_residual, ResidualConfig, ResidualMetric, ResidualSource};
pub use rotation::{promax, varimax};
pub use spectral_anchored::{select_spectral_anchored, FactorModel, PROMAX_POWER};

use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{check_len, Error, Result};
use crate::info::binary_mutual_information;
use crate::seed;
use crate::stats::round_half_up;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    Mrmr,
    TargetedResidual,
    SpectralAnchored,
    IdealizedDepth,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Mrmr,
        Strategy::TargetedResidual,
        Strategy::SpectralAnchored,
        Strategy::IdealizedDepth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Mrmr => "mrmr",
            Strategy::TargetedResidual => "targeted-residual",
            Strategy::SpectralAnchored => "spectral-anchored",
            Strategy::IdealizedDepth => "idealized-depth",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Score of each pick at the time it was chosen.
    pub scores: Vec<Option<f64>>,
    /// Refits where residual variance vanished and relevance was used instead.
    pub fallback_steps: usize,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub strategy: Strategy,
    pub picks: Vec<usize>,
    pub snapshot_budgets: Vec<usize>,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

impl SelectionTrace {
    fn new(strategy: Strategy, picks: Vec<usize>, seed: u64, diagnostics: Diagnostics) -> Self {
        let budget = picks.len();
        Self {
            strategy,
            picks,
            snapshot_budgets: vec![budget],
            seed,
            diagnostics,
        }
    }

    pub fn with_snapshots(mut self, budgets: Vec<usize>) -> Self {
        self.snapshot_budgets = budgets;
        self
    }

    /// The first `budget` picks (all picks if fewer were made).
    pub fn prefix(&self, budget: usize) -> &[usize] {
        &self.picks[..budget.min(self.picks.len())]
    }

    pub fn snapshots(&self) -> Vec<&[usize]> {
        self.snapshot_budgets.iter().map(|&b| self.prefix(b)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_budget(budget: usize, m: usize) -> Result<()> {
    if budget > m {
        return Err(Error::InvalidSpec(format!("budget {budget} exceeds {m} features")));
    }
    Ok(())
}

/// Index of the maximum; ties go to the lower index, NaN never wins.
pub(crate) fn argmax_lower(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn select_random(m_total: usize, budget: usize, seed: u64) -> Result<SelectionTrace> {
    check_budget(budget, m_total)?;
    let mut idx: Vec<usize> = (0..m_total).collect();
    let mut rng = seed::rng(seed);
    let (chosen, _) = idx.partial_shuffle(&mut rng, budget);
    let picks = chosen.to_vec();
    let n = picks.len();
    Ok(SelectionTrace::new(
        Strategy::Random,
        picks,
        seed,
        Diagnostics {
            scores: vec![None; n],
            ..Diagnostics::default()
        },
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MrmrVariant {
    /// Relevance minus mean redundancy.
    #[default]
    Mid,
    /// Relevance divided by mean redundancy.
    Miq,
}

/// Greedy minimum-redundancy maximum-relevance ordering.
pub fn select_mrmr(
    data: &BinaryMatrix,
    y: &BitColumn,
    budget: usize,
    variant: MrmrVariant,
) -> Result<SelectionTrace> {
    check_len(data.rows(), y.len())?;
    let m = data.cols();
    check_budget(budget, m)?;
    let relevance: Vec<f64> = data
        .columns()
        .par_iter()
        .map(|c| binary_mutual_information(c, y))
        .collect();
    let mut redundancy = vec![0.0; m];
    let mut selected = vec![false; m];
    let mut picks = Vec::with_capacity(budget);
    let mut scores = Vec::with_capacity(budget);
    for step in 0..budget {
        let s = step as f64;
        let score = |j: usize| -> f64 {
            if selected[j] {
                return f64::NAN;
            }
            if step == 0 {
                return relevance[j];
            }
            let mean_red = redundancy[j] / s;
            match variant {
                MrmrVariant::Mid => relevance[j] - mean_red,
                MrmrVariant::Miq => relevance[j] / mean_red.max(1e-12),
            }
        };
        let best = argmax_lower((0..m).map(score)).expect("budget within candidates");
        scores.push(Some(score(best)));
        selected[best] = true;
        picks.push(best);
        if step + 1 < budget {
            let pick_col = data.column(best);
            redundancy
                .par_iter_mut()
                .enumerate()
                .filter(|(j, _)| !selected[*j])
                .for_each(|(j, r)| *r += binary_mutual_information(data.column(j), pick_col));
        }
    }
    Ok(SelectionTrace::new(
        Strategy::Mrmr,
        picks,
        0,
        Diagnostics {
            scores,
            ..Diagnostics::default()
        },
    ))
}

/// Budget of the depth benchmark: `2·K_eff` rounded half up.
pub fn idealized_depth_budget(k_eff: f64) -> usize {
    round_half_up(2.0 * k_eff)
}

/// MRMR on error-free predictors with a budget of about two per effective state.
pub fn idealized_depth_set(clean: &BinaryMatrix, y: &BitColumn, k_eff: f64) -> Result<SelectionTrace> {
    let budget = idealized_depth_budget(k_eff).min(clean.cols());
    let mut trace = select_mrmr(clean, y, budget, MrmrVariant::Mid)?;
    trace.strategy = Strategy::IdealizedDepth;
    Ok(trace)
}
