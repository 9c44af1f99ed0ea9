use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_lower, check_budget, Diagnostics, SelectionTrace, Strategy};
use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{check_len, Result};
use crate::forest::{self, ForestConfig};
use crate::info::binary_mutual_information;
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMetric {
    /// |Pearson correlation| with the residuals.
    #[default]
    Pearson,
    /// Mutual information with the sign of the residuals.
    MutualInformation,
}

/// Which training-row fits the residuals are taken from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualSource {
    /// Full-forest predictions on the rows it was trained on.
    #[default]
    InSample,
    /// Each row predicted only by trees that did not see it.
    OutOfBag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualConfig {
    pub proxy: ForestConfig,
    /// Picks added per proxy refit; `None` means `ceil(budget / 40)`.
    #[serde(default)]
    pub step_size: Option<usize>,
    #[serde(default)]
    pub metric: ResidualMetric,
    #[serde(default)]
    pub source: ResidualSource,
}

impl ResidualConfig {
    pub fn new(proxy_trees: usize, seed: u64) -> Self {
        Self {
            proxy: ForestConfig::with_trees(proxy_trees, seed),
            step_size: None,
            metric: ResidualMetric::Pearson,
            source: ResidualSource::InSample,
        }
    }

    pub fn resolved_step(&self, budget: usize) -> usize {
        self.step_size.unwrap_or_else(|| budget.div_ceil(40)).max(1)
    }
}

/// `|corr(column, r)|` for every column, from the sums of `r` over set bits.
fn abs_correlations(data: &BinaryMatrix, r: &[f64]) -> Vec<f64> {
    let n = r.len() as f64;
    let mean_r = r.iter().sum::<f64>() / n;
    let var_r = r.iter().map(|v| (v - mean_r).powi(2)).sum::<f64>() / n;
    data.columns()
        .par_iter()
        .map(|c| {
            let ones = c.count_ones() as f64;
            let p = ones / n;
            let var_c = p * (1.0 - p);
            if var_c == 0.0 || var_r == 0.0 {
                return 0.0;
            }
            let mut sum = 0.0;
            for (w, &word) in c.words().iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let t = bits.trailing_zeros() as usize;
                    sum += r[w * 64 + t];
                    bits &= bits - 1;
                }
            }
            let cov = sum / n - p * mean_r;
            (cov / (var_c * var_r).sqrt()).abs()
        })
        .collect()
}

/// Forward selection against the residuals of a forest proxy refitted on the
/// current picks.
pub fn select_targeted_residual(
    data: &BinaryMatrix,
    y: &BitColumn,
    budget: usize,
    config: &ResidualConfig,
) -> Result<SelectionTrace> {
    check_len(data.rows(), y.len())?;
    let m = data.cols();
    check_budget(budget, m)?;
    let seed = config.proxy.seed;
    let mut diagnostics = Diagnostics::default();
    let mut picks = Vec::with_capacity(budget);
    if budget == 0 {
        return Ok(SelectionTrace::new(Strategy::TargetedResidual, picks, seed, diagnostics));
    }
    let yf = y.to_f64();
    let relevance = abs_correlations(data, &yf);
    let first = argmax_lower(relevance.iter().copied()).expect("nonempty haystack");
    picks.push(first);
    diagnostics.scores.push(Some(relevance[first]));
    let mut selected = vec![false; m];
    selected[first] = true;
    let step = config.resolved_step(budget);
    let mut refit = 0u64;
    while picks.len() < budget {
        let x = data.select_columns(&picks)?;
        let proxy = ForestConfig {
            seed: seed::derive(seed, refit),
            ..config.proxy.clone()
        };
        refit += 1;
        let fitted = match config.source {
            ResidualSource::OutOfBag => forest::fit_oob(&x, y, &proxy)?.1,
            ResidualSource::InSample => forest::fit(&x, y, &proxy)?.predict_proba(&x)?,
        };
        let resid: Vec<f64> = yf.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let flat = resid.iter().all(|v| (v - mean).abs() < 1e-12);
        let mut scores = if flat {
            diagnostics.fallback_steps += 1;
            relevance.clone()
        } else {
            match config.metric {
                ResidualMetric::Pearson => abs_correlations(data, &resid),
                ResidualMetric::MutualInformation => {
                    let sign = BitColumn::from_bools(resid.iter().map(|v| *v > 0.0));
                    data.columns()
                        .par_iter()
                        .map(|c| binary_mutual_information(c, &sign))
                        .collect()
                }
            }
        };
        for (j, s) in scores.iter_mut().enumerate() {
            if selected[j] {
                *s = f64::NAN;
            }
        }
        let mut order: Vec<usize> = (0..m).filter(|&j| !selected[j]).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for &j in order.iter().take(step.min(budget - picks.len())) {
            selected[j] = true;
            picks.push(j);
            diagnostics.scores.push(Some(scores[j]));
        }
    }
    if diagnostics.fallback_steps > 0 {
        diagnostics
            .notes
            .push("residual variance vanished; relevance used".into());
    }
    Ok(SelectionTrace::new(Strategy::TargetedResidual, picks, seed, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn correlation_via_bits_matches_pearson() {
        let mut rng = seed::rng(1);
        let cols: Vec<BitColumn> = (0..3)
            .map(|_| BitColumn::from_bools((0..300).map(|_| rng.gen::<bool>())))
            .collect();
        let r: Vec<f64> = (0..300).map(|_| rng.gen::<f64>() - 0.3).collect();
        let data = BinaryMatrix::from_columns(300, cols).unwrap();
        let fast = abs_correlations(&data, &r);
        for j in 0..3 {
            let slow = crate::stats::pearson(&data.column(j).to_f64(), &r).abs();
            assert!((fast[j] - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_proxy_triggers_fallback() {
        // y copies column 0 exactly, so the one-feature proxy fits it perfectly.
        let n = 400;
        let mut rng = seed::rng(2);
        let y = BitColumn::from_bools((0..n).map(|_| rng.gen::<bool>()));
        let mut cols = vec![y.clone()];
        cols.extend((0..4).map(|_| BitColumn::from_bools((0..n).map(|_| rng.gen::<bool>()))));
        let data = BinaryMatrix::from_columns(n, cols).unwrap();
        let t = select_targeted_residual(&data, &y, 3, &ResidualConfig::new(10, 3)).unwrap();
        assert_eq!(t.picks[0], 0);
        assert!(t.diagnostics.fallback_steps > 0);
    }

    #[test]
    fn marginally_silent_partner_is_targeted() {
        // x2 tracks x1 and lowers y given x1; the two paths cancel marginally.
        let n = 4000;
        let mut rng = seed::rng(4);
        let x1: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let x2: Vec<bool> = x1.iter().map(|&a| if rng.gen::<f64>() < 0.75 { a } else { !a }).collect();
        let table = [[0.2, 0.0], [0.9, 0.5]];
        let y: Vec<bool> = (0..n)
            .map(|i| rng.gen::<f64>() < table[usize::from(x1[i])][usize::from(x2[i])])
            .collect();
        let mut cols = vec![BitColumn::from_bools(x1), BitColumn::from_bools(x2)];
        let yc = BitColumn::from_bools(y);
        cols.extend((0..6).map(|_| BitColumn::from_bools((0..n).map(|_| rng.gen::<bool>()))));
        let data = BinaryMatrix::from_columns(n, cols).unwrap();
        assert!(binary_mutual_information(data.column(1), &yc) < 0.01);
        let t = select_targeted_residual(&data, &yc, 2, &ResidualConfig::new(50, 5)).unwrap();
        assert_eq!(t.picks, vec![0, 1]);
    }

    #[test]
    fn deterministic_under_seed() {
        let n = 600;
        let mut rng = seed::rng(6);
        let cols: Vec<BitColumn> = (0..12)
            .map(|_| BitColumn::from_bools((0..n).map(|_| rng.gen::<bool>())))
            .collect();
        let y = BitColumn::from_bools((0..n).map(|i| cols[3].get(i) || rng.gen::<f64>() < 0.2));
        let data = BinaryMatrix::from_columns(n, cols).unwrap();
        let cfg = ResidualConfig::new(20, 8);
        let a = select_targeted_residual(&data, &y, 8, &cfg).unwrap();
        let b = select_targeted_residual(&data, &y, 8, &cfg).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
    }
}
