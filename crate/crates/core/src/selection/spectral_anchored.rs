use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rotation::promax;
use super::{check_budget, Diagnostics, SelectionTrace, Strategy};
use crate::bits::BinaryMatrix;
use crate::error::{Error, Result};
use crate::seed;
use crate::spectral::{binary_covariance, detect_elbow, Elbow, MatrixKind};

pub const PROMAX_POWER: f64 = 4.0;

/// Rotated principal-axis loadings of the correlation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub factors: usize,
    /// False when the spectrum had no elbow and one factor was used.
    pub elbow_found: bool,
    /// Row-major `m × factors` pattern loadings.
    pub loadings: Vec<Vec<f64>>,
}

impl FactorModel {
    pub fn fit(data: &BinaryMatrix) -> Result<Self> {
        let m = data.cols();
        if m < 3 {
            return Err(Error::Degenerate(format!("{m} features is too few to factor")));
        }
        let corr = binary_covariance(data, MatrixKind::Correlation)?;
        let eig = SymmetricEigen::new(corr);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let (factors, elbow_found) = match detect_elbow(&values)? {
            Elbow::At(r) => (r, true),
            Elbow::NoElbow => (1, false),
        };
        let mut raw = DMatrix::zeros(m, factors);
        for (c, &i) in order.iter().take(factors).enumerate() {
            let scale = values[c].max(0.0).sqrt();
            let v = eig.eigenvectors.column(i);
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for r in 0..m {
                raw[(r, c)] = sign * scale * v[r];
            }
        }
        let rotated = promax(&raw, PROMAX_POWER)?;
        let loadings = (0..m)
            .map(|r| rotated.row(r).iter().copied().collect())
            .collect();
        Ok(Self {
            factors,
            elbow_found,
            loadings,
        })
    }

    /// Factor with the largest |loading| for feature `j` (lower index on ties).
    pub fn home_factor(&self, j: usize) -> usize {
        let row = &self.loadings[j];
        let mut best = 0;
        for (c, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = c;
            }
        }
        best
    }

    /// Highest-|loading| feature per factor, distinct across factors.
    pub fn anchors(&self) -> Vec<usize> {
        let mut taken = vec![false; self.loadings.len()];
        let mut anchors = Vec::with_capacity(self.factors);
        for c in 0..self.factors {
            let mut best: Option<usize> = None;
            for (j, row) in self.loadings.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                if best.is_none_or(|b| row[c].abs() > self.loadings[b][c].abs()) {
                    best = Some(j);
                }
            }
            if let Some(b) = best {
                taken[b] = true;
                anchors.push(b);
            }
        }
        anchors
    }
}

struct Growth {
    selected: Vec<bool>,
    picks: Vec<usize>,
    scores: Vec<Option<f64>>,
    sel_sum: Vec<Vec<f64>>,
    sel_count: Vec<usize>,
}

impl Growth {
    fn add(&mut self, j: usize, score: f64, home: usize, abs_row: &[f64]) {
        self.selected[j] = true;
        self.picks.push(j);
        self.scores.push(Some(score));
        self.sel_count[home] += 1;
        for (s, v) in self.sel_sum[home].iter_mut().zip(abs_row) {
            *s += v;
        }
    }
}

/// Anchor one prototype per rotated factor, then grow the factor whose
/// selected centroid strays furthest from its haystack centroid, sampling
/// features in proportion to their |loading| on it.
pub fn select_spectral_anchored(data: &BinaryMatrix, budget: usize, seed: u64) -> Result<SelectionTrace> {
    let m = data.cols();
    check_budget(budget, m)?;
    let model = FactorModel::fit(data)?;
    let f = model.factors;
    let abs_rows: Vec<Vec<f64>> = model
        .loadings
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).collect())
        .collect();
    let home: Vec<usize> = (0..m).map(|j| model.home_factor(j)).collect();

    let mut hay_sum = vec![vec![0.0; f]; f];
    let mut hay_count = vec![0usize; f];
    for j in 0..m {
        hay_count[home[j]] += 1;
        for (s, v) in hay_sum[home[j]].iter_mut().zip(&abs_rows[j]) {
            *s += v;
        }
    }
    let hay_centroid: Vec<Vec<f64>> = hay_sum
        .iter()
        .zip(&hay_count)
        .map(|(s, &n)| s.iter().map(|v| v / n.max(1) as f64).collect())
        .collect();

    let mut g = Growth {
        selected: vec![false; m],
        picks: Vec::with_capacity(budget),
        scores: Vec::with_capacity(budget),
        sel_sum: vec![vec![0.0; f]; f],
        sel_count: vec![0; f],
    };
    for a in model.anchors().into_iter().take(budget) {
        g.add(a, abs_rows[a][home[a]], home[a], &abs_rows[a]);
    }

    let mut rng = seed::rng(seed);
    while g.picks.len() < budget {
        let mut weakest = 0;
        let mut worst = f64::NEG_INFINITY;
        for c in 0..f {
            if hay_count[c] == 0 {
                continue;
            }
            let gap: f64 = (0..f)
                .map(|d| {
                    let sel = if g.sel_count[c] == 0 {
                        0.0
                    } else {
                        g.sel_sum[c][d] / g.sel_count[c] as f64
                    };
                    (sel - hay_centroid[c][d]).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            if gap > worst {
                worst = gap;
                weakest = c;
            }
        }
        let free: Vec<usize> = (0..m).filter(|&j| !g.selected[j]).collect();
        let total: f64 = free.iter().map(|&j| abs_rows[j][weakest]).sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = free[free.len() - 1];
            for &j in &free {
                u -= abs_rows[j][weakest];
                if u < 0.0 {
                    chosen = j;
                    break;
                }
            }
            chosen
        } else {
            free[rng.gen_range(0..free.len())]
        };
        g.add(pick, abs_rows[pick][weakest], home[pick], &abs_rows[pick]);
    }
    let Growth { picks, scores, .. } = g;

    let mut notes = vec![format!("factors: {f}")];
    if !model.elbow_found {
        notes.push("no elbow in correlation spectrum; single factor used".into());
    }
    Ok(SelectionTrace::new(
        Strategy::SpectralAnchored,
        picks,
        seed,
        Diagnostics {
            scores,
            fallback_steps: usize::from(!model.elbow_found),
            notes,
        },
    ))
}
