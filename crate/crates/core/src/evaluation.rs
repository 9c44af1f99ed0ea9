//! Predictive metrics: cross-entropy in bits, AUROC, AUPRC and the entropy floor.

use serde::{Deserialize, Serialize};

use crate::bits::BitColumn;
use crate::error::{check_len, Error, Result};
use crate::generative::GenerativeSpec;
use crate::stats::binary_entropy;

pub const CLIP: f64 = 1e-6;

/// Mean binary cross-entropy in bits with scores clipped to `[ε, 1−ε]`.
pub fn score_conditional_entropy(y: &BitColumn, scores: &[f64]) -> Result<f64> {
    check_len(y.len(), scores.len())?;
    if scores.is_empty() {
        return Err(Error::InvalidSpec("no scores".into()));
    }
    let total: f64 = y
        .iter()
        .zip(scores)
        .map(|(label, &p)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            -(if label { p } else { 1.0 - p }).log2()
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Per-row cross-entropy terms, for standard errors.
pub fn cross_entropy_terms(y: &BitColumn, scores: &[f64]) -> Result<Vec<f64>> {
    check_len(y.len(), scores.len())?;
    Ok(y.iter()
        .zip(scores)
        .map(|(label, &p)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            -(if label { p } else { 1.0 - p }).log2()
        })
        .collect())
}

/// `Σ_p P(s_p) H_b(δ_p)`.
pub fn theoretical_floor_from(delta: &[f64], prior: &[f64]) -> Result<f64> {
    check_len(delta.len(), prior.len())?;
    Ok(delta.iter().zip(prior).map(|(&d, &w)| w * binary_entropy(d)).sum())
}

pub fn theoretical_floor(spec: &GenerativeSpec, prior: &[f64]) -> Result<f64> {
    theoretical_floor_from(&spec.delta_table, prior)
}

/// Midranks (1-based) with ties sharing their average rank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUROC; `None` when one class is absent.
pub fn auroc(y: &BitColumn, scores: &[f64]) -> Result<Option<f64>> {
    check_len(y.len(), scores.len())?;
    let n_pos = y.count_ones();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = y
        .iter()
        .zip(&ranks)
        .filter(|(l, _)| *l)
        .map(|(_, r)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Average precision with tied scores entering together; `None` without positives.
pub fn auprc(y: &BitColumn, scores: &[f64]) -> Result<Option<f64>> {
    check_len(y.len(), scores.len())?;
    let n_pos = y.count_ones();
    if n_pos == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if y.get(order[j]) {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(Some(ap))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub strategy: String,
    pub budget: usize,
    pub cond_entropy_bits: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub theoretical_floor_bits: f64,
    pub seed: u64,
    pub wall_time_secs: f64,
}

impl MetricsRecord {
    /// `(metric, value)` pairs for the tidy output; undefined metrics are skipped.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("cond_entropy_bits", self.cond_entropy_bits),
            ("theoretical_floor_bits", self.theoretical_floor_bits),
            ("wall_time_secs", self.wall_time_secs),
        ];
        if let Some(v) = self.auroc {
            out.push(("auroc", v));
        }
        if let Some(v) = self.auprc {
            out.push(("auprc", v));
        }
        out
    }
}
