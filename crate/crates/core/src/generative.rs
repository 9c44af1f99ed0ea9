//! Conditional-probability tables linking latent configurations to true
//! predictors and the outcome, and sampling from them.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{Error, Result};
use crate::latent::LatentMatrix;
use crate::seed::{self, stream};
use crate::stats::normal_cdf;

pub const PREDICTOR_RANGE: (f64, f64) = (0.25, 0.75);
pub const OUTCOME_RANGE: (f64, f64) = (0.0, 1.0);
pub const DEFAULT_DECAY: f64 = 0.4;
pub const DEFAULT_NOISE_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerativeMode {
    Consistent,
    Chaotic,
}

impl GenerativeMode {
    pub fn name(self) -> &'static str {
        match self {
            GenerativeMode::Consistent => "consistent",
            GenerativeMode::Chaotic => "chaotic",
        }
    }
}

impl std::str::FromStr for GenerativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "consistent" => Ok(GenerativeMode::Consistent),
            "chaotic" => Ok(GenerativeMode::Chaotic),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Generative tables for one predictor universe.
///
/// `gamma_table[j][code]` is `P(X_j = 1 | s_code)` for signal predictors. For
/// noise predictors it holds the `2^k` camouflage values, which are assigned to
/// rows at random rather than by configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    pub mode: GenerativeMode,
    pub k: usize,
    pub gamma_table: Vec<Vec<f64>>,
    pub delta_table: Vec<f64>,
    pub noise_mask: Vec<bool>,
    pub predictor_range: (f64, f64),
    pub outcome_range: (f64, f64),
    pub interaction_decay: Option<f64>,
    pub seed: u64,
}

impl GenerativeSpec {
    pub fn m(&self) -> usize {
        self.gamma_table.len()
    }

    pub fn n_configs(&self) -> usize {
        1 << self.k
    }

    pub fn signal_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|&j| !self.noise_mask[j]).collect()
    }

    pub fn noise_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|&j| self.noise_mask[j]).collect()
    }

    /// `P(X_j = 1 | s_code)` as seen by the latent layer. Noise predictors do
    /// not depend on the configuration, so they return their mean value.
    pub fn effective_gamma(&self, j: usize, code: usize) -> f64 {
        if self.noise_mask[j] {
            let row = &self.gamma_table[j];
            row.iter().sum::<f64>() / row.len() as f64
        } else {
            self.gamma_table[j][code]
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_common(k: usize, m: usize, noise_fraction: f64) -> Result<()> {
    if k == 0 || k > 20 {
        return Err(Error::InvalidSpec(format!("k = {k} must lie in 1..=20")));
    }
    if m == 0 {
        return Err(Error::InvalidSpec("m must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(Error::InvalidSpec(format!(
            "noise fraction {noise_fraction} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `lo + (hi − lo) Φ(raw / sd)`.
pub fn copula_map(raw: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi && sd > 0.0);
    lo + (hi - lo) * normal_cdf(raw / sd)
}

/// Sign of the effects-coded product for interaction `term` at configuration `code`.
#[inline]
fn effect_sign(term: usize, code: usize) -> f64 {
    // Each state in the term contributes +1 when present and -1 when absent.
    let absent = (term & !code).count_ones();
    if absent.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Scores of one parametric variable over all `2^k` configurations.
///
/// Coefficients of order-`o` terms are drawn from `N(0, decay^(2(o−1)))` over
/// the full ±1 design. Returns the scores and their analytic (prior) standard
/// deviation, which is the same for every configuration.
fn parametric_scores<R: Rng>(k: usize, decay: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let n = 1usize << k;
    let mut scores = vec![0.0; n];
    let mut variance = 0.0;
    for term in 1..n {
        let order = term.count_ones() as i32;
        let sd = decay.powi(order - 1);
        let z: f64 = rng.sample(StandardNormal);
        let coef = sd * z;
        variance += sd * sd;
        if coef == 0.0 {
            continue;
        }
        for (code, s) in scores.iter_mut().enumerate() {
            *s += coef * effect_sign(term, code);
        }
    }
    (scores, variance.sqrt())
}

fn noise_layout(m: usize, noise_fraction: f64, seed: u64) -> Vec<bool> {
    let n_noise = ((m as f64) * noise_fraction).round() as usize;
    let mut mask: Vec<bool> = (0..m).map(|j| j < n_noise).collect();
    mask.shuffle(&mut seed::rng(seed::derive(seed, stream::NOISE_LAYOUT)));
    mask
}

fn assemble(
    mode: GenerativeMode,
    k: usize,
    m: usize,
    noise_fraction: f64,
    decay: Option<f64>,
    seed: u64,
    signal: impl Fn(usize) -> Vec<f64> + Sync,
    outcome: Vec<f64>,
) -> GenerativeSpec {
    let noise_mask = noise_layout(m, noise_fraction, seed);
    let noise_rows = generate_noise(k, noise_mask.iter().filter(|&&b| b).count(), seed);
    let mut noise_iter = noise_rows.into_iter();
    let signal_rows: Vec<Option<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| (!noise_mask[j]).then(|| signal(j)))
        .collect();
    let gamma_table = signal_rows
        .into_iter()
        .map(|row| row.unwrap_or_else(|| noise_iter.next().expect("noise row")))
        .collect();
    GenerativeSpec {
        mode,
        k,
        gamma_table,
        delta_table: outcome,
        noise_mask,
        predictor_range: PREDICTOR_RANGE,
        outcome_range: OUTCOME_RANGE,
        interaction_decay: decay,
        seed,
    }
}

/// Causally consistent tables: each variable is a smooth parametric function
/// of the latent states (main effects plus decaying interactions).
pub fn build_consistent_spec(
    k: usize,
    m: usize,
    noise_fraction: f64,
    decay: f64,
    seed: u64,
) -> Result<GenerativeSpec> {
    check_common(k, m, noise_fraction)?;
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidSpec(format!("decay {decay} outside [0, 1]")));
    }
    let (lo, hi) = PREDICTOR_RANGE;
    let signal = |j: usize| {
        let mut rng = seed::rng(seed::derive_path(seed, &[stream::COLUMN, j as u64]));
        let (scores, sd) = parametric_scores(k, decay, &mut rng);
        scores.iter().map(|s| copula_map(*s, sd, lo, hi)).collect()
    };
    let (scores, sd) = parametric_scores(k, decay, &mut seed::rng(seed::derive(seed, stream::OUTCOME)));
    let outcome = scores
        .iter()
        .map(|s| copula_map(*s, sd, OUTCOME_RANGE.0, OUTCOME_RANGE.1))
        .collect();
    Ok(assemble(
        GenerativeMode::Consistent,
        k,
        m,
        noise_fraction,
        Some(decay),
        seed,
        signal,
        outcome,
    ))
}

/// Chaotic tables: an independent standard-normal score per configuration.
pub fn build_chaotic_spec(k: usize, m: usize, noise_fraction: f64, seed: u64) -> Result<GenerativeSpec> {
    check_common(k, m, noise_fraction)?;
    let n = 1usize << k;
    let (lo, hi) = PREDICTOR_RANGE;
    let signal = |j: usize| {
        let mut rng = seed::rng(seed::derive_path(seed, &[stream::COLUMN, j as u64]));
        (0..n)
            .map(|_| copula_map(rng.sample(StandardNormal), 1.0, lo, hi))
            .collect()
    };
    let mut rng = seed::rng(seed::derive(seed, stream::OUTCOME));
    let outcome = (0..n)
        .map(|_| copula_map(rng.sample(StandardNormal), 1.0, OUTCOME_RANGE.0, OUTCOME_RANGE.1))
        .collect();
    Ok(assemble(
        GenerativeMode::Chaotic,
        k,
        m,
        noise_fraction,
        None,
        seed,
        signal,
        outcome,
    ))
}

pub fn build_spec(
    mode: GenerativeMode,
    k: usize,
    m: usize,
    noise_fraction: f64,
    decay: f64,
    seed: u64,
) -> Result<GenerativeSpec> {
    match mode {
        GenerativeMode::Consistent => build_consistent_spec(k, m, noise_fraction, decay, seed),
        GenerativeMode::Chaotic => build_chaotic_spec(k, m, noise_fraction, seed),
    }
}

/// `2^k` camouflage values per noise predictor, copula-mapped to the predictor range.
pub fn generate_noise(k: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = 1usize << k;
    let (lo, hi) = PREDICTOR_RANGE;
    (0..count)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_path(seed, &[stream::NOISE, i as u64]));
            (0..n)
                .map(|_| copula_map(rng.sample(StandardNormal), 1.0, lo, hi))
                .collect()
        })
        .collect()
}

/// True predictors and outcome for a sample of latent rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueDataset {
    pub s1: LatentMatrix,
    pub s2: BinaryMatrix,
    pub y: BitColumn,
    pub y_prob: Vec<f64>,
}

impl TrueDataset {
    pub fn rows(&self) -> usize {
        self.s2.rows()
    }
}

/// Bernoulli draws per cell given each row's configuration. Randomness is
/// derived from both the spec seed and the latent seed, per column.
pub fn sample_dataset(spec: &GenerativeSpec, latents: &LatentMatrix) -> Result<TrueDataset> {
    if latents.k() != spec.k {
        return Err(Error::DimensionMismatch {
            expected: spec.k,
            found: latents.k(),
        });
    }
    let codes = latents.config_codes();
    let n = codes.len();
    let n_configs = spec.n_configs();
    if codes.iter().any(|&c| c as usize >= n_configs) {
        return Err(Error::InvalidSpec("configuration code outside table".into()));
    }
    let base = seed::derive(spec.seed, latents.spec.seed);
    let columns: Vec<BitColumn> = (0..spec.m())
        .into_par_iter()
        .map(|j| {
            let mut rng = seed::rng(seed::derive_path(base, &[stream::COLUMN, j as u64]));
            let row = &spec.gamma_table[j];
            let mut col = BitColumn::zeros(n);
            if spec.noise_mask[j] {
                for i in 0..n {
                    let p = row[rng.gen_range(0..n_configs)];
                    col.set(i, rng.gen::<f64>() < p);
                }
            } else {
                for (i, &c) in codes.iter().enumerate() {
                    col.set(i, rng.gen::<f64>() < row[c as usize]);
                }
            }
            col
        })
        .collect();
    let mut rng = seed::rng(seed::derive(base, stream::OUTCOME));
    let y_prob: Vec<f64> = codes.iter().map(|&c| spec.delta_table[c as usize]).collect();
    let y = BitColumn::from_bools(y_prob.iter().map(|&p| rng.gen::<f64>() < p));
    Ok(TrueDataset {
        s1: latents.clone(),
        s2: BinaryMatrix::from_columns(n, columns)?,
        y,
        y_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::{binary_mutual_information, phi_coefficient};
    use crate::latent::{sample_latent, CorrelationLevel, LatentSpec};
    use nalgebra::DMatrix;

    #[test]
    fn copula_map_examples() {
        assert_eq!(copula_map(0.0, 1.0, 0.25, 0.75), 0.5);
        assert!((copula_map(1e9, 1.0, 0.25, 0.75) - 0.75).abs() < 1e-15);
        assert!((copula_map(1.0, 1.0, 0.0, 1.0) - 0.841_344_746_068_542_9).abs() < 1e-6);
    }

    #[test]
    fn zero_decay_is_main_effects_only() {
        let spec = build_consistent_spec(2, 50, 0.0, 0.0, 5).unwrap();
        // With only main effects the raw score is additive in the ±1 codes,
        // so score(11) + score(00) = score(01) + score(10). Probit is monotone,
        // so check additivity on the inverse-mapped scores.
        for row in &spec.gamma_table {
            let z: Vec<f64> = row
                .iter()
                .map(|g| crate::stats::normal_quantile((g - 0.25) / 0.5))
                .collect();
            assert!((z[0] + z[3] - z[1] - z[2]).abs() < 1e-6);
        }
        let centered = centered_table(&spec.gamma_table, 4);
        let sv = centered.singular_values();
        assert!(sv[2] < 1e-8 * sv[0]);
    }

    #[test]
    fn single_state_has_two_values() {
        let spec = build_consistent_spec(1, 20, 0.0, 0.4, 7).unwrap();
        for row in &spec.gamma_table {
            assert_eq!(row.len(), 2);
            assert_ne!(row[0], row[1]);
        }
    }

    #[test]
    fn chaotic_cells_in_range_and_rejects_k0() {
        assert!(build_chaotic_spec(0, 10, 0.5, 1).is_err());
        let spec = build_chaotic_spec(3, 200, 0.5, 1).unwrap();
        for row in &spec.gamma_table {
            assert!(row.iter().all(|g| (0.25..=0.75).contains(g)));
        }
        assert!(spec.delta_table.iter().all(|d| (0.0..=1.0).contains(d)));
        assert_eq!(spec.noise_indices().len(), 100);
    }

    #[test]
    fn chaotic_rows_uncorrelated() {
        let spec = build_chaotic_spec(2, 4000, 0.0, 11).unwrap();
        for a in 0..4 {
            for b in (a + 1)..4 {
                let x: Vec<f64> = spec.gamma_table.iter().map(|r| r[a]).collect();
                let y: Vec<f64> = spec.gamma_table.iter().map(|r| r[b]).collect();
                let r = crate::stats::pearson(&x, &y);
                assert!(r.abs() < 0.05, "configs {a},{b}: {r}");
            }
        }
    }

    #[test]
    fn noise_count_zero() {
        assert!(generate_noise(3, 0, 1).is_empty());
        let rows = generate_noise(3, 2, 1);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.len() == 8));
    }

    fn centered_table(table: &[Vec<f64>], n_configs: usize) -> DMatrix<f64> {
        let m = table.len();
        let mut mat = DMatrix::from_fn(n_configs, m, |c, j| table[j][c]);
        for j in 0..m {
            let mean = mat.column(j).mean();
            mat.column_mut(j).add_scalar_mut(-mean);
        }
        mat
    }

    #[test]
    fn bernoulli_column_mean() {
        let lspec = LatentSpec::new(vec![0.3], CorrelationLevel::None, 1).unwrap();
        let latents = sample_latent(&lspec, 100_000).unwrap();
        let mut spec = build_chaotic_spec(1, 1, 0.0, 2).unwrap();
        spec.gamma_table[0] = vec![0.75, 0.75];
        let data = sample_dataset(&spec, &latents).unwrap();
        let mean = data.s2.column(0).mean();
        assert!((0.74..=0.76).contains(&mean), "{mean}");
    }

    #[test]
    fn local_independence_within_configuration() {
        let lspec = LatentSpec::new(vec![0.5, 0.4], CorrelationLevel::Medium, 3).unwrap();
        let latents = sample_latent(&lspec, 100_000).unwrap();
        let spec = build_chaotic_spec(2, 2, 0.0, 4).unwrap();
        let data = sample_dataset(&spec, &latents).unwrap();
        let codes = latents.config_codes();
        for c in 0..4u32 {
            let rows: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == c).collect();
            let a = data.s2.column(0).gather(&rows);
            let b = data.s2.column(1).gather(&rows);
            let phi = phi_coefficient(&a, &b);
            assert!(phi.abs() < 0.03, "config {c}: {phi}");
        }
    }

    #[test]
    fn noise_predictor_carries_no_latent_information() {
        // Permutation null: MI of the noise column with a shuffled latent column.
        let lspec = LatentSpec::new(vec![0.4, 0.3], CorrelationLevel::Medium, 8).unwrap();
        let latents = sample_latent(&lspec, 12_000).unwrap();
        let spec = build_chaotic_spec(2, 10, 1.0, 9).unwrap();
        let data = sample_dataset(&spec, &latents).unwrap();
        let latent0 = latents.values.column(0);
        let noise = data.s2.column(0);
        let observed = binary_mutual_information(noise, latent0);
        let mut rng = seed::rng(10);
        let mut bits = latent0.to_u8();
        let mut null: Vec<f64> = (0..200)
            .map(|_| {
                bits.shuffle(&mut rng);
                binary_mutual_information(noise, &BitColumn::from_u8(&bits))
            })
            .collect();
        null.sort_by(|a, b| a.total_cmp(b));
        assert!(observed < null[197], "{observed} vs {}", null[197]);
    }

    #[test]
    fn noise_prevalence_matches_signal_camouflage() {
        let lspec = LatentSpec::new(vec![0.3, 0.2, 0.4], CorrelationLevel::Medium, 12).unwrap();
        let latents = sample_latent(&lspec, 4000).unwrap();
        let spec = build_chaotic_spec(3, 400, 0.5, 13).unwrap();
        let data = sample_dataset(&spec, &latents).unwrap();
        let noise: Vec<f64> = spec.noise_indices().iter().map(|&j| data.s2.column(j).mean()).collect();
        let m = crate::stats::mean(&noise);
        assert!((m - 0.5).abs() < 0.02, "{m}");
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = build_consistent_spec(2, 6, 0.5, 0.4, 3).unwrap();
        let back = GenerativeSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn dataset_is_deterministic() {
        let lspec = LatentSpec::new(vec![0.3, 0.2], CorrelationLevel::Low, 21).unwrap();
        let latents = sample_latent(&lspec, 300).unwrap();
        let spec = build_consistent_spec(2, 30, 0.5, 0.4, 22).unwrap();
        assert_eq!(
            sample_dataset(&spec, &latents).unwrap(),
            sample_dataset(&spec, &latents).unwrap()
        );
        let wrong = LatentSpec::new(vec![0.3], CorrelationLevel::Low, 21).unwrap();
        let bad = sample_latent(&wrong, 10).unwrap();
        assert!(sample_dataset(&spec, &bad).is_err());
    }
}
