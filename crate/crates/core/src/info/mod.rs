//! Information-theoretic estimators and exact small-system calculations.
//!
//! Plug-in estimators work on sampled columns; [`ExactSystem`] marginalizes
//! the full generative model for desk-scale instances (a few latent states,
//! up to a couple dozen observed predictors).

mod chernoff;
mod exact;

pub use chernoff::{chernoff_information, efficiency_rate, fano_bound, EfficiencyReport};
pub use exact::{
    conditional_entropy_exact, exact_posterior, optimal_prediction, Channel, ExactSystem,
    JointTable, PosteriorTable, Target, MAX_ENUMERATION_CELLS,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{check_len, Error, Result};
use crate::stats::plogp;

/// Shannon entropy in bits of an explicit distribution.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
    }
    Ok(dist.iter().map(|p| plogp(*p)).sum())
}

/// Plug-in mutual information (bits) between two discrete columns.
pub fn mutual_information(x: &[u32], y: &[u32]) -> Result<f64> {
    check_len(x.len(), y.len())?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let mut joint: HashMap<(u32, u32), usize> = HashMap::new();
    let mut mx: HashMap<u32, usize> = HashMap::new();
    let mut my: HashMap<u32, usize> = HashMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_default() += 1;
        *mx.entry(a).or_default() += 1;
        *my.entry(b).or_default() += 1;
    }
    let n = x.len() as f64;
    let h = |counts: &mut dyn Iterator<Item = usize>| -> f64 {
        counts.map(|c| plogp(c as f64 / n)).sum()
    };
    let hx = h(&mut mx.values().copied());
    let hy = h(&mut my.values().copied());
    let hxy = h(&mut joint.values().copied());
    Ok((hx + hy - hxy).max(0.0))
}

/// 2×2 joint counts `(n00, n01, n10, n11)` of two binary columns.
fn joint_counts(a: &BitColumn, b: &BitColumn) -> (usize, usize, usize, usize) {
    let n = a.len();
    let n11 = a.and_count(b);
    let na = a.count_ones();
    let nb = b.count_ones();
    let n10 = na - n11;
    let n01 = nb - n11;
    (n - n10 - n01 - n11, n01, n10, n11)
}

/// Plug-in mutual information (bits) of two binary columns from popcounts.
pub fn binary_mutual_information(a: &BitColumn, b: &BitColumn) -> f64 {
    let n = a.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (n00, n01, n10, n11) = joint_counts(a, b);
    let (na, nb) = ((n10 + n11) as f64, (n01 + n11) as f64);
    let cell = |nxy: usize, nx: f64, ny: f64| {
        if nxy == 0 {
            0.0
        } else {
            let nxy = nxy as f64;
            nxy / n * (nxy * n / (nx * ny)).log2()
        }
    };
    let mi = cell(n11, na, nb)
        + cell(n10, na, n - nb)
        + cell(n01, n - na, nb)
        + cell(n00, n - na, n - nb);
    mi.max(0.0)
}

/// Empirical phi coefficient; zero when either column is constant.
pub fn phi_coefficient(a: &BitColumn, b: &BitColumn) -> f64 {
    let n = a.len() as f64;
    let pa = a.count_ones() as f64 / n;
    let pb = b.count_ones() as f64 / n;
    let pab = a.and_count(b) as f64 / n;
    let denom = (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (pab - pa * pb) / denom
    }
}

/// Phi between a latent state and a predictor implied by their link strength:
/// `(γ₁ − γ₀) sqrt(p(1−p) / (p_j(1−p_j)))`, `p_j = γ₁p + γ₀(1−p)`.
pub fn phi_latent_predictor(p_latent: f64, gamma1: f64, gamma0: f64) -> Result<f64> {
    for (name, v) in [("p", p_latent), ("gamma1", gamma1), ("gamma0", gamma0)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidSpec(format!("{name} = {v} outside (0, 1)")));
        }
    }
    let pj = gamma1 * p_latent + gamma0 * (1.0 - p_latent);
    if pj <= 0.0 || pj >= 1.0 {
        return Err(Error::Degenerate(format!("predictor prevalence {pj}")));
    }
    Ok((gamma1 - gamma0) * (p_latent * (1.0 - p_latent) / (pj * (1.0 - pj))).sqrt())
}

/// Maximum number of columns for the exact joint-entropy path.
pub const MAX_EXACT_TC_COLUMNS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TcMode {
    /// Plug-in joint entropy over all observed row patterns.
    Exact,
    /// Chow–Liu lower bound: the maximum spanning tree of pairwise MI.
    PairwiseLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalCorrelation {
    pub bits: f64,
    pub sum_marginal_bits: f64,
    pub relative_redundancy: f64,
    pub mode: TcMode,
}

/// Total correlation `Σ H(X_j) − H(X_1..X_m)` and its share of `Σ H(X_j)`.
pub fn total_correlation(data: &BinaryMatrix, mode: TcMode) -> Result<TotalCorrelation> {
    let n = data.rows() as f64;
    let sum_marginal: f64 = data
        .columns()
        .iter()
        .map(|c| {
            let p = c.count_ones() as f64 / n;
            plogp(p) + plogp(1.0 - p)
        })
        .sum();
    let bits = match mode {
        TcMode::Exact => {
            if data.cols() > MAX_EXACT_TC_COLUMNS {
                return Err(Error::TooLarge {
                    cells: 1u128 << data.cols().min(127),
                    limit: 1u128 << MAX_EXACT_TC_COLUMNS,
                });
            }
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for code in data.row_codes()? {
                *counts.entry(code).or_default() += 1;
            }
            let joint: f64 = counts.values().map(|&c| plogp(c as f64 / n)).sum();
            sum_marginal - joint
        }
        TcMode::PairwiseLowerBound => chow_liu_weight(data),
    };
    let bits = bits.max(0.0);
    Ok(TotalCorrelation {
        bits,
        sum_marginal_bits: sum_marginal,
        relative_redundancy: if sum_marginal > 0.0 { bits / sum_marginal } else { 0.0 },
        mode,
    })
}

/// Weight of the maximum spanning tree over pairwise MI (Prim's algorithm).
fn chow_liu_weight(data: &BinaryMatrix) -> f64 {
    let m = data.cols();
    if m < 2 {
        return 0.0;
    }
    let mut in_tree = vec![false; m];
    let mut best = vec![f64::NEG_INFINITY; m];
    in_tree[0] = true;
    for j in 1..m {
        best[j] = binary_mutual_information(data.column(0), data.column(j));
    }
    let mut total = 0.0;
    for _ in 1..m {
        let (next, w) = (0..m)
            .filter(|&j| !in_tree[j])
            .map(|j| (j, best[j]))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        in_tree[next] = true;
        total += w;
        for j in 0..m {
            if !in_tree[j] {
                let mi = binary_mutual_information(data.column(next), data.column(j));
                if mi > best[j] {
                    best[j] = mi;
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(entropy(&[1.0]).unwrap(), 0.0);
        // -0.9 log2 0.9 - 0.1 log2 0.1
        assert!((entropy(&[0.9, 0.1]).unwrap() - 0.468_995_593_589_281).abs() < 1e-4);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    fn coins(n: usize, p: f64, seed: u64) -> Vec<u8> {
        let mut rng = seed::rng(seed);
        (0..n).map(|_| u8::from(rng.gen::<f64>() < p)).collect()
    }

    #[test]
    fn mutual_information_examples() {
        let x = coins(10_000, 0.5, 1);
        let xc = BitColumn::from_u8(&x);
        let self_mi = binary_mutual_information(&xc, &xc);
        assert!((self_mi - 1.0).abs() < 0.01, "{self_mi}");

        let y = BitColumn::from_u8(&coins(10_000, 0.5, 2));
        assert!(binary_mutual_information(&xc, &y) < 0.01);

        let as_u32 = |v: &[u8]| v.iter().map(|&b| b as u32).collect::<Vec<_>>();
        let generic = mutual_information(&as_u32(&x), &as_u32(&y.to_u8())).unwrap();
        assert!((generic - binary_mutual_information(&xc, &y)).abs() < 1e-12);
        assert!(mutual_information(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn mutual_information_of_sampled_table() {
        // Exact MI of [[0.45, 0.05], [0.05, 0.45]] is 1 - H_b(0.1).
        let exact = 1.0 - crate::stats::binary_entropy(0.1);
        let mut rng = seed::rng(3);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..100_000 {
            let x = rng.gen::<bool>();
            let same = rng.gen::<f64>() < 0.9;
            a.push(x);
            b.push(if same { x } else { !x });
        }
        let mi = binary_mutual_information(&BitColumn::from_bools(a), &BitColumn::from_bools(b));
        assert!((mi - exact).abs() < 0.02, "{mi} vs {exact}");
        assert!((exact - 0.531).abs() < 1e-3);
    }

    #[test]
    fn total_correlation_examples() {
        let a = coins(20_000, 0.5, 4);
        let b = coins(20_000, 0.5, 5);
        let indep = BinaryMatrix::from_columns(
            20_000,
            vec![BitColumn::from_u8(&a), BitColumn::from_u8(&b)],
        )
        .unwrap();
        assert!(total_correlation(&indep, TcMode::Exact).unwrap().bits < 0.01);

        let dup = BinaryMatrix::from_columns(20_000, vec![BitColumn::from_u8(&a); 2]).unwrap();
        assert!((total_correlation(&dup, TcMode::Exact).unwrap().bits - 1.0).abs() < 0.01);

        let three = BinaryMatrix::from_columns(20_000, vec![BitColumn::from_u8(&a); 3]).unwrap();
        let tc = total_correlation(&three, TcMode::Exact).unwrap();
        assert!((tc.bits - 2.0).abs() < 0.01);
        assert!((tc.relative_redundancy - 2.0 / 3.0).abs() < 0.01);
        let lb = total_correlation(&three, TcMode::PairwiseLowerBound).unwrap();
        assert!(lb.bits <= tc.bits + 1e-9);
        assert!((lb.bits - 2.0).abs() < 0.01);
    }

    #[test]
    fn exact_mode_rejects_wide_input() {
        let wide = BinaryMatrix::from_columns(4, vec![BitColumn::zeros(4); 21]).unwrap();
        assert!(matches!(
            total_correlation(&wide, TcMode::Exact),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn phi_formula_examples() {
        assert_eq!(phi_latent_predictor(0.3, 0.6, 0.6).unwrap(), 0.0);
        assert!((phi_latent_predictor(0.5, 0.9, 0.1).unwrap() - 0.8).abs() < 1e-12);
        assert!(phi_latent_predictor(0.0, 0.9, 0.1).is_err());
    }

    #[test]
    fn phi_formula_matches_simulation() {
        let (p, g1, g0) = (0.3, 0.8, 0.35);
        let mut rng = seed::rng(6);
        let mut s = Vec::with_capacity(1_000_000);
        let mut x = Vec::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            let latent = rng.gen::<f64>() < p;
            let g = if latent { g1 } else { g0 };
            s.push(latent);
            x.push(rng.gen::<f64>() < g);
        }
        let phi = phi_coefficient(&BitColumn::from_bools(s), &BitColumn::from_bools(x));
        let formula = phi_latent_predictor(p, g1, g0).unwrap();
        assert!((phi - formula).abs() < 0.005, "{phi} vs {formula}");
    }
}
