use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::exact::{ExactSystem, JointTable, MAX_ENUMERATION_CELLS};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::binary_entropy;

const GOLDEN_TOL: f64 = 1e-10;

fn bernoulli_log_affinity(p: f64, q: f64, lambda: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 || b == 0.0 {
            0.0
        } else {
            a.powf(lambda) * b.powf(1.0 - lambda)
        }
    };
    (term(p, q) + term(1.0 - p, 1.0 - q)).ln()
}

/// Chernoff information (nats) between Bernoulli(p) and Bernoulli(q).
pub fn chernoff_information(p: f64, q: f64) -> f64 {
    if p == q {
        return 0.0;
    }
    let f = |l: f64| bernoulli_log_affinity(p, q, l);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (-f((a + b) / 2.0)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub m: usize,
    /// Realized configuration codes indexing the pairwise matrix.
    pub configs: Vec<usize>,
    /// Average per-predictor Chernoff information (nats) for each pair.
    pub pairwise: Vec<Vec<f64>>,
    pub rate: f64,
    pub error_bound: f64,
    pub union_bound: f64,
    pub trials: usize,
    pub empirical_error: f64,
    /// `1 − Σ_g max_p P(s_p, g)` when the pattern space is enumerable.
    pub exact_error: Option<f64>,
    /// Exact `H(S⁽¹⁾ | S′⁽²⁾)` when enumerable.
    pub conditional_entropy: Option<f64>,
    pub fano_bound: f64,
}

impl EfficiencyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Pairwise matrix as CSV with configuration codes as header and first column.
    pub fn write_pairwise_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "config")?;
        for c in &self.configs {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for (c, row) in self.configs.iter().zip(&self.pairwise) {
            write!(w, "{c}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `H_b(P_e) + P_e log₂(K − 1)`.
pub fn fano_bound(pe: f64, k: usize) -> f64 {
    let pe = pe.clamp(0.0, 1.0);
    binary_entropy(pe) + if k > 1 { pe * ((k - 1) as f64).log2() } else { 0.0 }
}

/// Chernoff rate, bounds, and MAP decoding error for the first `m_prefix`
/// predictors of a system without systematic error regimes.
pub fn efficiency_rate(
    system: &ExactSystem,
    m_prefix: usize,
    trials: usize,
    seed: u64,
) -> Result<EfficiencyReport> {
    if system.serg.is_some() {
        return Err(Error::InvalidSpec(
            "efficiency rate assumes independent observation channels".into(),
        ));
    }
    if m_prefix > system.m() {
        return Err(Error::DimensionMismatch {
            expected: system.m(),
            found: m_prefix,
        });
    }
    let configs = system.realized();
    let nk = configs.len();
    let q: Vec<Vec<f64>> = configs
        .iter()
        .map(|&c| (0..m_prefix).map(|j| system.observed_one(j, c, 0)).collect())
        .collect();

    let mut pairwise = vec![vec![0.0; nk]; nk];
    let mut rate = f64::INFINITY;
    for a in 0..nk {
        for b in (a + 1)..nk {
            let avg = if m_prefix == 0 {
                0.0
            } else {
                (0..m_prefix)
                    .map(|j| chernoff_information(q[a][j], q[b][j]))
                    .sum::<f64>()
                    / m_prefix as f64
            };
            pairwise[a][b] = avg;
            pairwise[b][a] = avg;
            rate = rate.min(avg);
        }
    }
    if !rate.is_finite() {
        rate = 0.0;
    }
    let mf = m_prefix as f64;

    let log_q: Vec<Vec<(f64, f64)>> = q
        .iter()
        .map(|row| row.iter().map(|&v| (v.ln(), (1.0 - v).ln())).collect())
        .collect();
    let log_prior: Vec<f64> = configs.iter().map(|&c| system.prior[c].ln()).collect();
    let cumulative: Vec<f64> = configs
        .iter()
        .scan(0.0, |acc, &c| {
            *acc += system.prior[c];
            Some(*acc)
        })
        .collect();
    let mut rng = seed::rng(seed::derive(seed, seed::stream::DECODE));
    let mut errors = 0usize;
    let mut x = vec![false; m_prefix];
    for _ in 0..trials {
        let u: f64 = rng.gen::<f64>() * cumulative[nk - 1];
        let truth = cumulative.iter().position(|&c| u < c).unwrap_or(nk - 1);
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = rng.gen::<f64>() < q[truth][j];
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for p in 0..nk {
            let mut s = log_prior[p];
            for (j, &xj) in x.iter().enumerate() {
                s += if xj { log_q[p][j].0 } else { log_q[p][j].1 };
            }
            if s > best_score {
                best_score = s;
                best = p;
            }
        }
        errors += usize::from(best != truth);
    }
    let empirical_error = if trials == 0 {
        f64::NAN
    } else {
        errors as f64 / trials as f64
    };

    let columns: Vec<usize> = (0..m_prefix).collect();
    let cells = (1u128 << m_prefix.min(127)) * nk as u128;
    let (exact_error, conditional_entropy) = if m_prefix <= 40 && cells <= MAX_ENUMERATION_CELLS {
        let table = JointTable::build(system, &columns)?;
        (Some(table.map_error()), Some(table.h_latent_given_obs()))
    } else {
        (None, None)
    };

    Ok(EfficiencyReport {
        m: m_prefix,
        configs,
        pairwise,
        rate,
        error_bound: (-mf * rate).exp(),
        union_bound: (nk * nk) as f64 * (-mf * rate).exp(),
        trials,
        empirical_error,
        fano_bound: fano_bound(exact_error.unwrap_or(empirical_error), nk),
        exact_error,
        conditional_entropy,
    })
}
