//! Exact desk-scale witnesses: breadth against depth, the prevalence floor,
//! systematic-error asymptotics and the local-independence equivalence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{efficiency_rate, Channel, ExactSystem, JointTable, Target};
use crate::observation::SergSpec;
use crate::seed;
use crate::stats::binary_entropy;

/// Default size of the fixed predictor set re-measured by the depth strategy.
pub const DEPTH_SET_SIZE: usize = 2;
const MAX_REPEAT_CELLS: u128 = 1 << 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub theorem: String,
    pub instance: String,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleVerdict {
    /// Passes when `measured ≤ bound + tolerance`.
    pub fn at_most(theorem: &str, instance: &str, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self {
            theorem: theorem.into(),
            instance: instance.into(),
            measured,
            bound,
            tolerance,
            pass: measured <= bound + tolerance,
        }
    }
}

/// One latent state with `m` identical-strength predictors.
pub fn single_state_system(p: f64, gamma1: f64, gamma0: f64, m: usize, fidelity: f64) -> Result<ExactSystem> {
    ExactSystem::new(
        vec![1.0 - p, p],
        vec![vec![gamma0, gamma1]; m],
        vec![0.2, 0.8],
        vec![Channel::new(fidelity, fidelity); m],
        None,
    )
}

/// `H(S⁽¹⁾ | counts of ones in n repeated readings of each listed predictor)`.
/// Counts are sufficient for the true values, so this equals conditioning on
/// every individual reading.
pub fn repeated_reading_entropy(system: &ExactSystem, columns: &[usize], repeats: usize) -> Result<f64> {
    if system.serg.is_some() {
        return Err(Error::InvalidSpec("repeated readings assume independent channels".into()));
    }
    let configs = system.realized();
    let base = repeats + 1;
    let patterns = (base as u128).checked_pow(columns.len() as u32).unwrap_or(u128::MAX);
    if patterns.saturating_mul(configs.len() as u128) > MAX_REPEAT_CELLS {
        return Err(Error::TooLarge {
            cells: patterns.saturating_mul(configs.len() as u128),
            limit: MAX_REPEAT_CELLS,
        });
    }
    let binom = |n: usize, c: usize, q: f64| -> f64 {
        let mut coef = 1.0;
        for i in 0..c {
            coef = coef * (n - i) as f64 / (i + 1) as f64;
        }
        coef * q.powi(c as i32) * (1.0 - q).powi((n - c) as i32)
    };
    // count_lik[p][t][c] = P(count c | s_p) for the t-th listed predictor
    let count_lik: Vec<Vec<Vec<f64>>> = configs
        .iter()
        .map(|&code| {
            columns
                .iter()
                .map(|&j| {
                    let g = system.gamma[j][code];
                    let ch = system.channels[j];
                    (0..base)
                        .map(|c| g * binom(repeats, c, ch.alpha) + (1.0 - g) * binom(repeats, c, 1.0 - ch.beta))
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut h_joint = 0.0;
    let mut h_obs = 0.0;
    let n_patterns = patterns as usize;
    for g in 0..n_patterns {
        let mut total = 0.0;
        for (pi, &code) in configs.iter().enumerate() {
            let mut v = system.prior[code];
            let mut rest = g;
            for t in 0..columns.len() {
                v *= count_lik[pi][t][rest % base];
                rest /= base;
            }
            h_joint += crate::stats::plogp(v);
            total += v;
        }
        h_obs += crate::stats::plogp(total);
    }
    Ok((h_joint - h_obs).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreadthDepthCurves {
    /// `H(S⁽¹⁾ | first m observed predictors)` for `m = 1..=m_max`.
    pub breadth: Vec<f64>,
    /// `H(S⁽¹⁾ | n readings of the depth set)` for `n = 1..=n_repeats_max`.
    pub depth: Vec<f64>,
    pub depth_set: Vec<usize>,
    /// `H(S⁽¹⁾ | true values of the depth set)`.
    pub depth_floor: f64,
}

pub fn breadth_vs_depth_curves(
    system: &ExactSystem,
    m_max: usize,
    depth_set: &[usize],
    n_repeats_max: usize,
) -> Result<BreadthDepthCurves> {
    if m_max > system.m() {
        return Err(Error::DimensionMismatch {
            expected: system.m(),
            found: m_max,
        });
    }
    let breadth = (1..=m_max)
        .map(|m| {
            let cols: Vec<usize> = (0..m).collect();
            Ok(JointTable::build(system, &cols)?.h_latent_given_obs())
        })
        .collect::<Result<Vec<_>>>()?;
    let depth = (1..=n_repeats_max)
        .map(|n| repeated_reading_entropy(system, depth_set, n))
        .collect::<Result<Vec<_>>>()?;
    let depth_floor = crate::info::conditional_entropy_exact(&system.perfect_observation(), Target::Latent, depth_set)?;
    Ok(BreadthDepthCurves {
        breadth,
        depth,
        depth_set: depth_set.to_vec(),
        depth_floor,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub m: usize,
    pub configs: Vec<usize>,
    pub prior: Vec<f64>,
    /// `P(G_a)`: probability the MAP estimate is configuration `a`.
    pub region_mass: Vec<f64>,
    pub max_gap: f64,
    /// Largest `P(G_a | s_b)` with `a ≠ b`.
    pub max_impurity: f64,
}

/// MAP-region masses against configuration prevalences over a sweep of `m`.
pub fn prevalence_floor(system: &ExactSystem, m_values: &[usize]) -> Result<Vec<PrevalenceRow>> {
    m_values
        .iter()
        .map(|&m| {
            let cols: Vec<usize> = (0..m).collect();
            let table = JointTable::build(system, &cols)?;
            let (mass, given) = table.map_regions();
            let prior: Vec<f64> = table.configs.iter().map(|&c| system.prior[c]).collect();
            let max_gap = mass.iter().zip(&prior).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let mut max_impurity: f64 = 0.0;
            for (a, row) in given.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    if a != b {
                        max_impurity = max_impurity.max(*v);
                    }
                }
            }
            Ok(PrevalenceRow {
                m,
                configs: table.configs.clone(),
                prior,
                region_mass: mass,
                max_gap,
                max_impurity,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SergScenario {
    /// A fixed pair of predictors is affected regardless of `m`.
    Localized,
    /// Every predictor is affected.
    Pervasive,
}

/// Strong single-state instance with one systematic regime.
/// `regime` is `None` for regimes indistinguishable from the baseline channel.
pub fn serg_instance(
    scenario: SergScenario,
    m: usize,
    pi: f64,
    regime: Option<(f64, f64)>,
) -> Result<ExactSystem> {
    let mut sys = single_state_system(0.4, 0.95, 0.05, m, 0.95)?;
    let affected = match scenario {
        SergScenario::Localized => (0..m.min(2)).collect(),
        SergScenario::Pervasive => (0..m).collect(),
    };
    let (alpha_c, beta_c) = regime.unwrap_or((0.95, 0.95));
    sys.serg = Some(SergSpec {
        pi,
        affected,
        alpha_c,
        beta_c,
    });
    sys.validate()?;
    Ok(sys)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SergRow {
    pub m: usize,
    pub h_latent: f64,
    pub h_regime_given_obs: f64,
    pub penalty: f64,
}

/// Residual uncertainty trajectory over the first `m` predictors.
pub fn serg_asymptotics(system: &ExactSystem, m_values: &[usize]) -> Result<Vec<SergRow>> {
    m_values
        .iter()
        .map(|&m| {
            let cols: Vec<usize> = (0..m).collect();
            let table = JointTable::build(system, &cols)?;
            let h_lg = table.h_regime_given_obs();
            Ok(SergRow {
                m,
                h_latent: table.h_latent_given_obs(),
                h_regime_given_obs: h_lg,
                penalty: (h_lg - table.h_regime_given_latent_obs()).max(0.0),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub verdict: OracleVerdict,
    pub original_configs: usize,
    pub expanded_configs: usize,
}

/// A system with a direct `X₁ → X₂` link is rebuilt with a pseudo-state `Z`
/// mirroring `X₁`; the two must induce identical `P(S⁽²⁾ | S⁽¹⁾)`.
/// `independent_link` makes `X₂` ignore `X₁`.
pub fn li_equivalence_check(k: usize, seed: u64, independent_link: bool) -> Result<EquivalenceReport> {
    if !(1..=2).contains(&k) {
        return Err(Error::InvalidSpec(format!("k = {k} outside 1..=2")));
    }
    const M: usize = 4;
    let n_configs = 1usize << k;
    let mut rng = seed::rng(seed);
    let mut draw = || rng.gen_range(0.05..0.95);
    let g1: Vec<f64> = (0..n_configs).map(|_| draw()).collect();
    let g2: Vec<[f64; 2]> = (0..n_configs)
        .map(|_| {
            let a = draw();
            [a, if independent_link { a } else { draw() }]
        })
        .collect();
    let rest: Vec<[f64; 2]> = (0..n_configs).map(|_| [draw(), draw()]).collect();
    let bern = |p: f64, x: usize| if x == 1 { p } else { 1.0 - p };

    let mut worst: f64 = 0.0;
    for s in 0..n_configs {
        for pattern in 0..(1usize << M) {
            let x: Vec<usize> = (0..M).map(|j| pattern >> j & 1).collect();
            let tail = bern(rest[s][0], x[2]) * bern(rest[s][1], x[3]);
            let direct = bern(g1[s], x[0]) * bern(g2[s][x[0]], x[1]) * tail;
            // Expanded state (s, z): every predictor is independent given it.
            let mut expanded = 0.0;
            for z in 0..2 {
                let p_z = bern(g1[s], z);
                let p_x1 = if x[0] == z { 1.0 } else { 0.0 };
                expanded += p_z * p_x1 * bern(g2[s][z], x[1]) * tail;
            }
            worst = worst.max((direct - expanded).abs());
        }
    }
    Ok(EquivalenceReport {
        verdict: OracleVerdict::at_most(
            "li-equivalence",
            &format!("k={k}, m={M}, seed={seed}, independent_link={independent_link}"),
            worst,
            0.0,
            1e-12,
        ),
        original_configs: n_configs,
        expanded_configs: 2 * n_configs,
    })
}

/// The full verdict suite at its documented desk-scale settings.
pub fn run_all(seed: u64) -> Result<Vec<OracleVerdict>> {
    let mut out = Vec::new();
    let strong = single_state_system(0.3, 0.7, 0.3, 12, 0.9)?;
    let depth_set: Vec<usize> = (0..DEPTH_SET_SIZE).collect();
    let curves = breadth_vs_depth_curves(&strong, 12, &depth_set, 12)?;
    let last_depth = *curves.depth.last().expect("repeats");
    out.push(OracleVerdict::at_most(
        "depth-floor",
        "k=1, gamma 0.3/0.7, fidelity 0.9, 12 repeats of 2 predictors",
        last_depth - curves.depth_floor,
        0.02,
        0.0,
    ));
    out.push(OracleVerdict::at_most(
        "breadth-beats-depth",
        "k=1, gamma 0.3/0.7, fidelity 0.9, m=12",
        *curves.breadth.last().expect("breadth"),
        curves.depth_floor,
        0.0,
    ));

    let prevalence = single_state_system(0.3, 0.85, 0.15, 12, 0.95)?;
    let rows = prevalence_floor(&prevalence, &[12])?;
    out.push(OracleVerdict::at_most(
        "prevalence-floor",
        "k=1, P(s)=0.3, gamma 0.15/0.85, fidelity 0.95, m=12",
        rows[0].max_gap,
        0.02,
        0.0,
    ));
    out.push(OracleVerdict::at_most(
        "map-region-purity",
        "k=1, P(s)=0.3, gamma 0.15/0.85, fidelity 0.95, m=12",
        rows[0].max_impurity,
        0.02,
        0.0,
    ));

    let localized = serg_instance(SergScenario::Localized, 12, 0.5, Some((0.6, 0.6)))?;
    let traj = serg_asymptotics(&localized, &[12])?;
    out.push(OracleVerdict::at_most(
        "serg-localized",
        "|A|=2, pi=0.5, regime channel 0.6, m=12",
        traj[0].h_latent,
        0.05,
        0.0,
    ));
    let pervasive = serg_instance(SergScenario::Pervasive, 12, 0.5, None)?;
    let traj = serg_asymptotics(&pervasive, &[12])?;
    out.push(OracleVerdict::at_most(
        "serg-pervasive-indistinguishable",
        "A=all, pi=0.5, regimes identical, m=12: |H(L|S') - H_b(pi)|",
        (traj[0].h_regime_given_obs - binary_entropy(0.5)).abs(),
        0.0,
        1e-12,
    ));

    let eq_worst = (0..100)
        .map(|i| li_equivalence_check(2, seed::derive(seed, i), false).map(|r| r.verdict.measured))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.push(OracleVerdict::at_most(
        "li-equivalence",
        "k=2, m=4, 100 random instances",
        eq_worst,
        0.0,
        1e-12,
    ));

    let chernoff_sys = single_state_system(0.5, 0.8, 0.2, 12, 0.9)?;
    for m in [4, 8, 12] {
        let r = efficiency_rate(&chernoff_sys, m, 20_000, seed::derive(seed, 1000 + m as u64))?;
        out.push(OracleVerdict::at_most(
            "chernoff-union-bound",
            &format!("k=1, gamma 0.2/0.8, fidelity 0.9, m={m}"),
            r.empirical_error,
            r.union_bound,
            0.0,
        ));
    }

    let dpi_sys = single_state_system(0.4, 0.75, 0.25, 8, 0.9)?;
    let cols: Vec<usize> = (0..8).collect();
    let table = JointTable::build(&dpi_sys, &cols)?;
    let floor: f64 = (0..2)
        .map(|c| dpi_sys.prior[c] * binary_entropy(dpi_sys.delta[c]))
        .sum();
    out.push(OracleVerdict::at_most(
        "data-processing",
        "k=1, m=8: H(Y|S1) <= H(Y|S')",
        floor,
        table.h_outcome_given_obs(),
        0.0,
    ));
    out.push(OracleVerdict::at_most(
        "outcome-redundancy",
        "k=1, m=8: I(Y;S'|S1)",
        table.outcome_cmi_given_latent().abs(),
        0.0,
        1e-12,
    ));
    Ok(out)
}
