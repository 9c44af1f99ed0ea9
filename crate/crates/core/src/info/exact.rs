use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generative::GenerativeSpec;
use crate::observation::{ObservationSpec, SergSpec};
use crate::stats::{log_sum_exp, plogp};

/// Upper bound on `patterns × configurations × regimes` for exact enumeration.
pub const MAX_ENUMERATION_CELLS: u128 = 1 << 24;

/// Observation channel: sensitivity `alpha = P(X'=1|X=1)`, specificity
/// `beta = P(X'=0|X=0)`. Exact calculations allow the closed interval so that
/// perfect and fully inverted readings can be represented.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub alpha: f64,
    pub beta: f64,
}

impl Channel {
    pub const PERFECT: Channel = Channel {
        alpha: 1.0,
        beta: 1.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    /// `P(X' = 1)` when `P(X = 1) = gamma`.
    #[inline]
    pub fn observed_one(&self, gamma: f64) -> f64 {
        gamma * self.alpha + (1.0 - gamma) * (1.0 - self.beta)
    }
}

/// A fully specified small generative system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSystem {
    /// Probability of each configuration code (zeros allowed).
    pub prior: Vec<f64>,
    /// `gamma[j][code] = P(X_j = 1 | s_code)`.
    pub gamma: Vec<Vec<f64>>,
    /// `delta[code] = P(Y = 1 | s_code)`.
    pub delta: Vec<f64>,
    pub channels: Vec<Channel>,
    pub serg: Option<SergSpec>,
}

impl ExactSystem {
    pub fn new(
        prior: Vec<f64>,
        gamma: Vec<Vec<f64>>,
        delta: Vec<f64>,
        channels: Vec<Channel>,
        serg: Option<SergSpec>,
    ) -> Result<Self> {
        let system = Self {
            prior,
            gamma,
            delta,
            channels,
            serg,
        };
        system.validate()?;
        Ok(system)
    }

    /// Combine generative and observation specs with a configuration prior.
    /// Noise predictors enter with their configuration-free mean probability.
    pub fn from_specs(gen: &GenerativeSpec, obs: &ObservationSpec, prior: &[f64]) -> Result<Self> {
        check_len(gen.n_configs(), prior.len())?;
        check_len(gen.m(), obs.alphas.len())?;
        if obs.serg.len() > 1 {
            return Err(Error::InvalidSpec(
                "exact enumeration supports a single systematic error source".into(),
            ));
        }
        let gamma = (0..gen.m())
            .map(|j| (0..gen.n_configs()).map(|c| gen.effective_gamma(j, c)).collect())
            .collect();
        let channels = obs
            .alphas
            .iter()
            .zip(&obs.betas)
            .map(|(&a, &b)| Channel::new(a, b))
            .collect();
        Self::new(
            prior.to_vec(),
            gamma,
            gen.delta_table.clone(),
            channels,
            obs.serg.first().cloned(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.prior.len();
        let total: f64 = self.prior.iter().sum();
        if self.prior.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "configuration prior sums to {total}"
            )));
        }
        check_len(k, self.delta.len())?;
        check_len(self.gamma.len(), self.channels.len())?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        for row in &self.gamma {
            check_len(k, row.len())?;
            if !row.iter().all(|&g| unit(g)) {
                return Err(Error::InvalidSpec("gamma outside [0, 1]".into()));
            }
        }
        if !self.delta.iter().all(|&d| unit(d)) {
            return Err(Error::InvalidSpec("delta outside [0, 1]".into()));
        }
        if !self.channels.iter().all(|c| unit(c.alpha) && unit(c.beta)) {
            return Err(Error::InvalidSpec("channel outside [0, 1]".into()));
        }
        if let Some(serg) = &self.serg {
            serg.validate(self.m())?;
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_configs(&self) -> usize {
        self.prior.len()
    }

    /// Codes with nonzero prior.
    pub fn realized(&self) -> Vec<usize> {
        (0..self.n_configs()).filter(|&c| self.prior[c] > 0.0).collect()
    }

    /// Regime weights `[P(L=0), P(L=1)]`, or `[1]` without a systematic source.
    pub fn regime_weights(&self) -> Vec<f64> {
        match &self.serg {
            Some(s) => vec![1.0 - s.pi, s.pi],
            None => vec![1.0],
        }
    }

    /// `P(X'_j = 1 | s_code, L = regime)`.
    pub fn observed_one(&self, j: usize, code: usize, regime: usize) -> f64 {
        let channel = match &self.serg {
            Some(s) if regime == 1 && s.affected.contains(&j) => Channel::new(s.alpha_c, s.beta_c),
            _ => self.channels[j],
        };
        channel.observed_one(self.gamma[j][code])
    }

    /// The same system observed without error and without regimes.
    pub fn perfect_observation(&self) -> ExactSystem {
        ExactSystem {
            channels: vec![Channel::PERFECT; self.m()],
            serg: None,
            ..self.clone()
        }
    }

    /// Restrict to the listed predictors, in order.
    pub fn restrict(&self, columns: &[usize]) -> Result<ExactSystem> {
        let mut serg = self.serg.clone();
        if let Some(s) = serg.as_mut() {
            s.affected = columns
                .iter()
                .enumerate()
                .filter(|(_, j)| s.affected.contains(j))
                .map(|(i, _)| i)
                .collect();
        }
        for &j in columns {
            if j >= self.m() {
                return Err(Error::DimensionMismatch {
                    expected: self.m(),
                    found: j,
                });
            }
        }
        ExactSystem::new(
            self.prior.clone(),
            columns.iter().map(|&j| self.gamma[j].clone()).collect(),
            self.delta.clone(),
            columns.iter().map(|&j| self.channels[j]).collect(),
            serg,
        )
    }
}

/// Joint probabilities `P(s_p, L = l, G = g)` over every observed pattern `g`
/// of the chosen predictors (bit `t` of `g` is the `t`-th listed predictor).
#[derive(Clone, Debug)]
pub struct JointTable {
    pub configs: Vec<usize>,
    pub regimes: usize,
    pub n_patterns: usize,
    delta: Vec<f64>,
    cells: Vec<f64>,
}

impl JointTable {
    pub fn build(system: &ExactSystem, columns: &[usize]) -> Result<Self> {
        let configs = system.realized();
        let weights = system.regime_weights();
        let mc = columns.len();
        let cells_needed = (1u128 << mc.min(127)) * configs.len() as u128 * weights.len() as u128;
        if mc > 40 || cells_needed > MAX_ENUMERATION_CELLS {
            return Err(Error::TooLarge {
                cells: cells_needed,
                limit: MAX_ENUMERATION_CELLS,
            });
        }
        for &j in columns {
            if j >= system.m() {
                return Err(Error::DimensionMismatch {
                    expected: system.m(),
                    found: j,
                });
            }
        }
        let n_patterns = 1usize << mc;
        let (nk, nr) = (configs.len(), weights.len());
        let mut cells = vec![0.0; n_patterns * nk * nr];
        let mut buf = Vec::with_capacity(n_patterns);
        for (pi, &code) in configs.iter().enumerate() {
            for (l, w) in weights.iter().enumerate() {
                buf.clear();
                buf.push(system.prior[code] * w);
                for (t, &j) in columns.iter().enumerate() {
                    let q = system.observed_one(j, code, l);
                    let half = 1usize << t;
                    buf.extend_from_within(..half);
                    for g in 0..half {
                        buf[g + half] *= q;
                        buf[g] *= 1.0 - q;
                    }
                }
                for (g, v) in buf.iter().enumerate() {
                    cells[(g * nk + pi) * nr + l] = *v;
                }
            }
        }
        Ok(Self {
            delta: configs.iter().map(|&c| system.delta[c]).collect(),
            configs,
            regimes: nr,
            n_patterns,
            cells,
        })
    }

    #[inline]
    fn cell(&self, g: usize, p: usize, l: usize) -> f64 {
        self.cells[(g * self.configs.len() + p) * self.regimes + l]
    }

    fn p_config_pattern(&self, g: usize, p: usize) -> f64 {
        (0..self.regimes).map(|l| self.cell(g, p, l)).sum()
    }

    fn p_pattern(&self, g: usize) -> f64 {
        (0..self.configs.len()).map(|p| self.p_config_pattern(g, p)).sum()
    }

    fn h_pattern(&self) -> f64 {
        (0..self.n_patterns).map(|g| plogp(self.p_pattern(g))).sum()
    }

    fn h_config_pattern(&self) -> f64 {
        (0..self.n_patterns)
            .flat_map(|g| (0..self.configs.len()).map(move |p| (g, p)))
            .map(|(g, p)| plogp(self.p_config_pattern(g, p)))
            .sum()
    }

    fn h_regime_pattern(&self) -> f64 {
        (0..self.n_patterns)
            .flat_map(|g| (0..self.regimes).map(move |l| (g, l)))
            .map(|(g, l)| plogp((0..self.configs.len()).map(|p| self.cell(g, p, l)).sum()))
            .sum()
    }

    fn h_all(&self) -> f64 {
        self.cells.iter().map(|v| plogp(*v)).sum()
    }

    /// `H(S⁽¹⁾ | G)`.
    pub fn h_latent_given_obs(&self) -> f64 {
        (self.h_config_pattern() - self.h_pattern()).max(0.0)
    }

    /// `H(S⁽¹⁾ | G, L)`.
    pub fn h_latent_given_obs_regime(&self) -> f64 {
        (self.h_all() - self.h_regime_pattern()).max(0.0)
    }

    /// `H(L | G)`.
    pub fn h_regime_given_obs(&self) -> f64 {
        (self.h_regime_pattern() - self.h_pattern()).max(0.0)
    }

    /// `H(L | S⁽¹⁾, G)`.
    pub fn h_regime_given_latent_obs(&self) -> f64 {
        (self.h_all() - self.h_config_pattern()).max(0.0)
    }

    /// `H(S⁽¹⁾ | G, L = l)`, computed within the regime's own slice.
    pub fn h_latent_given_obs_in_regime(&self, l: usize) -> f64 {
        let pl: f64 = (0..self.n_patterns)
            .flat_map(|g| (0..self.configs.len()).map(move |p| (g, p)))
            .map(|(g, p)| self.cell(g, p, l))
            .sum();
        if pl <= 0.0 {
            return 0.0;
        }
        let mut h = 0.0;
        for g in 0..self.n_patterns {
            let pg: f64 = (0..self.configs.len()).map(|p| self.cell(g, p, l)).sum::<f64>() / pl;
            h -= plogp(pg);
            for p in 0..self.configs.len() {
                h += plogp(self.cell(g, p, l) / pl);
            }
        }
        h.max(0.0)
    }

    /// `P(Y = 1, G = g)` for each pattern.
    fn outcome_joint(&self, g: usize) -> (f64, f64) {
        let mut y1 = 0.0;
        let mut total = 0.0;
        for p in 0..self.configs.len() {
            let v = self.p_config_pattern(g, p);
            y1 += v * self.delta[p];
            total += v;
        }
        (y1, total)
    }

    /// `H(Y | G)`.
    pub fn h_outcome_given_obs(&self) -> f64 {
        let mut h = 0.0;
        for g in 0..self.n_patterns {
            let (y1, total) = self.outcome_joint(g);
            h += plogp(y1) + plogp(total - y1) - plogp(total);
        }
        h.max(0.0)
    }

    /// `I(Y; G | S⁽¹⁾) = H(Y,S) + H(S,G) − H(S) − H(Y,S,G)`, each term from
    /// the explicit three-way joint.
    pub fn outcome_cmi_given_latent(&self) -> f64 {
        let nk = self.configs.len();
        let mut h_s = 0.0;
        let mut h_ys = 0.0;
        for p in 0..nk {
            let ps: f64 = (0..self.n_patterns).map(|g| self.p_config_pattern(g, p)).sum();
            let ys1: f64 = (0..self.n_patterns)
                .map(|g| self.p_config_pattern(g, p) * self.delta[p])
                .sum();
            h_s += plogp(ps);
            h_ys += plogp(ys1) + plogp(ps - ys1);
        }
        let mut h_ysg = 0.0;
        for g in 0..self.n_patterns {
            for p in 0..nk {
                let v = self.p_config_pattern(g, p);
                h_ysg += plogp(v * self.delta[p]) + plogp(v * (1.0 - self.delta[p]));
            }
        }
        h_ys + self.h_config_pattern() - h_s - h_ysg
    }

    /// Posterior over realized configurations given pattern `g`.
    pub fn posterior(&self, g: usize) -> Vec<f64> {
        let joint: Vec<f64> = (0..self.configs.len())
            .map(|p| self.p_config_pattern(g, p))
            .collect();
        let total: f64 = joint.iter().sum();
        joint.iter().map(|v| v / total).collect()
    }

    /// MAP configuration index (into `configs`) per pattern; ties go to the lower index.
    pub fn map_assignment(&self) -> Vec<usize> {
        (0..self.n_patterns)
            .map(|g| {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for p in 0..self.configs.len() {
                    let v = self.p_config_pattern(g, p);
                    if v > best_v {
                        best_v = v;
                        best = p;
                    }
                }
                best
            })
            .collect()
    }

    /// Exact MAP decoding error `1 − Σ_g max_p P(s_p, g)`.
    pub fn map_error(&self) -> f64 {
        let assign = self.map_assignment();
        let correct: f64 = assign
            .iter()
            .enumerate()
            .map(|(g, &p)| self.p_config_pattern(g, p))
            .sum();
        (1.0 - correct).max(0.0)
    }

    /// `P(G_a)` and `P(G_a | s_b)` for every pair of realized configurations,
    /// where `G_a` is the set of patterns whose MAP estimate is `a`.
    pub fn map_regions(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let nk = self.configs.len();
        let assign = self.map_assignment();
        let mut mass = vec![0.0; nk];
        let mut given = vec![vec![0.0; nk]; nk];
        let prior: Vec<f64> = (0..nk)
            .map(|p| (0..self.n_patterns).map(|g| self.p_config_pattern(g, p)).sum())
            .collect();
        for (g, &a) in assign.iter().enumerate() {
            for b in 0..nk {
                let v = self.p_config_pattern(g, b);
                mass[a] += v;
                given[a][b] += v / prior[b];
            }
        }
        (mass, given)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Latent,
    Outcome,
}

/// Exact `H(target | observed predictors in given)` in bits.
pub fn conditional_entropy_exact(system: &ExactSystem, target: Target, given: &[usize]) -> Result<f64> {
    let table = JointTable::build(system, given)?;
    Ok(match target {
        Target::Latent => table.h_latent_given_obs(),
        Target::Outcome => table.h_outcome_given_obs(),
    })
}

/// Softmax posterior over realized configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub configs: Vec<usize>,
    /// Log joint score `log P(s_p) + log P(observed | s_p)` per configuration.
    pub log_joint: Vec<f64>,
    pub posterior: Vec<f64>,
}

impl PosteriorTable {
    pub fn from_log_joint(configs: Vec<usize>, log_joint: Vec<f64>) -> Result<Self> {
        let norm = log_sum_exp(&log_joint);
        if !norm.is_finite() {
            return Err(Error::Degenerate("observation impossible under every configuration".into()));
        }
        let posterior = log_joint.iter().map(|v| (v - norm).exp()).collect();
        Ok(Self {
            configs,
            log_joint,
            posterior,
        })
    }
}

/// Posterior `P(s_p | observed)` for readings `observed[t]` of predictor `columns[t]`.
pub fn exact_posterior(system: &ExactSystem, columns: &[usize], observed: &[u8]) -> Result<PosteriorTable> {
    check_len(columns.len(), observed.len())?;
    let configs = system.realized();
    let weights = system.regime_weights();
    let mut log_joint = Vec::with_capacity(configs.len());
    let mut per_regime = Vec::with_capacity(weights.len());
    for &code in &configs {
        per_regime.clear();
        for (l, w) in weights.iter().enumerate() {
            let mut s = w.ln();
            for (&j, &x) in columns.iter().zip(observed) {
                let q = system.observed_one(j, code, l);
                s += if x != 0 { q.ln() } else { (1.0 - q).ln() };
            }
            per_regime.push(s);
        }
        log_joint.push(system.prior[code].ln() + log_sum_exp(&per_regime));
    }
    PosteriorTable::from_log_joint(configs, log_joint)
}

/// Bayes-optimal `P(Y = 1 | observed)` as the posterior-weighted outcome table.
pub fn optimal_prediction(system: &ExactSystem, columns: &[usize], observed: &[u8]) -> Result<f64> {
    let post = exact_posterior(system, columns, observed)?;
    Ok(post
        .configs
        .iter()
        .zip(&post.posterior)
        .map(|(&c, w)| system.delta[c] * w)
        .sum())
}
