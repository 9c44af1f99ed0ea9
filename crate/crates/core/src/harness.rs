//! Experiment orchestration: latent complexity sweeps, scree validation,
//! breadth-versus-depth runs, comparative spectra, and dataset export.
//!
//! Every output is a deterministic function of the config, including the
//! base seed; iterations run in parallel on derived seeds.

use std::fmt::Write as _;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{Error, Result};
use crate::evaluation::{auprc, auroc, score_conditional_entropy, theoretical_floor, MetricsRecord};
use crate::forest::{self, ForestConfig};
use crate::generative::{build_spec, sample_dataset, GenerativeMode, GenerativeSpec, TrueDataset};
use crate::latent::{
    complexity, draw_prevalences, exact_config_distribution, sample_latent, CorrelationLevel, LatentMatrix,
    LatentSpec,
};
use crate::observation::{fidelity_in_range, observe, ObservationSpec, ObservedData};
use crate::oracles::{self, OracleVerdict};
use crate::selection::{
    idealized_depth_set, select_mrmr, select_random, select_spectral_anchored, select_targeted_residual,
    MrmrVariant, ResidualConfig, ResidualSource, SelectionTrace, Strategy,
};
use crate::seed;
use crate::spectral::{average_spectrum, covariance_spectrum, spectral_snr, Elbow};
use crate::stats::{median, round_half_up};

mod tag {
    pub const PART1A: u64 = 0x1a;
    pub const PART1B: u64 = 0x1b;
    pub const STUDY: u64 = 0x02;
    pub const GEN: u64 = 0x6e;
    pub const PREVALENCE: u64 = 1;
    pub const LATENT_TRAIN: u64 = 2;
    pub const LATENT_TEST: u64 = 3;
    pub const TABLES: u64 = 4;
    pub const OBSERVE: u64 = 5;
    pub const OBSERVE_TEST: u64 = 6;
    pub const SELECT: u64 = 7;
    pub const FIT: u64 = 8;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Reference,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "reference" => Ok(Preset::Reference),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSettings {
    pub trees: usize,
    pub proxy_trees: usize,
    pub min_node_size: usize,
    /// 0 means unlimited.
    pub max_depth: usize,
    /// `None` means `floor(sqrt(m))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
}

impl ForestSettings {
    fn model(&self, seed: u64) -> ForestConfig {
        self.with_trees(self.trees, seed)
    }

    fn with_trees(&self, n_trees: usize, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees,
            mtry: self.mtry,
            min_node_size: self.min_node_size,
            max_depth: self.max_depth,
            seed,
        }
    }
}

/// Scale of the scree-validation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreeSettings {
    pub m: usize,
    pub n: usize,
    pub iterations: usize,
}

/// Scale of the latent-complexity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexitySettings {
    pub n: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// `None` runs both modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<GenerativeMode>,
    pub k: usize,
    pub m_haystack: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_fraction: f64,
    pub fidelity_range: (f64, f64),
    pub prevalence_range: (f64, f64),
    pub correlation: CorrelationLevel,
    pub interaction_decay: f64,
    pub budget_fraction: f64,
    /// Fractions of the haystack at which models are fit.
    pub snapshot_fractions: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Breadth strategies to run; Idealized Depth is listed like the others.
    pub strategies: Vec<Strategy>,
    pub mrmr_variant: MrmrVariant,
    pub residual_source: ResidualSource,
    pub forest: ForestSettings,
    pub part1a: ComplexitySettings,
    pub part1b: ScreeSettings,
}

const BUDGET_FRACTION: f64 = 0.375;

fn default_grid(budget_fraction: f64) -> Vec<f64> {
    (0..8).rev().map(|e| budget_fraction / f64::from(1u32 << e)).collect()
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let reference = Self {
            preset: Preset::Reference,
            mode: None,
            k: 4,
            m_haystack: 4000,
            n_train: 12_000,
            n_test: 3000,
            noise_fraction: 0.5,
            fidelity_range: (0.875, 0.925),
            prevalence_range: (0.05, 0.50),
            correlation: CorrelationLevel::Medium,
            interaction_decay: crate::generative::DEFAULT_DECAY,
            budget_fraction: BUDGET_FRACTION,
            snapshot_fractions: default_grid(BUDGET_FRACTION),
            iterations: 20,
            seed: 2024,
            strategies: Strategy::ALL.to_vec(),
            mrmr_variant: MrmrVariant::Mid,
            residual_source: ResidualSource::InSample,
            forest: ForestSettings {
                trees: 1250,
                proxy_trees: 125,
                min_node_size: 10,
                max_depth: 0,
                mtry: None,
            },
            part1a: ComplexitySettings {
                n: 12_000,
                iterations: 20,
            },
            part1b: ScreeSettings {
                m: 4000,
                n: 12_000,
                iterations: 20,
            },
        };
        match preset {
            Preset::Reference => reference,
            Preset::Desk => Self {
                preset: Preset::Desk,
                m_haystack: 800,
                n_train: 4000,
                n_test: 1000,
                iterations: 10,
                forest: ForestSettings {
                    trees: 300,
                    ..reference.forest.clone()
                },
                part1b: ScreeSettings {
                    m: 1000,
                    n: 12_000,
                    iterations: 10,
                },
                ..reference
            },
        }
    }

    /// Parse TOML; keys not given fall back to the named `preset` (desk by default).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_preset(text, None)
    }

    /// As [`Self::from_toml_str`], with `preset` replacing the file's own.
    pub fn from_toml_with_preset(text: &str, preset: Option<Preset>) -> Result<Self> {
        let mut user: toml::Table = text.parse()?;
        let preset = match (preset, user.get("preset")) {
            (Some(p), _) => p,
            (None, None) => Preset::Desk,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(other)) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        user.remove("preset");
        let base = toml::Table::try_from(Self::preset(preset))
            .map_err(|e| Error::Config(format!("cannot encode preset: {e}")))?;
        let merged = merge(base, user);
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 || self.k > 20 {
            return bad(format!("k = {} must lie in 1..=20", self.k));
        }
        if self.m_haystack < 3 {
            return bad("m_haystack must be at least 3".into());
        }
        if self.n_test < 1 {
            return bad("n_test must be at least 1".into());
        }
        if self.n_train < self.forest.min_node_size.max(2) {
            return bad(format!("n_train = {} is below min_node_size", self.n_train));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return bad(format!("noise_fraction {} outside [0, 1)", self.noise_fraction));
        }
        let (lo, hi) = self.fidelity_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("fidelity_range ({lo}, {hi}) must satisfy 0 < lo < hi < 1"));
        }
        let (lo, hi) = self.prevalence_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!("prevalence_range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"));
        }
        if !(0.0..=1.0).contains(&self.interaction_decay) {
            return bad(format!("interaction_decay {} outside [0, 1]", self.interaction_decay));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad(format!("budget_fraction {} outside (0, 1]", self.budget_fraction));
        }
        if self.snapshot_fractions.is_empty() {
            return bad("snapshot grid is empty".into());
        }
        if let Some(f) = self
            .snapshot_fractions
            .iter()
            .find(|f| !(**f > 0.0 && **f <= self.budget_fraction))
        {
            return bad(format!("snapshot {f} outside (0, {}]", self.budget_fraction));
        }
        if self.iterations == 0 || self.part1a.iterations == 0 || self.part1b.iterations == 0 {
            return bad("iteration counts must be positive".into());
        }
        if self.part1a.n == 0 || self.part1b.n < 2 || self.part1b.m < 3 {
            return bad("part1a/part1b scales are too small".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategies enabled".into());
        }
        if self.forest.trees == 0 || self.forest.proxy_trees == 0 || self.forest.min_node_size == 0 {
            return bad("forest sizes must be positive".into());
        }
        if self.forest.mtry == Some(0) {
            return bad("mtry must be positive".into());
        }
        Ok(())
    }

    pub fn modes(&self) -> Vec<GenerativeMode> {
        match self.mode {
            Some(m) => vec![m],
            None => vec![GenerativeMode::Consistent, GenerativeMode::Chaotic],
        }
    }

    pub fn budget(&self) -> usize {
        round_half_up(self.budget_fraction * self.m_haystack as f64).clamp(1, self.m_haystack)
    }

    /// Distinct snapshot budgets in increasing order.
    pub fn snapshot_budgets(&self) -> Vec<usize> {
        let budget = self.budget();
        let mut out: Vec<usize> = self
            .snapshot_fractions
            .iter()
            .map(|f| round_half_up(f * self.m_haystack as f64).clamp(1, budget))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn merge(mut base: toml::Table, user: toml::Table) -> toml::Table {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
                let merged = merge(std::mem::take(b), u);
                *b = merged;
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
    base
}

fn mode_tag(mode: GenerativeMode) -> u64 {
    match mode {
        GenerativeMode::Consistent => 0,
        GenerativeMode::Chaotic => 1,
    }
}

fn strategy_tag(strategy: Strategy) -> u64 {
    Strategy::ALL.iter().position(|s| *s == strategy).expect("listed") as u64
}

// ---------------------------------------------------------------------------
// Part 1a

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub iteration: usize,
    pub level: CorrelationLevel,
    pub k_rlzd: usize,
    pub k_eff: f64,
}

pub fn run_part1a(config: &ExperimentConfig) -> Result<Vec<ComplexityRow>> {
    config.validate()?;
    let (lo, hi) = config.prevalence_range;
    let per_iter: Vec<Vec<ComplexityRow>> = (0..config.part1a.iterations)
        .into_par_iter()
        .map(|it| {
            let base = seed::derive_path(config.seed, &[tag::PART1A, it as u64]);
            let prev = draw_prevalences(config.k, lo, hi, seed::derive(base, tag::PREVALENCE));
            CorrelationLevel::ALL
                .iter()
                .enumerate()
                .map(|(li, &level)| {
                    let spec = LatentSpec::new(prev.clone(), level, seed::derive(base, 16 + li as u64))?;
                    let report = complexity(&sample_latent(&spec, config.part1a.n)?);
                    Ok(ComplexityRow {
                        iteration: it,
                        level,
                        k_rlzd: report.k_rlzd,
                        k_eff: report.k_eff,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_iter.into_iter().flatten().collect())
}

pub fn write_part1a_csv<W: Write>(rows: &[ComplexityRow], mut w: W) -> Result<()> {
    writeln!(w, "iteration,level,k_rlzd,k_eff")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.iteration, r.level.name(), r.k_rlzd, r.k_eff)?;
    }
    Ok(())
}

/// Mean `(K_rlzd, K_eff)` per correlation level.
pub fn part1a_means(rows: &[ComplexityRow]) -> Vec<(CorrelationLevel, f64, f64)> {
    CorrelationLevel::ALL
        .iter()
        .map(|&level| {
            let sel: Vec<&ComplexityRow> = rows.iter().filter(|r| r.level == level).collect();
            let n = sel.len().max(1) as f64;
            (
                level,
                sel.iter().map(|r| r.k_rlzd as f64).sum::<f64>() / n,
                sel.iter().map(|r| r.k_eff).sum::<f64>() / n,
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Shared data generation

/// One iteration's universe: tables, train/test truth and observations.
#[derive(Clone, Debug)]
pub struct Universe {
    pub seed: u64,
    pub mode: GenerativeMode,
    pub latent_spec: LatentSpec,
    pub spec: GenerativeSpec,
    pub observation: ObservationSpec,
    pub train: TrueDataset,
    pub train_obs: ObservedData,
    pub test: Option<(TrueDataset, ObservedData)>,
    /// Exact configuration prior.
    pub prior: Vec<f64>,
}

pub struct UniverseShape {
    pub m: usize,
    pub n_train: usize,
    /// 0 skips the test set.
    pub n_test: usize,
}

pub fn build_universe(config: &ExperimentConfig, mode: GenerativeMode, shape: &UniverseShape, base: u64) -> Result<Universe> {
    let (lo, hi) = config.prevalence_range;
    let prev = draw_prevalences(config.k, lo, hi, seed::derive(base, tag::PREVALENCE));
    let latent_spec = LatentSpec::new(prev, config.correlation, seed::derive(base, tag::LATENT_TRAIN))?;
    let spec = build_spec(
        mode,
        config.k,
        shape.m,
        config.noise_fraction,
        config.interaction_decay,
        seed::derive(base, tag::TABLES),
    )?;
    let observation = fidelity_in_range(shape.m, config.fidelity_range, seed::derive(base, tag::OBSERVE))?;
    let train = sample_dataset(&spec, &sample_latent(&latent_spec, shape.n_train)?)?;
    let train_obs = observe(&train, &observation)?;
    let test = if shape.n_test > 0 {
        let test_spec = LatentSpec {
            seed: seed::derive(base, tag::LATENT_TEST),
            ..latent_spec.clone()
        };
        let test = sample_dataset(&spec, &sample_latent(&test_spec, shape.n_test)?)?;
        let test_channel = ObservationSpec {
            seed: seed::derive(base, tag::OBSERVE_TEST),
            ..observation.clone()
        };
        let obs = observe(&test, &test_channel)?;
        Some((test, obs))
    } else {
        None
    };
    let prior = exact_config_distribution(&latent_spec)?;
    Ok(Universe {
        seed: base,
        mode,
        latent_spec,
        spec,
        observation,
        train,
        train_obs,
        test,
        prior,
    })
}

// ---------------------------------------------------------------------------
// Part 1b

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeIteration {
    pub iteration: usize,
    pub seed: u64,
    /// 1-based count of leading eigenvalues above the elbow.
    pub elbow: Option<usize>,
    pub k_rlzd: usize,
    pub k_eff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeSummary {
    pub mode: GenerativeMode,
    pub mean_eigenvalues: Vec<f64>,
    pub iterations: Vec<ScreeIteration>,
}

impl ScreeSummary {
    /// Median elbow over iterations that found one.
    pub fn median_elbow(&self) -> Option<f64> {
        let found: Vec<f64> = self.iterations.iter().filter_map(|i| i.elbow.map(|e| e as f64)).collect();
        (!found.is_empty()).then(|| median(&found))
    }

    pub fn mean_k_eff(&self) -> f64 {
        self.iterations.iter().map(|i| i.k_eff).sum::<f64>() / self.iterations.len().max(1) as f64
    }

    pub fn mean_k_rlzd(&self) -> f64 {
        self.iterations.iter().map(|i| i.k_rlzd as f64).sum::<f64>() / self.iterations.len().max(1) as f64
    }

    pub fn no_elbow_count(&self) -> usize {
        self.iterations.iter().filter(|i| i.elbow.is_none()).count()
    }
}

pub fn run_part1b(config: &ExperimentConfig) -> Result<Vec<ScreeSummary>> {
    config.validate()?;
    let shape = UniverseShape {
        m: config.part1b.m,
        n_train: config.part1b.n,
        n_test: 0,
    };
    config
        .modes()
        .into_iter()
        .map(|mode| {
            let results: Vec<(ScreeIteration, Vec<f64>)> = (0..config.part1b.iterations)
                .into_par_iter()
                .map(|it| {
                    let base = seed::derive_path(config.seed, &[tag::PART1B, mode_tag(mode), it as u64]);
                    let u = build_universe(config, mode, &shape, base)?;
                    let report = covariance_spectrum(&u.train_obs.values)?;
                    let cx = complexity(&u.train.s1);
                    Ok((
                        ScreeIteration {
                            iteration: it,
                            seed: base,
                            elbow: report.elbow.index(),
                            k_rlzd: cx.k_rlzd,
                            k_eff: cx.k_eff,
                        },
                        report.eigenvalues,
                    ))
                })
                .collect::<Result<_>>()?;
            let spectra: Vec<Vec<f64>> = results.iter().map(|(_, e)| e.clone()).collect();
            Ok(ScreeSummary {
                mode,
                mean_eigenvalues: average_spectrum(&spectra),
                iterations: results.into_iter().map(|(i, _)| i).collect(),
            })
        })
        .collect()
}

pub fn write_scree_csv<W: Write>(summaries: &[ScreeSummary], mut w: W) -> Result<()> {
    writeln!(w, "mode,index,mean_eigenvalue")?;
    for s in summaries {
        for (i, v) in s.mean_eigenvalues.iter().enumerate() {
            writeln!(w, "{},{},{v}", s.mode.name(), i + 1)?;
        }
    }
    Ok(())
}

pub fn write_elbows_csv<W: Write>(summaries: &[ScreeSummary], mut w: W) -> Result<()> {
    writeln!(w, "mode,iteration,seed,elbow,k_rlzd,k_eff")?;
    for s in summaries {
        for it in &s.iterations {
            let elbow = it.elbow.map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{elbow},{},{}",
                s.mode.name(),
                it.iteration,
                it.seed,
                it.k_rlzd,
                it.k_eff
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Parts 2 and 3

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub iteration: usize,
    pub seed: u64,
    pub mode: GenerativeMode,
    pub strategy: Strategy,
    pub metrics: MetricsRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralRow {
    pub iteration: usize,
    pub seed: u64,
    pub mode: GenerativeMode,
    pub strategy: Strategy,
    /// Elbow of the full haystack, applied to every subset.
    pub elbow: usize,
    /// `None` when the gap eigenvalue vanished (infinite ratio).
    pub snr: Option<f64>,
    pub signal_eigenvalue_sum: f64,
}

impl SpectralRow {
    pub fn snr_rank(&self) -> f64 {
        self.snr.unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyFailure {
    pub iteration: usize,
    pub seed: u64,
    pub mode: GenerativeMode,
    pub strategy: Strategy,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub records: Vec<StudyRecord>,
    pub spectral: Vec<SpectralRow>,
    pub traces: Vec<(usize, GenerativeMode, SelectionTrace)>,
    pub failures: Vec<StrategyFailure>,
    pub notes: Vec<String>,
}

fn guarded<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())),
    }
}

fn evaluate(
    strategy: Strategy,
    budget: usize,
    train: &BinaryMatrix,
    y_train: &BitColumn,
    test: &BinaryMatrix,
    y_test: &BitColumn,
    forest: &ForestConfig,
    floor: f64,
    seed: u64,
) -> Result<MetricsRecord> {
    let start = std::time::Instant::now();
    let model = forest::fit(train, y_train, forest)?;
    let scores = model.predict_proba(test)?;
    Ok(MetricsRecord {
        strategy: strategy.name().into(),
        budget,
        cond_entropy_bits: score_conditional_entropy(y_test, &scores)?,
        auroc: auroc(y_test, &scores)?,
        auprc: auprc(y_test, &scores)?,
        theoretical_floor_bits: floor,
        seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn select(
    config: &ExperimentConfig,
    strategy: Strategy,
    u: &Universe,
    budget: usize,
) -> Result<SelectionTrace> {
    let s = seed::derive_path(u.seed, &[tag::SELECT, strategy_tag(strategy)]);
    let x = &u.train_obs.values;
    let y = &u.train.y;
    match strategy {
        Strategy::Random => select_random(x.cols(), budget, s),
        Strategy::Mrmr => select_mrmr(x, y, budget, config.mrmr_variant),
        Strategy::TargetedResidual => {
            let rc = ResidualConfig {
                proxy: config.forest.with_trees(config.forest.proxy_trees, s),
                source: config.residual_source,
                ..ResidualConfig::new(config.forest.proxy_trees, s)
            };
            select_targeted_residual(x, y, budget, &rc)
        }
        Strategy::SpectralAnchored => select_spectral_anchored(x, budget, s),
        Strategy::IdealizedDepth => idealized_depth_set(&u.train.s2, y, complexity(&u.train.s1).k_eff),
    }
}

struct IterationOutput {
    records: Vec<StudyRecord>,
    spectral: Vec<SpectralRow>,
    traces: Vec<(usize, GenerativeMode, SelectionTrace)>,
    failures: Vec<StrategyFailure>,
    notes: Vec<String>,
}

fn run_iteration(
    config: &ExperimentConfig,
    mode: GenerativeMode,
    iteration: usize,
    fit_models: bool,
) -> Result<IterationOutput> {
    let base = seed::derive_path(config.seed, &[tag::STUDY, mode_tag(mode), iteration as u64]);
    let shape = UniverseShape {
        m: config.m_haystack,
        n_train: config.n_train,
        n_test: if fit_models { config.n_test } else { 0 },
    };
    let u = build_universe(config, mode, &shape, base)?;
    let budget = config.budget();
    let snapshots = config.snapshot_budgets();
    let floor = theoretical_floor(&u.spec, &u.prior)?;
    let mut out = IterationOutput {
        records: Vec::new(),
        spectral: Vec::new(),
        traces: Vec::new(),
        failures: Vec::new(),
        notes: Vec::new(),
    };

    let haystack = covariance_spectrum(&u.train_obs.values)?;
    let elbow = match haystack.elbow {
        Elbow::At(r) => Some(r),
        Elbow::NoElbow => {
            out.notes.push(format!(
                "{} iteration {iteration}: no haystack elbow; spectral comparison skipped",
                mode.name()
            ));
            None
        }
    };

    for &strategy in &config.strategies {
        let depth = strategy == Strategy::IdealizedDepth;
        if depth && !fit_models {
            continue;
        }
        let result = guarded(|| {
            let trace = select(config, strategy, &u, budget)?;
            let grid = if depth { vec![trace.picks.len()] } else { snapshots.clone() };
            let trace = trace.with_snapshots(grid.clone());
            let mut records = Vec::new();
            if fit_models {
                let (test, test_obs) = u.test.as_ref().expect("test set");
                let (train_x, test_x) = if depth {
                    (&u.train.s2, &test.s2)
                } else {
                    (&u.train_obs.values, &test_obs.values)
                };
                for &b in &grid {
                    let cols = trace.prefix(b);
                    let fseed = seed::derive_path(base, &[tag::FIT, strategy_tag(strategy), b as u64]);
                    let m = evaluate(
                        strategy,
                        cols.len(),
                        &train_x.select_columns(cols)?,
                        &u.train.y,
                        &test_x.select_columns(cols)?,
                        &test.y,
                        &config.forest.model(fseed),
                        floor,
                        base,
                    )?;
                    records.push(m);
                }
            }
            let spectral = match (elbow, depth) {
                (Some(r), false) if trace.picks.len() > r => {
                    let sub = covariance_spectrum(&u.train_obs.values.select_columns(&trace.picks)?)?;
                    let snr = spectral_snr(&sub.eigenvalues, r)?;
                    Some(SpectralRow {
                        iteration,
                        seed: base,
                        mode,
                        strategy,
                        elbow: r,
                        snr: snr.value,
                        signal_eigenvalue_sum: sub.eigenvalues[..r].iter().sum(),
                    })
                }
                _ => None,
            };
            Ok((trace, records, spectral))
        });
        match result {
            Ok((trace, records, spectral)) => {
                out.records.extend(records.into_iter().map(|metrics| StudyRecord {
                    iteration,
                    seed: base,
                    mode,
                    strategy,
                    metrics,
                }));
                out.spectral.extend(spectral);
                out.traces.push((iteration, mode, trace));
            }
            Err(message) => out.failures.push(StrategyFailure {
                iteration,
                seed: base,
                mode,
                strategy,
                message,
            }),
        }
    }
    Ok(out)
}

fn run_study(config: &ExperimentConfig, fit_models: bool) -> Result<StudyOutput> {
    config.validate()?;
    let jobs: Vec<(GenerativeMode, usize)> = config
        .modes()
        .into_iter()
        .flat_map(|m| (0..config.iterations).map(move |i| (m, i)))
        .collect();
    let outputs: Vec<IterationOutput> = jobs
        .into_par_iter()
        .map(|(mode, it)| run_iteration(config, mode, it, fit_models))
        .collect::<Result<_>>()?;
    let mut study = StudyOutput::default();
    for o in outputs {
        study.records.extend(o.records);
        study.spectral.extend(o.spectral);
        study.traces.extend(o.traces);
        study.failures.extend(o.failures);
        study.notes.extend(o.notes);
    }
    Ok(study)
}

/// Selection, snapshot fits and held-out metrics for every enabled strategy.
/// The spectral comparison of the same selections is included.
pub fn run_breadth_depth(config: &ExperimentConfig) -> Result<StudyOutput> {
    run_study(config, true)
}

/// Subset spectral SNR at the haystack elbow, without fitting final models.
pub fn run_spectral_compare(config: &ExperimentConfig) -> Result<StudyOutput> {
    run_study(config, false)
}

/// Tidy `seed,mode,strategy,budget,metric,value`; timings are left out so the
/// bytes depend only on the config.
pub fn write_metrics_csv<W: Write>(records: &[StudyRecord], mut w: W) -> Result<()> {
    writeln!(w, "seed,mode,strategy,budget,metric,value")?;
    for r in records {
        for (metric, value) in r.metrics.metrics() {
            if metric == "wall_time_secs" {
                continue;
            }
            writeln!(
                w,
                "{},{},{},{},{metric},{value}",
                r.seed,
                r.mode.name(),
                r.strategy.name(),
                r.metrics.budget
            )?;
        }
    }
    Ok(())
}

pub fn write_spectral_csv<W: Write>(rows: &[SpectralRow], mut w: W) -> Result<()> {
    writeln!(w, "seed,mode,strategy,elbow,snr,signal_eigenvalue_sum")?;
    for r in rows {
        let snr = r.snr.map_or_else(|| "inf".to_string(), |v| v.to_string());
        writeln!(
            w,
            "{},{},{},{},{snr},{}",
            r.seed,
            r.mode.name(),
            r.strategy.name(),
            r.elbow,
            r.signal_eigenvalue_sum
        )?;
    }
    Ok(())
}

pub fn write_failures_csv<W: Write>(failures: &[StrategyFailure], mut w: W) -> Result<()> {
    writeln!(w, "seed,mode,strategy,message")?;
    for f in failures {
        let msg = f.message.replace(['\n', ','], " ");
        writeln!(w, "{},{},{},{msg}", f.seed, f.mode.name(), f.strategy.name())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Export and oracles

/// Write one universe (first iteration of `mode`) as CSVs plus a JSON spec.
pub fn run_gen(config: &ExperimentConfig, mode: GenerativeMode, dir: &Path) -> Result<()> {
    config.validate()?;
    let base = seed::derive_path(config.seed, &[tag::GEN, mode_tag(mode)]);
    let shape = UniverseShape {
        m: config.m_haystack,
        n_train: config.n_train,
        n_test: 0,
    };
    let u = build_universe(config, mode, &shape, base)?;
    std::fs::create_dir_all(dir)?;
    let file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
    };
    write_latent(&u.train.s1, file("latent.csv")?)?;
    u.train.s2.write_csv(file("true.csv")?)?;
    u.train_obs.write_csv(file("observed.csv")?)?;
    let mut y = file("y.csv")?;
    writeln!(y, "y,y_prob")?;
    for (v, p) in u.train.y.iter().zip(&u.train.y_prob) {
        writeln!(y, "{},{p}", u8::from(v))?;
    }
    y.flush()?;
    #[derive(Serialize)]
    struct Bundle<'a> {
        latent: &'a LatentSpec,
        generative: &'a GenerativeSpec,
        observation: &'a ObservationSpec,
    }
    let bundle = Bundle {
        latent: &u.latent_spec,
        generative: &u.spec,
        observation: &u.observation,
    };
    std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&bundle)?)?;
    Ok(())
}

pub fn traces_to_json(study: &StudyOutput) -> Result<String> {
    Ok(serde_json::to_string_pretty(&study.traces)?)
}

pub fn verdicts_to_json(verdicts: &[OracleVerdict]) -> Result<String> {
    Ok(serde_json::to_string_pretty(verdicts)?)
}

fn write_latent<W: Write>(m: &LatentMatrix, w: W) -> Result<()> {
    m.write_csv(w)
}

pub fn run_oracles(config: &ExperimentConfig) -> Result<Vec<OracleVerdict>> {
    oracles::run_all(config.seed)
}

pub fn write_oracles_csv<W: Write>(verdicts: &[OracleVerdict], mut w: W) -> Result<()> {
    writeln!(w, "theorem,instance,measured,bound,tolerance,pass")?;
    for v in verdicts {
        let instance = v.instance.replace(',', ";");
        writeln!(
            w,
            "{},{instance},{},{},{},{}",
            v.theorem, v.measured, v.bound, v.tolerance, v.pass
        )?;
    }
    Ok(())
}

/// Human-readable digest of a study run.
pub fn summarize_study(study: &StudyOutput) -> String {
    let mut s = String::new();
    let mut keys: Vec<(GenerativeMode, Strategy, usize)> = study
        .records
        .iter()
        .map(|r| (r.mode, r.strategy, r.metrics.budget))
        .collect();
    keys.sort_by_key(|(m, st, b)| (mode_tag(*m), strategy_tag(*st), *b));
    keys.dedup();
    for (mode, strategy, budget) in keys {
        let vals: Vec<f64> = study
            .records
            .iter()
            .filter(|r| r.mode == mode && r.strategy == strategy && r.metrics.budget == budget)
            .map(|r| r.metrics.cond_entropy_bits)
            .collect();
        let _ = writeln!(
            s,
            "{:<10} {:<18} {:>5}  median H(Y|X) = {:.4}",
            mode.name(),
            strategy.name(),
            budget,
            median(&vals)
        );
    }
    for f in &study.failures {
        let _ = writeln!(s, "FAILED {} {} seed {}: {}", f.mode.name(), f.strategy.name(), f.seed, f.message);
    }
    for n in &study.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}
