use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use latent_breadth::generative::GenerativeMode;
use latent_breadth::harness::{self, ExperimentConfig, Preset};
use latent_breadth::selection::Strategy;
use latent_breadth::Error;

#[derive(Parser)]
#[command(name = "latent-breadth", version, about = "Breadth versus depth simulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one generated dataset (latent, true, observed, outcome) and its spec.
    Gen(Common),
    /// Realized and effective latent complexity per correlation level.
    Part1a(Common),
    /// Averaged scree of the observed predictors and per-seed elbows.
    Part1b(Common),
    /// Feature-selection strategies scored on held-out data at growing budgets.
    BreadthDepth(Common),
    /// Spectral SNR of each strategy's selection at the haystack elbow.
    SpectralCompare(Common),
    /// Exact information-theoretic checks on small enumerable systems.
    Oracles(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; unspecified keys come from the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["desk", "reference"])]
    preset: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = ["consistent", "chaotic"])]
    mode: Option<String>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
}

enum Failure {
    Config(String),
    Strategies(usize),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Toml(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let preset = c.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut config = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml_with_preset(&text, preset)?
        }
        None => ExperimentConfig::preset(preset.unwrap_or(Preset::Desk)),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(mode) = &c.mode {
        config.mode = Some(mode.parse::<GenerativeMode>()?);
    }
    if let Some(list) = &c.strategies {
        config.strategies = list
            .iter()
            .map(|s| s.trim().parse::<Strategy>())
            .collect::<Result<_, _>>()?;
    }
    config.validate()?;
    Ok(config)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn finish(mut w: BufWriter<File>) -> anyhow::Result<()> {
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, name) = match &cli.command {
        Command::Gen(c) => (c, "gen"),
        Command::Part1a(c) => (c, "part1a"),
        Command::Part1b(c) => (c, "part1b"),
        Command::BreadthDepth(c) => (c, "breadth-depth"),
        Command::SpectralCompare(c) => (c, "spectral-compare"),
        Command::Oracles(c) => (c, "oracles"),
    };
    let config = load_config(common)?;
    let out = &common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), config.to_toml()?).context("writing config")?;
    eprintln!("{name}: preset {:?}, seed {}, output {}", config.preset, config.seed, out.display());

    match cli.command {
        Command::Gen(_) => {
            for mode in config.modes() {
                harness::run_gen(&config, mode, &out.join(mode.name()))?;
            }
        }
        Command::Part1a(_) => {
            let rows = harness::run_part1a(&config)?;
            let mut w = create(out, "part1a.csv")?;
            harness::write_part1a_csv(&rows, &mut w)?;
            finish(w)?;
            for (level, k_rlzd, k_eff) in harness::part1a_means(&rows) {
                eprintln!("{:<7} mean K_rlzd {k_rlzd:6.2}  mean K_eff {k_eff:6.2}", level.name());
            }
        }
        Command::Part1b(_) => {
            let summaries = harness::run_part1b(&config)?;
            let mut w = create(out, "scree.csv")?;
            harness::write_scree_csv(&summaries, &mut w)?;
            finish(w)?;
            let mut w = create(out, "elbows.csv")?;
            harness::write_elbows_csv(&summaries, &mut w)?;
            finish(w)?;
            for s in &summaries {
                eprintln!(
                    "{:<10} median elbow {:?}  mean K_eff {:.2}  no-elbow {}/{}",
                    s.mode.name(),
                    s.median_elbow(),
                    s.mean_k_eff(),
                    s.no_elbow_count(),
                    s.iterations.len()
                );
            }
        }
        Command::BreadthDepth(_) | Command::SpectralCompare(_) => {
            let fit = matches!(cli.command, Command::BreadthDepth(_));
            let study = if fit {
                harness::run_breadth_depth(&config)?
            } else {
                harness::run_spectral_compare(&config)?
            };
            if fit {
                let mut w = create(out, "metrics.csv")?;
                harness::write_metrics_csv(&study.records, &mut w)?;
                finish(w)?;
            }
            let mut w = create(out, "spectral.csv")?;
            harness::write_spectral_csv(&study.spectral, &mut w)?;
            finish(w)?;
            let mut w = create(out, "failures.csv")?;
            harness::write_failures_csv(&study.failures, &mut w)?;
            finish(w)?;
            std::fs::write(out.join("traces.json"), harness::traces_to_json(&study)?).context("writing traces")?;
            eprint!("{}", harness::summarize_study(&study));
            if !study.failures.is_empty() {
                return Err(Failure::Strategies(study.failures.len()));
            }
        }
        Command::Oracles(_) => {
            let verdicts = harness::run_oracles(&config)?;
            let mut w = create(out, "oracles.csv")?;
            harness::write_oracles_csv(&verdicts, &mut w)?;
            finish(w)?;
            std::fs::write(out.join("oracles.json"), harness::verdicts_to_json(&verdicts)?).context("writing oracles")?;
            for v in &verdicts {
                eprintln!("{} {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.theorem, v.instance);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Strategies(n)) => {
            eprintln!("{n} strategy run(s) failed; other results were written");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
