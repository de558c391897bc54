//! `popsim`: run, sweep, model-check and coin-trajectory commands.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use popsim::coin::coin_trajectory;
use popsim::harness::{
    build_protocol, run_sweep, write_csv, Advantage, ExperimentConfig, ProtocolKind,
};
use popsim::lottery::{Lottery, LotteryParams};
use popsim::model_check::{check_protocol, Verdict, DEFAULT_CAP};
use popsim::splitjoin::{SplitJoin, SplitJoinParams};
use popsim::{run_trial, Protocol, SchedulerRng};

#[derive(Parser, Debug)]
#[command(name = "popsim", version, about = "Population protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single trial at the first n and the base seed.
    Run(Settings),
    /// Run every (n, seed) trial and print a summary.
    Sweep(Settings),
    /// Model-check the protocol from its initial configuration.
    Check(Settings),
    /// Emit (k, X_k) trajectories of the synthetic coin.
    CoinStats(Settings),
}

/// Every key of the config file, also accepted as a flag. Flags win.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    /// Flat TOML file with any of the keys below.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<String>,
    /// Population sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    n: Option<Vec<u64>>,
    /// Absolute gap `3`, or a fraction of n such as `0.1` or `1/8`.
    #[arg(long)]
    #[serde(default, deserialize_with = "string_or_number")]
    advantage: Option<String>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    max_interactions: Option<u64>,
    #[arg(long)]
    check_period: Option<u64>,
    /// Lottery state budget.
    #[arg(long)]
    m: Option<u64>,
    #[arg(long)]
    chained_reactions: Option<bool>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Lottery caps for `check`, overriding the state budget.
    #[arg(long)]
    payoff_cap: Option<u32>,
    #[arg(long)]
    level_cap: Option<u32>,
    /// `check`: every split a + b = n with a != b instead of the advantage.
    #[arg(long)]
    all_splits: Option<bool>,
    /// `check`: bound on explored configurations.
    #[arg(long)]
    state_cap: Option<usize>,
    /// `coin-stats`: interactions per trajectory, and sampling stride.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Vec<u64>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum N {
        One(u64),
        Many(Vec<u64>),
    }
    Ok(Some(match N::deserialize(d)? {
        N::One(n) => vec![n],
        N::Many(v) => v,
    }))
}

fn string_or_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum A {
        Int(u64),
        Float(f64),
        Text(String),
    }
    Ok(Some(match A::deserialize(d)? {
        A::Int(k) => k.to_string(),
        A::Float(f) => f.to_string(),
        A::Text(s) => s,
    }))
}

macro_rules! overlay {
    ($flags:ident, $file:ident; $($field:ident),*) => {
        Settings { config: $flags.config, $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Settings {
    fn resolve(self) -> Result<Settings, ConfigError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_config(&path)?;
        let flags = self;
        Ok(
            overlay!(flags, file; protocol, n, advantage, seeds, base_seed, max_interactions,
            check_period, m, chained_reactions, output, payoff_cap, level_cap, all_splits,
            state_cap, steps, stride),
        )
    }

    fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let d = ExperimentConfig::default();
        let protocol = match &self.protocol {
            Some(p) => p.parse::<ProtocolKind>().map_err(config)?,
            None => d.protocol,
        };
        let advantage = match &self.advantage {
            Some(a) => a.parse::<Advantage>().map_err(config)?,
            None => d.advantage,
        };
        let cfg = ExperimentConfig {
            protocol,
            n_values: self.n.clone().unwrap_or(d.n_values),
            advantage,
            seeds: self.seeds.unwrap_or(d.seeds),
            base_seed: self.base_seed.unwrap_or(d.base_seed),
            max_interactions: self.max_interactions.unwrap_or(d.max_interactions),
            check_period: self.check_period,
            m: self.m,
            chained_reactions: self.chained_reactions.unwrap_or(d.chained_reactions),
            output: self.output.clone(),
        };
        cfg.validate().map_err(config)?;
        Ok(cfg)
    }
}

#[derive(Debug)]
struct ConfigError(String);

fn config(e: impl std::fmt::Display) -> ConfigError {
    ConfigError(e.to_string())
}

fn read_config(path: &Path) -> Result<Settings, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    Failed,
}

fn is_config_error(e: &anyhow::Error) -> bool {
    use popsim::Error as E;
    e.chain().any(|c| {
        c.downcast_ref::<popsim::Error>().is_some_and(|e| {
            matches!(
                e,
                E::Config(_) | E::InvalidParams(_) | E::InvalidPopulation { .. }
            )
        })
    })
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_run(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let n = cfg.n_values[0];
    let proto = build_protocol(cfg, n)?;
    let rec = run_trial(
        proto.as_ref(),
        &proto.initial(),
        cfg.budget(n),
        SchedulerRng::new(cfg.base_seed),
    )?;
    write_csv(
        std::slice::from_ref(&rec),
        open_output(cfg.output.as_deref())?,
    )?;
    eprintln!(
        "{} n={} seed={} stabilized={} output={} correct={} parallel_time={:.2}",
        rec.protocol,
        rec.n,
        rec.seed,
        rec.stabilized,
        rec.output.as_deref().unwrap_or("none"),
        rec.correct,
        rec.parallel_time()
    );
    Ok(if rec.correct {
        Outcome::Ok
    } else {
        Outcome::Failed
    })
}

fn cmd_sweep(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let file_output = cfg.output.is_some();
    let out = run_sweep(cfg)?;
    if file_output {
        print!("{}", out.summary);
    } else {
        write_csv(&out.records, std::io::stdout().lock())?;
        eprint!("{}", out.summary);
    }
    Ok(if out.all_correct() {
        Outcome::Ok
    } else {
        Outcome::Failed
    })
}

fn check_instances(s: &Settings, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Box<dyn Protocol>>> {
    let mut out: Vec<Box<dyn Protocol>> = Vec::new();
    for &n in &cfg.n_values {
        match cfg.protocol {
            ProtocolKind::SplitJoin if s.all_splits.unwrap_or(false) => {
                for a in (0..=n).filter(|&a| 2 * a != n) {
                    let p = SplitJoinParams::new(n, a, n - a, cfg.chained_reactions)?;
                    out.push(Box::new(SplitJoin::new(p)?));
                }
            }
            ProtocolKind::FourState if s.all_splits.unwrap_or(false) => {
                for a in (0..=n).filter(|&a| 2 * a != n) {
                    out.push(Box::new(popsim::baselines::FourStateMajority::new(
                        a,
                        n - a,
                    )?));
                }
            }
            ProtocolKind::Lottery if s.payoff_cap.is_some() || s.level_cap.is_some() => {
                let p = LotteryParams::with_caps(
                    n,
                    s.payoff_cap.unwrap_or(2),
                    s.level_cap.unwrap_or(1),
                )?;
                out.push(Box::new(Lottery::new(p)?));
            }
            _ => out.push(build_protocol(cfg, n)?),
        }
    }
    Ok(out)
}

fn cmd_check(s: &Settings, cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let cap = s.state_cap.unwrap_or(DEFAULT_CAP);
    let mut out = open_output(cfg.output.as_deref())?;
    let mut failed = false;
    for proto in check_instances(s, cfg)? {
        let params = proto.params_json();
        match check_protocol(proto.as_ref(), cap) {
            Ok((verdict, nodes)) => {
                failed |= matches!(verdict, Verdict::Fail { .. });
                writeln!(
                    out,
                    "protocol={} params={params} configurations={nodes} verdict={verdict}",
                    proto.name()
                )?;
            }
            Err(e @ popsim::Error::StateSpaceExplosion { .. }) => {
                failed = true;
                writeln!(
                    out,
                    "protocol={} params={params} verdict=ERROR ({e})",
                    proto.name()
                )?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.flush()?;
    Ok(if failed { Outcome::Failed } else { Outcome::Ok })
}

fn cmd_coin_stats(s: &Settings, cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let mut out = open_output(cfg.output.as_deref())?;
    writeln!(out, "seed,n,k,alpha,ones")?;
    for &n in &cfg.n_values {
        let steps = s.steps.unwrap_or(4 * n);
        let stride = s.stride.unwrap_or(n).max(1);
        for seed in cfg.trial_seeds() {
            for p in coin_trajectory(n, steps, stride, seed)? {
                writeln!(out, "{seed},{},{},{},{}", p.n, p.k, p.alpha, p.ones)?;
            }
        }
    }
    out.flush()?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let (kind, settings) = match Cli::parse().command {
        Command::Run(s) => ("run", s),
        Command::Sweep(s) => ("sweep", s),
        Command::Check(s) => ("check", s),
        Command::CoinStats(s) => ("coin-stats", s),
    };
    let prepared = settings
        .resolve()
        .and_then(|s| s.experiment().map(|cfg| (s, cfg)));
    let (settings, cfg) = match prepared {
        Ok(v) => v,
        Err(ConfigError(msg)) => {
            eprintln!("popsim: {msg}");
            return ExitCode::from(2);
        }
    };
    let result = match kind {
        "run" => cmd_run(&cfg),
        "sweep" => cmd_sweep(&cfg),
        "check" => cmd_check(&settings, &cfg),
        _ => cmd_coin_stats(&settings, &cfg),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) if is_config_error(&e) => {
            eprintln!("popsim: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("popsim: {e:#}");
            ExitCode::from(1)
        }
    }
}
