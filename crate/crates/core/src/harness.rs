//! Experiment sweeps: configuration, protocol construction, CSV output and
//! summary statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{FourStateMajority, PairwiseLeader};
use crate::coin::ApproxCounting;
use crate::engine::{run_trials_parallel, RunBudget, TrialRecord, TrialSpec, RNG_ALGORITHM};
use crate::error::{Error, Result};
use crate::lottery::{Lottery, LotteryParams};
use crate::model::{Configuration, Protocol};
use crate::splitjoin::{SplitJoin, SplitJoinParams};

pub const CSV_COLUMNS: [&str; 14] = [
    "protocol",
    "n",
    "seed",
    "epsilon",
    "interactions",
    "parallel_time",
    "stabilized",
    "output",
    "correct",
    "distinct_states",
    "split_reactions",
    "min_state_count",
    "rng_algorithm",
    "params_json",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    SplitJoin,
    Lottery,
    FourState,
    PairwiseLeader,
    ApproxCounting,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] = [
        ProtocolKind::SplitJoin,
        ProtocolKind::Lottery,
        ProtocolKind::FourState,
        ProtocolKind::PairwiseLeader,
        ProtocolKind::ApproxCounting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::SplitJoin => "split-join",
            ProtocolKind::Lottery => "lottery",
            ProtocolKind::FourState => "four-state",
            ProtocolKind::PairwiseLeader => "pairwise-leader",
            ProtocolKind::ApproxCounting => "approx-counting",
        }
    }

    pub fn is_majority(self) -> bool {
        matches!(self, ProtocolKind::SplitJoin | ProtocolKind::FourState)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol '{s}'")))
    }
}

/// Initial gap between the two majority opinions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Advantage {
    /// `|a - b|` as an agent count.
    Absolute(u64),
    /// `|a - b| / n`.
    Fraction(f64),
}

impl Default for Advantage {
    fn default() -> Self {
        Advantage::Absolute(1)
    }
}

impl FromStr for Advantage {
    type Err = Error;

    /// `"3"` is an absolute gap, `"0.1"` or `"1/8"` a fraction of `n`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("invalid advantage '{s}'"));
        if let Some((p, q)) = s.split_once('/') {
            let p: f64 = p.trim().parse().map_err(|_| bad())?;
            let q: f64 = q.trim().parse().map_err(|_| bad())?;
            if q <= 0.0 {
                return Err(bad());
            }
            return Ok(Advantage::Fraction(p / q));
        }
        if let Ok(k) = s.parse::<u64>() {
            return Ok(Advantage::Absolute(k));
        }
        s.parse::<f64>().map(Advantage::Fraction).map_err(|_| bad())
    }
}

impl Advantage {
    /// Opinion counts `(a, b)` for `n` agents with A in the majority.
    ///
    /// `a - b` and `n` must share parity, so the gap is rounded up to the
    /// next admissible value (`2` for even `n` when `1` is requested).
    pub fn split(self, n: u64) -> Result<(u64, u64)> {
        let mut gap = match self {
            Advantage::Absolute(k) => k,
            Advantage::Fraction(f) if (0.0..=1.0).contains(&f) => (f * n as f64).round() as u64,
            Advantage::Fraction(f) => {
                return Err(Error::Config(format!(
                    "advantage fraction {f} not in [0, 1]"
                )))
            }
        };
        if (n - gap.min(n)) % 2 == 1 {
            gap += 1;
        }
        if gap > n {
            return Err(Error::Config(format!("advantage {gap} exceeds n = {n}")));
        }
        let a = (n + gap) / 2;
        Ok((a, n - a))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: ProtocolKind,
    pub n_values: Vec<u64>,
    pub advantage: Advantage,
    pub seeds: u64,
    pub base_seed: u64,
    pub max_interactions: u64,
    /// Interactions between stabilization checks; defaults to `n`.
    pub check_period: Option<u64>,
    /// Lottery state budget override.
    pub m: Option<u64>,
    pub chained_reactions: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: ProtocolKind::SplitJoin,
            n_values: vec![64],
            advantage: Advantage::default(),
            seeds: 1,
            base_seed: 0,
            max_interactions: 1_000_000_000,
            check_period: None,
            m: None,
            chained_reactions: true,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() {
            return Err(Error::Config("no n values".into()));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("n = {n} is below 2")));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.max_interactions == 0 {
            return Err(Error::Config("max_interactions must be at least 1".into()));
        }
        if self.check_period == Some(0) {
            return Err(Error::Config("check_period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn budget(&self, n: u64) -> RunBudget {
        RunBudget {
            max_interactions: self.max_interactions,
            check_period: self.check_period.unwrap_or(n),
        }
    }

    /// Seeds of the trials at each `n`: `base_seed, base_seed + 1, ...`.
    pub fn trial_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds).map(|i| self.base_seed.wrapping_add(i))
    }
}

/// Instantiates the configured protocol for `n` agents.
pub fn build_protocol(cfg: &ExperimentConfig, n: u64) -> Result<Box<dyn Protocol>> {
    let p: Box<dyn Protocol> = match cfg.protocol {
        ProtocolKind::SplitJoin => {
            let (a, b) = cfg.advantage.split(n)?;
            Box::new(SplitJoin::new(SplitJoinParams::new(
                n,
                a,
                b,
                cfg.chained_reactions,
            )?)?)
        }
        ProtocolKind::FourState => {
            let (a, b) = cfg.advantage.split(n)?;
            Box::new(FourStateMajority::new(a, b)?)
        }
        ProtocolKind::Lottery => {
            let params = match cfg.m {
                Some(m) => LotteryParams::with_m(n, m)?,
                None => LotteryParams::new(n)?,
            };
            Box::new(Lottery::new(params)?)
        }
        ProtocolKind::PairwiseLeader => Box::new(PairwiseLeader::new(n)?),
        ProtocolKind::ApproxCounting => Box::new(ApproxCounting::new(n)?),
    };
    Ok(p)
}

/// Minimum count over occupied states.
pub fn min_state_count_probe(c: &Configuration) -> u32 {
    c.min_occupied_count()
}

/// `|a - b| / n` for majority records.
pub fn record_epsilon(r: &TrialRecord) -> Option<f64> {
    let a = r.params.get("a")?.as_u64()?;
    let b = r.params.get("b")?.as_u64()?;
    Some(a.abs_diff(b) as f64 / r.n as f64)
}

pub fn write_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        let split = if r.protocol == "split-join" {
            r.split_reactions.to_string()
        } else {
            String::new()
        };
        w.write_record([
            r.protocol.clone(),
            r.n.to_string(),
            r.seed.to_string(),
            record_epsilon(r).map(|e| e.to_string()).unwrap_or_default(),
            r.interactions.to_string(),
            r.parallel_time().to_string(),
            r.stabilized.to_string(),
            r.output.clone().unwrap_or_else(|| "none".into()),
            r.correct.to_string(),
            r.distinct_states.to_string(),
            split,
            r.min_state_count.map(|m| m.to_string()).unwrap_or_default(),
            RNG_ALGORITHM.to_string(),
            r.params.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-`(protocol, n)` statistics. Times are over stabilized trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub protocol: String,
    pub n: u64,
    pub trials: usize,
    pub stabilized: usize,
    pub mean_parallel_time: f64,
    pub median_parallel_time: f64,
    pub max_parallel_time: f64,
    pub success_rate: f64,
    pub mean_distinct_states: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PolylogFit {
    /// Exponent `k` in `time ~ C (log2 n)^k`.
    pub slope: f64,
    pub stderr: f64,
    /// `ln C`.
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub groups: Vec<GroupSummary>,
    pub fit: Option<PolylogFit>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

fn groups(records: &[TrialRecord]) -> BTreeMap<(String, u64), Vec<&TrialRecord>> {
    let mut g: BTreeMap<(String, u64), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        g.entry((r.protocol.clone(), r.n)).or_default().push(r);
    }
    g
}

/// Aggregates records; independent of record order.
pub fn summarize(records: &[TrialRecord]) -> SweepSummary {
    let groups: Vec<GroupSummary> = groups(records)
        .into_iter()
        .map(|((protocol, n), rs)| {
            let mut times: Vec<f64> = rs
                .iter()
                .filter(|r| r.stabilized)
                .map(|r| r.parallel_time())
                .collect();
            let mean = if times.is_empty() {
                f64::NAN
            } else {
                times.iter().sum::<f64>() / times.len() as f64
            };
            let max = times.iter().copied().fold(f64::NAN, f64::max);
            GroupSummary {
                protocol,
                n,
                trials: rs.len(),
                stabilized: times.len(),
                mean_parallel_time: mean,
                median_parallel_time: median(&mut times),
                max_parallel_time: max,
                success_rate: rs.iter().filter(|r| r.correct).count() as f64 / rs.len() as f64,
                mean_distinct_states: rs.iter().map(|r| r.distinct_states as f64).sum::<f64>()
                    / rs.len() as f64,
            }
        })
        .collect();
    SweepSummary {
        groups,
        fit: fit_polylog(records).ok(),
    }
}

pub const FIT_MIN_GROUPS: usize = 4;
pub const FIT_MIN_TRIALS: usize = 30;

/// Least-squares slope of `ln(mean parallel time)` against `ln(log2 n)`.
pub fn fit_polylog(records: &[TrialRecord]) -> Result<PolylogFit> {
    let points: Vec<(f64, f64)> = groups(records)
        .into_iter()
        .filter_map(|((_, n), rs)| {
            let times: Vec<f64> = rs
                .iter()
                .filter(|r| r.stabilized)
                .map(|r| r.parallel_time())
                .collect();
            (times.len() >= FIT_MIN_TRIALS && n > 2).then(|| {
                let mean = times.iter().sum::<f64>() / times.len() as f64;
                ((n as f64).log2().ln(), mean.ln())
            })
        })
        .collect();
    if points.len() < FIT_MIN_GROUPS {
        return Err(Error::InsufficientData(format!(
            "need {FIT_MIN_GROUPS} values of n > 2 with {FIT_MIN_TRIALS} stabilized trials each, have {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::InsufficientData(
            "a group has zero mean parallel time".into(),
        ));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(PolylogFit {
        slope,
        stderr,
        intercept,
    })
}

impl fmt::Display for SweepSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>8} {:>7} {:>12} {:>12} {:>12} {:>8} {:>10}",
            "protocol", "n", "trials", "mean_pt", "median_pt", "max_pt", "success", "distinct"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<16} {:>8} {:>7} {:>12.2} {:>12.2} {:>12.2} {:>8.3} {:>10.1}",
                g.protocol,
                g.n,
                g.trials,
                g.mean_parallel_time,
                g.median_parallel_time,
                g.max_parallel_time,
                g.success_rate,
                g.mean_distinct_states
            )?;
        }
        match &self.fit {
            Some(fit) => writeln!(
                f,
                "fit: mean parallel time ~ {:.3} * (log2 n)^{:.3} (stderr {:.3})",
                fit.intercept.exp(),
                fit.slope,
                fit.stderr
            ),
            None => writeln!(f, "fit: not enough data"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub records: Vec<TrialRecord>,
    pub summary: SweepSummary,
}

impl SweepOutcome {
    pub fn all_correct(&self) -> bool {
        self.records.iter().all(|r| r.correct)
    }
}

/// Runs every `(n, seed)` trial of the configuration on the worker pool and
/// writes the CSV if an output path is set. Records are in `(n, seed)` order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let protos: Vec<Box<dyn Protocol>> = cfg
        .n_values
        .iter()
        .map(|&n| build_protocol(cfg, n))
        .collect::<Result<_>>()?;
    let mut specs = Vec::new();
    for (proto, &n) in protos.iter().zip(&cfg.n_values) {
        let init = proto.initial();
        for seed in cfg.trial_seeds() {
            specs.push(TrialSpec {
                proto: proto.as_ref(),
                init: init.clone(),
                budget: cfg.budget(n),
                seed,
            });
        }
    }
    let records = run_trials_parallel(&specs)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &cfg.output {
        let file = std::fs::File::create(path)?;
        write_csv(&records, std::io::BufWriter::new(file))?;
    }
    let summary = summarize(&records);
    Ok(SweepOutcome { records, summary })
}
