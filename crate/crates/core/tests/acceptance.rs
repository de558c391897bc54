//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use popsim::baselines::four_state;
use popsim::coin::{predicted_mean_ones, ApproxCounting, CoinProcess};
use popsim::engine::{run_trial_observed, sample_pair, Observer, TrialSpec};
use popsim::harness::{
    fit_polylog, median, run_sweep, write_csv, Advantage, ExperimentConfig, ProtocolKind,
};
use popsim::lottery::{Lottery, LotteryParams};
use popsim::model_check::{check_protocol, Verdict};
use popsim::splitjoin::{SplitJoin, SplitJoinParams};
use popsim::{
    run_trials_parallel, Configuration, Protocol, Result, RunBudget, SchedulerRng, StateId, Step,
    TrialRecord,
};

const BUDGET: u64 = 1_000_000_000;
const MAJORITY_NS: [u64; 4] = [1 << 6, 1 << 8, 1 << 10, 1 << 12];
const MAJORITY_SEEDS: u64 = 100;
const MAX_SLOPE: f64 = 3.5;
const CUBIC_CONSTANT: f64 = 200.0;
const COIN_SE_TOLERANCE: f64 = 3.0;
const CONCENTRATION_COVERAGE: f64 = 0.99;
const LOTTERY_NS: [u64; 3] = [1 << 6, 1 << 8, 1 << 10];
const LOTTERY_SEEDS: u64 = 100;
const PAYOFF_COVERAGE: f64 = 0.95;
/// Chi-square quantile for 2 degrees of freedom at significance 1e-3.
const CHI2_CRITICAL: f64 = 13.8155;
const LOTTERY_TIME_CONSTANT: f64 = 10.0;
const LOTTERY_TIME_EXPONENT: f64 = 6.3;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

/// Split-Join trials at the smallest admissible gap for each n.
fn majority_records() -> &'static [TrialRecord] {
    static DATA: OnceLock<Vec<TrialRecord>> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = ExperimentConfig {
            protocol: ProtocolKind::SplitJoin,
            n_values: MAJORITY_NS.to_vec(),
            advantage: Advantage::Absolute(1),
            seeds: MAJORITY_SEEDS,
            base_seed: 0,
            max_interactions: BUDGET,
            ..Default::default()
        };
        run_sweep(&cfg).expect("split-join sweep").records
    })
}

/// Tracks the exact configuration of a Lottery run alongside the engine.
struct LotteryTracker<'a> {
    lot: &'a Lottery,
    counts: HashMap<StateId, u32>,
    minions: u64,
    n: u64,
    all_minions: bool,
}

impl<'a> LotteryTracker<'a> {
    fn new(lot: &'a Lottery) -> Self {
        let init = lot.initial();
        LotteryTracker {
            lot,
            counts: init.iter().collect(),
            minions: lot.minion_count(&init),
            n: init.n(),
            all_minions: false,
        }
    }

    fn max_payoff(&self) -> u32 {
        self.counts
            .iter()
            .filter(|(_, &k)| k > 0)
            .map(|(&s, _)| self.lot.decode(s).payoff)
            .max()
            .unwrap_or(0)
    }
}

impl Observer for LotteryTracker<'_> {
    fn after_step(
        &mut self,
        _: u64,
        (a, b): (StateId, StateId),
        step: &Step,
        _: &Configuration,
    ) -> Result<()> {
        for s in [a, b] {
            *self.counts.get_mut(&s).expect("present") -= 1;
            self.minions -= u64::from(self.lot.is_minion(s));
        }
        for s in [step.first, step.second] {
            *self.counts.entry(s).or_insert(0) += 1;
            self.minions += u64::from(self.lot.is_minion(s));
        }
        self.all_minions |= self.minions == self.n;
        Ok(())
    }
}

struct LotteryRun {
    record: TrialRecord,
    minions: u64,
    all_minions: bool,
    max_payoff: u32,
}

fn lottery_runs() -> &'static HashMap<u64, Vec<std::result::Result<LotteryRun, String>>> {
    static DATA: OnceLock<HashMap<u64, Vec<std::result::Result<LotteryRun, String>>>> =
        OnceLock::new();
    DATA.get_or_init(|| {
        LOTTERY_NS
            .iter()
            .map(|&n| {
                let lot = Lottery::new(LotteryParams::new(n).unwrap()).unwrap();
                let init = lot.initial();
                let runs = (0..LOTTERY_SEEDS)
                    .map(|seed| {
                        let mut t = LotteryTracker::new(&lot);
                        let rec = run_trial_observed(
                            &lot,
                            &init,
                            RunBudget::per_parallel_time(n, BUDGET),
                            SchedulerRng::new(seed),
                            &mut t,
                        )
                        .map_err(|e| e.to_string())?;
                        Ok(LotteryRun {
                            record: rec,
                            minions: t.minions,
                            all_minions: t.all_minions,
                            max_payoff: t.max_payoff(),
                        })
                    })
                    .collect();
                (n, runs)
            })
            .collect()
    })
}

struct SumAudit<'a> {
    sj: &'a SplitJoin,
    expected: i64,
    violations: u64,
}

impl Observer for SumAudit<'_> {
    fn after_step(
        &mut self,
        _: u64,
        _: (StateId, StateId),
        _: &Step,
        c: &Configuration,
    ) -> Result<()> {
        self.violations += u64::from(self.sj.total_value(c) != self.expected);
        Ok(())
    }
}

fn c1_sum_invariant() -> Outcome {
    let mut violations = 0;
    let mut steps = 0;
    for n in [16u64, 256, 4096] {
        let (a, b) = Advantage::Absolute(1).split(n).unwrap();
        let sj = SplitJoin::new(SplitJoinParams::new(n, a, b, true).unwrap()).unwrap();
        for seed in 0..20 {
            let mut audit = SumAudit {
                sj: &sj,
                expected: sj.params().initial_sum(),
                violations: 0,
            };
            let rec = run_trial_observed(
                &sj,
                &sj.initial(),
                RunBudget::per_parallel_time(n, BUDGET),
                SchedulerRng::new(seed),
                &mut audit,
            )
            .unwrap();
            violations += audit.violations;
            steps += rec.interactions;
        }
    }
    (
        violations == 0,
        format!("{violations} violations over {steps} audited interactions"),
    )
}

fn c2_safety() -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for chained in [true, false] {
        for n in 2..=5u64 {
            for a in (0..=n).filter(|&a| 2 * a != n) {
                let sj =
                    SplitJoin::new(SplitJoinParams::new(n, a, n - a, chained).unwrap()).unwrap();
                let (verdict, _) = check_protocol(&sj, 1_000_000).unwrap();
                checked += 1;
                if verdict != Verdict::Pass {
                    failures.push(format!("n={n} a={a} chained={chained}"));
                }
            }
        }
    }
    (
        failures.is_empty(),
        format!("{checked} instances, failures: {failures:?}"),
    )
}

fn c3_stabilization() -> Outcome {
    let recs = majority_records();
    let mut detail = Vec::new();
    let mut ok = recs.len() == MAJORITY_NS.len() * MAJORITY_SEEDS as usize;
    for n in MAJORITY_NS {
        let rs: Vec<&TrialRecord> = recs.iter().filter(|r| r.n == n).collect();
        let good = rs
            .iter()
            .filter(|r| r.stabilized && r.correct && r.output.as_deref() == Some("Win_A"))
            .count();
        ok &= good == rs.len();
        let gap = rs[0].params["a"].as_u64().unwrap() - rs[0].params["b"].as_u64().unwrap();
        detail.push(format!("n={n} |a-b|={gap}: {good}/{}", rs.len()));
    }
    (ok, detail.join(", "))
}

fn c4_polylog() -> Outcome {
    let recs = majority_records();
    let fit = fit_polylog(recs).unwrap();
    let top = *MAJORITY_NS.last().unwrap();
    let times: Vec<f64> = recs
        .iter()
        .filter(|r| r.n == top)
        .map(|r| r.parallel_time())
        .collect();
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let ceiling = CUBIC_CONSTANT * (top as f64).log2().powi(3);
    (
        fit.slope <= MAX_SLOPE && mean < ceiling,
        format!(
            "slope {:.3} (stderr {:.3}), fitted constant {:.3}; mean time at n={top} is {mean:.1} vs ceiling {ceiling:.0}",
            fit.slope,
            fit.stderr,
            fit.intercept.exp()
        ),
    )
}

struct PotentialAudit<'a> {
    sj: &'a SplitJoin,
    last: u64,
    increases: u64,
}

impl Observer for PotentialAudit<'_> {
    fn after_step(
        &mut self,
        _: u64,
        _: (StateId, StateId),
        _: &Step,
        c: &Configuration,
    ) -> Result<()> {
        let phi = self.sj.total_potential(c);
        self.increases += u64::from(phi > self.last);
        self.last = phi;
        Ok(())
    }
}

fn c5_split_bound() -> Outcome {
    let recs = majority_records();
    let over = recs
        .iter()
        .filter(|r| r.split_reactions > 2 * r.n * r.n)
        .count();
    let worst = recs
        .iter()
        .map(|r| r.split_reactions as f64 / (2 * r.n * r.n) as f64)
        .fold(0.0, f64::max);
    let n = 64;
    let (a, b) = Advantage::Absolute(1).split(n).unwrap();
    let sj = SplitJoin::new(SplitJoinParams::new(n, a, b, true).unwrap()).unwrap();
    let init = sj.initial();
    let mut increases = 0;
    for seed in 0..10 {
        let mut audit = PotentialAudit {
            sj: &sj,
            last: sj.total_potential(&init),
            increases: 0,
        };
        run_trial_observed(
            &sj,
            &init,
            RunBudget::per_parallel_time(n, BUDGET),
            SchedulerRng::new(seed),
            &mut audit,
        )
        .unwrap();
        increases += audit.increases;
    }
    (
        over == 0 && increases == 0,
        format!("{over} trials above 2n^2 (max ratio {worst:.5}), {increases} potential increases in 10 trials at n=64"),
    )
}

fn c6_coin_expectation() -> Outcome {
    let n = 1000;
    let trials = 10_000u64;
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, m) in [n, 2 * n, 4 * n].into_iter().enumerate() {
        let xs: Vec<f64> = (0..trials)
            .map(|t| {
                let mut p = CoinProcess::new(n, SchedulerRng::new(t).stream(i as u64)).unwrap();
                p.run(m) as f64
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / trials as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        let predicted = predicted_mean_ones(n, 0, m).unwrap();
        let z = (mean - predicted) / se;
        ok &= z.abs() <= COIN_SE_TOLERANCE;
        detail.push(format!(
            "m={m}: mean {mean:.3} vs {predicted:.3} (z={z:.2})"
        ));
    }
    (ok, detail.join(", "))
}

fn c7_coin_concentration() -> Outcome {
    let n = 10_000u64;
    let k = 2 * n;
    let trials = 1000;
    let bound = n as f64 / 256.0;
    let devs: Vec<f64> = (0..trials)
        .map(|t| {
            let mut p = CoinProcess::new(n, SchedulerRng::new(t)).unwrap();
            (p.run(k) as f64 - n as f64 / 2.0).abs()
        })
        .collect();
    let inside = devs.iter().filter(|&&d| d <= bound).count();
    let coverage = inside as f64 / trials as f64;
    let rms = (devs.iter().map(|d| d * d).sum::<f64>() / trials as f64).sqrt();
    (
        coverage >= CONCENTRATION_COVERAGE,
        format!(
            "{inside}/{trials} within n/256 = {bound:.2} (need {:.0}%); rms deviation {rms:.1}",
            CONCENTRATION_COVERAGE * 100.0
        ),
    )
}

fn c8_leader_correctness() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for n in LOTTERY_NS {
        let runs = &lottery_runs()[&n];
        let mut good = 0;
        let mut errors = 0;
        for r in runs {
            match r {
                Ok(r) => {
                    good += usize::from(
                        r.record.stabilized
                            && r.record.correct
                            && r.minions == n - 1
                            && !r.all_minions
                            && r.record.output.as_deref() == Some("Win"),
                    )
                }
                Err(_) => errors += 1,
            }
        }
        ok &= good == runs.len();
        detail.push(format!("n={n}: {good}/{} ({errors} errors)", runs.len()));
    }
    for n in [2u64, 3] {
        let lot = Lottery::new(LotteryParams::with_caps(n, 2, 1).unwrap()).unwrap();
        let (verdict, nodes) = check_protocol(&lot, 1_000_000).unwrap();
        ok &= verdict.is_pass();
        let shown = match verdict {
            Verdict::Fail { reason, .. } => format!("FAIL ({reason})"),
            v => v.to_string(),
        };
        detail.push(format!(
            "model check n={n}: {shown} over {nodes} configurations"
        ));
    }
    (ok, detail.join(", "))
}

fn c9_payoff_range() -> Outcome {
    let n = 1024u64;
    let log = (n as f64).log2();
    let (lo, hi) = (0.5 * log, 9.0 * log);
    let in_range = |x: f64| (lo..=hi).contains(&x);
    let payoffs: Vec<u32> = lottery_runs()[&n]
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|r| r.max_payoff)
        .collect();
    let lot_cov =
        payoffs.iter().filter(|&&p| in_range(p as f64)).count() as f64 / LOTTERY_SEEDS as f64;

    let ac = ApproxCounting::new(n).unwrap();
    let init = ac.initial();
    let budget = RunBudget::per_parallel_time(n, BUDGET);
    let specs: Vec<TrialSpec> = (0..LOTTERY_SEEDS)
        .map(|seed| TrialSpec {
            proto: &ac,
            init: init.clone(),
            budget,
            seed,
        })
        .collect();
    let estimates: Vec<f64> = run_trials_parallel(&specs)
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|r| r.stabilized)
        .filter_map(|r| r.output?.parse().ok())
        .collect();
    let est_cov = estimates.iter().filter(|&&e| in_range(e)).count() as f64 / LOTTERY_SEEDS as f64;
    let (pmin, pmax) = (payoffs.iter().min(), payoffs.iter().max());
    let (emin, emax) = (
        estimates.iter().copied().fold(f64::INFINITY, f64::min),
        estimates.iter().copied().fold(0.0, f64::max),
    );
    (
        lot_cov >= PAYOFF_COVERAGE && est_cov >= PAYOFF_COVERAGE,
        format!(
            "range [{lo}, {hi}]: lottery max payoff {:.0}% (min {pmin:?}, max {pmax:?}), counting estimate {:.0}% (min {emin}, max {emax})",
            lot_cov * 100.0,
            est_cov * 100.0
        ),
    )
}

fn c10_state_space() -> Outcome {
    let mut ns: Vec<u64> = (2..=64).collect();
    for k in 7..=16 {
        ns.extend([(1u64 << k) - 1, 1 << k, (1 << k) + 1]);
    }
    ns.retain(|&n| n <= 1 << 16);
    let mut ok = true;
    let mut largest = (0, 0);
    for &n in &ns {
        let sj = SplitJoin::new(SplitJoinParams::new(n, n, 0, true).unwrap()).unwrap();
        ok &= sj.num_states() <= sj.state_bound();
        let lot = Lottery::new(LotteryParams::new(n).unwrap()).unwrap();
        ok &= (lot.num_states() as u64) <= lot.params().field_range_product();
        largest = (sj.num_states(), lot.num_states());
    }
    (
        ok,
        format!(
            "{} sizes up to n=65536: split-join {} states, lottery {} states at the top",
            ns.len(),
            largest.0,
            largest.1
        ),
    )
}

fn c11_engine_statistics() -> Outcome {
    use four_state::{A, B};
    let c = Configuration::from_counts(4, &[(A, 2), (B, 2)]).unwrap();
    let mut rng = SchedulerRng::new(2024);
    let draws = 1_000_000u64;
    let mut counts = [0u64; 3];
    for _ in 0..draws {
        let (x, y) = sample_pair(&c, &mut rng).unwrap();
        counts[match (x, y) {
            (A, A) => 0,
            (B, B) => 1,
            _ => 2,
        }] += 1;
    }
    let expected = [
        draws as f64 / 6.0,
        draws as f64 / 6.0,
        draws as f64 * 2.0 / 3.0,
    ];
    let chi2: f64 = counts
        .iter()
        .zip(expected)
        .map(|(&o, e)| (o as f64 - e).powi(2) / e)
        .sum();

    let cfg = ExperimentConfig {
        protocol: ProtocolKind::SplitJoin,
        n_values: vec![16, 64],
        seeds: 5,
        base_seed: 7,
        ..Default::default()
    };
    let csv = || {
        let mut buf = Vec::new();
        write_csv(&run_sweep(&cfg).unwrap().records, &mut buf).unwrap();
        buf
    };
    let first = csv();
    let identical = first == csv();
    let golden = include_bytes!("golden/sweep.csv");
    let matches_golden = first == golden;
    (
        chi2 < CHI2_CRITICAL && identical && matches_golden,
        format!(
            "chi2 {chi2:.3} < {CHI2_CRITICAL} over counts {counts:?}; repeat identical {identical}, golden match {matches_golden}"
        ),
    )
}

fn c12_lottery_time() -> Outcome {
    let n = 1024u64;
    let mut times: Vec<f64> = lottery_runs()[&n]
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter(|r| r.record.stabilized)
        .map(|r| r.record.parallel_time())
        .collect();
    let count = times.len();
    let med = median(&mut times);
    let ceiling = LOTTERY_TIME_CONSTANT * (n as f64).log2().powf(LOTTERY_TIME_EXPONENT);
    let q = |p: f64| times[((count - 1) as f64 * p).round() as usize];
    (
        count == LOTTERY_SEEDS as usize && med <= ceiling,
        format!(
            "median {med:.1} vs ceiling {ceiling:.0}; quartiles {:.1} / {:.1}, max {:.1}",
            q(0.25),
            q(0.75),
            q(1.0)
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("sum invariant", c1_sum_invariant),
        ("safety by model check", c2_safety),
        ("stabilization at minimal advantage", c3_stabilization),
        ("polylog time trend", c4_polylog),
        ("split bound and potential", c5_split_bound),
        ("coin expectation", c6_coin_expectation),
        ("coin concentration", c7_coin_concentration),
        ("leader election correctness", c8_leader_correctness),
        ("lottery payoff range", c9_payoff_range),
        ("state-space sizes", c10_state_space),
        ("engine statistics and determinism", c11_engine_statistics),
        ("lottery time ceiling", c12_lottery_time),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f.parse() == Ok(id)) {
            continue;
        }
        let started = std::time::Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += usize::from(!ok);
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
