use popsim::baselines::{FourStateMajority, PairwiseLeader};
use popsim::engine::sample_pair;
use popsim::lottery::{Lottery, LotteryParams};
use popsim::model_check::{detector_counterexample, explore, verify_stable_computation, Verdict};
use popsim::splitjoin::{SplitJoin, SplitJoinParams};
use popsim::{run_trial, Configuration, Protocol, RunBudget, SchedulerRng, StateId};
use proptest::prelude::*;

fn small_instances() -> Vec<Box<dyn Protocol>> {
    let mut out: Vec<Box<dyn Protocol>> = Vec::new();
    for n in 2..=5u64 {
        for a in (0..=n).filter(|&a| 2 * a != n) {
            for chained in [true, false] {
                let p = SplitJoinParams::new(n, a, n - a, chained).unwrap();
                out.push(Box::new(SplitJoin::new(p).unwrap()));
            }
            out.push(Box::new(FourStateMajority::new(a, n - a).unwrap()));
        }
        out.push(Box::new(PairwiseLeader::new(n).unwrap()));
    }
    out.push(Box::new(
        Lottery::new(LotteryParams::with_caps(3, 2, 1).unwrap()).unwrap(),
    ));
    out
}

#[test]
fn detectors_are_closed_under_successors() {
    for p in small_instances() {
        let g = explore(p.as_ref(), &p.initial(), 1_000_000).unwrap();
        let bad = detector_counterexample(&g, p.as_ref()).unwrap();
        assert_eq!(bad, None, "{} {}", p.name(), p.params_json());
    }
}

#[test]
fn simulation_agrees_with_passing_model_checks() {
    for p in small_instances() {
        let g = explore(p.as_ref(), &p.initial(), 1_000_000).unwrap();
        let goal = p.goal().unwrap();
        assert_eq!(
            verify_stable_computation(&g, p.as_ref(), goal),
            Verdict::Pass
        );
        let budget = RunBudget::new(10_000_000, 1).unwrap();
        for seed in 0..100 {
            let rec = run_trial(p.as_ref(), &p.initial(), budget, SchedulerRng::new(seed)).unwrap();
            assert!(
                rec.stabilized && rec.correct,
                "{} {} seed {seed}",
                p.name(),
                p.params_json()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Any mix of Split-Join states keeps its value sum along random interactions.
    #[test]
    fn splitjoin_value_sum_is_conserved(
        l in 1u32..=12,
        picks in prop::collection::vec(any::<u16>(), 2..60),
        seed in any::<u64>(),
    ) {
        let n = picks.len() as u64;
        let sj = SplitJoin::new(SplitJoinParams::new(n.max(1 << l), n.max(1 << l), 0, true).unwrap()).unwrap();
        let k = sj.num_states();
        let agents: Vec<StateId> = picks.iter().map(|&x| StateId::from(x as usize % k)).collect();
        let mut c = Configuration::from_agents(k, &agents).unwrap();
        let sum = sj.total_value(&c);
        let mut rng = SchedulerRng::new(seed);
        for _ in 0..500 {
            let (a, b) = sample_pair(&c, &mut rng).unwrap();
            c.apply(a, b, &sj).unwrap();
            prop_assert_eq!(sj.total_value(&c), sum);
            prop_assert_eq!(c.n(), n);
        }
    }

    /// Running a trial twice from the same seed gives the same record.
    #[test]
    fn trials_are_deterministic(n in 2u64..200, seed in any::<u64>(), chained in any::<bool>()) {
        let sj = SplitJoin::new(SplitJoinParams::new(n, n / 2 + 1, n - n / 2 - 1, chained).unwrap()).unwrap();
        let budget = RunBudget::per_parallel_time(n, 1_000_000_000);
        let a = run_trial(&sj, &sj.initial(), budget, SchedulerRng::new(seed)).unwrap();
        let b = run_trial(&sj, &sj.initial(), budget, SchedulerRng::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
