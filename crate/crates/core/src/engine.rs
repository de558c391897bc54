//! Uniform random scheduler.
//!
//! Every step picks two distinct agents uniformly among the `n(n-1)/2`
//! unordered pairs and applies the protocol's transition to their states.
//! The engine keeps a per-agent state array so that sampling is O(1), and a
//! [`Configuration`] mirror that stabilization detectors read.
//!
//! Stabilization is checked every `check_period` interactions (default: one
//! unit of parallel time), so a reported stabilization time may lag the true
//! one by at most `check_period` interactions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Configuration, Output, Protocol, StateId, Step};

/// Name recorded in output metadata for the scheduler's generator.
pub const RNG_ALGORITHM: &str = "chacha8-rand_chacha0.9";

/// Seeded scheduler randomness: ChaCha8 keyed by `seed_from_u64(seed)`.
///
/// Independent trials use distinct seeds; the generator is platform
/// independent, so a seed fixes the trajectory bit for bit.
#[derive(Clone, Debug)]
pub struct SchedulerRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SchedulerRng {
    pub fn new(seed: u64) -> Self {
        SchedulerRng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform integer in `0..bound`.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        self.rng.random_range(0..bound)
    }

    /// Two distinct agent indices, uniform over unordered pairs.
    #[inline]
    pub fn agent_pair(&mut self, n: usize) -> (usize, usize) {
        let i = self.rng.random_range(0..n);
        let mut j = self.rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    }

    /// Independent stream `index` derived from this generator's seed.
    pub fn stream(&self, index: u64) -> SchedulerRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        SchedulerRng {
            seed: self.seed,
            rng,
        }
    }
}

/// Interaction budget of a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RunBudget {
    pub max_interactions: u64,
    pub check_period: u64,
}

impl RunBudget {
    pub fn new(max_interactions: u64, check_period: u64) -> Result<Self> {
        if max_interactions == 0 || check_period == 0 {
            return Err(Error::InvalidParams(format!(
                "budget needs max_interactions >= 1 and check_period >= 1, got {max_interactions} and {check_period}"
            )));
        }
        Ok(RunBudget {
            max_interactions,
            check_period,
        })
    }

    /// Budget that checks stabilization once per unit of parallel time.
    pub fn per_parallel_time(n: u64, max_interactions: u64) -> Self {
        RunBudget {
            max_interactions,
            check_period: n.max(1),
        }
    }
}

/// Outcome of a single simulation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub protocol: String,
    pub n: u64,
    pub seed: u64,
    /// Interactions performed: the detection point when stabilized, the
    /// whole budget otherwise.
    pub interactions: u64,
    pub stabilized: bool,
    pub output: Option<String>,
    pub correct: bool,
    pub distinct_states: u64,
    pub split_reactions: u64,
    pub min_state_count: Option<u32>,
    pub params: serde_json::Value,
}

impl TrialRecord {
    /// Interactions divided by `n`; correctly rounded f64 of the exact ratio.
    pub fn parallel_time(&self) -> f64 {
        self.interactions as f64 / self.n as f64
    }
}

/// Hook invoked after every interaction. Used by audits that need the full
/// trajectory (conservation laws, potentials).
pub trait Observer {
    fn after_step(
        &mut self,
        index: u64,
        before: (StateId, StateId),
        step: &Step,
        config: &Configuration,
    ) -> Result<()>;
}

pub struct NoObserver;

impl Observer for NoObserver {
    #[inline]
    fn after_step(
        &mut self,
        _: u64,
        _: (StateId, StateId),
        _: &Step,
        _: &Configuration,
    ) -> Result<()> {
        Ok(())
    }
}

/// Samples the states of two distinct agents by scanning cumulative counts.
pub fn sample_pair(c: &Configuration, rng: &mut SchedulerRng) -> Result<(StateId, StateId)> {
    let n = c.n();
    if n < 2 {
        return Err(Error::InvalidPopulation { n });
    }
    let first = pick_by_count(c, rng.below(n), None);
    let second = pick_by_count(c, rng.below(n - 1), Some(first));
    Ok((first, second))
}

fn pick_by_count(c: &Configuration, mut r: u64, skip_one: Option<StateId>) -> StateId {
    let mut last = None;
    for (s, k) in c.iter() {
        let k = k as u64 - u64::from(skip_one == Some(s));
        if r < k {
            return s;
        }
        r -= k;
        last = Some(s);
    }
    last.expect("sampled from a non-empty configuration")
}

pub fn run_trial<P: Protocol + ?Sized>(
    proto: &P,
    init: &Configuration,
    budget: RunBudget,
    rng: SchedulerRng,
) -> Result<TrialRecord> {
    run_trial_observed(proto, init, budget, rng, &mut NoObserver)
}

pub fn run_trial_observed<P: Protocol + ?Sized, O: Observer>(
    proto: &P,
    init: &Configuration,
    budget: RunBudget,
    mut rng: SchedulerRng,
    observer: &mut O,
) -> Result<TrialRecord> {
    let n = init.n();
    if n < 2 {
        return Err(Error::InvalidPopulation { n });
    }
    if init.num_states() != proto.num_states() {
        return Err(Error::ContractViolation(format!(
            "configuration has {} states, protocol {} has {}",
            init.num_states(),
            proto.name(),
            proto.num_states()
        )));
    }
    let period = budget.check_period.max(1);
    let mut agents = init.agents();
    let mut config = init.clone();
    let mut seen = vec![false; proto.num_states()];
    let mut distinct = 0u64;
    for (s, _) in init.iter() {
        seen[s.index()] = true;
        distinct += 1;
    }
    let mut splits = 0u64;
    let mut interactions = 0u64;

    let stabilized = loop {
        if interactions >= budget.max_interactions {
            break budget.max_interactions > 0 && proto.is_stable_output(&config)?;
        }
        if interactions.is_multiple_of(period) && proto.is_stable_output(&config)? {
            break true;
        }
        let (i, j) = rng.agent_pair(agents.len());
        let (a, b) = (agents[i], agents[j]);
        let step = proto.interact(a, b)?;
        agents[i] = step.first;
        agents[j] = step.second;
        config.replace_pair(a, b, step.first, step.second)?;
        for s in [step.first, step.second] {
            if !seen[s.index()] {
                seen[s.index()] = true;
                distinct += 1;
            }
        }
        splits += u64::from(step.split);
        observer.after_step(interactions, (a, b), &step, &config)?;
        interactions += 1;
    };

    let output: Option<Output> = if stabilized {
        proto.consensus_output(&config)
    } else {
        None
    };
    let correct = stabilized && proto.goal().is_none_or(|g| g.holds(proto, &config));
    Ok(TrialRecord {
        protocol: proto.name().to_string(),
        n,
        seed: rng.seed(),
        interactions,
        stabilized,
        output: output.map(|o| o.to_string()),
        correct,
        distinct_states: distinct,
        split_reactions: splits,
        min_state_count: Some(config.min_occupied_count()),
        params: proto.params_json(),
    })
}

/// One entry of a batch of independent trials.
pub struct TrialSpec<'a> {
    pub proto: &'a dyn Protocol,
    pub init: Configuration,
    pub budget: RunBudget,
    pub seed: u64,
}

/// Runs trials on the rayon pool. Records come back in input order and are
/// identical to running the same specs sequentially.
pub fn run_trials_parallel(specs: &[TrialSpec<'_>]) -> Vec<Result<TrialRecord>> {
    specs
        .par_iter()
        .map(|t| run_trial(t.proto, &t.init, t.budget, SchedulerRng::new(t.seed)))
        .collect()
}
