//! Synthetic coins.
//!
//! Every agent keeps one bit, initially zero, and both partners flip their
//! bit on every interaction. An agent uses its partner's bit, read before the
//! flip, as a random bit. The number of ones performs a lazy walk towards
//! `n/2` and mixes within a constant amount of parallel time.

use serde_json::json;

use crate::engine::SchedulerRng;
use crate::error::{Error, Result};
use crate::model::{Configuration, Goal, Output, Protocol, StateId, Step};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoinBit(bool);

impl CoinBit {
    pub const ZERO: CoinBit = CoinBit(false);
    pub const ONE: CoinBit = CoinBit(true);

    pub fn new(one: bool) -> Self {
        CoinBit(one)
    }

    #[inline]
    pub fn is_one(self) -> bool {
        self.0
    }

    #[inline]
    pub fn flipped(self) -> Self {
        CoinBit(!self.0)
    }

    pub fn as_u8(self) -> u8 {
        u8::from(self.0)
    }
}

pub fn flip_pair(a: CoinBit, b: CoinBit) -> (CoinBit, CoinBit) {
    (a.flipped(), b.flipped())
}

/// The bit an agent observes: its partner's coin before the flip.
#[inline]
pub fn observed_coin(partner: CoinBit) -> CoinBit {
    partner
}

/// `E[X_{i+m} | X_i = x] = n/2 + (1 - 4/n)^m (x - n/2)`.
pub fn predicted_mean_ones(n: u64, x: u64, m: u64) -> Result<f64> {
    if n < 2 || x > n {
        return Err(Error::InvalidParams(format!(
            "need n >= 2 and x <= n, got n = {n}, x = {x}"
        )));
    }
    let half = n as f64 / 2.0;
    let decay = (1.0 - 4.0 / n as f64).powf(m as f64);
    Ok(half + decay * (x as f64 - half))
}

/// Snapshot of the coin process: `ones` coins equal one after `k` interactions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoinStats {
    pub n: u64,
    pub alpha: f64,
    pub k: u64,
    pub ones: u64,
}

/// The coin layer alone, run under the uniform scheduler.
pub struct CoinProcess {
    bits: Vec<CoinBit>,
    ones: u64,
    steps: u64,
    rng: SchedulerRng,
}

impl CoinProcess {
    /// `n` agents with coin zero.
    pub fn new(n: u64, rng: SchedulerRng) -> Result<Self> {
        Self::with_ones(n, 0, rng)
    }

    /// `n` agents of which the first `ones` start with coin one.
    pub fn with_ones(n: u64, ones: u64, rng: SchedulerRng) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPopulation { n });
        }
        if ones > n {
            return Err(Error::InvalidParams(format!(
                "{ones} ones among {n} agents"
            )));
        }
        let bits = (0..n).map(|i| CoinBit::new(i < ones)).collect();
        Ok(CoinProcess {
            bits,
            ones,
            steps: 0,
            rng,
        })
    }

    pub fn ones(&self) -> u64 {
        self.ones
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One interaction; returns the change in the number of ones.
    #[inline]
    pub fn step(&mut self) -> i64 {
        let (i, j) = self.rng.agent_pair(self.bits.len());
        let (a, b) = flip_pair(self.bits[i], self.bits[j]);
        let delta = match (a.is_one(), b.is_one()) {
            (true, true) => 2,
            (false, false) => -2,
            _ => 0,
        };
        self.bits[i] = a;
        self.bits[j] = b;
        self.ones = (self.ones as i64 + delta) as u64;
        self.steps += 1;
        delta
    }

    pub fn run(&mut self, m: u64) -> u64 {
        for _ in 0..m {
            self.step();
        }
        self.ones
    }
}

/// `(k, X_k)` every `stride` interactions for `steps` interactions, starting from all zeros.
pub fn coin_trajectory(n: u64, steps: u64, stride: u64, seed: u64) -> Result<Vec<CoinStats>> {
    let stride = stride.max(1);
    let mut p = CoinProcess::new(n, SchedulerRng::new(seed))?;
    let alpha = |k: u64| k as f64 / n as f64;
    let mut out = vec![CoinStats {
        n,
        alpha: 0.0,
        k: 0,
        ones: 0,
    }];
    while p.steps() < steps {
        let chunk = stride.min(steps - p.steps());
        p.run(chunk);
        out.push(CoinStats {
            n,
            alpha: alpha(p.steps()),
            k: p.steps(),
            ones: p.ones(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CountingMode {
    Counting,
    Done,
}

/// Approximate counting agent: counts consecutive observed ones, then
/// spreads the maximum count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CountingState {
    pub coin: CoinBit,
    pub mode: CountingMode,
    pub estimate: u32,
}

impl CountingState {
    pub const INITIAL: CountingState = CountingState {
        coin: CoinBit::ZERO,
        mode: CountingMode::Counting,
        estimate: 0,
    };
}

/// Estimate update for one interaction. The coin itself is not flipped here.
pub fn counting_step(
    s: CountingState,
    partner_coin: CoinBit,
    partner_estimate: u32,
    cap: u32,
) -> CountingState {
    match s.mode {
        CountingMode::Counting if partner_coin.is_one() => {
            let estimate = (s.estimate + 1).min(cap);
            let mode = if estimate >= cap {
                CountingMode::Done
            } else {
                CountingMode::Counting
            };
            CountingState {
                estimate,
                mode,
                ..s
            }
        }
        CountingMode::Counting => CountingState {
            mode: CountingMode::Done,
            ..s
        },
        CountingMode::Done => CountingState {
            estimate: s.estimate.max(partner_estimate),
            ..s
        },
    }
}

/// Standalone approximate-counting protocol over coin x mode x estimate.
#[derive(Clone, Debug)]
pub struct ApproxCounting {
    n: u64,
    cap: u32,
}

impl ApproxCounting {
    /// Estimate cap `4 * ceil(log2 n)`.
    pub fn new(n: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPopulation { n });
        }
        let cap = 4 * crate::splitjoin::ceil_log2(n);
        Ok(ApproxCounting { n, cap })
    }

    pub fn with_cap(n: u64, cap: u32) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPopulation { n });
        }
        if cap == 0 {
            return Err(Error::InvalidParams("estimate cap must be positive".into()));
        }
        Ok(ApproxCounting { n, cap })
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn encode(&self, s: CountingState) -> StateId {
        let mode = match s.mode {
            CountingMode::Counting => 0,
            CountingMode::Done => 1,
        };
        let id = ((s.coin.as_u8() as u32 * 2 + mode) * (self.cap + 1)) + s.estimate;
        StateId(id)
    }

    pub fn decode(&self, s: StateId) -> CountingState {
        let width = self.cap + 1;
        let estimate = s.0 % width;
        let rest = s.0 / width;
        let mode = if rest.is_multiple_of(2) {
            CountingMode::Counting
        } else {
            CountingMode::Done
        };
        CountingState {
            coin: CoinBit::new(rest / 2 == 1),
            mode,
            estimate,
        }
    }
}

impl Protocol for ApproxCounting {
    fn name(&self) -> &'static str {
        "approx-counting"
    }

    fn num_states(&self) -> usize {
        4 * (self.cap as usize + 1)
    }

    fn initial(&self) -> Configuration {
        Configuration::from_counts(
            self.num_states(),
            &[(self.encode(CountingState::INITIAL), self.n as u32)],
        )
        .expect("initial state is registered")
    }

    fn interact(&self, a: StateId, b: StateId) -> Result<Step> {
        let (sa, sb) = (self.decode(a), self.decode(b));
        let mut na = counting_step(sa, observed_coin(sb.coin), sb.estimate, self.cap);
        let mut nb = counting_step(sb, observed_coin(sa.coin), sa.estimate, self.cap);
        (na.coin, nb.coin) = flip_pair(sa.coin, sb.coin);
        Ok(Step::new(self.encode(na), self.encode(nb)))
    }

    fn output(&self, s: StateId) -> Output {
        Output::Estimate(self.decode(s).estimate)
    }

    /// Every agent is done and all estimates agree: maxima cannot grow.
    fn is_stable_output(&self, c: &Configuration) -> Result<bool> {
        let mut common = None;
        for (s, _) in c.iter() {
            let st = self.decode(s);
            if st.mode != CountingMode::Done || common.is_some_and(|e| e != st.estimate) {
                return Ok(false);
            }
            common = Some(st.estimate);
        }
        Ok(common.is_some())
    }

    fn goal(&self) -> Option<Goal> {
        None
    }

    fn describe(&self, s: StateId) -> String {
        let st = self.decode(s);
        format!(
            "({:?}, coin={}, est={})",
            st.mode,
            st.coin.as_u8(),
            st.estimate
        )
    }

    fn params_json(&self) -> serde_json::Value {
        json!({ "n": self.n, "cap": self.cap })
    }
}
