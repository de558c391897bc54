//! Lottery leader election.
//!
//! Agents pass through four modes. `Seeding` lets the synthetic coin mix for
//! four interactions. In `Lottery` an agent counts the consecutive ones it
//! observes, which becomes its payoff. In `Tournament` agents compare
//! `(payoff, level, coin)` on contact and the loser becomes a `Minion`; a
//! contender also raises its level after a phase in which every observed
//! coin was one. Minions carry the largest `(payoff, level)` pair they have
//! seen and eliminate weaker contenders. Minion mode is absorbing, and a
//! configuration with `n - 1` minions has a stable leader.

use std::cmp::Ordering;

use serde_json::json;

use crate::coin::{flip_pair, observed_coin, CoinBit};
use crate::error::{Error, Result};
use crate::model::{Configuration, Goal, Output, Protocol, StateId, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Seeding,
    Lottery,
    Tournament,
    Minion,
}

/// Interactions spent in seeding mode.
pub const SEEDING_INTERACTIONS: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LotteryParams {
    pub n: u64,
    pub m: u64,
    pub payoff_cap: u32,
    pub level_cap: u32,
}

/// Smallest integer `m >= (10 log2 n)^2`.
pub fn minimum_state_budget(n: u64) -> u64 {
    let l = 10.0 * (n as f64).log2();
    (l * l).ceil() as u64
}

impl LotteryParams {
    /// Parameters with the smallest admissible state budget `m`.
    pub fn new(n: u64) -> Result<Self> {
        Self::with_m(n, minimum_state_budget(n))
    }

    /// Caps derived from `m`: payoff `floor(sqrt m)`, level `floor(sqrt m / log2 m)`.
    pub fn with_m(n: u64, m: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPopulation { n });
        }
        let need = minimum_state_budget(n);
        if m < need {
            return Err(Error::InvalidParams(format!(
                "m = {m} is below (10 log2 n)^2 = {need} for n = {n}"
            )));
        }
        let root = (m as f64).sqrt();
        let payoff_cap = root.floor() as u32;
        let level_cap = (root / (m as f64).log2()).floor() as u32;
        Self::checked(LotteryParams {
            n,
            m,
            payoff_cap,
            level_cap,
        })
    }

    /// Explicit caps, bypassing the state-budget constraint. Correctness does
    /// not depend on the caps, so tiny values keep exhaustive checks feasible.
    pub fn with_caps(n: u64, payoff_cap: u32, level_cap: u32) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPopulation { n });
        }
        let m = payoff_cap as u64 * payoff_cap as u64;
        Self::checked(LotteryParams {
            n,
            m,
            payoff_cap,
            level_cap,
        })
    }

    fn checked(p: LotteryParams) -> Result<Self> {
        if p.payoff_cap < 1 || p.level_cap < 1 {
            return Err(Error::InvalidParams(format!(
                "payoff cap {} and level cap {} must both be at least 1",
                p.payoff_cap, p.level_cap
            )));
        }
        if p.n > u32::MAX as u64 {
            return Err(Error::InvalidParams(format!("n = {} is too large", p.n)));
        }
        Ok(p)
    }

    pub fn max_phase_len(&self) -> u32 {
        phase_len(self.payoff_cap)
    }

    /// Product of the field ranges: coin, mode, payoff, level, phase, ones.
    pub fn field_range_product(&self) -> u64 {
        2 * 4
            * (self.payoff_cap as u64 + 1)
            * (self.level_cap as u64 + 1)
            * (self.max_phase_len() as u64 + 1)
            * 2
    }
}

/// Phase length `ceil(4.2 (floor(log2 p) + 1))`, with payoff 0 treated as 1.
pub fn phase_len(payoff: u32) -> u32 {
    let bits = 32 - payoff.max(1).leading_zeros();
    (42 * bits).div_ceil(10)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LotteryState {
    pub coin: CoinBit,
    pub mode: Mode,
    pub payoff: u32,
    pub level: u32,
    pub counter: u8,
    pub phase: u32,
    pub ones: bool,
}

impl LotteryState {
    pub const INITIAL: LotteryState = LotteryState {
        coin: CoinBit::ZERO,
        mode: Mode::Seeding,
        payoff: 0,
        level: 0,
        counter: SEEDING_INTERACTIONS,
        phase: 0,
        ones: false,
    };

    pub fn pair(&self) -> (u32, u32) {
        (self.payoff, self.level)
    }

    fn lottery(coin: CoinBit, payoff: u32) -> Self {
        LotteryState {
            coin,
            mode: Mode::Lottery,
            payoff,
            level: 0,
            counter: 0,
            phase: 0,
            ones: false,
        }
    }

    fn tournament(coin: CoinBit, payoff: u32, level: u32, phase: u32, ones: bool) -> Self {
        LotteryState {
            coin,
            mode: Mode::Tournament,
            payoff,
            level,
            counter: 0,
            phase,
            ones,
        }
    }

    fn minion(coin: CoinBit, (payoff, level): (u32, u32)) -> Self {
        LotteryState {
            coin,
            mode: Mode::Minion,
            payoff,
            level,
            counter: 0,
            phase: 0,
            ones: false,
        }
    }

    /// Checks the field invariants, including canonical zeros in unused fields.
    pub fn validate(&self, p: &LotteryParams) -> Result<()> {
        let ok = self.payoff <= p.payoff_cap
            && self.level <= p.level_cap
            && match self.mode {
                Mode::Seeding => {
                    self.payoff == 0
                        && self.level == 0
                        && (1..=SEEDING_INTERACTIONS).contains(&self.counter)
                        && self.phase == 0
                        && !self.ones
                }
                Mode::Lottery => {
                    self.level == 0
                        && self.payoff < p.payoff_cap
                        && self.counter == 0
                        && self.phase == 0
                        && !self.ones
                }
                Mode::Tournament => self.counter == 0 && self.phase < phase_len(self.payoff),
                Mode::Minion => self.counter == 0 && self.phase == 0 && !self.ones,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::ContractViolation(format!(
                "malformed lottery state {self:?}"
            )))
        }
    }
}

/// Per-agent update from the partner's pre-flip coin.
fn bookkeeping(s: LotteryState, partner_coin: CoinBit, p: &LotteryParams) -> LotteryState {
    match s.mode {
        Mode::Seeding => {
            if s.counter == 1 {
                LotteryState::lottery(s.coin, 0)
            } else {
                LotteryState {
                    counter: s.counter - 1,
                    ..s
                }
            }
        }
        Mode::Lottery => {
            let payoff = if partner_coin.is_one() {
                s.payoff + 1
            } else {
                s.payoff
            };
            if payoff >= p.payoff_cap || !partner_coin.is_one() {
                LotteryState::tournament(s.coin, payoff.min(p.payoff_cap), 0, 0, true)
            } else {
                LotteryState::lottery(s.coin, payoff)
            }
        }
        Mode::Tournament => {
            let phase = s.phase + 1;
            let ones = s.ones && partner_coin.is_one();
            if phase == phase_len(s.payoff) {
                let level = if ones && s.level < p.level_cap {
                    s.level + 1
                } else {
                    s.level
                };
                LotteryState::tournament(s.coin, s.payoff, level, 0, true)
            } else {
                LotteryState::tournament(s.coin, s.payoff, s.level, phase, ones)
            }
        }
        Mode::Minion => s,
    }
}

/// Elimination rules between agents in tournament or minion mode.
fn compete(a: &mut LotteryState, b: &mut LotteryState) {
    match (a.mode, b.mode) {
        (Mode::Tournament, Mode::Tournament) => {
            let ka = (a.payoff, a.level, a.coin);
            let kb = (b.payoff, b.level, b.coin);
            match ka.cmp(&kb) {
                Ordering::Greater => *b = LotteryState::minion(b.coin, a.pair()),
                Ordering::Less => *a = LotteryState::minion(a.coin, b.pair()),
                Ordering::Equal => {}
            }
        }
        (Mode::Tournament, Mode::Minion) => contender_meets_minion(a, b),
        (Mode::Minion, Mode::Tournament) => contender_meets_minion(b, a),
        (Mode::Minion, Mode::Minion) => {
            let top = a.pair().max(b.pair());
            a.payoff = top.0;
            a.level = top.1;
            b.payoff = top.0;
            b.level = top.1;
        }
        _ => {}
    }
}

/// Minions never use the coin to break ties.
fn contender_meets_minion(contender: &mut LotteryState, minion: &mut LotteryState) {
    if minion.pair() > contender.pair() {
        *contender = LotteryState::minion(contender.coin, minion.pair());
    } else {
        let top = minion.pair().max(contender.pair());
        minion.payoff = top.0;
        minion.level = top.1;
    }
}

/// One interaction of the Lottery protocol. Each side first does its own
/// bookkeeping from the partner's pre-flip coin, then tournament and minion
/// agents compete using the updated fields, then both coins flip.
pub fn lottery_interact(
    a: LotteryState,
    b: LotteryState,
    p: &LotteryParams,
) -> Result<(LotteryState, LotteryState)> {
    a.validate(p)?;
    b.validate(p)?;
    let mut na = bookkeeping(a, observed_coin(b.coin), p);
    let mut nb = bookkeeping(b, observed_coin(a.coin), p);
    compete(&mut na, &mut nb);
    (na.coin, nb.coin) = flip_pair(a.coin, b.coin);
    Ok((na, nb))
}

/// Lottery protocol over a compact registry of well-formed states.
///
/// Layout: seeding (coin x counter), lottery (coin x payoff < cap),
/// tournament (per payoff: coin x level x phase x ones), minion
/// (coin x payoff x level).
#[derive(Clone, Debug)]
pub struct Lottery {
    params: LotteryParams,
    lottery_base: u32,
    tournament_base: u32,
    /// Start of each payoff's tournament block, relative to `tournament_base`;
    /// `payoff_cap + 2` entries.
    tournament_offsets: Vec<u32>,
    minion_base: u32,
    total: u32,
}

impl Lottery {
    pub fn new(params: LotteryParams) -> Result<Self> {
        let levels = params.level_cap as u64 + 1;
        let lottery_base = 2 * SEEDING_INTERACTIONS as u64;
        let tournament_base = lottery_base + 2 * params.payoff_cap as u64;
        let mut offsets = Vec::with_capacity(params.payoff_cap as usize + 2);
        let mut acc = 0u64;
        for payoff in 0..=params.payoff_cap {
            offsets.push(acc);
            acc += 2 * levels * phase_len(payoff) as u64 * 2;
        }
        offsets.push(acc);
        let minion_base = tournament_base + acc;
        let total = minion_base + 2 * (params.payoff_cap as u64 + 1) * levels;
        if total > params.field_range_product() {
            return Err(Error::InvariantViolation(format!(
                "{total} lottery states exceed the field-range bound {}",
                params.field_range_product()
            )));
        }
        if total > u32::MAX as u64 / 2 {
            return Err(Error::InvalidParams(format!(
                "{total} lottery states do not fit the registry"
            )));
        }
        Ok(Lottery {
            params,
            lottery_base: lottery_base as u32,
            tournament_base: tournament_base as u32,
            tournament_offsets: offsets.into_iter().map(|o| o as u32).collect(),
            minion_base: minion_base as u32,
            total: total as u32,
        })
    }

    pub fn params(&self) -> &LotteryParams {
        &self.params
    }

    pub fn encode(&self, s: LotteryState) -> StateId {
        let coin = s.coin.as_u8() as u32;
        let levels = self.params.level_cap + 1;
        let id = match s.mode {
            Mode::Seeding => coin * SEEDING_INTERACTIONS as u32 + (s.counter as u32 - 1),
            Mode::Lottery => self.lottery_base + coin * self.params.payoff_cap + s.payoff,
            Mode::Tournament => {
                let plen = phase_len(s.payoff);
                let inner = ((coin * levels + s.level) * plen + s.phase) * 2 + u32::from(s.ones);
                self.tournament_base + self.tournament_offsets[s.payoff as usize] + inner
            }
            Mode::Minion => {
                self.minion_base
                    + (coin * (self.params.payoff_cap + 1) + s.payoff) * levels
                    + s.level
            }
        };
        StateId(id)
    }

    pub fn decode(&self, id: StateId) -> LotteryState {
        let id = id.0;
        let levels = self.params.level_cap + 1;
        if id < self.lottery_base {
            let coin = CoinBit::new(id >= SEEDING_INTERACTIONS as u32);
            let counter = (id % SEEDING_INTERACTIONS as u32) as u8 + 1;
            LotteryState {
                counter,
                coin,
                ..LotteryState::INITIAL
            }
        } else if id < self.tournament_base {
            let r = id - self.lottery_base;
            let cap = self.params.payoff_cap;
            LotteryState::lottery(CoinBit::new(r >= cap), r % cap)
        } else if id < self.minion_base {
            let r = id - self.tournament_base;
            let payoff = self.tournament_offsets.partition_point(|&o| o <= r) as u32 - 1;
            let mut inner = r - self.tournament_offsets[payoff as usize];
            let ones = inner % 2 == 1;
            inner /= 2;
            let plen = phase_len(payoff);
            let phase = inner % plen;
            inner /= plen;
            let level = inner % levels;
            let coin = CoinBit::new(inner / levels == 1);
            LotteryState::tournament(coin, payoff, level, phase, ones)
        } else {
            let r = id - self.minion_base;
            let level = r % levels;
            let rest = r / levels;
            let width = self.params.payoff_cap + 1;
            LotteryState::minion(CoinBit::new(rest >= width), (rest % width, level))
        }
    }

    pub fn minion_count(&self, c: &Configuration) -> u64 {
        c.iter()
            .filter(|&(s, _)| s.0 >= self.minion_base)
            .map(|(_, k)| k as u64)
            .sum()
    }

    pub fn is_minion(&self, s: StateId) -> bool {
        s.0 >= self.minion_base
    }

    /// Lexicographic maximum `(payoff, level)` over the configuration.
    pub fn max_pair(&self, c: &Configuration) -> (u32, u32) {
        c.iter()
            .map(|(s, _)| self.decode(s).pair())
            .max()
            .unwrap_or((0, 0))
    }
}

/// `n - 1` minions means a stable leader. `n` minions can never happen and
/// is reported as an invariant violation.
pub fn leader_stable(proto: &Lottery, c: &Configuration) -> Result<bool> {
    let minions = proto.minion_count(c);
    if minions == c.n() {
        return Err(Error::InvariantViolation(format!(
            "all {minions} agents are minions"
        )));
    }
    Ok(minions + 1 == c.n())
}

impl Protocol for Lottery {
    fn name(&self) -> &'static str {
        "lottery"
    }

    fn num_states(&self) -> usize {
        self.total as usize
    }

    fn initial(&self) -> Configuration {
        Configuration::from_counts(
            self.num_states(),
            &[(self.encode(LotteryState::INITIAL), self.params.n as u32)],
        )
        .expect("initial state is registered")
    }

    fn interact(&self, a: StateId, b: StateId) -> Result<Step> {
        if a.0 >= self.total || b.0 >= self.total {
            return Err(Error::ContractViolation(format!(
                "state ids ({}, {}) out of range",
                a.0, b.0
            )));
        }
        let (na, nb) = lottery_interact(self.decode(a), self.decode(b), &self.params)?;
        Ok(Step::new(self.encode(na), self.encode(nb)))
    }

    fn output(&self, s: StateId) -> Output {
        if self.is_minion(s) {
            Output::Lose
        } else {
            Output::Win
        }
    }

    fn is_stable_output(&self, c: &Configuration) -> Result<bool> {
        leader_stable(self, c)
    }

    fn goal(&self) -> Option<Goal> {
        Some(Goal::SingleLeader)
    }

    fn describe(&self, s: StateId) -> String {
        let st = self.decode(s);
        match st.mode {
            Mode::Seeding => format!("seeding(c={}, counter={})", st.coin.as_u8(), st.counter),
            Mode::Lottery => format!("lottery(c={}, p={})", st.coin.as_u8(), st.payoff),
            Mode::Tournament => format!(
                "tournament(c={}, p={}, l={}, ph={}, ones={})",
                st.coin.as_u8(),
                st.payoff,
                st.level,
                st.phase,
                st.ones
            ),
            Mode::Minion => format!(
                "minion(c={}, p={}, l={})",
                st.coin.as_u8(),
                st.payoff,
                st.level
            ),
        }
    }

    fn params_json(&self) -> serde_json::Value {
        json!({
            "n": self.params.n,
            "m": self.params.m,
            "payoff_cap": self.params.payoff_cap,
            "level_cap": self.params.level_cap,
        })
    }
}
