//! Split-Join exact majority.
//!
//! Each agent holds a pair `<x, y>` of powers of two (or zero) and encodes the
//! signed value `x - y`. Agents start at `<2^L, 0>` (opinion A) or `<0, 2^L>`
//! (opinion B) with `L = ceil(log2 n)`. An interaction applies three
//! value-preserving reactions (cancel, join, split) and then normalizes both
//! sides, so the system-wide sum of values never changes and keeps the sign
//! of the initial majority.
//!
//! Zero-valued agents are weak states `<0,0>+` / `<0,0>-` that remember which
//! side they lean to.

use std::fmt;

use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{Configuration, Goal, Output, Protocol, StateId, Step};

/// A power of two stored as an exponent code: `0` is the value zero, `k > 0`
/// is `2^(k-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pow(u8);

impl Pow {
    pub const ZERO: Pow = Pow(0);

    pub fn two_to(exp: u32) -> Pow {
        Pow(exp as u8 + 1)
    }

    pub fn from_value(v: u64) -> Option<Pow> {
        match v {
            0 => Some(Pow::ZERO),
            v if v.is_power_of_two() => Some(Pow(v.trailing_zeros() as u8 + 1)),
            _ => None,
        }
    }

    #[inline]
    pub fn value(self) -> u64 {
        if self.0 == 0 {
            0
        } else {
            1u64 << (self.0 - 1)
        }
    }

    fn code(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lean {
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitJoinState {
    Strong { x: Pow, y: Pow },
    Weak(Lean),
}

impl SplitJoinState {
    /// Strong state `<x, y>`; rejects pairs that are not strong.
    pub fn strong(x: u64, y: u64) -> Result<Self> {
        let (px, py) = match (Pow::from_value(x), Pow::from_value(y)) {
            (Some(px), Some(py)) => (px, py),
            _ => {
                return Err(Error::InvariantViolation(format!(
                    "<{x},{y}> has a non power of two"
                )))
            }
        };
        if x == y || 2 * x.min(y) == x.max(y) {
            return Err(Error::InvariantViolation(format!(
                "<{x},{y}> is not a strong state"
            )));
        }
        Ok(SplitJoinState::Strong { x: px, y: py })
    }

    pub fn components(self) -> (u64, u64) {
        match self {
            SplitJoinState::Strong { x, y } => (x.value(), y.value()),
            SplitJoinState::Weak(_) => (0, 0),
        }
    }

    pub fn value(self) -> i64 {
        let (x, y) = self.components();
        x as i64 - y as i64
    }

    pub fn is_weak(self) -> bool {
        matches!(self, SplitJoinState::Weak(_))
    }

    /// `max(x, y)`.
    pub fn level(self) -> u64 {
        let (x, y) = self.components();
        x.max(y)
    }

    pub fn output(self) -> Output {
        match self {
            SplitJoinState::Weak(Lean::Plus) => Output::WinA,
            SplitJoinState::Weak(Lean::Minus) => Output::WinB,
            s if s.value() > 0 => Output::WinA,
            _ => Output::WinB,
        }
    }
}

impl fmt::Display for SplitJoinState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitJoinState::Weak(Lean::Plus) => f.write_str("<0,0>+"),
            SplitJoinState::Weak(Lean::Minus) => f.write_str("<0,0>-"),
            s => {
                let (x, y) = s.components();
                write!(f, "<{x},{y}>")
            }
        }
    }
}

/// Potential of a state at level `l`: `2l` for `l > 0`, `1` at level zero.
/// The sum over agents never increases and drops on every split.
pub fn level_potential(s: SplitJoinState) -> u64 {
    match s.level() {
        0 => 1,
        l => 2 * l,
    }
}

/// `[x1, y1, x2, y2]`.
pub type Quad = [u64; 4];

pub fn reduce(u: u64, v: u64) -> (u64, u64) {
    if u == v {
        (0, 0)
    } else if u == 2 * v {
        (u - v, 0)
    } else if 2 * u == v {
        (0, v - u)
    } else {
        (u, v)
    }
}

/// Matches the positive part of each side against the negative part of the other.
pub fn cancel([x1, y1, x2, y2]: Quad) -> Quad {
    let (x1n, y2n) = reduce(x1, y2);
    let (x2n, y1n) = reduce(x2, y1);
    [x1n, y1n, x2n, y2n]
}

/// Merges equal negative parts of two positive values (and symmetrically).
pub fn join([x1, y1, x2, y2]: Quad) -> Quad {
    let (v1, v2) = (x1 as i64 - y1 as i64, x2 as i64 - y2 as i64);
    let (y1n, y2n) = if v1 > 0 && v2 > 0 && y1 == y2 {
        (y1 + y2, 0)
    } else {
        (y1, y2)
    };
    let (x1n, x2n) = if v1 < 0 && v2 < 0 && x1 == x2 {
        (x1 + x2, 0)
    } else {
        (x1, x2)
    };
    [x1n, y1n, x2n, y2n]
}

/// Halves a power of two across both sides when the other side holds zero.
pub fn split([x1, y1, x2, y2]: Quad) -> Quad {
    let (v1, v2) = (x1 as i64 - y1 as i64, x2 as i64 - y2 as i64);
    let (x1n, x2n) = if (v1 > 0 || v2 > 0) && x1.max(x2) > 1 && x1.min(x2) == 0 {
        let h = x1.max(x2) / 2;
        (h, h)
    } else {
        (x1, x2)
    };
    let (y1n, y2n) = if (v1 < 0 || v2 < 0) && y1.max(y2) > 1 && y1.min(y2) == 0 {
        let h = y1.max(y2) / 2;
        (h, h)
    } else {
        (y1, y2)
    };
    [x1n, y1n, x2n, y2n]
}

/// Turns a raw pair into a valid state. The pair is reduced first and the
/// reduced pair is what gets tested and returned; a zero result becomes a
/// weak state leaning towards the sign of `partner_value` (`+` on zero).
pub fn normalize(x: u64, y: u64, partner_value: i64) -> Result<SplitJoinState> {
    match reduce(x, y) {
        (0, 0) if partner_value >= 0 => Ok(SplitJoinState::Weak(Lean::Plus)),
        (0, 0) => Ok(SplitJoinState::Weak(Lean::Minus)),
        (xr, yr) => SplitJoinState::strong(xr, yr),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitJoinParams {
    pub n: u64,
    /// `ceil(log2 n)`.
    pub l: u32,
    pub a: u64,
    pub b: u64,
    pub chained_reactions: bool,
}

impl SplitJoinParams {
    pub fn new(n: u64, a: u64, b: u64, chained_reactions: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPopulation { n });
        }
        if a + b != n {
            return Err(Error::InvalidParams(format!(
                "a + b = {} but n = {n}",
                a + b
            )));
        }
        if n > 1 << 40 {
            return Err(Error::InvalidParams(format!("n = {n} is too large")));
        }
        Ok(SplitJoinParams {
            n,
            l: ceil_log2(n),
            a,
            b,
            chained_reactions,
        })
    }

    /// `2^L`, the magnitude of an initial state.
    pub fn top(&self) -> u64 {
        1 << self.l
    }

    /// Initial value sum `(a - b) * 2^L`.
    pub fn initial_sum(&self) -> i64 {
        (self.a as i64 - self.b as i64) * self.top() as i64
    }

    /// `|a - b|`.
    pub fn advantage(&self) -> u64 {
        self.a.abs_diff(self.b)
    }
}

pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Result of one Split-Join interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reaction {
    pub first: SplitJoinState,
    pub second: SplitJoinState,
    pub split: bool,
}

fn check_components(q: &Quad, top: u64) -> Result<()> {
    for &v in q {
        if v > top || (v != 0 && !v.is_power_of_two()) {
            return Err(Error::InvariantViolation(format!(
                "component {v} is not a power of two <= {top} in {q:?}"
            )));
        }
    }
    Ok(())
}

pub fn interact_detailed(
    s1: SplitJoinState,
    s2: SplitJoinState,
    params: &SplitJoinParams,
) -> Result<Reaction> {
    if s1.is_weak() && s2.is_weak() {
        return Ok(Reaction {
            first: s1,
            second: s2,
            split: false,
        });
    }
    let top = params.top();
    let (x1, y1) = s1.components();
    let (x2, y2) = s2.components();
    let input = [x1, y1, x2, y2];
    check_components(&input, top)?;
    let cancelled = cancel(input);
    let joined = join(cancelled);
    let out = if params.chained_reactions || (cancelled == input && joined == cancelled) {
        split(joined)
    } else {
        joined
    };
    check_components(&out, top)?;
    let [x1, y1, x2, y2] = out;
    let v1 = x1 as i64 - y1 as i64;
    let v2 = x2 as i64 - y2 as i64;
    Ok(Reaction {
        first: normalize(x1, y1, v2)?,
        second: normalize(x2, y2, v1)?,
        split: out != joined,
    })
}

pub fn interact_splitjoin(
    s1: SplitJoinState,
    s2: SplitJoinState,
    params: &SplitJoinParams,
) -> Result<(SplitJoinState, SplitJoinState)> {
    interact_detailed(s1, s2, params).map(|r| (r.first, r.second))
}

/// Split-Join over a registry of every valid state, with a precomputed
/// transition table.
#[derive(Clone, Debug)]
pub struct SplitJoin {
    params: SplitJoinParams,
    states: Vec<SplitJoinState>,
    /// Strong state id by `(x code) * (L + 2) + (y code)`.
    strong_index: Vec<u32>,
    weak: [StateId; 2],
    table: Vec<(u16, u16, bool)>,
}

const NO_STATE: u32 = u32::MAX;

impl SplitJoin {
    /// Builds the registry and the full transition table, verifying closure
    /// over all ordered state pairs.
    pub fn new(params: SplitJoinParams) -> Result<Self> {
        let side = params.l as usize + 2;
        let mut states = Vec::new();
        let mut strong_index = vec![NO_STATE; side * side];
        for xc in 0..side {
            for yc in 0..side {
                let vx = Pow(xc as u8).value();
                let vy = Pow(yc as u8).value();
                if let Ok(s) = SplitJoinState::strong(vx, vy) {
                    strong_index[xc * side + yc] = states.len() as u32;
                    states.push(s);
                }
            }
        }
        let weak = [StateId::from(states.len()), StateId::from(states.len() + 1)];
        states.push(SplitJoinState::Weak(Lean::Plus));
        states.push(SplitJoinState::Weak(Lean::Minus));

        let mut sj = SplitJoin {
            params,
            states,
            strong_index,
            weak,
            table: Vec::new(),
        };
        if sj.states.len() > sj.state_bound() {
            return Err(Error::InvariantViolation(format!(
                "{} split-join states exceed the bound {}",
                sj.states.len(),
                sj.state_bound()
            )));
        }
        let k = sj.states.len();
        let mut table = vec![(0u16, 0u16, false); k * k];
        for i in 0..k {
            for j in 0..k {
                let r = interact_detailed(sj.states[i], sj.states[j], &params)?;
                table[i * k + j] = (
                    sj.id_of(r.first)?.0 as u16,
                    sj.id_of(r.second)?.0 as u16,
                    r.split,
                );
            }
        }
        sj.table = table;
        Ok(sj)
    }

    pub fn params(&self) -> &SplitJoinParams {
        &self.params
    }

    pub fn state(&self, s: StateId) -> SplitJoinState {
        self.states[s.index()]
    }

    pub fn id_of(&self, s: SplitJoinState) -> Result<StateId> {
        match s {
            SplitJoinState::Weak(Lean::Plus) => Ok(self.weak[0]),
            SplitJoinState::Weak(Lean::Minus) => Ok(self.weak[1]),
            SplitJoinState::Strong { x, y } => {
                let side = self.params.l as usize + 2;
                let id = if x.code() < side && y.code() < side {
                    self.strong_index[x.code() * side + y.code()]
                } else {
                    NO_STATE
                };
                if id == NO_STATE {
                    Err(Error::InvariantViolation(format!("{s} is not registered")))
                } else {
                    Ok(StateId(id))
                }
            }
        }
    }

    pub fn initial_a(&self) -> StateId {
        self.id_of(SplitJoinState::Strong {
            x: Pow::two_to(self.params.l),
            y: Pow::ZERO,
        })
        .expect("initial A state is registered")
    }

    pub fn initial_b(&self) -> StateId {
        self.id_of(SplitJoinState::Strong {
            x: Pow::ZERO,
            y: Pow::two_to(self.params.l),
        })
        .expect("initial B state is registered")
    }

    pub fn value(&self, s: StateId) -> i64 {
        self.states[s.index()].value()
    }

    /// Sum of values over all agents.
    pub fn total_value(&self, c: &Configuration) -> i64 {
        c.iter().map(|(s, k)| self.value(s) * k as i64).sum()
    }

    /// Sum of level potentials over all agents.
    pub fn total_potential(&self, c: &Configuration) -> u64 {
        c.iter()
            .map(|(s, k)| level_potential(self.state(s)) * k as u64)
            .sum()
    }

    /// Upper bound `(L + 2)^2 + 2` on the registry size.
    pub fn state_bound(&self) -> usize {
        let side = self.params.l as usize + 2;
        side * side + 2
    }
}

/// All agents share one output sign. Once every sign agrees with the sign
/// of the (invariant) value sum, no agent can change sign again.
pub fn majority_stable(proto: &SplitJoin, c: &Configuration) -> bool {
    let mut it = c.iter();
    match it.next() {
        None => false,
        Some((s, _)) => {
            let o = proto.output(s);
            it.all(|(t, _)| proto.output(t) == o)
        }
    }
}

impl Protocol for SplitJoin {
    fn name(&self) -> &'static str {
        "split-join"
    }

    /// `join` keeps the merged power on the first party.
    fn is_symmetric(&self) -> bool {
        false
    }

    fn num_states(&self) -> usize {
        self.states.len()
    }

    fn initial(&self) -> Configuration {
        Configuration::from_counts(
            self.num_states(),
            &[
                (self.initial_a(), self.params.a as u32),
                (self.initial_b(), self.params.b as u32),
            ],
        )
        .expect("initial states are registered")
    }

    #[inline]
    fn interact(&self, a: StateId, b: StateId) -> Result<Step> {
        let k = self.states.len();
        let (p, q, split) = self.table[a.index() * k + b.index()];
        Ok(Step {
            first: StateId(p as u32),
            second: StateId(q as u32),
            split,
        })
    }

    fn output(&self, s: StateId) -> Output {
        self.states[s.index()].output()
    }

    fn is_stable_output(&self, c: &Configuration) -> Result<bool> {
        Ok(majority_stable(self, c))
    }

    fn goal(&self) -> Option<Goal> {
        use std::cmp::Ordering::*;
        match self.params.a.cmp(&self.params.b) {
            Greater => Some(Goal::Uniform(Output::WinA)),
            Less => Some(Goal::Uniform(Output::WinB)),
            Equal => None,
        }
    }

    fn describe(&self, s: StateId) -> String {
        self.states[s.index()].to_string()
    }

    fn params_json(&self) -> serde_json::Value {
        json!({
            "n": self.params.n,
            "L": self.params.l,
            "a": self.params.a,
            "b": self.params.b,
            "chained_reactions": self.params.chained_reactions,
        })
    }
}
