//! Protocol model: state registries, configurations and the transition contract.

use std::fmt;

use crate::error::{Error, Result};

/// Index of a state in a protocol's registry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub u32);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for StateId {
    fn from(i: usize) -> Self {
        StateId(i as u32)
    }
}

/// Output symbols shared by every protocol in this crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Output {
    WinA,
    WinB,
    Win,
    Lose,
    Estimate(u32),
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Output::WinA => f.write_str("Win_A"),
            Output::WinB => f.write_str("Win_B"),
            Output::Win => f.write_str("Win"),
            Output::Lose => f.write_str("Lose"),
            Output::Estimate(e) => write!(f, "{e}"),
        }
    }
}

/// What a correct stable configuration looks like.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    /// Every agent outputs the given symbol.
    Uniform(Output),
    /// Exactly one agent outputs `Win`, every other agent outputs `Lose`.
    SingleLeader,
}

impl Goal {
    pub fn holds<P: Protocol + ?Sized>(&self, proto: &P, c: &Configuration) -> bool {
        match *self {
            Goal::Uniform(o) => all_outputs_equal(c, proto, o),
            Goal::SingleLeader => {
                let mut winners = 0u64;
                for (s, k) in c.iter() {
                    match proto.output(s) {
                        Output::Win => winners += k as u64,
                        Output::Lose => {}
                        _ => return false,
                    }
                }
                winners == 1
            }
        }
    }
}

/// Result of one pairwise interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub first: StateId,
    pub second: StateId,
    /// A Split-Join split reaction fired. Always false for other protocols.
    pub split: bool,
}

impl Step {
    pub fn new(first: StateId, second: StateId) -> Self {
        Step {
            first,
            second,
            split: false,
        }
    }
}

/// A population protocol over an eagerly enumerated state space.
///
/// `interact` must be deterministic. The scheduler draws ordered pairs
/// uniformly, so a protocol may treat its two arguments differently; most are
/// multiset-symmetric and report so through `is_symmetric`.
pub trait Protocol: Send + Sync {
    fn name(&self) -> &'static str;

    fn num_states(&self) -> usize;

    fn initial(&self) -> Configuration;

    fn interact(&self, a: StateId, b: StateId) -> Result<Step>;

    fn output(&self, s: StateId) -> Output;

    /// Sound stabilization detector: returns true only for configurations
    /// whose outputs can never change again.
    fn is_stable_output(&self, c: &Configuration) -> Result<bool>;

    /// Correctness criterion for a stable configuration, if one is defined.
    fn goal(&self) -> Option<Goal>;

    /// Human-readable rendering of a state.
    fn describe(&self, s: StateId) -> String {
        format!("s{}", s.0)
    }

    /// The protocol's parameters, serialized for CSV metadata.
    fn params_json(&self) -> serde_json::Value;

    /// Whether `interact(a, b)` and `interact(b, a)` always agree as multisets.
    fn is_symmetric(&self) -> bool {
        true
    }

    /// The output shared by the configuration, if any. Leader election
    /// protocols report `Win` once a single leader exists.
    fn consensus_output(&self, c: &Configuration) -> Option<Output> {
        if self.goal() == Some(Goal::SingleLeader) {
            return Goal::SingleLeader.holds(self, c).then_some(Output::Win);
        }
        let mut it = c.iter();
        let first = self.output(it.next()?.0);
        it.all(|(s, _)| self.output(s) == first).then_some(first)
    }
}

/// Multiset of agent states, stored as dense per-state counts plus the list
/// of occupied states.
#[derive(Clone, Debug)]
pub struct Configuration {
    counts: Vec<u32>,
    support: Vec<StateId>,
    slot: Vec<u32>,
    n: u64,
}

const EMPTY_SLOT: u32 = u32::MAX;

impl Configuration {
    /// An empty configuration over `num_states` states.
    pub fn empty(num_states: usize) -> Self {
        Configuration {
            counts: vec![0; num_states],
            support: Vec::new(),
            slot: vec![EMPTY_SLOT; num_states],
            n: 0,
        }
    }

    pub fn from_counts(num_states: usize, counts: &[(StateId, u32)]) -> Result<Self> {
        let mut c = Configuration::empty(num_states);
        for &(s, k) in counts {
            if s.index() >= num_states {
                return Err(Error::ContractViolation(format!(
                    "state {} outside registry of {num_states}",
                    s.0
                )));
            }
            for _ in 0..k {
                c.add(s);
            }
        }
        Ok(c)
    }

    pub fn from_agents(num_states: usize, agents: &[StateId]) -> Result<Self> {
        let mut c = Configuration::empty(num_states);
        for &s in agents {
            if s.index() >= num_states {
                return Err(Error::ContractViolation(format!(
                    "state {} outside registry of {num_states}",
                    s.0
                )));
            }
            c.add(s);
        }
        Ok(c)
    }

    #[inline]
    pub fn n(&self) -> u64 {
        self.n
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn count(&self, s: StateId) -> u32 {
        self.counts[s.index()]
    }

    /// Occupied states with their counts, in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (StateId, u32)> + '_ {
        self.support
            .iter()
            .map(move |&s| (s, self.counts[s.index()]))
    }

    /// Number of distinct occupied states.
    pub fn support_len(&self) -> usize {
        self.support.len()
    }

    /// The agents as a sorted list of states (canonical multiset form).
    pub fn agents(&self) -> Vec<StateId> {
        let mut support = self.support.clone();
        support.sort_unstable();
        let mut out = Vec::with_capacity(self.n as usize);
        for s in support {
            out.extend(std::iter::repeat_n(s, self.count(s) as usize));
        }
        out
    }

    #[inline]
    pub fn add(&mut self, s: StateId) {
        let i = s.index();
        if self.counts[i] == 0 {
            self.slot[i] = self.support.len() as u32;
            self.support.push(s);
        }
        self.counts[i] += 1;
        self.n += 1;
    }

    #[inline]
    pub fn remove(&mut self, s: StateId) -> Result<()> {
        let i = s.index();
        if self.counts[i] == 0 {
            return Err(Error::ContractViolation(format!(
                "no agent in state {}",
                s.0
            )));
        }
        self.counts[i] -= 1;
        self.n -= 1;
        if self.counts[i] == 0 {
            let pos = self.slot[i] as usize;
            self.support.swap_remove(pos);
            if let Some(&moved) = self.support.get(pos) {
                self.slot[moved.index()] = pos as u32;
            }
            self.slot[i] = EMPTY_SLOT;
        }
        Ok(())
    }

    /// Replaces the pair `(a, b)` by `(a2, b2)` in place.
    pub fn replace_pair(&mut self, a: StateId, b: StateId, a2: StateId, b2: StateId) -> Result<()> {
        let need = if a == b { 2 } else { 1 };
        if self.count(a) < need || self.count(b) < 1 {
            return Err(Error::ContractViolation(format!(
                "pair ({}, {}) not present in configuration",
                a.0, b.0
            )));
        }
        let n = self.n;
        self.remove(a)?;
        self.remove(b)?;
        self.add(a2);
        self.add(b2);
        debug_assert_eq!(self.n, n);
        Ok(())
    }

    /// Applies one interaction between agents in states `a` and `b`.
    pub fn apply<P: Protocol + ?Sized>(
        &mut self,
        a: StateId,
        b: StateId,
        proto: &P,
    ) -> Result<Step> {
        let need = if a == b { 2 } else { 1 };
        if self.count(a) < need || self.count(b) < 1 {
            return Err(Error::ContractViolation(format!(
                "pair ({}, {}) not present in configuration",
                a.0, b.0
            )));
        }
        let step = proto.interact(a, b)?;
        self.replace_pair(a, b, step.first, step.second)?;
        Ok(step)
    }

    /// Minimum count over occupied states.
    pub fn min_occupied_count(&self) -> u32 {
        self.iter().map(|(_, k)| k).min().unwrap_or(0)
    }
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.counts == other.counts
    }
}

impl Eq for Configuration {}

/// Functional form of [`Configuration::apply`].
pub fn apply_interaction<P: Protocol + ?Sized>(
    c: &Configuration,
    s1: StateId,
    s2: StateId,
    proto: &P,
) -> Result<Configuration> {
    let mut next = c.clone();
    next.apply(s1, s2, proto)?;
    Ok(next)
}

/// True iff every occupied state outputs `o`.
pub fn all_outputs_equal<P: Protocol + ?Sized>(c: &Configuration, proto: &P, o: Output) -> bool {
    c.iter().all(|(s, _)| proto.output(s) == o)
}

/// Exhaustively checks totality of `interact`, and multiset symmetry for
/// protocols claiming it, over all
/// state pairs. Quadratic in the registry size.
pub fn check_transition_function<P: Protocol + ?Sized>(proto: &P) -> Result<()> {
    let k = proto.num_states();
    for i in 0..k {
        for j in i..k {
            let (a, b) = (StateId::from(i), StateId::from(j));
            let ab = proto.interact(a, b)?;
            let ba = proto.interact(b, a)?;
            for s in [ab.first, ab.second, ba.first, ba.second] {
                if s.index() >= k {
                    return Err(Error::InvariantViolation(format!(
                        "interact({i}, {j}) left the registry: state {}",
                        s.0
                    )));
                }
            }
            let mut x = [ab.first, ab.second];
            let mut y = [ba.first, ba.second];
            x.sort_unstable();
            y.sort_unstable();
            if proto.is_symmetric() && (x != y || ab.split != ba.split) {
                return Err(Error::InvariantViolation(format!(
                    "interact is not symmetric on ({}, {})",
                    proto.describe(a),
                    proto.describe(b)
                )));
            }
        }
    }
    Ok(())
}
