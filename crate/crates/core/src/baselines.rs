//! Reference protocols: 4-state exact majority and pairwise-elimination
//! leader election.

use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{Configuration, Goal, Output, Protocol, StateId, Step};

/// Strong `A`, strong `B`, weak `a`, weak `b`.
pub mod four_state {
    use crate::model::StateId;
    pub const A: StateId = StateId(0);
    pub const B: StateId = StateId(1);
    pub const WEAK_A: StateId = StateId(2);
    pub const WEAK_B: StateId = StateId(3);
}

use four_state::{A, B, WEAK_A, WEAK_B};

/// `(A,B) -> (a,b)`, `(A,b) -> (A,a)`, `(B,a) -> (B,b)`, all else unchanged.
pub fn fourstate_interact(s1: StateId, s2: StateId) -> Result<(StateId, StateId)> {
    if s1.0 > 3 || s2.0 > 3 {
        return Err(Error::ContractViolation(format!(
            "4-state ids ({}, {})",
            s1.0, s2.0
        )));
    }
    Ok(match (s1, s2) {
        (A, B) => (WEAK_A, WEAK_B),
        (B, A) => (WEAK_B, WEAK_A),
        (A, WEAK_B) => (A, WEAK_A),
        (WEAK_B, A) => (WEAK_A, A),
        (B, WEAK_A) => (B, WEAK_B),
        (WEAK_A, B) => (WEAK_B, B),
        other => other,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct FourStateMajority {
    pub a: u64,
    pub b: u64,
}

impl FourStateMajority {
    pub fn new(a: u64, b: u64) -> Result<Self> {
        if a + b < 2 {
            return Err(Error::InvalidPopulation { n: a + b });
        }
        Ok(FourStateMajority { a, b })
    }

    /// `count(A) - count(B)`, constant along every trajectory.
    pub fn strong_gap(c: &Configuration) -> i64 {
        c.count(A) as i64 - c.count(B) as i64
    }
}

impl Protocol for FourStateMajority {
    fn name(&self) -> &'static str {
        "four-state"
    }

    fn num_states(&self) -> usize {
        4
    }

    fn initial(&self) -> Configuration {
        Configuration::from_counts(4, &[(A, self.a as u32), (B, self.b as u32)])
            .expect("four states")
    }

    fn interact(&self, a: StateId, b: StateId) -> Result<Step> {
        let (x, y) = fourstate_interact(a, b)?;
        Ok(Step::new(x, y))
    }

    fn output(&self, s: StateId) -> Output {
        if s == A || s == WEAK_A {
            Output::WinA
        } else {
            Output::WinB
        }
    }

    /// All outputs agree; the opposite strong state is then absent for good.
    fn is_stable_output(&self, c: &Configuration) -> Result<bool> {
        Ok(self.consensus_output(c).is_some())
    }

    fn goal(&self) -> Option<Goal> {
        use std::cmp::Ordering::*;
        match self.a.cmp(&self.b) {
            Greater => Some(Goal::Uniform(Output::WinA)),
            Less => Some(Goal::Uniform(Output::WinB)),
            Equal => None,
        }
    }

    fn describe(&self, s: StateId) -> String {
        ["A", "B", "a", "b"]
            .get(s.index())
            .unwrap_or(&"?")
            .to_string()
    }

    fn params_json(&self) -> serde_json::Value {
        json!({ "n": self.a + self.b, "a": self.a, "b": self.b })
    }
}

pub const CONTENDER: StateId = StateId(0);
pub const FOLLOWER: StateId = StateId(1);

/// Two contenders meeting leaves one contender and one follower.
pub fn pairwise_leader_interact(s1: StateId, s2: StateId) -> Result<(StateId, StateId)> {
    if s1.0 > 1 || s2.0 > 1 {
        return Err(Error::ContractViolation(format!(
            "pairwise ids ({}, {})",
            s1.0, s2.0
        )));
    }
    Ok(match (s1, s2) {
        (CONTENDER, CONTENDER) => (CONTENDER, FOLLOWER),
        other => other,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct PairwiseLeader {
    pub n: u64,
}

impl PairwiseLeader {
    pub fn new(n: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPopulation { n });
        }
        Ok(PairwiseLeader { n })
    }
}

impl Protocol for PairwiseLeader {
    fn name(&self) -> &'static str {
        "pairwise-leader"
    }

    fn num_states(&self) -> usize {
        2
    }

    fn initial(&self) -> Configuration {
        Configuration::from_counts(2, &[(CONTENDER, self.n as u32)]).expect("two states")
    }

    fn interact(&self, a: StateId, b: StateId) -> Result<Step> {
        let (x, y) = pairwise_leader_interact(a, b)?;
        Ok(Step::new(x, y))
    }

    fn output(&self, s: StateId) -> Output {
        if s == CONTENDER {
            Output::Win
        } else {
            Output::Lose
        }
    }

    fn is_stable_output(&self, c: &Configuration) -> Result<bool> {
        match c.count(CONTENDER) {
            0 => Err(Error::InvariantViolation("no contender left".into())),
            k => Ok(k == 1),
        }
    }

    fn goal(&self) -> Option<Goal> {
        Some(Goal::SingleLeader)
    }

    fn describe(&self, s: StateId) -> String {
        if s == CONTENDER {
            "contender"
        } else {
            "follower"
        }
        .to_string()
    }

    fn params_json(&self) -> serde_json::Value {
        json!({ "n": self.n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_trial_observed, Observer, RunBudget, SchedulerRng};
    use crate::model::check_transition_function;

    #[test]
    fn four_state_rules() {
        assert_eq!(fourstate_interact(A, B).unwrap(), (WEAK_A, WEAK_B));
        assert_eq!(fourstate_interact(A, WEAK_B).unwrap(), (A, WEAK_A));
        assert_eq!(fourstate_interact(B, WEAK_A).unwrap(), (B, WEAK_B));
        assert_eq!(
            fourstate_interact(WEAK_A, WEAK_B).unwrap(),
            (WEAK_A, WEAK_B)
        );
        assert_eq!(fourstate_interact(A, A).unwrap(), (A, A));
        assert!(fourstate_interact(StateId(4), A).is_err());
        check_transition_function(&FourStateMajority::new(2, 1).unwrap()).unwrap();
    }

    #[test]
    fn pairwise_rules() {
        assert_eq!(
            pairwise_leader_interact(CONTENDER, CONTENDER).unwrap(),
            (CONTENDER, FOLLOWER)
        );
        assert_eq!(
            pairwise_leader_interact(CONTENDER, FOLLOWER).unwrap(),
            (CONTENDER, FOLLOWER)
        );
        assert_eq!(
            pairwise_leader_interact(FOLLOWER, FOLLOWER).unwrap(),
            (FOLLOWER, FOLLOWER)
        );
        check_transition_function(&PairwiseLeader::new(2).unwrap()).unwrap();
    }

    struct GapAudit(i64);

    impl Observer for GapAudit {
        fn after_step(
            &mut self,
            _: u64,
            _: (StateId, StateId),
            _: &Step,
            c: &Configuration,
        ) -> Result<()> {
            assert_eq!(FourStateMajority::strong_gap(c), self.0);
            Ok(())
        }
    }

    #[test]
    fn four_state_gap_is_invariant() {
        for (a, b) in [(3u64, 2u64), (1, 4), (2, 3), (4, 1)] {
            let p = FourStateMajority::new(a, b).unwrap();
            for seed in 0..20 {
                let mut audit = GapAudit(a as i64 - b as i64);
                let rec = run_trial_observed(
                    &p,
                    &p.initial(),
                    RunBudget::new(100_000, 1).unwrap(),
                    SchedulerRng::new(seed),
                    &mut audit,
                )
                .unwrap();
                assert!(rec.stabilized && rec.correct);
            }
        }
    }

    struct ContenderAudit(u32);

    impl Observer for ContenderAudit {
        fn after_step(
            &mut self,
            _: u64,
            before: (StateId, StateId),
            _: &Step,
            c: &Configuration,
        ) -> Result<()> {
            let now = c.count(CONTENDER);
            assert!(now >= 1);
            if now < self.0 {
                assert_eq!(before, (CONTENDER, CONTENDER));
            }
            assert!(now <= self.0);
            self.0 = now;
            Ok(())
        }
    }

    #[test]
    fn contenders_only_drop_on_contender_meetings() {
        let p = PairwiseLeader::new(40).unwrap();
        let mut audit = ContenderAudit(40);
        let rec = run_trial_observed(
            &p,
            &p.initial(),
            RunBudget::new(10_000_000, 1).unwrap(),
            SchedulerRng::new(1),
            &mut audit,
        )
        .unwrap();
        assert!(rec.stabilized && rec.correct);
        assert_eq!(rec.output.as_deref(), Some("Win"));
        assert_eq!(audit.0, 1);
    }
}
