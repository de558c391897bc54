//! Population protocol simulation toolkit.
//!
//! Agents are anonymous finite-state machines; a uniformly random scheduler
//! picks a pair of agents at every step and both update their states through a
//! deterministic transition function. This crate provides:
//!
//! * [`model`]: states, configurations and the [`Protocol`] contract.
//! * [`engine`]: the seeded uniform-random scheduler and trial records.
//! * [`coin`]: synthetic coin flips and approximate counting.
//! * [`lottery`]: the Lottery leader-election protocol.
//! * [`splitjoin`]: the Split-Join exact-majority protocol.
//! * [`baselines`]: the 4-state majority and pairwise-elimination leader protocols.
//! * [`model_check`]: an exhaustive configuration-graph oracle for tiny populations.
//! * [`harness`]: sweeps, CSV output and summary statistics.

pub mod baselines;
pub mod coin;
pub mod engine;
pub mod error;
pub mod harness;
pub mod lottery;
pub mod model;
pub mod model_check;
pub mod splitjoin;

pub use engine::{run_trial, run_trials_parallel, RunBudget, SchedulerRng, TrialRecord};
pub use error::{Error, Result};
pub use model::{Configuration, Goal, Output, Protocol, StateId, Step};
