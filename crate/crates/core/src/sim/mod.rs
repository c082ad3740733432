// SPDX-License-Identifier: Apache-2.0

//! Deterministic simulator: scenario files in, JSONL traces out, with trace
//! checkers for the protocol invariants.

mod check;
mod scenario;
mod trace;
mod world;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Digest;

pub use check::*;
pub use scenario::*;
pub use trace::*;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
    #[error("tick limit of {limit} reached before quiescence")]
    TickLimitExceeded { limit: u64, trace: Box<Trace> },
}

/// Runs `scenario` to quiescence. The trace is a pure function of the
/// scenario, seed included.
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    scenario.validate()?;
    let limit = scenario.max_ticks;
    let (trace, reason) = world::World::new(scenario.clone()).run();
    match reason {
        EndReason::Quiescent => Ok(trace),
        EndReason::TickLimit => Err(SimError::TickLimitExceeded {
            limit,
            trace: Box::new(trace),
        }),
    }
}

/// Headline numbers for one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: Digest,
    pub seed: u64,
    pub ticks: u64,
    pub quiescent: bool,
    pub txs_finalized: usize,
    /// Largest client round-trip count on any fast-path finalization.
    pub fast_path_round_trips: u32,
    pub unlocks_finalized: usize,
    pub consolidations: u32,
    pub actions_ok: usize,
    pub actions_failed: usize,
    pub messages: u64,
    pub dropped: u64,
    /// Violation count per checker.
    pub checks: BTreeMap<String, usize>,
}

impl RunSummary {
    pub fn from_trace(trace: &Trace) -> Self {
        let (scenario, seed) = trace
            .bodies()
            .find_map(|b| match b {
                Body::Start { scenario, seed, .. } => Some((*scenario, *seed)),
                _ => None,
            })
            .unwrap_or_default();
        let (messages, dropped) = trace
            .bodies()
            .find_map(|b| match b {
                Body::End {
                    messages, dropped, ..
                } => Some((*messages, *dropped)),
                _ => None,
            })
            .unwrap_or_default();
        let mut s = Self {
            scenario,
            seed,
            ticks: trace.end_tick(),
            quiescent: trace.end_reason() == Some(EndReason::Quiescent),
            txs_finalized: 0,
            fast_path_round_trips: 0,
            unlocks_finalized: 0,
            consolidations: 0,
            actions_ok: 0,
            actions_failed: 0,
            messages,
            dropped,
            checks: CHECKERS
                .iter()
                .map(|(name, c)| (name.to_string(), c(trace).len()))
                .collect(),
        };
        for b in trace.bodies() {
            match b {
                Body::TxFinalized {
                    via_unlock,
                    round_trips,
                    ..
                } => {
                    s.txs_finalized += 1;
                    if !via_unlock {
                        s.fast_path_round_trips = s.fast_path_round_trips.max(*round_trips);
                    }
                }
                Body::UnlockFinalized { .. } => s.unlocks_finalized += 1,
                Body::ActionDone {
                    ok, consolidations, ..
                } => {
                    s.consolidations += consolidations;
                    if *ok {
                        s.actions_ok += 1;
                    } else {
                        s.actions_failed += 1;
                    }
                }
                _ => {}
            }
        }
        s
    }

    pub fn violations(&self) -> usize {
        self.checks.values().sum()
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario={}", self.scenario)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "ticks={}", self.ticks)?;
        writeln!(f, "quiescent={}", self.quiescent)?;
        writeln!(f, "txs_finalized={}", self.txs_finalized)?;
        writeln!(f, "fast_path_round_trips={}", self.fast_path_round_trips)?;
        writeln!(f, "unlocks_finalized={}", self.unlocks_finalized)?;
        writeln!(f, "consolidations={}", self.consolidations)?;
        writeln!(f, "actions_ok={}", self.actions_ok)?;
        writeln!(f, "actions_failed={}", self.actions_failed)?;
        writeln!(f, "messages={}", self.messages)?;
        writeln!(f, "dropped={}", self.dropped)?;
        for (name, count) in &self.checks {
            let verdict = if *count == 0 {
                "ok".to_string()
            } else {
                format!("violated({count})")
            };
            writeln!(f, "check.{name}={verdict}")?;
        }
        Ok(())
    }
}

/// Outcome of running one scenario under many seeds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exploration {
    pub runs: usize,
    /// First failing seed with its violations, in seed order.
    pub failure: Option<(u64, Vec<Violation>)>,
}

/// Seed of the `i`-th exploration run. Run 0 keeps the scenario's own seed.
pub fn explore_seed(base: u64, i: u64) -> u64 {
    base.wrapping_add(i)
}

/// Runs `k` seeds in parallel and reports the first one that violates an
/// invariant or hits the tick limit.
pub fn explore(scenario: &Scenario, k: u64) -> Result<Exploration, ScenarioError> {
    scenario.validate()?;
    let results: Vec<(u64, Vec<Violation>)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut s = scenario.clone();
            s.seed = explore_seed(scenario.seed, i);
            let violations = match run(&s) {
                Ok(trace) => check_invariants(&trace),
                Err(SimError::TickLimitExceeded { trace, limit }) => {
                    let mut v = check_invariants(&trace);
                    v.push(Violation {
                        checker: "tick_limit".into(),
                        tick: limit,
                        detail: "no quiescence".into(),
                    });
                    v
                }
                Err(SimError::Invalid(e)) => {
                    vec![Violation {
                        checker: "scenario".into(),
                        tick: 0,
                        detail: e.to_string(),
                    }]
                }
            };
            (s.seed, violations)
        })
        .collect();
    let failure = results.into_iter().find(|(_, v)| !v.is_empty());
    Ok(Exploration {
        runs: k as usize,
        failure,
    })
}
