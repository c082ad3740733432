// SPDX-License-Identifier: Apache-2.0

//! Invariant checkers over a finished trace. Every checker reads only the
//! trace, so a trace written to disk can be re-checked later.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::types::{Effects, ExecStatus, ObjectId, ObjectKey, TxKind, UnlockOutcome};
use crate::validator::{Event, UnlockStatus};

use super::scenario::Behavior;
use super::trace::{Body, EndReason, SeqEntry, Trace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub checker: String,
    pub tick: u64,
    pub detail: String,
}

pub type Checker = fn(&Trace) -> Vec<Violation>;

/// Every checker, by name, in reporting order.
pub const CHECKERS: &[(&str, Checker)] = &[
    ("client_safety", client_safety),
    ("no_conflicting_execution", no_conflicting_execution),
    ("unlock_liveness", unlock_liveness),
    ("starvation_freedom", starvation_freedom),
    ("gas_exactly_once", gas_exactly_once),
    ("bounded_counter_safety", bounded_counter_safety),
    ("version_continuity", version_continuity),
    ("epoch_checkpoint", epoch_checkpoint),
    ("unlock_status_monotone", unlock_status_monotone),
];

/// Runs every checker.
pub fn check_invariants(trace: &Trace) -> Vec<Violation> {
    CHECKERS.iter().flat_map(|(_, c)| c(trace)).collect()
}

fn violation(checker: &str, tick: u64, detail: String) -> Violation {
    Violation {
        checker: checker.into(),
        tick,
        detail,
    }
}

struct Header {
    f: usize,
    delta: Option<u64>,
    epoch_length: u64,
    max_skew: u64,
    behaviors: Vec<Behavior>,
}

fn header(trace: &Trace) -> Header {
    trace
        .bodies()
        .find_map(|b| match b {
            Body::Start {
                f,
                delta,
                epoch_length,
                max_skew,
                behaviors,
                ..
            } => Some(Header {
                f: *f,
                delta: *delta,
                epoch_length: *epoch_length,
                max_skew: *max_skew,
                behaviors: behaviors.clone(),
            }),
            _ => None,
        })
        .unwrap_or(Header {
            f: 0,
            delta: None,
            epoch_length: u64::MAX,
            max_skew: 0,
            behaviors: Vec::new(),
        })
}

fn validator_of(actor: &str) -> Option<u32> {
    actor.strip_prefix('v')?.parse().ok()
}

/// Events from honest validators, with tick and validator index.
fn honest_events(trace: &Trace) -> impl Iterator<Item = (u64, u32, &Event)> {
    trace.records.iter().filter_map(|r| match &r.body {
        Body::Validator {
            honest: true,
            event,
        } => Some((r.tick, validator_of(&r.actor)?, event)),
        _ => None,
    })
}

/// Effects of every transaction a client saw finalized.
fn finalized_txs(trace: &Trace) -> BTreeMap<Digest, (u64, Effects)> {
    let mut out = BTreeMap::new();
    for r in &trace.records {
        match &r.body {
            Body::TxFinalized { tx, effects, .. } => {
                out.entry(*tx).or_insert((r.tick, effects.clone()));
            }
            Body::UnlockFinalized { effects, .. } => {
                for e in &effects.executions {
                    out.entry(e.tx).or_insert((r.tick, e.clone()));
                }
            }
            _ => {}
        }
    }
    out
}

/// Finalized transactions are never reversed and stay reflected in every
/// honest validator's final state; no two finalized transactions consume the
/// same key.
pub fn client_safety(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "client_safety";
    let finalized = finalized_txs(trace);
    let mut out = Vec::new();
    for (tick, v, event) in honest_events(trace) {
        if let Event::Undone { tx } = event {
            if finalized.contains_key(tx) {
                out.push(violation(
                    NAME,
                    tick,
                    format!("finalized tx {} undone at v{v}", tx.short()),
                ));
            }
        }
    }
    let mut by_key: BTreeMap<ObjectKey, Digest> = BTreeMap::new();
    for (tx, (tick, effects)) in &finalized {
        for k in &effects.consumed {
            if let Some(other) = by_key.insert(*k, *tx) {
                if other != *tx {
                    out.push(violation(
                        NAME,
                        *tick,
                        format!(
                            "{k} consumed by finalized {} and {}",
                            other.short(),
                            tx.short()
                        ),
                    ));
                }
            }
        }
    }
    if trace.end_reason() != Some(EndReason::Quiescent) {
        return out;
    }
    let tick = trace.end_tick();
    for b in trace.bodies() {
        let Body::Final {
            validator,
            behavior: Behavior::Honest,
            crashed: false,
            objects,
            ..
        } = b
        else {
            continue;
        };
        let live: BTreeMap<ObjectId, _> = objects.iter().map(|o| (o.key.id, o)).collect();
        for (tx, (_, effects)) in &finalized {
            for (key, content) in &effects.produced {
                let Some(o) = live.get(&key.id) else {
                    out.push(violation(
                        NAME,
                        tick,
                        format!("v{validator} lost {key} from {}", tx.short()),
                    ));
                    continue;
                };
                if o.key.version < key.version || (o.key == *key && o.content != *content) {
                    out.push(violation(
                        NAME,
                        tick,
                        format!(
                            "v{validator} holds {} but finalized {} produced {key}",
                            o.key,
                            tx.short()
                        ),
                    ));
                }
            }
        }
    }
    out
}

/// Surviving executions at honest validators agree: one transaction per
/// consumed key and identical effects per transaction.
pub fn no_conflicting_execution(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "no_conflicting_execution";
    let mut out = Vec::new();
    // Per validator: executed tx -> effects, minus undone.
    let mut live: BTreeMap<u32, BTreeMap<Digest, (u64, Effects)>> = BTreeMap::new();
    for (tick, v, event) in honest_events(trace) {
        match event {
            Event::Executed { effects, .. } => {
                live.entry(v)
                    .or_default()
                    .insert(effects.tx, (tick, effects.clone()));
            }
            Event::Undone { tx } => {
                live.entry(v).or_default().remove(tx);
            }
            Event::UndoCascade { tx } => {
                out.push(violation(
                    NAME,
                    tick,
                    format!("v{v} could not undo {}", tx.short()),
                ));
            }
            _ => {}
        }
    }
    let mut by_key: BTreeMap<ObjectKey, (Digest, u32)> = BTreeMap::new();
    let mut by_tx: BTreeMap<Digest, (Effects, u32)> = BTreeMap::new();
    for (v, execs) in &live {
        for (tx, (tick, effects)) in execs {
            for k in &effects.consumed {
                match by_key.get(k) {
                    Some((other, w)) if other != tx => out.push(violation(
                        NAME,
                        *tick,
                        format!(
                            "{k} consumed by {} at v{w} and {} at v{v}",
                            other.short(),
                            tx.short()
                        ),
                    )),
                    Some(_) => {}
                    None => {
                        by_key.insert(*k, (*tx, *v));
                    }
                }
            }
            match by_tx.get(tx) {
                Some((e, w)) if e != effects => out.push(violation(
                    NAME,
                    *tick,
                    format!("effects of {} differ between v{w} and v{v}", tx.short()),
                )),
                Some(_) => {}
                None => {
                    by_tx.insert(*tx, (effects.clone(), *v));
                }
            }
        }
    }
    out
}

/// Content digest of every object version the trace shows being created.
fn contents(trace: &Trace) -> BTreeMap<ObjectKey, Digest> {
    let mut out = BTreeMap::new();
    for b in trace.bodies() {
        match b {
            Body::Genesis {
                object, content, ..
            } => {
                out.insert(*object, *content);
            }
            Body::Validator {
                honest: true,
                event: Event::Executed { effects, .. },
            } => {
                out.extend(effects.produced.iter().copied());
            }
            _ => {}
        }
    }
    out
}

/// Authorized unlocks finalize within an epoch; a no-op leaves each key at
/// the next version with unchanged contents.
pub fn unlock_liveness(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "unlock_liveness";
    let h = header(trace);
    let end = trace.end_tick();
    let content = contents(trace);
    let consumed: BTreeSet<ObjectKey> = honest_events(trace)
        .filter_map(|(_, _, e)| match e {
            Event::Executed { effects, .. } => Some(effects.consumed.clone()),
            _ => None,
        })
        .flatten()
        .collect();
    let epoch_advances: Vec<u64> = honest_events(trace)
        .filter_map(|(t, _, e)| matches!(e, Event::EpochAdvanced { .. }).then_some(t))
        .collect();
    let finals: BTreeMap<Digest, (u64, UnlockOutcome, Vec<Effects>)> = trace
        .records
        .iter()
        .filter_map(|r| match &r.body {
            Body::UnlockFinalized {
                request, outcome, ..
            } => {
                let execs = honest_events(trace)
                    .filter_map(|(_, _, e)| match e {
                        Event::Executed { effects, .. } if effects.tx == *request => {
                            Some(effects.clone())
                        }
                        _ => None,
                    })
                    .collect();
                Some((*request, (r.tick, *outcome, execs)))
            }
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for r in &trace.records {
        let Body::UnlockStarted {
            request,
            keys,
            authorized: true,
            ..
        } = &r.body
        else {
            continue;
        };
        match finals.get(request) {
            Some((tick, outcome, execs)) => {
                if tick - r.tick > h.epoch_length {
                    out.push(violation(
                        NAME,
                        *tick,
                        format!("unlock {} took {} ticks", request.short(), tick - r.tick),
                    ));
                }
                if *outcome != UnlockOutcome::NoOp {
                    continue;
                }
                for key in keys {
                    let next = key.next();
                    let produced: Vec<&Digest> = execs
                        .iter()
                        .flat_map(|e| e.produced.iter())
                        .filter(|(k, _)| *k == next)
                        .map(|(_, d)| d)
                        .collect();
                    if produced.is_empty() {
                        out.push(violation(
                            NAME,
                            *tick,
                            format!("no-op {} did not produce {next}", request.short()),
                        ));
                    }
                    if let Some(before) = content.get(key) {
                        if produced.iter().any(|d| *d != before) {
                            out.push(violation(
                                NAME,
                                *tick,
                                format!("no-op {} changed {key}", request.short()),
                            ));
                        }
                    }
                }
            }
            None => {
                let deadline = r.tick + h.epoch_length;
                let excused = keys.iter().any(|k| consumed.contains(k))
                    || epoch_advances.iter().any(|t| *t >= r.tick)
                    || end < deadline;
                if !excused {
                    out.push(violation(
                        NAME,
                        deadline,
                        format!("unlock {} never finalized", request.short()),
                    ));
                }
            }
        }
    }
    out
}

/// An unlock certificate without owner authorization forms only after the
/// key has been locked for the auto-unlock delay.
pub fn starvation_freedom(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "starvation_freedom";
    let h = header(trace);
    let keys: BTreeMap<Digest, Vec<ObjectKey>> = trace
        .bodies()
        .filter_map(|b| match b {
            Body::UnlockStarted { request, keys, .. } => Some((*request, keys.clone())),
            _ => None,
        })
        .collect();
    let mut first_lock: BTreeMap<ObjectKey, u64> = BTreeMap::new();
    for (tick, _, event) in honest_events(trace) {
        let touched = match event {
            Event::Voted { keys, .. } => keys.clone(),
            Event::Executed { effects, .. } => effects.consumed.clone(),
            _ => continue,
        };
        for k in touched {
            first_lock.entry(k).or_insert(tick);
        }
    }
    let mut out = Vec::new();
    for r in &trace.records {
        let Body::UnlockCertAssembled {
            request,
            authorized: false,
            ..
        } = &r.body
        else {
            continue;
        };
        let Some(delta) = h.delta else {
            out.push(violation(
                NAME,
                r.tick,
                format!("unauthorized unlock {} certified", request.short()),
            ));
            continue;
        };
        for k in keys.get(request).into_iter().flatten() {
            let early = match first_lock.get(k) {
                Some(locked) => r.tick + h.max_skew < locked + delta,
                None => true,
            };
            if early {
                out.push(violation(
                    NAME,
                    r.tick,
                    format!(
                        "unauthorized unlock {} certified before {k} was locked for {delta} ticks",
                        request.short()
                    ),
                ));
            }
        }
    }
    out
}

/// Each unlock spends its gas once, the same gas everywhere, and exactly the
/// gas it named.
pub fn gas_exactly_once(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "gas_exactly_once";
    let mut out = Vec::new();
    let mut per_validator: BTreeMap<u32, (BTreeSet<ObjectKey>, BTreeSet<Digest>)> = BTreeMap::new();
    let mut global: BTreeMap<Digest, ObjectKey> = BTreeMap::new();
    for (tick, v, event) in honest_events(trace) {
        let Event::GasSpent { request, gas } = event else {
            continue;
        };
        let (gases, requests) = per_validator.entry(v).or_default();
        if !gases.insert(*gas) {
            out.push(violation(NAME, tick, format!("v{v} spent {gas} twice")));
        }
        if !requests.insert(*request) {
            out.push(violation(
                NAME,
                tick,
                format!("v{v} charged {} twice", request.short()),
            ));
        }
        if let Some(prev) = global.insert(*request, *gas) {
            if prev != *gas {
                out.push(violation(
                    NAME,
                    tick,
                    format!("{} charged {prev} and {gas}", request.short()),
                ));
            }
        }
    }
    let named: BTreeMap<Digest, ObjectKey> = trace
        .bodies()
        .filter_map(|b| match b {
            Body::UnlockStarted { request, gas, .. } => Some((*request, *gas)),
            _ => None,
        })
        .collect();
    for r in &trace.records {
        let Body::UnlockFinalized {
            request, effects, ..
        } = &r.body
        else {
            continue;
        };
        let expected = named.get(request).copied();
        if expected.is_some_and(|g| effects.gas.consumed != [g]) {
            out.push(violation(
                NAME,
                r.tick,
                format!("{} gas effects do not match its request", request.short()),
            ));
        }
    }
    out
}

/// Finalized debits never exceed a counter's genesis bound plus finalized
/// credits.
pub fn bounded_counter_safety(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "bounded_counter_safety";
    let bounds: BTreeMap<ObjectId, u64> = trace
        .bodies()
        .filter_map(|b| match b {
            Body::Genesis {
                object,
                max_credit: Some(m),
                ..
            } => Some((object.id, *m)),
            _ => None,
        })
        .collect();
    let kinds: BTreeMap<Digest, (TxKind, Vec<ObjectKey>)> = trace
        .bodies()
        .filter_map(|b| match b {
            Body::TxSent {
                tx,
                tx_kind,
                commutative,
                ..
            } => Some((*tx, (tx_kind.clone(), commutative.clone()))),
            _ => None,
        })
        .collect();
    let mut debited: BTreeMap<ObjectId, u64> = BTreeMap::new();
    let mut credited: BTreeMap<ObjectId, u64> = BTreeMap::new();
    let mut last_tick = 0;
    for (tx, (tick, effects)) in finalized_txs(trace) {
        if effects.status != ExecStatus::Success {
            continue;
        }
        let Some((kind, commutative)) = kinds.get(&tx) else {
            continue;
        };
        let Some(counter) = commutative
            .first()
            .map(|k| k.id)
            .filter(|id| bounds.contains_key(id))
        else {
            continue;
        };
        last_tick = last_tick.max(tick);
        match kind {
            TxKind::Debit { amount } => *debited.entry(counter).or_default() += amount,
            TxKind::Credit { amount } => *credited.entry(counter).or_default() += amount,
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (id, spent) in debited {
        let limit = bounds[&id] + credited.get(&id).copied().unwrap_or(0);
        if spent > limit {
            out.push(violation(
                NAME,
                last_tick,
                format!("{id} debited {spent} against a bound of {limit}"),
            ));
        }
    }
    out
}

/// Every consumed key reappears at the next version.
pub fn version_continuity(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "version_continuity";
    let mut out = Vec::new();
    for (tick, v, event) in honest_events(trace) {
        let Event::Executed { effects, .. } = event else {
            continue;
        };
        for k in &effects.consumed {
            let next = k.next();
            if !effects.produced.iter().any(|(p, _)| *p == next) {
                out.push(violation(
                    NAME,
                    tick,
                    format!(
                        "v{v}: {} consumed {k} without producing {next}",
                        effects.tx.short()
                    ),
                ));
            }
        }
    }
    out
}

/// A transaction finalized on the fast path in epoch `e` is sequenced before
/// the epoch-ending quorum of `e` completes.
pub fn epoch_checkpoint(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "epoch_checkpoint";
    let h = header(trace);
    let n = h.behaviors.len();
    let threshold = (n + h.f + 2) / 2;
    let epochs: BTreeMap<Digest, u64> = trace
        .bodies()
        .filter_map(|b| match b {
            Body::TxSent { tx, epoch, .. } => Some((*tx, *epoch)),
            _ => None,
        })
        .collect();
    let mut sequenced_at: BTreeMap<Digest, u64> = BTreeMap::new();
    let mut eoe: BTreeMap<u64, (BTreeSet<u32>, Option<u64>)> = BTreeMap::new();
    for b in trace.bodies() {
        let Body::Sequenced { seq, entry } = b else {
            continue;
        };
        match entry {
            SeqEntry::Checkpoint { tx } => {
                sequenced_at.entry(*tx).or_insert(*seq);
            }
            SeqEntry::UnlockCert { certs, .. } => {
                for tx in certs {
                    sequenced_at.entry(*tx).or_insert(*seq);
                }
            }
            SeqEntry::EndOfEpoch { validator, epoch } => {
                let (senders, closed) = eoe.entry(*epoch).or_default();
                senders.insert(*validator);
                if closed.is_none() && senders.len() >= threshold {
                    *closed = Some(*seq);
                }
            }
        }
    }
    let mut out = Vec::new();
    for r in &trace.records {
        let Body::TxFinalized {
            tx,
            via_unlock: false,
            ..
        } = &r.body
        else {
            continue;
        };
        let Some(epoch) = epochs.get(tx) else {
            continue;
        };
        let Some((_, Some(closed))) = eoe.get(epoch) else {
            continue;
        };
        if sequenced_at.get(tx).is_none_or(|s| s > closed) {
            out.push(violation(
                NAME,
                r.tick,
                format!(
                    "{} finalized in epoch {epoch} but not sequenced before it closed",
                    tx.short()
                ),
            ));
        }
    }
    out
}

/// Within an epoch, a key confirmed at an honest validator never becomes
/// unlocked there.
pub fn unlock_status_monotone(trace: &Trace) -> Vec<Violation> {
    const NAME: &str = "unlock_status_monotone";
    let mut state: BTreeMap<u32, BTreeMap<ObjectKey, UnlockStatus>> = BTreeMap::new();
    let mut out = Vec::new();
    for (tick, v, event) in honest_events(trace) {
        match event {
            Event::EpochAdvanced { .. } => {
                state.remove(&v);
            }
            Event::UnlockTransition { key, status } => {
                let prev = state.entry(v).or_default().insert(*key, *status);
                if prev == Some(UnlockStatus::Confirmed) && *status == UnlockStatus::Unlocked {
                    out.push(violation(
                        NAME,
                        tick,
                        format!("v{v}: {key} went from confirmed to unlocked"),
                    ));
                }
            }
            _ => {}
        }
    }
    out
}
