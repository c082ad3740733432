// SPDX-License-Identifier: Apache-2.0

//! Line-delimited trace records.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::types::{
    Effects, ObjectId, ObjectKey, TxKind, UnlockEffects, UnlockMode, UnlockOutcome,
};
use crate::validator::{Event, UnlockStatus};

use super::scenario::Behavior;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub tick: u64,
    pub actor: String,
    #[serde(flatten)]
    pub body: Body,
}

/// Sequenced item, by digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "item")]
pub enum SeqEntry {
    UnlockCert {
        request: Digest,
        keys: Vec<ObjectKey>,
        certs: Vec<Digest>,
    },
    Checkpoint {
        tx: Digest,
    },
    EndOfEpoch {
        validator: u32,
        epoch: u64,
    },
}

/// Live object version as a validator holds it at the end of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalObject {
    pub key: ObjectKey,
    pub content: Digest,
    pub locked: bool,
    pub unlock: Option<UnlockStatus>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Quiescent,
    TickLimit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Body {
    Start {
        scenario: Digest,
        seed: u64,
        n: usize,
        f: usize,
        delta: Option<u64>,
        epoch_length: u64,
        max_skew: u64,
        behaviors: Vec<Behavior>,
    },
    Genesis {
        object: ObjectKey,
        content: Digest,
        /// Bounded counters only.
        max_credit: Option<u64>,
    },
    Deliver {
        msg: String,
        from: String,
        to: String,
        subject: Digest,
    },
    Drop {
        msg: String,
        from: String,
        to: String,
        subject: Digest,
    },
    Crash {
        validator: u32,
    },
    Validator {
        honest: bool,
        event: Event,
    },
    Sequenced {
        seq: u64,
        entry: SeqEntry,
    },
    TxSent {
        op: u64,
        tx: Digest,
        tx_kind: TxKind,
        inputs: Vec<ObjectKey>,
        commutative: Vec<ObjectKey>,
        gas: ObjectKey,
        epoch: u64,
    },
    Certified {
        op: u64,
        tx: Digest,
        signers: Vec<u32>,
    },
    TxFinalized {
        op: u64,
        tx: Digest,
        via_unlock: bool,
        effects: Effects,
        round_trips: u32,
    },
    Locked {
        op: u64,
        tx: Digest,
    },
    Rejected {
        op: u64,
        tx: Digest,
        reason: String,
    },
    UnlockStarted {
        op: u64,
        request: Digest,
        keys: Vec<ObjectKey>,
        gas: ObjectKey,
        mode: UnlockMode,
        authorized: bool,
        replacement: Option<Digest>,
    },
    UnlockCertAssembled {
        op: u64,
        request: Digest,
        certs: Vec<Digest>,
        authorized: bool,
    },
    UnlockFinalized {
        op: u64,
        request: Digest,
        outcome: UnlockOutcome,
        effects: UnlockEffects,
    },
    UnlockAbandoned {
        op: u64,
        request: Digest,
        reason: String,
    },
    ReplayReply {
        op: u64,
        tx: Digest,
        from: u32,
        result: String,
    },
    ActionDone {
        op: u64,
        action: String,
        label: Option<String>,
        ok: bool,
        detail: String,
        consolidations: u32,
    },
    EpochChangeStarted,
    Final {
        validator: u32,
        behavior: Behavior,
        crashed: bool,
        epoch: u64,
        state: Digest,
        locks: usize,
        objects: Vec<FinalObject>,
    },
    End {
        reason: EndReason,
        messages: u64,
        dropped: u64,
    },
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Start { .. } => "start",
            Body::Genesis { .. } => "genesis",
            Body::Deliver { .. } => "deliver",
            Body::Drop { .. } => "drop",
            Body::Crash { .. } => "crash",
            Body::Validator { .. } => "validator",
            Body::Sequenced { .. } => "sequenced",
            Body::TxSent { .. } => "tx_sent",
            Body::Certified { .. } => "certified",
            Body::TxFinalized { .. } => "tx_finalized",
            Body::Locked { .. } => "locked",
            Body::Rejected { .. } => "rejected",
            Body::UnlockStarted { .. } => "unlock_started",
            Body::UnlockCertAssembled { .. } => "unlock_cert_assembled",
            Body::UnlockFinalized { .. } => "unlock_finalized",
            Body::UnlockAbandoned { .. } => "unlock_abandoned",
            Body::ReplayReply { .. } => "replay_reply",
            Body::ActionDone { .. } => "action_done",
            Body::EpochChangeStarted => "epoch_change_started",
            Body::Final { .. } => "final",
            Body::End { .. } => "end",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<Record>,
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl Trace {
    pub fn push(&mut self, tick: u64, actor: impl Into<String>, body: Body) {
        self.records.push(Record {
            tick,
            actor: actor.into(),
            body,
        });
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(r).expect("records serialize")
            );
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| TraceParseError {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn bodies(&self) -> impl Iterator<Item = &Body> {
        self.records.iter().map(|r| &r.body)
    }

    pub fn end_tick(&self) -> u64 {
        self.records.last().map_or(0, |r| r.tick)
    }

    pub fn end_reason(&self) -> Option<EndReason> {
        self.bodies().find_map(|b| match b {
            Body::End { reason, .. } => Some(*reason),
            _ => None,
        })
    }

    /// Action outcomes in script order of completion.
    pub fn actions(&self) -> Vec<(&str, Option<&str>, bool, &str)> {
        self.bodies()
            .filter_map(|b| match b {
                Body::ActionDone {
                    action,
                    label,
                    ok,
                    detail,
                    ..
                } => Some((action.as_str(), label.as_deref(), *ok, detail.as_str())),
                _ => None,
            })
            .collect()
    }

    /// Final live objects at `validator`, by id.
    pub fn final_objects(&self, validator: u32) -> Vec<&FinalObject> {
        self.bodies()
            .filter_map(|b| match b {
                Body::Final {
                    validator: v,
                    objects,
                    ..
                } if *v == validator => Some(objects.iter()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn final_object(&self, validator: u32, id: &ObjectId) -> Option<&FinalObject> {
        self.final_objects(validator)
            .into_iter()
            .find(|o| o.key.id == *id)
    }
}
