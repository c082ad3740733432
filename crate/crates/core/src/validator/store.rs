// SPDX-License-Identifier: Apache-2.0

//! Validator tables and their atomic, optionally write-ahead-logged, commit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::types::{
    Certificate, Effects, ExecStatus, Object, ObjectId, ObjectKey, Transaction, UnlockOutcome,
    ValidatorId,
};

use super::execute::CommutativeUpdate;

/// What a validator holds for one owned object version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockEntry {
    /// Voted for this transaction; no certificate seen yet.
    Locked(Transaction),
    Certified(Certificate),
    /// Reserved as gas (or replacement input) for this unlock request.
    UnlockGas(Digest),
}

impl LockEntry {
    pub fn holder(&self) -> Digest {
        match self {
            LockEntry::Locked(tx) => tx.digest(),
            LockEntry::Certified(c) => c.digest(),
            LockEntry::UnlockGas(d) => *d,
        }
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            LockEntry::Certified(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlockStatus {
    Unlocked,
    Confirmed,
}

/// Enough to reverse one fast-path execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndoRecord {
    /// Objects as they were before the execution.
    pub pre: Vec<Object>,
    /// Objects the execution created.
    pub created: Vec<ObjectId>,
    pub commutative: Vec<CommutativeUpdate>,
}

/// Sequenced work waiting for its inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub seq: u64,
    pub group: Option<GroupRef>,
    pub kind: JobKind,
}

/// Where a job's effects go in an unlock group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRef {
    pub request: Digest,
    /// Index into `executions`; `None` for the gas spend.
    pub slot: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Cert {
        cert: Certificate,
        shared: Vec<ObjectKey>,
        stale: bool,
    },
    NoOp {
        request: Digest,
        keys: Vec<ObjectKey>,
        undone: bool,
    },
    Replacement {
        tx: Transaction,
        keys: Vec<ObjectKey>,
        undone: bool,
        forced: Option<ExecStatus>,
    },
    Gas {
        request: Digest,
        gas: ObjectKey,
    },
    Consolidate {
        request: Digest,
        counter: ObjectKey,
        new_max: u64,
    },
}

impl Job {
    /// Objects whose sequenced executions must stay in order.
    pub fn objects(&self) -> BTreeSet<ObjectId> {
        match &self.kind {
            JobKind::Cert { cert, stale, .. } => {
                let mut ids: BTreeSet<ObjectId> = cert.tx.input_keys().map(|k| k.id).collect();
                ids.extend(cert.tx.shared_inputs.iter().copied());
                if !stale {
                    ids.extend(cert.tx.commutative_inputs.iter().map(|k| k.id));
                }
                ids
            }
            JobKind::NoOp { keys, .. } => keys.iter().map(|k| k.id).collect(),
            JobKind::Replacement { tx, keys, .. } => keys
                .iter()
                .map(|k| k.id)
                .chain(tx.input_keys().map(|k| k.id))
                .chain(tx.commutative_inputs.iter().map(|k| k.id))
                .collect(),
            JobKind::Gas { gas, .. } => [gas.id].into(),
            JobKind::Consolidate { counter, .. } => [counter.id].into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlockGroup {
    pub outcome: UnlockOutcome,
    pub gas: Option<Effects>,
    pub executions: Vec<Option<Effects>>,
}

impl UnlockGroup {
    pub fn is_complete(&self) -> bool {
        self.gas.is_some() && self.executions.iter().all(Option::is_some)
    }
}

/// Sequenced view of a bounded counter's current version.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterLineage {
    pub version: u64,
    pub max_credit: u64,
    pub credits: u64,
    pub debits: u64,
    /// Certificates already counted against this version.
    pub certs: BTreeSet<Digest>,
}

/// State derived only from the sequenced stream; identical at every honest validator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqState {
    pub next: u64,
    pub shared_next: BTreeMap<ObjectId, u64>,
    pub counters: BTreeMap<ObjectId, CounterLineage>,
    pub end_of_epoch: BTreeSet<ValidatorId>,
    pub next_job: u64,
}

/// One atomic table mutation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    PutObject(Object),
    RemoveObject(ObjectId),
    PutLock(ObjectKey, LockEntry),
    SetUnlock(ObjectKey, UnlockStatus),
    PutLockTime(ObjectKey, u64),
    PutExecuted(Digest, Effects),
    RemoveExecuted(Digest),
    PutUndo(Digest, UndoRecord),
    RemoveUndo(Digest),
    PutBudget(ObjectKey, u64),
    CounterSeen(ObjectKey, Certificate),
    CounterForget(ObjectKey, Digest),
    PutCheckpoint(Certificate),
    RemoveCheckpoint(Digest),
    Confirm(ObjectKey, Digest),
    MarkSequenced(Digest),
    MarkCheckpointed(Digest),
    PutSeq(SeqState),
    PutJob(Job),
    RemoveJob(u64),
    PutAwaiting(Certificate),
    RemoveAwaiting(Digest),
    PutGroup(Digest, UnlockGroup),
    RemoveGroup(Digest),
    SetPaused(bool),
    SetEndOfEpochSent(bool),
    /// Moves to `epoch`: clears locks, lock times, unlocked marks and epoch-local queues.
    AdvanceEpoch(u64),
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(
        map: &BTreeMap<K, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

/// All persistent validator state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tables {
    pub epoch: u64,
    pub paused: bool,
    pub end_of_epoch_sent: bool,
    pub objects: BTreeMap<ObjectId, Object>,
    pub read_only: BTreeSet<ObjectId>,
    #[serde(with = "pairs")]
    pub lock_db: BTreeMap<ObjectKey, LockEntry>,
    #[serde(with = "pairs")]
    pub unlock_db: BTreeMap<ObjectKey, UnlockStatus>,
    #[serde(with = "pairs")]
    pub lock_times: BTreeMap<ObjectKey, u64>,
    #[serde(with = "pairs")]
    pub confirmed_by: BTreeMap<ObjectKey, Digest>,
    pub executed: BTreeMap<Digest, Effects>,
    pub undo: BTreeMap<Digest, UndoRecord>,
    #[serde(with = "pairs")]
    pub budgets: BTreeMap<ObjectKey, u64>,
    #[serde(with = "pairs")]
    pub counter_seen: BTreeMap<ObjectKey, BTreeMap<Digest, Certificate>>,
    pub pending_checkpoint: BTreeMap<Digest, Certificate>,
    /// Transactions whose execution was decided by the sequencer.
    pub sequenced: BTreeSet<Digest>,
    /// Transactions seen as checkpoint items, whatever the decision.
    pub checkpointed: BTreeSet<Digest>,
    pub seq: SeqState,
    pub jobs: BTreeMap<u64, Job>,
    pub awaiting: BTreeMap<Digest, Certificate>,
    pub groups: BTreeMap<Digest, UnlockGroup>,
}

impl Tables {
    pub fn apply(&mut self, op: Op) {
        match op {
            Op::PutObject(o) => {
                self.objects.insert(o.id(), o);
            }
            Op::RemoveObject(id) => {
                self.objects.remove(&id);
            }
            Op::PutLock(k, e) => {
                self.lock_db.insert(k, e);
            }
            Op::SetUnlock(k, s) => {
                self.unlock_db.insert(k, s);
            }
            Op::PutLockTime(k, t) => {
                self.lock_times.entry(k).or_insert(t);
            }
            Op::PutExecuted(d, e) => {
                self.executed.insert(d, e);
            }
            Op::RemoveExecuted(d) => {
                self.executed.remove(&d);
            }
            Op::PutUndo(d, u) => {
                self.undo.insert(d, u);
            }
            Op::RemoveUndo(d) => {
                self.undo.remove(&d);
            }
            Op::PutBudget(k, b) => {
                self.budgets.insert(k, b);
            }
            Op::CounterSeen(k, c) => {
                self.counter_seen
                    .entry(k)
                    .or_default()
                    .insert(c.digest(), c);
            }
            Op::CounterForget(k, d) => {
                if let Some(m) = self.counter_seen.get_mut(&k) {
                    m.remove(&d);
                    if m.is_empty() {
                        self.counter_seen.remove(&k);
                    }
                }
            }
            Op::PutCheckpoint(c) => {
                self.pending_checkpoint.insert(c.digest(), c);
            }
            Op::RemoveCheckpoint(d) => {
                self.pending_checkpoint.remove(&d);
            }
            Op::Confirm(k, by) => {
                self.unlock_db.insert(k, UnlockStatus::Confirmed);
                self.confirmed_by.insert(k, by);
            }
            Op::MarkSequenced(d) => {
                self.sequenced.insert(d);
            }
            Op::MarkCheckpointed(d) => {
                self.checkpointed.insert(d);
            }
            Op::PutSeq(s) => self.seq = s,
            Op::PutJob(j) => {
                self.jobs.insert(j.id, j);
            }
            Op::RemoveJob(id) => {
                self.jobs.remove(&id);
            }
            Op::PutAwaiting(c) => {
                self.awaiting.insert(c.digest(), c);
            }
            Op::RemoveAwaiting(d) => {
                self.awaiting.remove(&d);
            }
            Op::PutGroup(d, g) => {
                self.groups.insert(d, g);
            }
            Op::RemoveGroup(d) => {
                self.groups.remove(&d);
            }
            Op::SetPaused(p) => self.paused = p,
            Op::SetEndOfEpochSent(s) => self.end_of_epoch_sent = s,
            Op::AdvanceEpoch(e) => {
                self.epoch = e;
                self.paused = false;
                self.end_of_epoch_sent = false;
                self.lock_db.clear();
                self.lock_times.clear();
                self.unlock_db.retain(|_, s| *s == UnlockStatus::Confirmed);
                self.awaiting.clear();
                self.pending_checkpoint.clear();
                self.counter_seen.clear();
                self.seq.end_of_epoch.clear();
            }
        }
    }

    pub fn object_at(&self, key: &ObjectKey) -> Option<&Object> {
        self.objects.get(&key.id).filter(|o| o.key == *key)
    }

    pub fn unlock_status(&self, key: &ObjectKey) -> Option<UnlockStatus> {
        self.unlock_db.get(key).copied()
    }

    pub fn is_confirmed(&self, key: &ObjectKey) -> bool {
        self.unlock_status(key) == Some(UnlockStatus::Confirmed)
    }
}

/// Storage that applies a batch of operations all-or-nothing.
pub trait AtomicPersist {
    fn tables(&self) -> &Tables;
    fn commit(&mut self, batch: Vec<Op>) -> io::Result<()>;
}

/// Tables kept in memory, with an optional JSON-lines write-ahead log.
pub struct Store {
    tables: Tables,
    wal: Option<BufWriter<File>>,
}

impl Store {
    pub fn in_memory(tables: Tables) -> Self {
        Self { tables, wal: None }
    }

    /// Starts a fresh log at `path` from `tables`, which is written as the first record.
    pub fn with_wal(tables: Tables, path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        let mut wal = BufWriter::new(file);
        serde_json::to_writer(&mut wal, &tables)?;
        wal.write_all(b"\n")?;
        wal.flush()?;
        Ok(Self {
            tables,
            wal: Some(wal),
        })
    }

    /// Rebuilds tables from a log. A torn final record is discarded.
    pub fn recover(path: &Path) -> io::Result<Tables> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty log"))??;
        let mut tables: Tables = serde_json::from_str(&first)?;
        for line in lines {
            let line = line?;
            match serde_json::from_str::<Vec<Op>>(&line) {
                Ok(batch) => batch.into_iter().for_each(|op| tables.apply(op)),
                Err(_) => break,
            }
        }
        Ok(tables)
    }

    pub fn into_tables(self) -> Tables {
        self.tables
    }
}

impl AtomicPersist for Store {
    fn tables(&self) -> &Tables {
        &self.tables
    }

    fn commit(&mut self, batch: Vec<Op>) -> io::Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        if let Some(wal) = self.wal.as_mut() {
            serde_json::to_writer(&mut *wal, &batch)?;
            wal.write_all(b"\n")?;
            wal.flush()?;
        }
        for op in batch {
            self.tables.apply(op);
        }
        Ok(())
    }
}
