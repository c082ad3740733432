// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::{debug, trace};

use crate::auth::{AuthContext, AuthEvidence};
use crate::commutative::{
    credit_half, initial_budget, is_bounded_counter, max_credit, outstanding,
};
use crate::crypto::{verify, Digest, KeyPair};
use crate::sequencer::{end_of_epoch_digest, SeqPayload, SequencedItem};
use crate::types::{
    validator_keypair, verify_certificate, verify_unlock_cert, CertSign, Certificate, Committee,
    CommutativeKind, Contents, EffectSign, Effects, EffectsPayload, ExecStatus, Object, ObjectId,
    ObjectKey, ObjectKind, Transaction, TxKind, UnlockCert, UnlockEffects, UnlockMode,
    UnlockOutcome, UnlockRqt, UnlockVote, ValidatorId,
};

use super::execute::{
    execute, noop, spend_gas, CommutativeUpdate, ExecInputs, ExecOutput, GAS_FEE,
};
use super::store::{
    AtomicPersist, CounterLineage, GroupRef, Job, JobKind, LockEntry, Op, SeqState, Store, Tables,
    UndoRecord, UnlockGroup, UnlockStatus,
};
use super::ValidatorError;

#[derive(Clone, Debug)]
pub struct ValidatorConfig {
    pub id: ValidatorId,
    pub committee: Committee,
    /// Locks at least this old may be released without the owner's authorization.
    pub auto_unlock_delta: Option<u64>,
}

/// Messages a validator emits on its own initiative.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Submit(SeqPayload),
    Effects(EffectSign),
    /// A certificate that will never execute because its inputs were taken by another.
    Superseded(Digest),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecPath {
    Fast,
    Sequenced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    AlreadySequenced,
    WrongEpoch,
    Confirmed,
    GasConfirmed,
    UnknownShared,
    UnknownCounter,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Decision {
    Execute {
        tx: Digest,
    },
    Skip {
        tx: Digest,
        reason: SkipReason,
    },
    Unlock {
        request: Digest,
        outcome: UnlockOutcome,
        executions: usize,
    },
    Ignore {
        request: Digest,
        reason: SkipReason,
    },
    Invalid {
        reason: String,
    },
    EndOfEpoch {
        validator: ValidatorId,
        epoch: u64,
        counted: bool,
    },
}

/// Journal entry for trace checking.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum Event {
    Voted {
        tx: Digest,
        keys: Vec<ObjectKey>,
    },
    Executed {
        path: ExecPath,
        effects: Effects,
    },
    Undone {
        tx: Digest,
    },
    UndoCascade {
        tx: Digest,
    },
    UnlockTransition {
        key: ObjectKey,
        status: UnlockStatus,
    },
    Decision {
        seq: u64,
        decision: Decision,
    },
    GasSpent {
        request: Digest,
        gas: ObjectKey,
    },
    CounterConsolidated {
        counter: ObjectKey,
        new_max: u64,
        certs: usize,
    },
    UnlockFinal {
        request: Digest,
        outcome: UnlockOutcome,
    },
    EpochAdvanced {
        epoch: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeferReason {
    EpochChange,
    Unlocked,
    Confirmed,
    /// Another lock holds one of the inputs here.
    Conflict,
    Shared,
    StaleCommutative,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CertOutcome {
    Executed(EffectSign),
    /// Will be settled through the sequencer.
    Deferred(DeferReason),
    /// Accepted; effects follow once inputs arrive.
    Pending,
}

/// What a validator reports about one object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub object: Option<Object>,
    pub lock: Option<LockEntry>,
    pub unlock: Option<UnlockStatus>,
}

/// Initial tables for a set of genesis objects.
pub fn genesis_tables(genesis: &[Object], committee: &Committee) -> Tables {
    let mut t = Tables::default();
    for obj in genesis {
        match obj.kind {
            ObjectKind::ReadOnly => {
                t.read_only.insert(obj.id());
            }
            ObjectKind::Shared => {
                t.seq.shared_next.insert(obj.id(), obj.version().0);
            }
            ObjectKind::Commutative(CommutativeKind::BoundedCounter) => {
                let max = max_credit(obj).unwrap_or(0);
                t.seq.counters.insert(
                    obj.id(),
                    CounterLineage {
                        version: obj.version().0,
                        max_credit: max,
                        ..Default::default()
                    },
                );
                t.budgets
                    .insert(obj.key, initial_budget(max, committee.params()));
            }
            _ => {}
        }
        t.objects.insert(obj.id(), obj.clone());
    }
    t
}

/// Batch under construction while one sequenced item is processed.
struct SeqCtx {
    item: u64,
    seq: SeqState,
    ops: Vec<Op>,
    confirmed: BTreeSet<ObjectKey>,
    sequenced: BTreeSet<Digest>,
    outputs: Vec<Output>,
    events: Vec<Event>,
}

pub struct Validator {
    id: ValidatorId,
    keypair: KeyPair,
    committee: Committee,
    auto_unlock_delta: Option<u64>,
    clock: u64,
    events: BTreeSet<(String, String)>,
    store: Box<dyn AtomicPersist + Send>,
    outbox: Vec<Output>,
    journal: Vec<Event>,
}

impl Validator {
    pub fn new(config: ValidatorConfig, genesis: &[Object]) -> Self {
        let tables = genesis_tables(genesis, &config.committee);
        Self::with_store(config, Box::new(Store::in_memory(tables)))
    }

    /// A validator whose every commit is logged to `path`.
    pub fn with_wal(config: ValidatorConfig, genesis: &[Object], path: &Path) -> io::Result<Self> {
        let tables = genesis_tables(genesis, &config.committee);
        Ok(Self::with_store(
            config,
            Box::new(Store::with_wal(tables, path)?),
        ))
    }

    /// Restarts from the log at `path`, compacting it.
    pub fn recover(config: ValidatorConfig, path: &Path) -> io::Result<Self> {
        let tables = Store::recover(path)?;
        Ok(Self::with_store(
            config,
            Box::new(Store::with_wal(tables, path)?),
        ))
    }

    pub fn with_store(config: ValidatorConfig, store: Box<dyn AtomicPersist + Send>) -> Self {
        Self {
            id: config.id,
            keypair: validator_keypair(config.id),
            committee: config.committee,
            auto_unlock_delta: config.auto_unlock_delta,
            clock: 0,
            events: BTreeSet::new(),
            store,
            outbox: Vec::new(),
            journal: Vec::new(),
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn tables(&self) -> &Tables {
        self.store.tables()
    }

    pub fn epoch(&self) -> u64 {
        self.tables().epoch
    }

    pub fn set_time(&mut self, now: u64) {
        self.clock = now;
    }

    pub fn time(&self) -> u64 {
        self.clock
    }

    pub fn observe_event(&mut self, chain: &str, event: &str) {
        self.events.insert((chain.to_owned(), event.to_owned()));
    }

    pub fn take_outputs(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.journal)
    }

    pub fn object(&self, id: &ObjectId) -> Option<&Object> {
        self.tables().objects.get(id)
    }

    pub fn object_info(&self, id: &ObjectId) -> ObjectInfo {
        let t = self.tables();
        let object = t.objects.get(id).cloned();
        let (lock, unlock) = match &object {
            Some(o) => (t.lock_db.get(&o.key).cloned(), t.unlock_status(&o.key)),
            None => (None, None),
        };
        ObjectInfo {
            object,
            lock,
            unlock,
        }
    }

    pub fn lock(&self, key: &ObjectKey) -> Option<&LockEntry> {
        self.tables().lock_db.get(key)
    }

    /// Signed effects of an executed transaction.
    pub fn tx_effects(&self, tx: &Digest) -> Option<EffectSign> {
        let e = self.tables().executed.get(tx)?;
        Some(self.sign(EffectsPayload::Tx(e.clone())))
    }

    /// Signed effects of a completed unlock.
    pub fn unlock_effects(&self, request: &Digest) -> Option<EffectSign> {
        let g = self.tables().groups.get(request)?;
        unlock_payload(*request, g).map(|p| self.sign(p))
    }

    /// Digest of all persistent state.
    pub fn state_digest(&self) -> Digest {
        let bytes = serde_json::to_vec(self.tables()).expect("tables serialize");
        crate::encoding::hash_with("cuttlefish.validator-state", &bytes)
    }

    fn persist(&mut self, batch: Vec<Op>) {
        if let Err(e) = self.store.commit(batch) {
            panic!("validator {} storage failure: {e}", self.id);
        }
    }

    fn sign(&self, payload: EffectsPayload) -> EffectSign {
        EffectSign::new(payload, self.id, &self.keypair)
    }

    fn owned_keys(&self, tx: &Transaction) -> Vec<ObjectKey> {
        let t = self.tables();
        tx.input_keys()
            .filter(|k| !t.read_only.contains(&k.id))
            .collect()
    }

    /// The object at exactly `key`.
    fn check_key(&self, key: &ObjectKey) -> Result<&Object, ValidatorError> {
        match self.tables().objects.get(&key.id) {
            Some(o) if o.key.version == key.version => Ok(o),
            Some(o) if o.key.version > key.version => Err(ValidatorError::StaleVersion(*key)),
            _ => Err(ValidatorError::MissingObject(*key)),
        }
    }

    fn auth_context<'a>(
        &'a self,
        evidence: &AuthEvidence,
        msg: &Digest,
        oids: BTreeSet<ObjectId>,
    ) -> AuthContext<'a> {
        AuthContext::new(self.clock, &self.events)
            .with_signers(evidence.verified_signers(msg))
            .with_oids(oids)
    }

    fn authorized(obj: &Object, evidence: &AuthEvidence, ctx: &AuthContext<'_>) -> bool {
        obj.owner
            .as_ref()
            .is_some_and(|owner| evidence.authorizes(&obj.id(), owner, ctx).unwrap_or(false))
    }

    // ---------------------------------------------------------------------
    // Fast path
    // ---------------------------------------------------------------------

    pub fn process_tx(&mut self, tx: &Transaction) -> Result<CertSign, ValidatorError> {
        let t = self.tables();
        if t.paused {
            return Err(ValidatorError::EpochChangeInProgress);
        }
        if tx.epoch != t.epoch {
            return Err(ValidatorError::WrongEpoch {
                expected: t.epoch,
                got: tx.epoch,
            });
        }
        tx.check_shape()
            .map_err(|e| ValidatorError::Malformed(e.to_string()))?;
        let digest = tx.digest();
        let owned = self.owned_keys(tx);
        for key in owned.iter().chain(tx.commutative_inputs.iter()) {
            match t.unlock_status(key) {
                Some(UnlockStatus::Unlocked) => return Err(ValidatorError::ObjectUnlocked(*key)),
                Some(UnlockStatus::Confirmed) => return Err(ValidatorError::StaleVersion(*key)),
                None => {}
            }
        }
        if owned
            .iter()
            .all(|k| t.lock_db.get(k).is_some_and(|e| e.holder() == digest))
        {
            return Ok(CertSign::new(digest, self.id, &self.keypair));
        }

        for key in &tx.inputs {
            if !matches!(
                self.check_key(key)?.kind,
                ObjectKind::Owned | ObjectKind::ReadOnly
            ) {
                return Err(ValidatorError::Malformed(format!(
                    "{key:?} is not an owned input"
                )));
            }
        }
        if self.check_key(&tx.gas)?.kind != ObjectKind::Owned {
            return Err(ValidatorError::Malformed(
                "gas must be an owned object".into(),
            ));
        }
        for id in &tx.shared_inputs {
            match t.objects.get(id) {
                Some(o) if o.kind == ObjectKind::Shared => {}
                Some(_) => return Err(ValidatorError::Malformed(format!("{id:?} is not shared"))),
                None => return Err(ValidatorError::MissingObject(ObjectKey::new(*id, 0))),
            }
        }
        for key in &tx.commutative_inputs {
            if !matches!(self.check_key(key)?.kind, ObjectKind::Commutative(_)) {
                return Err(ValidatorError::Malformed(format!(
                    "{key:?} is not commutative"
                )));
            }
        }

        let ctx = self.auth_context(&tx.evidence, &digest, tx.object_ids());
        for key in &owned {
            let obj = &t.objects[&key.id];
            if !Self::authorized(obj, &tx.evidence, &ctx) {
                return Err(ValidatorError::BadEvidence(key.id));
            }
        }
        drop(ctx);

        for key in &owned {
            if let Some(entry) = t.lock_db.get(key) {
                if entry.holder() != digest {
                    return Err(ValidatorError::ConflictingLock {
                        key: *key,
                        holder: entry.holder(),
                    });
                }
            }
        }

        let mut batch = Vec::new();
        if let (TxKind::Debit { amount }, Some(counter)) = (&tx.kind, tx.commutative_inputs.first())
        {
            if is_bounded_counter(&t.objects[&counter.id]) {
                let budget = t.budgets.get(counter).copied().unwrap_or(0);
                if *amount > budget {
                    return Err(ValidatorError::BudgetExhausted {
                        counter: *counter,
                        budget,
                        amount: *amount,
                    });
                }
                batch.push(Op::PutBudget(*counter, budget - amount));
            }
        }
        for key in &owned {
            if !t.lock_db.contains_key(key) {
                batch.push(Op::PutLock(*key, LockEntry::Locked(tx.clone())));
                batch.push(Op::PutLockTime(*key, self.clock));
            }
        }
        self.persist(batch);
        trace!(validator = %self.id, tx = %digest.short(), "voted");
        self.journal.push(Event::Voted {
            tx: digest,
            keys: owned,
        });
        Ok(CertSign::new(digest, self.id, &self.keypair))
    }

    pub fn process_cert(&mut self, cert: &Certificate) -> Result<CertOutcome, ValidatorError> {
        if !verify_certificate(cert, &self.committee) {
            return Err(ValidatorError::InvalidCertificate);
        }
        let digest = cert.digest();
        if let Some(sign) = self.tx_effects(&digest) {
            return Ok(CertOutcome::Executed(sign));
        }
        let t = self.tables();
        if cert.tx.epoch != t.epoch {
            return Err(ValidatorError::WrongEpoch {
                expected: t.epoch,
                got: cert.tx.epoch,
            });
        }
        cert.tx
            .check_shape()
            .map_err(|e| ValidatorError::Malformed(e.to_string()))?;

        let mut batch = Vec::new();
        let decided = t.sequenced.contains(&digest) || t.checkpointed.contains(&digest);
        let submit = !decided && !t.pending_checkpoint.contains_key(&digest);
        if submit {
            batch.push(Op::PutCheckpoint(cert.clone()));
        }
        for key in self.owned_keys(&cert.tx) {
            if t.unlock_status(&key).is_some() {
                continue;
            }
            match t.lock_db.get(&key) {
                None => {
                    batch.push(Op::PutLock(key, LockEntry::Certified(cert.clone())));
                    batch.push(Op::PutLockTime(key, self.clock));
                }
                Some(LockEntry::Locked(_)) => {
                    batch.push(Op::PutLock(key, LockEntry::Certified(cert.clone())));
                }
                Some(_) => {}
            }
        }
        self.persist(batch);
        if submit {
            self.outbox
                .push(Output::Submit(SeqPayload::CheckpointCert(cert.clone())));
        }
        if decided {
            return Ok(CertOutcome::Pending);
        }
        if let Some(reason) = self.defer_reason(cert) {
            debug!(validator = %self.id, tx = %digest.short(), ?reason, "fast path deferred");
            return Ok(CertOutcome::Deferred(reason));
        }
        match self.try_fast_execute(cert) {
            Some(effects) => Ok(CertOutcome::Executed(
                self.sign(EffectsPayload::Tx(effects)),
            )),
            None => {
                self.persist(vec![Op::PutAwaiting(cert.clone())]);
                Ok(CertOutcome::Pending)
            }
        }
    }

    fn defer_reason(&self, cert: &Certificate) -> Option<DeferReason> {
        let t = self.tables();
        if t.paused {
            return Some(DeferReason::EpochChange);
        }
        let digest = cert.digest();
        for key in self.owned_keys(&cert.tx) {
            match t.unlock_status(&key) {
                Some(UnlockStatus::Unlocked) => return Some(DeferReason::Unlocked),
                Some(UnlockStatus::Confirmed) => return Some(DeferReason::Confirmed),
                None => {}
            }
            if !t
                .lock_db
                .get(&key)
                .is_some_and(|e| e.certificate().is_some_and(|c| c.digest() == digest))
            {
                return Some(DeferReason::Conflict);
            }
        }
        if cert.tx.has_shared() {
            return Some(DeferReason::Shared);
        }
        for key in &cert.tx.commutative_inputs {
            match t.unlock_status(key) {
                Some(UnlockStatus::Unlocked) => return Some(DeferReason::Unlocked),
                Some(UnlockStatus::Confirmed) => return Some(DeferReason::StaleCommutative),
                None => {}
            }
            if t.objects
                .get(&key.id)
                .is_some_and(|o| o.key.version > key.version)
            {
                return Some(DeferReason::StaleCommutative);
            }
        }
        None
    }

    /// Executes `cert` if every input is present at its named version.
    fn try_fast_execute(&mut self, cert: &Certificate) -> Option<Effects> {
        let tx = &cert.tx;
        let digest = cert.digest();
        let t = self.tables();
        let inputs: Vec<&Object> = tx
            .inputs
            .iter()
            .map(|k| t.object_at(k))
            .collect::<Option<_>>()?;
        let gas = t.object_at(&tx.gas)?;
        let commutative: Vec<&Object> = tx
            .commutative_inputs
            .iter()
            .map(|k| t.object_at(k))
            .collect::<Option<_>>()?;
        let bounded: Vec<ObjectKey> = commutative
            .iter()
            .filter(|o| is_bounded_counter(o))
            .map(|o| o.key)
            .collect();
        let pre: Vec<Object> = inputs
            .iter()
            .filter(|o| o.kind != ObjectKind::ReadOnly)
            .chain(std::iter::once(&gas))
            .map(|o| (*o).clone())
            .collect();
        let out = execute(
            tx,
            digest,
            ExecInputs {
                inputs,
                gas,
                shared: Vec::new(),
                commutative: Some(commutative),
            },
            None,
        );
        let pre_ids: BTreeSet<ObjectId> = pre.iter().map(Object::id).collect();
        let created = out
            .writes
            .iter()
            .map(Object::id)
            .filter(|id| !pre_ids.contains(id))
            .collect();
        let mut batch = self.write_ops(&out);
        batch.push(Op::PutExecuted(digest, out.effects.clone()));
        batch.push(Op::PutUndo(
            digest,
            UndoRecord {
                pre,
                created,
                commutative: out.commutative.clone(),
            },
        ));
        for key in bounded {
            batch.push(Op::CounterSeen(key, cert.clone()));
        }
        self.persist(batch);
        trace!(validator = %self.id, tx = %digest.short(), "fast-path executed");
        self.journal.push(Event::Executed {
            path: ExecPath::Fast,
            effects: out.effects.clone(),
        });
        Some(out.effects)
    }

    /// Object writes and commutative updates for an execution, read against current tables.
    fn write_ops(&self, out: &ExecOutput) -> Vec<Op> {
        let t = self.tables();
        let mut ops: Vec<Op> = out.writes.iter().cloned().map(Op::PutObject).collect();
        let mut touched: BTreeMap<ObjectId, Object> = BTreeMap::new();
        for update in &out.commutative {
            let key = update.key();
            let Some(obj) = touched
                .get(&key.id)
                .or_else(|| t.objects.get(&key.id))
                .cloned()
            else {
                continue;
            };
            if obj.key != key {
                continue;
            }
            let mut obj = obj;
            update.apply(&mut obj);
            if let CommutativeUpdate::Credit { amount, .. } = update {
                if is_bounded_counter(&obj) {
                    let budget = t.budgets.get(&key).copied().unwrap_or(0);
                    ops.push(Op::PutBudget(
                        key,
                        budget.saturating_add(credit_half(*amount)),
                    ));
                }
            }
            touched.insert(key.id, obj);
        }
        ops.extend(touched.into_values().map(Op::PutObject));
        ops
    }

    fn retry_awaiting(&mut self) {
        let waiting: Vec<Certificate> = self.tables().awaiting.values().cloned().collect();
        for cert in waiting {
            let digest = cert.digest();
            let t = self.tables();
            if t.executed.contains_key(&digest)
                || t.sequenced.contains(&digest)
                || self.defer_reason(&cert).is_some()
            {
                self.persist(vec![Op::RemoveAwaiting(digest)]);
                continue;
            }
            if let Some(effects) = self.try_fast_execute(&cert) {
                self.persist(vec![Op::RemoveAwaiting(digest)]);
                let sign = self.sign(EffectsPayload::Tx(effects));
                self.outbox.push(Output::Effects(sign));
            }
        }
    }

    // ---------------------------------------------------------------------
    // Unlock voting
    // ---------------------------------------------------------------------

    /// The object at `key`, live or as it was before an undoable execution.
    fn object_for_key(&self, key: &ObjectKey) -> Option<Object> {
        let t = self.tables();
        if let Some(o) = t.object_at(key) {
            return Some(o.clone());
        }
        let cert = t.lock_db.get(key)?.certificate()?;
        t.undo
            .get(&cert.digest())?
            .pre
            .iter()
            .find(|o| o.key == *key)
            .cloned()
    }

    /// Whether every key of `rqt` is either authorized by its evidence or
    /// has been locked for at least `delta` as of `now`.
    pub fn check_auto_unlock(&self, rqt: &UnlockRqt, now: u64, delta: Option<u64>) -> bool {
        let digest = rqt.digest();
        let oids = rqt
            .keys
            .iter()
            .map(|k| k.id)
            .chain(std::iter::once(rqt.gas.id))
            .collect();
        let mut ctx = self.auth_context(&rqt.evidence, &digest, oids);
        ctx.local_time = now;
        let t = self.tables();
        rqt.keys.iter().all(|key| {
            let authorized = self
                .object_for_key(key)
                .is_some_and(|o| Self::authorized(&o, &rqt.evidence, &ctx));
            authorized
                || delta.is_some_and(|d| {
                    t.lock_times
                        .get(key)
                        .is_some_and(|locked| now.saturating_sub(*locked) >= d)
                })
        })
    }

    pub fn process_unlock_rqt(&mut self, rqt: &UnlockRqt) -> Result<UnlockVote, ValidatorError> {
        let t = self.tables();
        if t.paused {
            return Err(ValidatorError::EpochChangeInProgress);
        }
        if rqt.epoch != t.epoch {
            return Err(ValidatorError::WrongEpoch {
                expected: t.epoch,
                got: rqt.epoch,
            });
        }
        rqt.check_shape()
            .map_err(|e| ValidatorError::Malformed(e.to_string()))?;
        let digest = rqt.digest();
        for key in &rqt.keys {
            if t.is_confirmed(key) {
                return Err(ValidatorError::AlreadyConfirmed(*key));
            }
        }

        if rqt.mode == UnlockMode::Consolidate {
            let key = &rqt.keys[0];
            if !is_bounded_counter(self.check_key(key)?) {
                return Err(ValidatorError::Malformed(
                    "consolidation target is not a bounded counter".into(),
                ));
            }
        } else {
            for key in &rqt.keys {
                let obj = self
                    .object_for_key(key)
                    .ok_or(ValidatorError::MissingObject(*key))?;
                if obj.kind != ObjectKind::Owned {
                    return Err(ValidatorError::Malformed(format!("{key:?} is not owned")));
                }
            }
            if !self.check_auto_unlock(rqt, self.clock, self.auto_unlock_delta) {
                let oids = rqt.keys.iter().map(|k| k.id).collect();
                let ctx = self.auth_context(&rqt.evidence, &digest, oids);
                let bad = rqt
                    .keys
                    .iter()
                    .find(|k| {
                        !self
                            .object_for_key(k)
                            .is_some_and(|o| Self::authorized(&o, &rqt.evidence, &ctx))
                    })
                    .map_or(rqt.keys[0].id, |k| k.id);
                return Err(ValidatorError::BadEvidence(bad));
            }
        }

        let gas = t
            .object_at(&rqt.gas)
            .ok_or(ValidatorError::BadGas("not available at this version"))?;
        if gas.kind != ObjectKind::Owned {
            return Err(ValidatorError::BadGas("not an owned object"));
        }
        let ctx = self.auth_context(&rqt.evidence, &digest, [rqt.gas.id].into());
        if !Self::authorized(gas, &rqt.evidence, &ctx) {
            return Err(ValidatorError::BadGas("not authorized"));
        }
        drop(ctx);
        if gas.contents.balance().unwrap_or(0) < GAS_FEE {
            return Err(ValidatorError::BadGas("balance below fee"));
        }
        if t.unlock_status(&rqt.gas).is_some() {
            return Err(ValidatorError::BadGas("already unlocked or confirmed"));
        }
        if t.lock_db
            .get(&rqt.gas)
            .is_some_and(|e| e.holder() != digest)
        {
            return Err(ValidatorError::BadGas("locked by another transaction"));
        }

        let mut reserved = vec![rqt.gas];
        if let (UnlockMode::Consolidate, Some(tx)) = (rqt.mode, &rqt.replacement) {
            if tx.epoch != t.epoch {
                return Err(ValidatorError::WrongEpoch {
                    expected: t.epoch,
                    got: tx.epoch,
                });
            }
            let tx_digest = tx.digest();
            let ctx = self.auth_context(&tx.evidence, &tx_digest, tx.object_ids());
            for key in tx.input_keys() {
                if key.id == rqt.gas.id {
                    return Err(ValidatorError::Malformed(
                        "replacement reuses the request gas".into(),
                    ));
                }
                let obj = self.check_key(&key)?;
                if obj.kind != ObjectKind::Owned || !Self::authorized(obj, &tx.evidence, &ctx) {
                    return Err(ValidatorError::BadEvidence(key.id));
                }
                if t.unlock_status(&key).is_some() {
                    return Err(ValidatorError::ObjectUnlocked(key));
                }
                if let Some(entry) = t.lock_db.get(&key) {
                    if entry.holder() != digest && entry.holder() != tx_digest {
                        return Err(ValidatorError::ConflictingLock {
                            key,
                            holder: entry.holder(),
                        });
                    }
                }
                reserved.push(key);
            }
        }

        let certs: Vec<Certificate> = match rqt.mode {
            UnlockMode::Consolidate => t
                .counter_seen
                .get(&rqt.keys[0])
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default(),
            _ => {
                let set: BTreeSet<Certificate> = rqt
                    .keys
                    .iter()
                    .filter_map(|k| t.lock_db.get(k).and_then(LockEntry::certificate))
                    .cloned()
                    .collect();
                set.into_iter().collect()
            }
        };
        let mark = rqt.mode != UnlockMode::Multi || certs.is_empty();

        let mut batch = Vec::new();
        let mut transitions = Vec::new();
        if mark {
            for key in &rqt.keys {
                if t.unlock_status(key).is_none() {
                    batch.push(Op::SetUnlock(*key, UnlockStatus::Unlocked));
                    transitions.push(Event::UnlockTransition {
                        key: *key,
                        status: UnlockStatus::Unlocked,
                    });
                }
            }
        }
        for key in reserved {
            if !t.lock_db.contains_key(&key) {
                batch.push(Op::PutLock(key, LockEntry::UnlockGas(digest)));
            }
        }
        self.persist(batch);
        self.journal.extend(transitions);
        debug!(validator = %self.id, request = %digest.short(), certs = certs.len(), "unlock vote");
        Ok(UnlockVote::new(digest, certs, self.id, &self.keypair))
    }

    // ---------------------------------------------------------------------
    // Epoch change
    // ---------------------------------------------------------------------

    /// Stops fast-path processing and prepares to close the epoch.
    pub fn begin_epoch_change(&mut self) {
        if !self.tables().paused {
            self.persist(vec![Op::SetPaused(true)]);
            let pending: Vec<Certificate> =
                self.tables().pending_checkpoint.values().cloned().collect();
            self.outbox.extend(
                pending
                    .into_iter()
                    .map(|c| Output::Submit(SeqPayload::CheckpointCert(c))),
            );
        }
        self.maybe_end_epoch();
    }

    fn maybe_end_epoch(&mut self) {
        let t = self.tables();
        if t.paused && !t.end_of_epoch_sent && t.pending_checkpoint.is_empty() {
            let epoch = t.epoch;
            self.persist(vec![Op::SetEndOfEpochSent(true)]);
            self.outbox.push(Output::Submit(SeqPayload::end_of_epoch(
                self.id,
                epoch,
                &self.keypair,
            )));
        }
    }

    fn advance_epoch(&mut self) {
        // Fast-path executions the sequencer never saw are dropped, newest first.
        loop {
            let t = self.tables();
            let open: Vec<Digest> = t
                .undo
                .keys()
                .filter(|d| !t.sequenced.contains(d))
                .copied()
                .collect();
            if open.is_empty() {
                break;
            }
            let before = open.len();
            for d in open {
                self.undo_tx(&d, false);
            }
            let t = self.tables();
            let after = t.undo.keys().filter(|d| !t.sequenced.contains(d)).count();
            if after == before {
                let stuck: Vec<Digest> = t
                    .undo
                    .keys()
                    .filter(|d| !t.sequenced.contains(d))
                    .copied()
                    .collect();
                for d in stuck {
                    self.journal.push(Event::UndoCascade { tx: d });
                    self.persist(vec![Op::RemoveUndo(d)]);
                }
                break;
            }
        }
        let epoch = self.tables().epoch + 1;
        self.persist(vec![Op::AdvanceEpoch(epoch)]);
        debug!(validator = %self.id, epoch, "epoch advanced");
        self.journal.push(Event::EpochAdvanced { epoch });
    }

    // ---------------------------------------------------------------------
    // Sequenced stream
    // ---------------------------------------------------------------------

    /// Next sequence number this validator expects.
    pub fn next_sequence(&self) -> u64 {
        self.tables().seq.next
    }

    /// Applies one item of the sequenced stream. Items must arrive in order;
    /// already-applied items are ignored.
    pub fn process_sequenced(&mut self, item: &SequencedItem) {
        let next = self.tables().seq.next;
        if item.seq < next {
            return;
        }
        assert_eq!(item.seq, next, "sequenced items delivered out of order");
        let mut seq = self.tables().seq.clone();
        seq.next += 1;
        let mut cx = SeqCtx {
            item: item.seq,
            seq,
            ops: Vec::new(),
            confirmed: BTreeSet::new(),
            sequenced: BTreeSet::new(),
            outputs: Vec::new(),
            events: Vec::new(),
        };
        let mut advance = false;
        let decision = match &item.payload {
            SeqPayload::CheckpointCert(cert) => self.seq_checkpoint(&mut cx, cert),
            SeqPayload::UnlockCert(ucert) => self.seq_unlock(&mut cx, ucert),
            SeqPayload::EndOfEpoch {
                validator,
                epoch,
                signature,
            } => {
                let valid = self.committee.key(*validator).is_some_and(|pk| {
                    verify(pk, &end_of_epoch_digest(*validator, *epoch), signature)
                });
                let counted = valid && *epoch == self.tables().epoch;
                if counted {
                    cx.seq.end_of_epoch.insert(*validator);
                    advance = cx.seq.end_of_epoch.len() >= self.committee.quorum();
                }
                Decision::EndOfEpoch {
                    validator: *validator,
                    epoch: *epoch,
                    counted,
                }
            }
        };
        let SeqCtx {
            seq,
            mut ops,
            outputs,
            events,
            ..
        } = cx;
        ops.push(Op::PutSeq(seq));
        self.persist(ops);
        self.journal.push(Event::Decision {
            seq: item.seq,
            decision,
        });
        self.journal.extend(events);
        self.outbox.extend(outputs);
        if advance {
            self.advance_epoch();
        }
        self.drain_jobs();
        self.retry_awaiting();
        self.maybe_end_epoch();
    }

    fn cx_confirmed(&self, cx: &SeqCtx, key: &ObjectKey) -> bool {
        cx.confirmed.contains(key) || self.tables().is_confirmed(key)
    }

    fn cx_sequenced(&self, cx: &SeqCtx, digest: &Digest) -> bool {
        cx.sequenced.contains(digest) || self.tables().sequenced.contains(digest)
    }

    fn confirm(&self, cx: &mut SeqCtx, key: ObjectKey, by: Digest) {
        if cx.confirmed.insert(key) {
            cx.ops.push(Op::Confirm(key, by));
            cx.events.push(Event::UnlockTransition {
                key,
                status: UnlockStatus::Confirmed,
            });
        }
    }

    fn push_job(&self, cx: &mut SeqCtx, group: Option<GroupRef>, kind: JobKind) {
        let id = cx.seq.next_job;
        cx.seq.next_job += 1;
        cx.ops.push(Op::PutJob(Job {
            id,
            seq: cx.item,
            group,
            kind,
        }));
    }

    /// Orders one certificate for execution, or says why it cannot run.
    fn sequence_cert(
        &self,
        cx: &mut SeqCtx,
        cert: &Certificate,
        group: Option<GroupRef>,
    ) -> Result<(), SkipReason> {
        let digest = cert.digest();
        let tx = &cert.tx;
        if self.cx_sequenced(cx, &digest) {
            return Err(SkipReason::AlreadySequenced);
        }
        if tx.epoch != self.tables().epoch {
            return Err(SkipReason::WrongEpoch);
        }
        let owned = self.owned_keys(tx);
        if owned.iter().any(|k| self.cx_confirmed(cx, k)) {
            return Err(SkipReason::Confirmed);
        }
        let mut shared = Vec::with_capacity(tx.shared_inputs.len());
        for id in &tx.shared_inputs {
            let v = *cx
                .seq
                .shared_next
                .get(id)
                .ok_or(SkipReason::UnknownShared)?;
            shared.push(ObjectKey::new(*id, v));
        }
        for key in &shared {
            cx.seq.shared_next.insert(key.id, key.version.0 + 1);
        }
        let mut stale = false;
        for key in &tx.commutative_inputs {
            if let Some(lineage) = cx.seq.counters.get(&key.id) {
                stale |= lineage.version != key.version.0;
            }
        }
        if !stale {
            if let Some(key) = tx.commutative_inputs.first() {
                if let Some(lineage) = cx.seq.counters.get_mut(&key.id) {
                    if lineage.certs.insert(digest) {
                        match tx.kind {
                            TxKind::Credit { amount } => {
                                lineage.credits = lineage.credits.saturating_add(amount)
                            }
                            TxKind::Debit { amount } => {
                                lineage.debits = lineage.debits.saturating_add(amount)
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        cx.sequenced.insert(digest);
        cx.ops.push(Op::MarkSequenced(digest));
        cx.ops.push(Op::RemoveCheckpoint(digest));
        for key in owned {
            self.confirm(cx, key, digest);
        }
        self.push_job(
            cx,
            group,
            JobKind::Cert {
                cert: cert.clone(),
                shared,
                stale,
            },
        );
        Ok(())
    }

    fn seq_checkpoint(&self, cx: &mut SeqCtx, cert: &Certificate) -> Decision {
        let digest = cert.digest();
        cx.ops.push(Op::RemoveCheckpoint(digest));
        cx.ops.push(Op::MarkCheckpointed(digest));
        if !verify_certificate(cert, &self.committee) {
            return Decision::Invalid {
                reason: "bad certificate".into(),
            };
        }
        match self.sequence_cert(cx, cert, None) {
            Ok(()) => Decision::Execute { tx: digest },
            Err(reason) => {
                if reason != SkipReason::AlreadySequenced {
                    cx.outputs.push(Output::Superseded(digest));
                }
                Decision::Skip { tx: digest, reason }
            }
        }
    }

    fn seq_unlock(&self, cx: &mut SeqCtx, ucert: &UnlockCert) -> Decision {
        if let Err(e) = verify_unlock_cert(ucert, &self.committee) {
            return Decision::Invalid {
                reason: e.to_string(),
            };
        }
        let rqt = &ucert.rqt;
        let request = rqt.digest();
        let t = self.tables();
        if t.groups.contains_key(&request) {
            return Decision::Ignore {
                request,
                reason: SkipReason::AlreadySequenced,
            };
        }
        if rqt.epoch != t.epoch {
            return Decision::Ignore {
                request,
                reason: SkipReason::WrongEpoch,
            };
        }
        if self.cx_confirmed(cx, &rqt.gas) {
            return Decision::Ignore {
                request,
                reason: SkipReason::GasConfirmed,
            };
        }
        let group = |slot| Some(GroupRef { request, slot });
        let counter_stale = rqt.mode == UnlockMode::Consolidate
            && cx
                .seq
                .counters
                .get(&rqt.keys[0].id)
                .is_none_or(|l| l.version != rqt.keys[0].version.0);
        let superseded = counter_stale || rqt.keys.iter().any(|k| self.cx_confirmed(cx, k));

        let mut executions = 0usize;
        let outcome = if superseded {
            UnlockOutcome::Superseded
        } else {
            match rqt.mode {
                UnlockMode::Single | UnlockMode::Multi if ucert.certs.is_empty() => {
                    for key in &rqt.keys {
                        self.confirm(cx, *key, request);
                    }
                    executions = 1;
                    match &rqt.replacement {
                        Some(tx) => {
                            let tx_digest = tx.digest();
                            let stale = tx.commutative_inputs.iter().any(|k| {
                                cx.seq
                                    .counters
                                    .get(&k.id)
                                    .is_some_and(|l| l.version != k.version.0)
                            });
                            cx.sequenced.insert(tx_digest);
                            cx.ops.push(Op::MarkSequenced(tx_digest));
                            self.push_job(
                                cx,
                                group(Some(0)),
                                JobKind::Replacement {
                                    tx: tx.clone(),
                                    keys: rqt.keys.clone(),
                                    undone: false,
                                    forced: stale.then_some(ExecStatus::StaleCommutative),
                                },
                            );
                            UnlockOutcome::Replacement
                        }
                        None => {
                            self.push_job(
                                cx,
                                group(Some(0)),
                                JobKind::NoOp {
                                    request,
                                    keys: rqt.keys.clone(),
                                    undone: false,
                                },
                            );
                            UnlockOutcome::NoOp
                        }
                    }
                }
                UnlockMode::Single | UnlockMode::Multi => {
                    for cert in &ucert.certs {
                        if self
                            .sequence_cert(cx, cert, group(Some(executions)))
                            .is_ok()
                        {
                            executions += 1;
                        }
                    }
                    UnlockOutcome::Carried
                }
                UnlockMode::Consolidate => {
                    let counter = rqt.keys[0];
                    for cert in &ucert.certs {
                        if self
                            .sequence_cert(cx, cert, group(Some(executions)))
                            .is_ok()
                        {
                            executions += 1;
                        }
                    }
                    let lineage = cx.seq.counters[&counter.id].clone();
                    let mut remaining =
                        outstanding(lineage.max_credit, lineage.credits, lineage.debits);
                    if let Some(tx) = &rqt.replacement {
                        let tx_digest = tx.digest();
                        let owned = self.owned_keys(tx);
                        if !self.cx_sequenced(cx, &tx_digest)
                            && !owned.iter().any(|k| self.cx_confirmed(cx, k))
                        {
                            let forced = match tx.kind {
                                TxKind::Debit { amount } if amount <= remaining => {
                                    remaining -= amount;
                                    None
                                }
                                _ => Some(ExecStatus::InsufficientBalance),
                            };
                            for key in owned {
                                self.confirm(cx, key, tx_digest);
                            }
                            cx.sequenced.insert(tx_digest);
                            cx.ops.push(Op::MarkSequenced(tx_digest));
                            self.push_job(
                                cx,
                                group(Some(executions)),
                                JobKind::Replacement {
                                    tx: tx.clone(),
                                    keys: Vec::new(),
                                    undone: true,
                                    forced,
                                },
                            );
                            executions += 1;
                        }
                    }
                    self.confirm(cx, counter, request);
                    self.push_job(
                        cx,
                        group(Some(executions)),
                        JobKind::Consolidate {
                            request,
                            counter,
                            new_max: remaining,
                        },
                    );
                    executions += 1;
                    cx.seq.counters.insert(
                        counter.id,
                        CounterLineage {
                            version: counter.version.0 + 1,
                            max_credit: remaining,
                            ..Default::default()
                        },
                    );
                    cx.events.push(Event::CounterConsolidated {
                        counter,
                        new_max: remaining,
                        certs: lineage.certs.len(),
                    });
                    UnlockOutcome::Consolidated
                }
            }
        };
        self.confirm(cx, rqt.gas, request);
        self.push_job(
            cx,
            group(None),
            JobKind::Gas {
                request,
                gas: rqt.gas,
            },
        );
        cx.ops.push(Op::PutGroup(
            request,
            UnlockGroup {
                outcome,
                gas: None,
                executions: vec![None; executions],
            },
        ));
        Decision::Unlock {
            request,
            outcome,
            executions,
        }
    }

    // ---------------------------------------------------------------------
    // Sequenced execution
    // ---------------------------------------------------------------------

    /// Runs every job whose inputs are present, keeping per-object order.
    fn drain_jobs(&mut self) {
        loop {
            let ids: Vec<u64> = self.tables().jobs.keys().copied().collect();
            let mut blocked: BTreeSet<ObjectId> = BTreeSet::new();
            let mut progress = false;
            for id in ids {
                let Some(job) = self.tables().jobs.get(&id).cloned() else {
                    continue;
                };
                let objects = job.objects();
                if objects.iter().any(|o| blocked.contains(o)) {
                    blocked.extend(objects);
                    continue;
                }
                if self.run_job(job) {
                    progress = true;
                } else {
                    blocked.extend(objects);
                }
            }
            if !progress {
                break;
            }
        }
    }

    fn run_job(&mut self, job: Job) -> bool {
        match job.kind.clone() {
            JobKind::Cert {
                cert,
                shared,
                stale,
            } => {
                let digest = cert.digest();
                if let Some(effects) = self.tables().executed.get(&digest).cloned() {
                    let diverged = stale && !effects.commutative.is_empty();
                    if !diverged {
                        let mut ops = vec![Op::RemoveUndo(digest), Op::RemoveAwaiting(digest)];
                        ops.extend(
                            cert.tx
                                .commutative_inputs
                                .iter()
                                .map(|k| Op::CounterForget(*k, digest)),
                        );
                        self.finish(&job, effects, ops, true);
                        return true;
                    }
                    self.undo_tx(&digest, true);
                }
                let forced = stale.then_some(ExecStatus::StaleCommutative);
                self.run_tx(&job, &cert.tx, &shared, stale, forced)
            }
            JobKind::NoOp {
                request,
                keys,
                undone,
            } => {
                if !undone {
                    self.undo_keys(&job, &keys);
                }
                let t = self.tables();
                let Some(objs) = keys
                    .iter()
                    .map(|k| t.object_at(k))
                    .collect::<Option<Vec<_>>>()
                else {
                    return false;
                };
                let (effects, writes) = noop(request, &objs);
                let ops = writes.into_iter().map(Op::PutObject).collect();
                self.journal.push(Event::Executed {
                    path: ExecPath::Sequenced,
                    effects: effects.clone(),
                });
                self.finish(&job, effects, ops, false);
                true
            }
            JobKind::Replacement {
                tx,
                keys,
                undone,
                forced,
            } => {
                if !undone {
                    self.undo_keys(&job, &keys);
                }
                let stale = forced == Some(ExecStatus::StaleCommutative);
                self.run_tx(&job, &tx, &[], stale, forced)
            }
            JobKind::Gas { request, gas } => {
                let Some(obj) = self.tables().object_at(&gas) else {
                    return false;
                };
                let (effects, next) = spend_gas(request, obj);
                self.journal.push(Event::GasSpent { request, gas });
                self.finish(&job, effects, vec![Op::PutObject(next)], false);
                true
            }
            JobKind::Consolidate {
                request,
                counter,
                new_max,
            } => {
                let Some(obj) = self.tables().object_at(&counter) else {
                    return false;
                };
                let mut next = obj.clone();
                next.key = counter.next();
                next.contents = Contents::Counter {
                    max_credit: new_max,
                    credited: 0,
                    debited: 0,
                };
                let effects = Effects {
                    tx: request,
                    status: ExecStatus::Success,
                    consumed: vec![counter],
                    produced: vec![(next.key, next.content_digest())],
                    commutative: Vec::new(),
                };
                let ops = vec![
                    Op::PutBudget(next.key, initial_budget(new_max, self.committee.params())),
                    Op::PutObject(next),
                ];
                self.journal.push(Event::Executed {
                    path: ExecPath::Sequenced,
                    effects: effects.clone(),
                });
                self.finish(&job, effects, ops, false);
                true
            }
        }
    }

    fn run_tx(
        &mut self,
        job: &Job,
        tx: &Transaction,
        shared: &[ObjectKey],
        stale: bool,
        forced: Option<ExecStatus>,
    ) -> bool {
        let digest = tx.digest();
        let t = self.tables();
        let Some(inputs) = tx
            .inputs
            .iter()
            .map(|k| t.object_at(k))
            .collect::<Option<Vec<_>>>()
        else {
            return false;
        };
        let Some(gas) = t.object_at(&tx.gas) else {
            return false;
        };
        let Some(shared_objs) = shared
            .iter()
            .map(|k| t.object_at(k))
            .collect::<Option<Vec<_>>>()
        else {
            return false;
        };
        let commutative = if stale {
            None
        } else {
            let Some(objs) = tx
                .commutative_inputs
                .iter()
                .map(|k| t.object_at(k))
                .collect::<Option<Vec<_>>>()
            else {
                return false;
            };
            Some(objs)
        };
        let out = execute(
            tx,
            digest,
            ExecInputs {
                inputs,
                gas,
                shared: shared_objs,
                commutative,
            },
            forced,
        );
        let mut ops = self.write_ops(&out);
        ops.push(Op::PutExecuted(digest, out.effects.clone()));
        ops.push(Op::RemoveAwaiting(digest));
        self.journal.push(Event::Executed {
            path: ExecPath::Sequenced,
            effects: out.effects.clone(),
        });
        self.finish(job, out.effects, ops, true);
        true
    }

    /// Records a finished job and emits any effects it completes.
    fn finish(&mut self, job: &Job, effects: Effects, mut ops: Vec<Op>, tx_level: bool) {
        ops.push(Op::RemoveJob(job.id));
        let mut emit = Vec::new();
        if tx_level {
            emit.push(EffectsPayload::Tx(effects.clone()));
        }
        let mut final_outcome = None;
        if let Some(g) = job.group {
            if let Some(mut group) = self.tables().groups.get(&g.request).cloned() {
                match g.slot {
                    None => group.gas = Some(effects),
                    Some(i) => group.executions[i] = Some(effects),
                }
                if let Some(payload) = unlock_payload(g.request, &group) {
                    final_outcome = Some(group.outcome);
                    emit.push(payload);
                }
                ops.push(Op::PutGroup(g.request, group));
            }
        }
        self.persist(ops);
        if let (Some(outcome), Some(g)) = (final_outcome, job.group) {
            self.journal.push(Event::UnlockFinal {
                request: g.request,
                outcome,
            });
        }
        for payload in emit {
            let sign = self.sign(payload);
            self.outbox.push(Output::Effects(sign));
        }
    }

    /// Reverses fast-path executions holding any of `keys`, then marks the job.
    fn undo_keys(&mut self, job: &Job, keys: &[ObjectKey]) {
        for key in keys {
            let t = self.tables();
            let Some(cert) = t.lock_db.get(key).and_then(LockEntry::certificate) else {
                continue;
            };
            let digest = cert.digest();
            if t.undo.contains_key(&digest) && !t.sequenced.contains(&digest) {
                self.undo_tx(&digest, true);
            }
        }
        let mut job = job.clone();
        match &mut job.kind {
            JobKind::NoOp { undone, .. } | JobKind::Replacement { undone, .. } => *undone = true,
            _ => {}
        }
        self.persist(vec![Op::PutJob(job)]);
    }

    /// Reverses one fast-path execution. Returns false if its outputs were
    /// already consumed.
    fn undo_tx(&mut self, digest: &Digest, record_cascade: bool) -> bool {
        let t = self.tables();
        let (Some(rec), Some(effects)) =
            (t.undo.get(digest).cloned(), t.executed.get(digest).cloned())
        else {
            return false;
        };
        let consumed = effects
            .produced
            .iter()
            .any(|(k, _)| t.objects.get(&k.id).is_some_and(|o| o.key != *k));
        if consumed {
            if record_cascade {
                self.journal.push(Event::UndoCascade { tx: *digest });
            }
            return false;
        }
        let mut ops: Vec<Op> = rec.pre.iter().cloned().map(Op::PutObject).collect();
        ops.extend(rec.created.iter().copied().map(Op::RemoveObject));
        for update in &rec.commutative {
            let key = update.key();
            if let Some(obj) = t.objects.get(&key.id).filter(|o| o.key == key) {
                let mut obj = obj.clone();
                update.revert(&mut obj);
                if let CommutativeUpdate::Credit { amount, .. } = update {
                    if is_bounded_counter(&obj) {
                        let budget = t.budgets.get(&key).copied().unwrap_or(0);
                        ops.push(Op::PutBudget(
                            key,
                            budget.saturating_sub(credit_half(*amount)),
                        ));
                    }
                }
                ops.push(Op::PutObject(obj));
            }
            ops.push(Op::CounterForget(key, *digest));
        }
        ops.push(Op::RemoveExecuted(*digest));
        ops.push(Op::RemoveUndo(*digest));
        self.persist(ops);
        debug!(validator = %self.id, tx = %digest.short(), "fast-path execution undone");
        self.journal.push(Event::Undone { tx: *digest });
        true
    }
}

fn unlock_payload(request: Digest, group: &UnlockGroup) -> Option<EffectsPayload> {
    if !group.is_complete() {
        return None;
    }
    Some(EffectsPayload::Unlock(UnlockEffects {
        request,
        outcome: group.outcome,
        gas: group.gas.clone()?,
        executions: group.executions.iter().cloned().collect::<Option<_>>()?,
    }))
}
