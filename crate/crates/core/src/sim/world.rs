// SPDX-License-Identifier: Apache-2.0

//! Discrete-event engine: validators, sequencer and client agents exchanging
//! messages over a seeded, lossy network.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::client::{
    retry_after_unlock, FastPathDriver, FastPathStatus, UnlockDriver, UnlockStatus as DriverStatus,
    DEFAULT_RETRY_TICKS,
};
use crate::commutative::initial_budget;
use crate::crypto::{Digest, KeyPair};
use crate::encoding::{hash_with, Encoder};
use crate::sequencer::{SeqPayload, Sequencer, Submitted};
use crate::types::{
    validator_keypair, CertSign, Certificate, Committee, Contents, EffectCert, EffectSign, Effects,
    EffectsPayload, ExecStatus, Object, ObjectId, ObjectKey, Transaction, TxKind, UnlockCert,
    UnlockMode, UnlockOutcome, UnlockRqt, UnlockVote, ValidatorId,
};
use crate::validator::{CertOutcome, Output, Validator, ValidatorConfig, ValidatorError, GAS_FEE};

use super::scenario::{party_address, party_key, Action, ActionSpec, Behavior, Scenario};
use super::trace::{Body, EndReason, FinalObject, SeqEntry, Trace};

/// Ticks a client waits in one phase before treating a transaction as stuck.
const STUCK_TICKS: u64 = 4 * DEFAULT_RETRY_TICKS;
/// Fast-path attempts per action, counting retries after an unlock.
const MAX_ATTEMPTS: u32 = 3;

type OpId = u64;
type SlotId = u64;

#[derive(Clone, Debug)]
enum Payload {
    Tx {
        slot: SlotId,
        tx: Transaction,
    },
    Cert {
        slot: SlotId,
        cert: Certificate,
    },
    UnlockRqt {
        slot: SlotId,
        rqt: UnlockRqt,
    },
    EffectsQuery {
        slot: SlotId,
        subject: Digest,
    },
    Query {
        slot: SlotId,
        ids: Vec<ObjectId>,
    },
    Vote {
        from: ValidatorId,
        reply: Result<CertSign, ValidatorError>,
    },
    Effects {
        sign: EffectSign,
    },
    Superseded {
        from: ValidatorId,
    },
    UnlockVote {
        from: ValidatorId,
        reply: Result<UnlockVote, ValidatorError>,
    },
    QueryReply {
        slot: SlotId,
        from: ValidatorId,
        epoch: u64,
        objects: Vec<(ObjectId, Option<Object>)>,
    },
    SubmitUnlock {
        ucert: UnlockCert,
    },
}

impl Payload {
    fn name(&self) -> &'static str {
        match self {
            Payload::Tx { .. } => "tx",
            Payload::Cert { .. } => "cert",
            Payload::UnlockRqt { .. } => "unlock_rqt",
            Payload::EffectsQuery { .. } => "effects_query",
            Payload::Query { .. } => "object_query",
            Payload::Vote { .. } => "vote",
            Payload::Effects { .. } => "effects",
            Payload::Superseded { .. } => "superseded",
            Payload::UnlockVote { .. } => "unlock_vote",
            Payload::QueryReply { .. } => "object_reply",
            Payload::SubmitUnlock { .. } => "submit_unlock",
        }
    }

    fn subject(&self) -> Digest {
        match self {
            Payload::Tx { tx, .. } => tx.digest(),
            Payload::Cert { cert, .. } => cert.digest(),
            Payload::UnlockRqt { rqt, .. } => rqt.digest(),
            Payload::EffectsQuery { subject, .. } => *subject,
            Payload::Query { ids, .. } => ids.first().map_or(Digest::default(), |id| Digest(id.0)),
            Payload::Vote { reply: Ok(s), .. } => s.tx,
            Payload::Effects { sign, .. } => sign.payload.subject(),
            Payload::UnlockVote { reply: Ok(v), .. } => v.request,
            Payload::SubmitUnlock { ucert } => ucert.rqt.digest(),
            _ => Digest::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dest {
    Validator(u32),
    Client(SlotId),
    Sequencer,
}

#[derive(Clone, Debug)]
enum SimEvent {
    Net {
        from: String,
        to: Dest,
        payload: Payload,
    },
    /// The front of `from`'s submission queue reaches the sequencer.
    SeqArrival {
        from: u32,
    },
    SeqDeliver {
        to: u32,
        upto: u64,
    },
    Script {
        idx: usize,
    },
    Timer {
        op: OpId,
    },
    Crash {
        validator: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SlotRef {
    Query,
    Flight(usize),
    Unlock(usize),
    Replay,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum FlightState {
    Active,
    Finalized,
    /// May hold locks; needs an unlock before anything else can use its inputs.
    Blocked,
    Failed(String),
}

#[derive(Clone, Debug)]
struct Flight {
    slot: SlotId,
    driver: FastPathDriver,
    /// Input keys by owning party.
    owners: BTreeMap<String, Vec<ObjectKey>>,
    cert_to: Option<Vec<u32>>,
    ok_votes: usize,
    conflicted: bool,
    since: u64,
    certified_at: Option<u64>,
    state: FlightState,
}

#[derive(Clone, Debug)]
enum UnlockState {
    Active,
    Finalized(EffectCert),
    Abandoned,
}

#[derive(Clone, Debug)]
struct Unlocking {
    slot: SlotId,
    driver: UnlockDriver,
    owner: String,
    authorized: bool,
    replacement: Option<Transaction>,
    since: u64,
    state: UnlockState,
}

impl Unlocking {
    fn ended(&self) -> bool {
        !matches!(self.state, UnlockState::Active)
    }
}

#[derive(Clone, Debug, Default)]
struct View {
    epoch: u64,
    objects: BTreeMap<ObjectId, Object>,
}

/// A validator's epoch and its view of the queried objects.
type QueryReply = (u64, Vec<(ObjectId, Option<Object>)>);

#[derive(Clone, Debug)]
enum Stage {
    Query {
        slot: SlotId,
        ids: Vec<ObjectId>,
        replies: BTreeMap<u32, QueryReply>,
        since: u64,
    },
    Fast,
    Unlock,
    Replay {
        slot: SlotId,
        tx: Transaction,
        replies: BTreeSet<u32>,
        since: u64,
    },
    Done,
}

#[derive(Clone, Debug)]
struct Op {
    id: OpId,
    client: String,
    spec: ActionSpec,
    started: u64,
    stage: Stage,
    view: View,
    flights: Vec<Flight>,
    active: Vec<usize>,
    unlocks: Vec<Unlocking>,
    round: Vec<usize>,
    attempts: u32,
    consolidations: u32,
    spent: u64,
    /// Drain: debit amount awaiting its consolidation.
    draining: bool,
    reserved: Vec<ObjectId>,
}

#[derive(Clone, Debug, Default)]
struct ClientState {
    gas: Vec<ObjectId>,
    busy: BTreeSet<ObjectId>,
    /// Newest key seen for each object in finalized effects.
    known: BTreeMap<ObjectId, ObjectKey>,
    consumed: BTreeSet<ObjectKey>,
    unlocking: BTreeSet<ObjectKey>,
}

#[derive(Clone, Debug)]
struct LabelInfo {
    tx: Transaction,
    owners: BTreeMap<String, Vec<ObjectKey>>,
}

struct Node {
    validator: Validator,
    behavior: Behavior,
    keypair: KeyPair,
    crashed: bool,
    skew: i64,
    submit_delay: u64,
    queue: VecDeque<SeqPayload>,
    last_submit: u64,
    last_deliver: u64,
}

pub(crate) struct World {
    scenario: Scenario,
    committee: Committee,
    rng: ChaCha8Rng,
    now: u64,
    counter: u64,
    queue: BinaryHeap<Reverse<(u64, Digest, u64)>>,
    pending: BTreeMap<u64, SimEvent>,
    nodes: Vec<Node>,
    sequencer: Sequencer,
    genesis: BTreeMap<ObjectId, Object>,
    clients: BTreeMap<String, ClientState>,
    ops: BTreeMap<OpId, Op>,
    next_op: OpId,
    slots: BTreeMap<SlotId, (OpId, SlotRef)>,
    next_slot: SlotId,
    subscribers: BTreeMap<Digest, BTreeSet<SlotId>>,
    labels: BTreeMap<String, LabelInfo>,
    next_nonce: u64,
    drops_left: u64,
    messages: u64,
    dropped: u64,
    trace: Trace,
}

fn actor(v: u32) -> String {
    format!("v{v}")
}

fn flight_owners(
    tx: &Transaction,
    view: &View,
    parties: &[String],
) -> BTreeMap<String, Vec<ObjectKey>> {
    let mut out: BTreeMap<String, Vec<ObjectKey>> = BTreeMap::new();
    for key in tx.input_keys() {
        let owner = view.objects.get(&key.id).and_then(|o| o.owner);
        if let Some(p) = parties.iter().find(|p| Some(party_address(p)) == owner) {
            out.entry(p.clone()).or_default().push(key);
        }
    }
    out
}

fn resign(mut tx: Transaction, parties: &[String]) -> Transaction {
    tx.evidence.signatures.clear();
    for p in parties {
        tx.sign(&party_key(p));
    }
    tx
}

impl World {
    pub(crate) fn new(scenario: Scenario) -> Self {
        let params = scenario.params();
        let committee = Committee::deterministic(params);
        let genesis_objects = scenario.genesis();
        let nodes = committee
            .members()
            .map(|id| {
                let fault = scenario.fault(id.0);
                let config = ValidatorConfig {
                    id,
                    committee: committee.clone(),
                    auto_unlock_delta: scenario.delta,
                };
                Node {
                    validator: Validator::new(config, &genesis_objects),
                    behavior: scenario.behavior(id.0),
                    keypair: validator_keypair(id),
                    crashed: false,
                    skew: fault.map_or(0, |f| f.clock_skew),
                    submit_delay: fault.map_or(0, |f| f.submit_delay),
                    queue: VecDeque::new(),
                    last_submit: 0,
                    last_deliver: 0,
                }
            })
            .collect();
        let gas = scenario.gas_by_owner();
        let clients = scenario
            .clients()
            .into_iter()
            .map(|c| {
                let state = ClientState {
                    gas: gas.get(&c).cloned().unwrap_or_default(),
                    ..Default::default()
                };
                (c, state)
            })
            .collect();
        Self {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            drops_left: scenario.network.drop_budget,
            sequencer: Sequencer::new(committee.clone()),
            genesis: genesis_objects
                .iter()
                .map(|o| (o.id(), o.clone()))
                .collect(),
            committee,
            now: 0,
            counter: 0,
            queue: BinaryHeap::new(),
            pending: BTreeMap::new(),
            nodes,
            clients,
            ops: BTreeMap::new(),
            next_op: 1,
            slots: BTreeMap::new(),
            next_slot: 1,
            subscribers: BTreeMap::new(),
            labels: BTreeMap::new(),
            next_nonce: 1,
            messages: 0,
            dropped: 0,
            trace: Trace::default(),
            scenario,
        }
    }

    fn n(&self) -> usize {
        self.committee.size()
    }

    fn f(&self) -> usize {
        self.committee.params().f()
    }

    // ------------------------------------------------------------------
    // Scheduling
    // ------------------------------------------------------------------

    fn schedule(&mut self, at: u64, event: SimEvent) {
        self.counter += 1;
        let mut enc = Encoder::new();
        enc.u64(self.counter);
        if let SimEvent::Net { payload, .. } = &event {
            enc.item(&payload.subject());
        }
        let tiebreak = hash_with("cuttlefish.sim.event", &enc.finish());
        self.queue.push(Reverse((at, tiebreak, self.counter)));
        self.pending.insert(self.counter, event);
    }

    fn delay(&mut self) -> u64 {
        let net = &self.scenario.network;
        let (lo, hi) = (net.min_delay, net.max_delay);
        self.rng.gen_range(lo..=hi)
    }

    fn send(&mut self, from: String, to: Dest, payload: Payload) {
        self.messages += 1;
        let p = self.scenario.network.drop_probability;
        if to != Dest::Sequencer && self.drops_left > 0 && p > 0.0 && self.rng.gen_bool(p) {
            self.drops_left -= 1;
            self.dropped += 1;
            let body = Body::Drop {
                msg: payload.name().into(),
                from: from.clone(),
                to: self.dest_name(to),
                subject: payload.subject(),
            };
            self.trace.push(self.now, "net", body);
            return;
        }
        let at = self.now + self.delay();
        self.schedule(at, SimEvent::Net { from, to, payload });
    }

    fn dest_name(&self, to: Dest) -> String {
        match to {
            Dest::Validator(v) => actor(v),
            Dest::Client(slot) => self
                .slots
                .get(&slot)
                .and_then(|(op, _)| self.ops.get(op))
                .map_or_else(|| "client".into(), |o| o.client.clone()),
            Dest::Sequencer => "seq".into(),
        }
    }

    // ------------------------------------------------------------------
    // Main loop
    // ------------------------------------------------------------------

    pub(crate) fn run(mut self) -> (Trace, EndReason) {
        let behaviors: Vec<Behavior> = self.nodes.iter().map(|n| n.behavior).collect();
        let max_skew = self
            .nodes
            .iter()
            .map(|n| n.skew.unsigned_abs())
            .max()
            .unwrap_or(0);
        self.trace.push(
            0,
            "sim",
            Body::Start {
                scenario: self.scenario.digest(),
                seed: self.scenario.seed,
                n: self.n(),
                f: self.f(),
                delta: self.scenario.delta,
                epoch_length: self.scenario.epoch_length,
                max_skew,
                behaviors,
            },
        );
        for o in self.genesis.values() {
            let max_credit = match o.contents {
                Contents::Counter { max_credit, .. } => Some(max_credit),
                _ => None,
            };
            self.trace.push(
                0,
                "sim",
                Body::Genesis {
                    object: o.key,
                    content: o.content_digest(),
                    max_credit,
                },
            );
        }
        for (idx, a) in self.scenario.script.clone().iter().enumerate() {
            self.schedule(a.at, SimEvent::Script { idx });
        }
        for fault in self.scenario.faults.clone() {
            if let (Behavior::Crash, Some(at)) = (fault.behavior, fault.at) {
                self.schedule(
                    at,
                    SimEvent::Crash {
                        validator: fault.validator,
                    },
                );
            }
        }
        for v in 0..self.nodes.len() {
            if self.nodes[v].behavior == Behavior::Equivocator {
                let eoe =
                    SeqPayload::end_of_epoch(ValidatorId(v as u32), 0, &self.nodes[v].keypair);
                self.submit(v as u32, eoe);
            }
        }

        let reason = loop {
            let Some(Reverse((at, _, id))) = self.queue.pop() else {
                break EndReason::Quiescent;
            };
            if at > self.scenario.max_ticks {
                break EndReason::TickLimit;
            }
            self.now = at;
            let event = self.pending.remove(&id).expect("scheduled");
            self.dispatch(event);
        };
        self.finish(reason);
        (self.trace, reason)
    }

    fn dispatch(&mut self, event: SimEvent) {
        match event {
            SimEvent::Net { from, to, payload } => {
                let body = Body::Deliver {
                    msg: payload.name().into(),
                    from,
                    to: self.dest_name(to),
                    subject: payload.subject(),
                };
                self.trace.push(self.now, "net", body);
                match to {
                    Dest::Validator(v) => self.on_validator_msg(v, payload),
                    Dest::Client(slot) => self.on_client_msg(slot, payload),
                    Dest::Sequencer => {
                        if let Payload::SubmitUnlock { ucert } = payload {
                            self.sequence(SeqPayload::UnlockCert(ucert));
                        }
                    }
                }
            }
            SimEvent::SeqArrival { from } => {
                if let Some(p) = self.nodes[from as usize].queue.pop_front() {
                    self.sequence(p);
                }
            }
            SimEvent::SeqDeliver { to, upto } => self.deliver_sequenced(to, upto),
            SimEvent::Script { idx } => self.start_action(idx),
            SimEvent::Timer { op } => self.on_timer(op),
            SimEvent::Crash { validator } => {
                self.nodes[validator as usize].crashed = true;
                self.trace
                    .push(self.now, actor(validator), Body::Crash { validator });
            }
        }
    }

    fn finish(&mut self, reason: EndReason) {
        for v in 0..self.nodes.len() {
            let node = &self.nodes[v];
            let val = &node.validator;
            let objects = val
                .tables()
                .objects
                .values()
                .map(|o| {
                    let info = val.object_info(&o.id());
                    FinalObject {
                        key: o.key,
                        content: o.content_digest(),
                        locked: info.lock.is_some(),
                        unlock: info.unlock,
                    }
                })
                .collect();
            let body = Body::Final {
                validator: v as u32,
                behavior: node.behavior,
                crashed: node.crashed,
                epoch: val.epoch(),
                state: val.state_digest(),
                locks: val.tables().lock_db.len(),
                objects,
            };
            self.trace.push(self.now, actor(v as u32), body);
        }
        let body = Body::End {
            reason,
            messages: self.messages,
            dropped: self.dropped,
        };
        self.trace.push(self.now, "sim", body);
    }

    // ------------------------------------------------------------------
    // Validators
    // ------------------------------------------------------------------

    fn honest(&self, v: u32) -> bool {
        let n = &self.nodes[v as usize];
        n.behavior == Behavior::Honest
    }

    fn call<R>(&mut self, v: u32, f: impl FnOnce(&mut Validator) -> R) -> R {
        let node = &mut self.nodes[v as usize];
        let local = (self.now as i64).saturating_add(node.skew).max(0) as u64;
        node.validator.set_time(local);
        let r = f(&mut node.validator);
        self.drain(v);
        r
    }

    fn drain(&mut self, v: u32) {
        let honest = self.honest(v);
        let node = &mut self.nodes[v as usize];
        let outputs = node.validator.take_outputs();
        let events = node.validator.take_events();
        for event in events {
            self.trace
                .push(self.now, actor(v), Body::Validator { honest, event });
        }
        let stale = self.nodes[v as usize].behavior == Behavior::StaleReplier;
        for out in outputs {
            match out {
                Output::Submit(p) => self.submit(v, p),
                Output::Effects(sign) if !stale => {
                    for slot in self
                        .subscribers
                        .get(&sign.payload.subject())
                        .cloned()
                        .unwrap_or_default()
                    {
                        self.send(
                            actor(v),
                            Dest::Client(slot),
                            Payload::Effects { sign: sign.clone() },
                        );
                    }
                }
                Output::Superseded(d) => {
                    for slot in self.subscribers.get(&d).cloned().unwrap_or_default() {
                        self.send(
                            actor(v),
                            Dest::Client(slot),
                            Payload::Superseded {
                                from: ValidatorId(v),
                            },
                        );
                    }
                }
                Output::Effects(_) => {}
            }
        }
    }

    /// Queues `p` on the validator's FIFO link to the sequencer.
    fn submit(&mut self, v: u32, p: SeqPayload) {
        self.messages += 1;
        let d = self.delay();
        let node = &mut self.nodes[v as usize];
        let at = (self.now + d + node.submit_delay).max(node.last_submit);
        node.last_submit = at;
        node.queue.push_back(p);
        self.schedule(at, SimEvent::SeqArrival { from: v });
    }

    fn sequence(&mut self, p: SeqPayload) {
        let entry = match &p {
            SeqPayload::UnlockCert(u) => SeqEntry::UnlockCert {
                request: u.rqt.digest(),
                keys: u.rqt.keys.clone(),
                certs: u.certs.iter().map(Certificate::digest).collect(),
            },
            SeqPayload::CheckpointCert(c) => SeqEntry::Checkpoint { tx: c.digest() },
            SeqPayload::EndOfEpoch {
                validator, epoch, ..
            } => SeqEntry::EndOfEpoch {
                validator: validator.0,
                epoch: *epoch,
            },
        };
        let Ok(Submitted::Accepted(seq)) = self.sequencer.submit(p) else {
            return;
        };
        self.trace
            .push(self.now, "seq", Body::Sequenced { seq, entry });
        let (lo, hi) = (
            self.scenario.network.seq_min_delay,
            self.scenario.network.seq_max_delay,
        );
        for v in 0..self.nodes.len() {
            let d = self.rng.gen_range(lo..=hi);
            let node = &mut self.nodes[v];
            let at = (self.now + d).max(node.last_deliver);
            node.last_deliver = at;
            self.schedule(
                at,
                SimEvent::SeqDeliver {
                    to: v as u32,
                    upto: seq,
                },
            );
        }
    }

    fn deliver_sequenced(&mut self, v: u32, upto: u64) {
        if self.nodes[v as usize].crashed {
            return;
        }
        loop {
            let next = self.nodes[v as usize].validator.next_sequence();
            if next > upto {
                break;
            }
            let Some(item) = self.sequencer.get(next).cloned() else {
                break;
            };
            self.call(v, |val| val.process_sequenced(&item));
        }
    }

    fn subscribe(&mut self, subject: Digest, slot: SlotId) {
        self.subscribers.entry(subject).or_default().insert(slot);
    }

    fn on_validator_msg(&mut self, v: u32, payload: Payload) {
        if self.nodes[v as usize].crashed {
            return;
        }
        let behavior = self.nodes[v as usize].behavior;
        let id = ValidatorId(v);
        let me = actor(v);
        match payload {
            Payload::Tx { slot, tx } => {
                let reply = match behavior {
                    Behavior::Equivocator => Ok(CertSign::new(
                        tx.digest(),
                        id,
                        &self.nodes[v as usize].keypair,
                    )),
                    Behavior::InfiniteBudget => match self.call(v, |val| val.process_tx(&tx)) {
                        Err(ValidatorError::BudgetExhausted { .. }) => Ok(CertSign::new(
                            tx.digest(),
                            id,
                            &self.nodes[v as usize].keypair,
                        )),
                        r => r,
                    },
                    _ => self.call(v, |val| val.process_tx(&tx)),
                };
                self.send(me, Dest::Client(slot), Payload::Vote { from: id, reply });
            }
            Payload::Cert { slot, cert } => {
                self.subscribe(cert.digest(), slot);
                let r = self.call(v, |val| val.process_cert(&cert));
                if let (Ok(CertOutcome::Executed(sign)), false) =
                    (r, behavior == Behavior::StaleReplier)
                {
                    self.send(me, Dest::Client(slot), Payload::Effects { sign });
                }
            }
            Payload::UnlockRqt { slot, rqt } => {
                self.subscribe(rqt.digest(), slot);
                let reply = match behavior {
                    Behavior::VoteWithholder => return,
                    Behavior::Equivocator | Behavior::StaleReplier => Ok(UnlockVote::new(
                        rqt.digest(),
                        Vec::new(),
                        id,
                        &self.nodes[v as usize].keypair,
                    )),
                    _ => self.call(v, |val| val.process_unlock_rqt(&rqt)),
                };
                self.send(
                    me,
                    Dest::Client(slot),
                    Payload::UnlockVote { from: id, reply },
                );
            }
            Payload::EffectsQuery { slot, subject } => {
                self.subscribe(subject, slot);
                if behavior == Behavior::StaleReplier {
                    return;
                }
                let val = &self.nodes[v as usize].validator;
                if let Some(sign) = val
                    .tx_effects(&subject)
                    .or_else(|| val.unlock_effects(&subject))
                {
                    self.send(me, Dest::Client(slot), Payload::Effects { sign });
                }
            }
            Payload::Query { slot, ids } => {
                let val = &self.nodes[v as usize].validator;
                let objects = ids
                    .iter()
                    .map(|oid| {
                        let o = if behavior == Behavior::StaleReplier {
                            self.genesis.get(oid).cloned()
                        } else {
                            val.object(oid).cloned()
                        };
                        (*oid, o)
                    })
                    .collect();
                let epoch = if behavior == Behavior::StaleReplier {
                    0
                } else {
                    val.epoch()
                };
                self.send(
                    me,
                    Dest::Client(slot),
                    Payload::QueryReply {
                        slot,
                        from: id,
                        epoch,
                        objects,
                    },
                );
            }
            _ => {}
        }
    }

    // ------------------------------------------------------------------
    // Client agents
    // ------------------------------------------------------------------

    fn new_slot(&mut self, op: OpId, r: SlotRef) -> SlotId {
        let s = self.next_slot;
        self.next_slot += 1;
        self.slots.insert(s, (op, r));
        s
    }

    fn nonce(&mut self) -> u64 {
        self.next_nonce += 1;
        self.next_nonce
    }

    fn all_validators(&self) -> Vec<u32> {
        (0..self.n() as u32).collect()
    }

    fn start_action(&mut self, idx: usize) {
        let spec = self.scenario.script[idx].clone();
        if matches!(spec.action, Action::EpochChange) {
            self.trace.push(self.now, "sim", Body::EpochChangeStarted);
            for v in 0..self.n() as u32 {
                if !self.nodes[v as usize].crashed {
                    self.call(v, Validator::begin_epoch_change);
                }
            }
            return;
        }
        let id = self.next_op;
        self.next_op += 1;
        let mut op = Op {
            id,
            client: spec.client.clone(),
            spec: spec.clone(),
            started: self.now,
            stage: Stage::Done,
            view: View::default(),
            flights: Vec::new(),
            active: Vec::new(),
            unlocks: Vec::new(),
            round: Vec::new(),
            attempts: 1,
            consolidations: 0,
            spent: 0,
            draining: false,
            reserved: Vec::new(),
        };
        if let Action::Replay { of } = &spec.action {
            let tx = self.labels.get(of).map(|l| l.tx.clone());
            match tx {
                Some(tx) => {
                    let slot = self.new_slot(id, SlotRef::Replay);
                    for v in self.all_validators() {
                        self.send(
                            op.client.clone(),
                            Dest::Validator(v),
                            Payload::Tx {
                                slot,
                                tx: tx.clone(),
                            },
                        );
                    }
                    op.stage = Stage::Replay {
                        slot,
                        tx,
                        replies: BTreeSet::new(),
                        since: self.now,
                    };
                }
                None => {
                    self.complete(&mut op, false, format!("label `{of}` has no transaction"));
                    self.ops.insert(id, op);
                    return;
                }
            }
        } else {
            self.start_query(&mut op);
        }
        self.ops.insert(id, op);
        self.schedule(self.now + DEFAULT_RETRY_TICKS, SimEvent::Timer { op: id });
    }

    fn query_ids(&self, op: &Op) -> Vec<ObjectId> {
        let mut ids: BTreeSet<ObjectId> = BTreeSet::new();
        let obj = |n: &str| ObjectId::from_name(n);
        let mut parties = vec![op.client.clone()];
        match &op.spec.action {
            Action::Transfer { object, .. } | Action::DoubleSend { object, .. } => {
                ids.insert(obj(object));
            }
            Action::UnauthorizedUnlock { object } => {
                ids.insert(obj(object));
            }
            Action::Swap {
                object,
                counterparty,
                counter_object,
            } => {
                ids.insert(obj(object));
                ids.insert(obj(counter_object));
                parties.push(counterparty.clone());
            }
            Action::Debit { counter, .. }
            | Action::Credit { counter, .. }
            | Action::Drain { counter }
            | Action::Consolidate { counter } => {
                ids.insert(obj(counter));
            }
            Action::Unlock { of, objects } => {
                ids.extend(objects.iter().map(|o| obj(o)));
                if let Some(info) = of.as_ref().and_then(|l| self.labels.get(l)) {
                    ids.extend(info.tx.input_keys().map(|k| k.id));
                }
            }
            Action::Replay { .. } | Action::EpochChange => {}
        }
        for p in parties {
            if let Some(c) = self.clients.get(&p) {
                ids.extend(c.gas.iter().copied());
            }
        }
        ids.into_iter().collect()
    }

    fn start_query(&mut self, op: &mut Op) {
        let ids = self.query_ids(op);
        let slot = self.new_slot(op.id, SlotRef::Query);
        for v in self.all_validators() {
            self.send(
                op.client.clone(),
                Dest::Validator(v),
                Payload::Query {
                    slot,
                    ids: ids.clone(),
                },
            );
        }
        op.stage = Stage::Query {
            slot,
            ids,
            replies: BTreeMap::new(),
            since: self.now,
        };
    }

    fn on_client_msg(&mut self, slot: SlotId, payload: Payload) {
        let Some(&(op_id, r)) = self.slots.get(&slot) else {
            return;
        };
        let Some(mut op) = self.ops.remove(&op_id) else {
            return;
        };
        if !matches!(op.stage, Stage::Done) {
            self.handle_reply(&mut op, r, payload);
            self.advance(&mut op);
        }
        self.ops.insert(op_id, op);
    }

    fn handle_reply(&mut self, op: &mut Op, r: SlotRef, payload: Payload) {
        match (r, payload) {
            (
                SlotRef::Query,
                Payload::QueryReply {
                    slot,
                    from,
                    epoch,
                    objects,
                },
            ) => {
                if let Stage::Query {
                    slot: s, replies, ..
                } = &mut op.stage
                {
                    if *s == slot {
                        replies.insert(from.0, (epoch, objects));
                    }
                }
            }
            (SlotRef::Flight(i), Payload::Vote { from, reply, .. }) => {
                let fl = &mut op.flights[i];
                match &reply {
                    Ok(_) => fl.ok_votes += 1,
                    Err(e) if e.class() == crate::validator::ErrorClass::Conflict => {
                        fl.conflicted = true
                    }
                    Err(_) => {}
                }
                if let Some(cert) = fl.driver.on_vote(from, reply) {
                    fl.certified_at = Some(self.now);
                    let tx = fl.driver.digest();
                    let signers = cert.signers.iter().map(|(v, _)| v.0).collect();
                    self.trace.push(
                        self.now,
                        op.client.clone(),
                        Body::Certified {
                            op: op.id,
                            tx,
                            signers,
                        },
                    );
                    let to = fl.cert_to.clone().unwrap_or_else(|| self.all_validators());
                    let slot = fl.slot;
                    for v in to {
                        self.send(
                            op.client.clone(),
                            Dest::Validator(v),
                            Payload::Cert {
                                slot,
                                cert: cert.clone(),
                            },
                        );
                    }
                }
            }
            (SlotRef::Flight(i), Payload::Effects { sign, .. }) => {
                op.flights[i].driver.on_effects(sign);
            }
            (SlotRef::Flight(i), Payload::Superseded { from, .. }) => {
                op.flights[i].driver.on_superseded(from);
            }
            (SlotRef::Unlock(i), Payload::UnlockVote { from, reply, .. }) => {
                let u = &mut op.unlocks[i];
                if let Some(ucert) = u.driver.on_vote(from, reply) {
                    let certs = ucert.certs.iter().map(Certificate::digest).collect();
                    let body = Body::UnlockCertAssembled {
                        op: op.id,
                        request: u.driver.digest(),
                        certs,
                        authorized: u.authorized,
                    };
                    self.trace.push(self.now, u.owner.clone(), body);
                    self.send(
                        u.owner.clone(),
                        Dest::Sequencer,
                        Payload::SubmitUnlock { ucert },
                    );
                }
            }
            (SlotRef::Unlock(i), Payload::Effects { sign, .. }) => {
                op.unlocks[i].driver.on_effects(sign);
            }
            (SlotRef::Replay, Payload::Vote { from, reply, .. }) => {
                if let Stage::Replay { tx, replies, .. } = &mut op.stage {
                    if replies.insert(from.0) {
                        let result = match reply {
                            Ok(_) => "signed".to_string(),
                            Err(e) => e.to_string(),
                        };
                        let body = Body::ReplayReply {
                            op: op.id,
                            tx: tx.digest(),
                            from: from.0,
                            result,
                        };
                        self.trace.push(self.now, op.client.clone(), body);
                    }
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, op_id: OpId) {
        let Some(mut op) = self.ops.remove(&op_id) else {
            return;
        };
        if matches!(op.stage, Stage::Done) {
            self.ops.insert(op_id, op);
            return;
        }
        self.resend(&mut op);
        self.advance(&mut op);
        if !matches!(op.stage, Stage::Done) {
            if self.now.saturating_sub(op.started)
                > self.scenario.epoch_length.max(STUCK_TICKS * 4) * 2
            {
                self.complete(&mut op, false, "timed out".into());
            } else {
                self.schedule(
                    self.now + DEFAULT_RETRY_TICKS,
                    SimEvent::Timer { op: op_id },
                );
            }
        }
        self.ops.insert(op_id, op);
    }

    fn resend(&mut self, op: &mut Op) {
        let client = op.client.clone();
        match &op.stage {
            Stage::Query {
                slot, ids, replies, ..
            } => {
                let (slot, ids) = (*slot, ids.clone());
                let missing: Vec<u32> = self
                    .all_validators()
                    .into_iter()
                    .filter(|v| !replies.contains_key(v))
                    .collect();
                for v in missing {
                    self.send(
                        client.clone(),
                        Dest::Validator(v),
                        Payload::Query {
                            slot,
                            ids: ids.clone(),
                        },
                    );
                }
            }
            Stage::Replay {
                slot, tx, replies, ..
            } => {
                let (slot, tx) = (*slot, tx.clone());
                let missing: Vec<u32> = self
                    .all_validators()
                    .into_iter()
                    .filter(|v| !replies.contains(v))
                    .collect();
                for v in missing {
                    self.send(
                        client.clone(),
                        Dest::Validator(v),
                        Payload::Tx {
                            slot,
                            tx: tx.clone(),
                        },
                    );
                }
            }
            Stage::Fast | Stage::Unlock | Stage::Done => {}
        }
        for &i in &op.active.clone() {
            let fl = &op.flights[i];
            if fl.state != FlightState::Active {
                continue;
            }
            let slot = fl.slot;
            let missing: Vec<u32> = fl.driver.missing().into_iter().map(|v| v.0).collect();
            match fl.driver.certificate().cloned() {
                None => {
                    let tx = fl.driver.tx().clone();
                    for v in missing {
                        self.send(
                            client.clone(),
                            Dest::Validator(v),
                            Payload::Tx {
                                slot,
                                tx: tx.clone(),
                            },
                        );
                    }
                }
                Some(cert) => {
                    let allowed = fl.cert_to.clone();
                    for v in missing
                        .into_iter()
                        .filter(|v| allowed.as_ref().is_none_or(|a| a.contains(v)))
                    {
                        self.send(
                            client.clone(),
                            Dest::Validator(v),
                            Payload::Cert {
                                slot,
                                cert: cert.clone(),
                            },
                        );
                    }
                }
            }
        }
        for &i in &op.round.clone() {
            let u = &op.unlocks[i];
            if u.ended() {
                continue;
            }
            let (slot, owner) = (u.slot, u.owner.clone());
            let missing: Vec<u32> = u.driver.missing().into_iter().map(|v| v.0).collect();
            match u.driver.unlock_cert().cloned() {
                None => {
                    let rqt = u.driver.rqt().clone();
                    for v in missing {
                        self.send(
                            owner.clone(),
                            Dest::Validator(v),
                            Payload::UnlockRqt {
                                slot,
                                rqt: rqt.clone(),
                            },
                        );
                    }
                }
                Some(ucert) => {
                    let subject = u.driver.digest();
                    self.send(
                        owner.clone(),
                        Dest::Sequencer,
                        Payload::SubmitUnlock { ucert },
                    );
                    for v in missing {
                        self.send(
                            owner.clone(),
                            Dest::Validator(v),
                            Payload::EffectsQuery { slot, subject },
                        );
                    }
                }
            }
        }
    }

    /// Runs stage transitions until nothing changes.
    fn advance(&mut self, op: &mut Op) {
        loop {
            let moved = match op.stage {
                Stage::Query { .. } => self.advance_query(op),
                Stage::Fast => self.advance_fast(op),
                Stage::Unlock => self.advance_unlocks(op),
                Stage::Replay { .. } => self.advance_replay(op),
                Stage::Done => false,
            };
            if !moved {
                break;
            }
        }
    }

    fn advance_query(&mut self, op: &mut Op) -> bool {
        let (n, f) = (self.n(), self.f());
        let Stage::Query { replies, since, .. } = &op.stage else {
            return false;
        };
        let enough = replies.len() >= n - f
            || (replies.len() > f && self.now.saturating_sub(*since) >= STUCK_TICKS);
        if !enough {
            return false;
        }
        let mut epochs: Vec<u64> = replies.values().map(|(e, _)| *e).collect();
        epochs.sort_unstable_by(|a, b| b.cmp(a));
        let epoch = epochs[f.min(epochs.len() - 1)];
        let mut candidates: BTreeMap<ObjectId, Vec<Object>> = BTreeMap::new();
        for (_, objs) in replies.values() {
            for (id, o) in objs {
                if let Some(o) = o {
                    candidates.entry(*id).or_default().push(o.clone());
                }
            }
        }
        let mut objects = BTreeMap::new();
        for (id, mut list) in candidates {
            list.sort_by(|a, b| {
                b.key
                    .version
                    .cmp(&a.key.version)
                    .then(a.contents.balance().cmp(&b.contents.balance()))
            });
            if list.len() > f {
                objects.insert(id, list.swap_remove(f));
            }
        }
        let client = &self.clients[&op.client];
        for (id, key) in &client.known {
            if objects.get(id).is_some_and(|o| o.key.version < key.version) {
                objects.remove(id);
            }
        }
        op.view = View { epoch, objects };
        self.on_view(op);
        true
    }

    fn advance_replay(&mut self, op: &mut Op) -> bool {
        let n = self.n();
        let Stage::Replay { replies, since, .. } = &op.stage else {
            return false;
        };
        if replies.len() < n && self.now.saturating_sub(*since) < STUCK_TICKS {
            return false;
        }
        let signed = self
            .trace
            .records
            .iter()
            .filter(|r| matches!(&r.body, Body::ReplayReply { op: o, result, .. } if *o == op.id && result == "signed"))
            .count();
        let ok = signed < self.committee.quorum();
        self.complete(
            op,
            ok,
            format!("{} replies, {signed} signed", replies.len()),
        );
        true
    }

    fn pick_gas(&mut self, op: &mut Op, party: &str) -> Option<ObjectKey> {
        let client = self.clients.get(party)?;
        for gid in client.gas.clone() {
            if client.busy.contains(&gid) {
                continue;
            }
            let Some(obj) = op.view.objects.get(&gid) else {
                continue;
            };
            if obj.owner != Some(party_address(party))
                || obj.contents.balance().unwrap_or(0) < GAS_FEE
            {
                continue;
            }
            let mut key = obj.key;
            if let Some(k) = client.known.get(&gid) {
                if k.version > key.version {
                    key = *k;
                }
            }
            if client.consumed.contains(&key) {
                continue;
            }
            self.clients
                .get_mut(party)
                .expect("exists")
                .busy
                .insert(gid);
            op.reserved.push(gid);
            return Some(key);
        }
        None
    }

    fn live_key(&self, op: &Op, name: &str) -> Option<Object> {
        op.view.objects.get(&ObjectId::from_name(name)).cloned()
    }

    fn on_view(&mut self, op: &mut Op) {
        let client = op.client.clone();
        let kp = party_key(&client);
        let epoch = op.view.epoch;
        let me = party_address(&client);
        let action = op.spec.action.clone();
        let owned_by = |o: &Option<Object>, who: &str| {
            o.as_ref()
                .filter(|o| o.owner == Some(party_address(who)))
                .cloned()
        };
        match action {
            Action::Transfer { object, to } | Action::DoubleSend { object, to } => {
                let Some(obj) = owned_by(&self.live_key(op, &object), &client) else {
                    return self.complete(
                        op,
                        false,
                        format!("`{object}` is not owned by {client}"),
                    );
                };
                let Some(gas) = self.pick_gas(op, &client) else {
                    return self.complete(op, false, "no gas available".into());
                };
                let kind = TxKind::Transfer {
                    recipient: party_address(&to),
                };
                let mk = |nonce: u64| {
                    Transaction::new(vec![obj.key], kind.clone(), gas, epoch)
                        .with_nonce(nonce)
                        .authorize_simple([(obj.id(), &kp), (gas.id, &kp)])
                };
                let first = mk(self.nonce());
                let double = matches!(op.spec.action, Action::DoubleSend { .. })
                    && op.attempts == 1
                    && op.flights.is_empty();
                let parties = vec![client.clone()];
                if double {
                    let second = mk(self.nonce());
                    let split = op.spec.send_to.clone();
                    let rest = split.as_ref().map(|s| {
                        self.all_validators()
                            .into_iter()
                            .filter(|v| !s.contains(v))
                            .collect::<Vec<_>>()
                    });
                    self.start_fast(op, vec![(first, split), (second, rest)], &parties);
                } else {
                    let split = if op.flights.is_empty() {
                        op.spec.send_to.clone()
                    } else {
                        None
                    };
                    self.start_fast(op, vec![(first, split)], &parties);
                }
            }
            Action::Swap {
                object,
                counterparty,
                counter_object,
            } => {
                let a = owned_by(&self.live_key(op, &object), &client);
                let b = owned_by(&self.live_key(op, &counter_object), &counterparty);
                let (Some(a), Some(b)) = (a, b) else {
                    return self.complete(
                        op,
                        false,
                        "swap inputs are not owned by the parties".into(),
                    );
                };
                let Some(gas) = self.pick_gas(op, &client) else {
                    return self.complete(op, false, "no gas available".into());
                };
                let other = party_key(&counterparty);
                let tx = Transaction::new(vec![a.key, b.key], TxKind::Swap, gas, epoch)
                    .with_nonce(self.nonce())
                    .authorize_simple([(a.id(), &kp), (b.id(), &other), (gas.id, &kp)]);
                let split = if op.flights.is_empty() {
                    op.spec.send_to.clone()
                } else {
                    None
                };
                self.start_fast(
                    op,
                    vec![(tx, split)],
                    &[client.clone(), counterparty.clone()],
                );
            }
            Action::Debit { counter, amount } => {
                self.start_counter_tx(op, &counter, TxKind::Debit { amount })
            }
            Action::Credit { counter, amount } => {
                self.start_counter_tx(op, &counter, TxKind::Credit { amount })
            }
            Action::Drain { counter } => {
                let Some(ctr) = self.live_key(op, &counter) else {
                    return self.complete(op, false, format!("`{counter}` unknown"));
                };
                let value = ctr.contents.balance().unwrap_or(0);
                if value == 0 {
                    let detail =
                        format!("spent {} in {} consolidations", op.spent, op.consolidations);
                    return self.complete(op, true, detail);
                }
                let budget = initial_budget(value, self.committee.params());
                if budget > 0 {
                    op.draining = true;
                    self.start_counter_tx(op, &counter, TxKind::Debit { amount: budget });
                } else {
                    self.start_consolidation(op, ctr.key, Some(value));
                }
            }
            Action::Consolidate { counter } => {
                let Some(ctr) = self.live_key(op, &counter) else {
                    return self.complete(op, false, format!("`{counter}` unknown"));
                };
                self.start_consolidation(op, ctr.key, None);
            }
            Action::Unlock { of, objects } => {
                let keys: Vec<ObjectKey> = match &of {
                    Some(l) => self
                        .labels
                        .get(l)
                        .and_then(|i| i.owners.get(&client))
                        .cloned()
                        .unwrap_or_default(),
                    None => objects
                        .iter()
                        .filter_map(|o| self.live_key(op, o))
                        .map(|o| o.key)
                        .collect(),
                };
                if keys.is_empty() {
                    return self.complete(op, false, "nothing to unlock".into());
                }
                let reserved: BTreeSet<ObjectId> = keys.iter().map(|k| k.id).collect();
                self.clients
                    .get_mut(&client)
                    .expect("exists")
                    .busy
                    .extend(reserved.iter().copied());
                op.reserved.extend(reserved);
                let Some(gas) = self.pick_gas(op, &client) else {
                    return self.complete(op, false, "no gas available".into());
                };
                let owners: Vec<(ObjectId, &KeyPair)> = keys
                    .iter()
                    .map(|k| (k.id, &kp))
                    .chain([(gas.id, &kp)])
                    .collect();
                let rqt =
                    UnlockRqt::new(keys, UnlockMode::Single, gas, epoch).authorize_simple(owners);
                self.start_unlock(op, client.clone(), rqt, true, None);
                op.stage = Stage::Unlock;
            }
            Action::UnauthorizedUnlock { object } => {
                let Some(obj) = self.live_key(op, &object) else {
                    return self.complete(op, false, format!("`{object}` unknown"));
                };
                let Some(gas) = self.pick_gas(op, &client) else {
                    return self.complete(op, false, "no gas available".into());
                };
                let authorized = obj.owner == Some(me);
                let rqt = UnlockRqt::new(vec![obj.key], UnlockMode::Single, gas, epoch)
                    .authorize_simple([(gas.id, &kp)]);
                self.start_unlock(op, client.clone(), rqt, authorized, None);
                op.stage = Stage::Unlock;
            }
            Action::Replay { .. } | Action::EpochChange => {
                unreachable!("not started through a query")
            }
        }
    }

    fn start_counter_tx(&mut self, op: &mut Op, counter: &str, kind: TxKind) {
        let client = op.client.clone();
        let Some(ctr) = self.live_key(op, counter) else {
            return self.complete(op, false, format!("`{counter}` unknown"));
        };
        let Some(gas) = self.pick_gas(op, &client) else {
            return self.complete(op, false, "no gas available".into());
        };
        let kp = party_key(&client);
        let tx = Transaction::new(Vec::new(), kind, gas, op.view.epoch)
            .with_commutative(vec![ctr.key])
            .with_nonce(self.nonce())
            .authorize_simple([(gas.id, &kp)]);
        let split = if op.flights.is_empty() {
            op.spec.send_to.clone()
        } else {
            None
        };
        self.start_fast(op, vec![(tx, split)], &[client]);
    }

    fn start_consolidation(
        &mut self,
        op: &mut Op,
        counter: ObjectKey,
        replacement_debit: Option<u64>,
    ) {
        let client = op.client.clone();
        let kp = party_key(&client);
        let Some(gas) = self.pick_gas(op, &client) else {
            return self.complete(op, false, "no gas available".into());
        };
        let mut rqt = UnlockRqt::new(vec![counter], UnlockMode::Consolidate, gas, op.view.epoch);
        let mut replacement = None;
        if let Some(amount) = replacement_debit {
            let Some(gas2) = self.pick_gas(op, &client) else {
                return self.complete(op, false, "no gas available".into());
            };
            let tx = Transaction::new(Vec::new(), TxKind::Debit { amount }, gas2, op.view.epoch)
                .with_commutative(vec![counter])
                .with_nonce(self.nonce())
                .authorize_simple([(gas2.id, &kp)]);
            self.record_tx_sent(op.id, &client, &tx);
            rqt = rqt.with_replacement(tx.clone());
            replacement = Some(tx);
        }
        let rqt = rqt.authorize_simple([(gas.id, &kp)]);
        self.start_unlock(op, client, rqt, true, replacement);
        op.stage = Stage::Unlock;
    }

    fn record_tx_sent(&mut self, op: OpId, client: &str, tx: &Transaction) {
        let body = Body::TxSent {
            op,
            tx: tx.digest(),
            tx_kind: tx.kind.clone(),
            inputs: tx.inputs.clone(),
            commutative: tx.commutative_inputs.clone(),
            gas: tx.gas,
            epoch: tx.epoch,
        };
        self.trace.push(self.now, client.to_owned(), body);
    }

    fn start_fast(
        &mut self,
        op: &mut Op,
        txs: Vec<(Transaction, Option<Vec<u32>>)>,
        parties: &[String],
    ) {
        op.active.clear();
        for (tx, send_to) in txs {
            let slot = self.new_slot(op.id, SlotRef::Flight(op.flights.len()));
            let owners = flight_owners(&tx, &op.view, parties);
            if let Some(label) = &op.spec.label {
                self.labels
                    .entry(label.clone())
                    .or_insert_with(|| LabelInfo {
                        tx: tx.clone(),
                        owners: owners.clone(),
                    });
            }
            self.record_tx_sent(op.id, &op.client, &tx);
            self.subscribe(tx.digest(), slot);
            let to = send_to.unwrap_or_else(|| self.all_validators());
            for v in to {
                self.send(
                    op.client.clone(),
                    Dest::Validator(v),
                    Payload::Tx {
                        slot,
                        tx: tx.clone(),
                    },
                );
            }
            op.active.push(op.flights.len());
            op.flights.push(Flight {
                slot,
                driver: FastPathDriver::new(tx, self.committee.clone()),
                owners,
                cert_to: op.spec.cert_to.clone(),
                ok_votes: 0,
                conflicted: false,
                since: self.now,
                certified_at: None,
                state: FlightState::Active,
            });
        }
        op.round.clear();
        op.stage = Stage::Fast;
    }

    fn start_unlock(
        &mut self,
        op: &mut Op,
        owner: String,
        rqt: UnlockRqt,
        authorized: bool,
        replacement: Option<Transaction>,
    ) {
        let slot = self.new_slot(op.id, SlotRef::Unlock(op.unlocks.len()));
        let request = rqt.digest();
        self.subscribe(request, slot);
        let body = Body::UnlockStarted {
            op: op.id,
            request,
            keys: rqt.keys.clone(),
            gas: rqt.gas,
            mode: rqt.mode,
            authorized,
            replacement: rqt.replacement.as_ref().map(Transaction::digest),
        };
        self.trace.push(self.now, owner.clone(), body);
        if let Some(c) = self.clients.get_mut(&owner) {
            c.unlocking.extend(rqt.keys.iter().copied());
        }
        for v in self.all_validators() {
            self.send(
                owner.clone(),
                Dest::Validator(v),
                Payload::UnlockRqt {
                    slot,
                    rqt: rqt.clone(),
                },
            );
        }
        op.round.push(op.unlocks.len());
        op.unlocks.push(Unlocking {
            slot,
            driver: UnlockDriver::new(rqt, self.committee.clone()),
            owner,
            authorized,
            replacement,
            since: self.now,
            state: UnlockState::Active,
        });
    }

    fn learn(&mut self, party: &str, effects: &[&Effects]) {
        let Some(c) = self.clients.get_mut(party) else {
            return;
        };
        for e in effects {
            c.consumed.extend(e.consumed.iter().copied());
            for (k, _) in &e.produced {
                let known = c.known.entry(k.id).or_insert(*k);
                if k.version > known.version {
                    *known = *k;
                }
            }
        }
    }

    /// Settles unlocks of the current round; true when all have ended.
    fn settle_unlocks(&mut self, op: &mut Op) -> bool {
        for &i in &op.round.clone() {
            let u = &mut op.unlocks[i];
            if u.ended() {
                continue;
            }
            let request = u.driver.digest();
            let owner = u.owner.clone();
            match u.driver.status() {
                DriverStatus::Finalized(outcome) => {
                    let ec = u.driver.effect_cert().cloned().expect("finalized");
                    let EffectsPayload::Unlock(effects) = ec.payload.clone() else {
                        unreachable!()
                    };
                    u.state = UnlockState::Finalized(ec);
                    let body = Body::UnlockFinalized {
                        op: op.id,
                        request,
                        outcome,
                        effects: effects.clone(),
                    };
                    self.trace.push(self.now, owner.clone(), body);
                    let all: Vec<&Effects> = std::iter::once(&effects.gas)
                        .chain(effects.executions.iter())
                        .collect();
                    for p in op
                        .flights
                        .iter()
                        .flat_map(|f| f.owners.keys())
                        .cloned()
                        .collect::<BTreeSet<_>>()
                    {
                        self.learn(&p, &all);
                    }
                    self.learn(&owner, &all);
                }
                DriverStatus::Unauthorized => {
                    u.state = UnlockState::Abandoned;
                    let body = Body::UnlockAbandoned {
                        op: op.id,
                        request,
                        reason: "rejected".into(),
                    };
                    self.trace.push(self.now, owner.clone(), body);
                }
                DriverStatus::Voting | DriverStatus::Submitted => {
                    if self.now.saturating_sub(u.since) > self.scenario.epoch_length {
                        u.state = UnlockState::Abandoned;
                        let body = Body::UnlockAbandoned {
                            op: op.id,
                            request,
                            reason: "timed out".into(),
                        };
                        self.trace.push(self.now, owner.clone(), body);
                    }
                }
            }
            if op.unlocks[i].ended() {
                let keys = op.unlocks[i].driver.rqt().keys.clone();
                if let Some(c) = self.clients.get_mut(&owner) {
                    for k in keys {
                        c.unlocking.remove(&k);
                    }
                }
            }
        }
        op.round.iter().all(|&i| op.unlocks[i].ended())
    }

    fn advance_unlocks(&mut self, op: &mut Op) -> bool {
        if !self.settle_unlocks(op) {
            return false;
        }
        let finalized: Vec<(UnlockOutcome, EffectCert)> = op
            .round
            .iter()
            .filter_map(|&i| match &op.unlocks[i].state {
                UnlockState::Finalized(ec) => match &ec.payload {
                    EffectsPayload::Unlock(u) => Some((u.outcome, ec.clone())),
                    EffectsPayload::Tx(_) => None,
                },
                _ => None,
            })
            .collect();
        let replacement = op
            .round
            .iter()
            .find_map(|&i| op.unlocks[i].replacement.clone());
        op.round.clear();
        match op.spec.action.clone() {
            Action::Drain { .. } | Action::Consolidate { .. } => {
                if let Some((outcome, ec)) = finalized.first() {
                    if *outcome == UnlockOutcome::Consolidated {
                        op.consolidations += 1;
                    }
                    if let EffectsPayload::Unlock(u) = &ec.payload {
                        for e in &u.executions {
                            if let (Some(tx), ExecStatus::Success) = (&replacement, e.status) {
                                if e.tx == tx.digest() {
                                    if let TxKind::Debit { amount } = tx.kind {
                                        op.spent += amount;
                                    }
                                }
                            }
                        }
                    }
                } else {
                    op.attempts += 1;
                }
                if matches!(op.spec.action, Action::Consolidate { .. }) {
                    let ok = !finalized.is_empty();
                    let detail = finalized
                        .first()
                        .map_or("unlock abandoned".into(), |(o, _)| format!("{o:?}"));
                    self.complete(op, ok, detail);
                } else if op.attempts > MAX_ATTEMPTS * 4 {
                    self.complete(op, false, "drain stalled".into());
                } else {
                    self.release_gas(op);
                    self.start_query(op);
                }
            }
            _ => {
                let detail = finalized
                    .first()
                    .map_or("unlock abandoned".into(), |(o, _)| format!("{o:?}"));
                self.complete(op, !finalized.is_empty(), detail);
            }
        }
        true
    }

    fn advance_fast(&mut self, op: &mut Op) -> bool {
        let client = op.client.clone();
        for &i in &op.active.clone() {
            let fl = &mut op.flights[i];
            if fl.state != FlightState::Active {
                continue;
            }
            let tx = fl.driver.digest();
            let age = self.now.saturating_sub(fl.certified_at.unwrap_or(fl.since));
            let next = match fl.driver.status() {
                FastPathStatus::Finalized => FlightState::Finalized,
                FastPathStatus::Superseded => FlightState::Failed("superseded".into()),
                FastPathStatus::Rejected(e) if fl.ok_votes == 0 => {
                    FlightState::Failed(e.to_string())
                }
                FastPathStatus::Rejected(_) | FastPathStatus::Locked => FlightState::Blocked,
                FastPathStatus::Voting if fl.conflicted && age > STUCK_TICKS => {
                    FlightState::Blocked
                }
                FastPathStatus::Certified if age > STUCK_TICKS => FlightState::Blocked,
                _ => FlightState::Active,
            };
            match &next {
                FlightState::Finalized => {
                    let ec = fl.driver.effect_cert().cloned().expect("finalized");
                    let EffectsPayload::Tx(effects) = ec.payload else {
                        unreachable!()
                    };
                    let body = Body::TxFinalized {
                        op: op.id,
                        tx,
                        via_unlock: false,
                        effects: effects.clone(),
                        round_trips: fl.driver.round_trips(),
                    };
                    self.trace.push(self.now, client.clone(), body);
                    for p in fl.owners.keys().cloned().collect::<Vec<_>>() {
                        self.learn(&p, &[&effects]);
                    }
                    self.learn(&client, &[&effects]);
                }
                FlightState::Blocked => {
                    self.trace
                        .push(self.now, client.clone(), Body::Locked { op: op.id, tx })
                }
                FlightState::Failed(reason) => {
                    let body = Body::Rejected {
                        op: op.id,
                        tx,
                        reason: reason.clone(),
                    };
                    self.trace.push(self.now, client.clone(), body);
                }
                FlightState::Active => {}
            }
            op.flights[i].state = next;
        }
        if !op.round.is_empty() {
            return self.after_recovery(op);
        }
        let states: Vec<FlightState> = op
            .active
            .iter()
            .map(|&i| op.flights[i].state.clone())
            .collect();
        if states.contains(&FlightState::Active) {
            return false;
        }
        if states.contains(&FlightState::Finalized) {
            return self.fast_done(op, true, "finalized".into());
        }
        if states.contains(&FlightState::Blocked) {
            return self.start_recovery(op);
        }
        let reason = states
            .iter()
            .find_map(|s| match s {
                FlightState::Failed(r) => Some(r.clone()),
                _ => None,
            })
            .unwrap_or_default();
        self.fast_done(op, false, reason)
    }

    /// Starts one unlock per party over the keys its blocked flights hold.
    fn start_recovery(&mut self, op: &mut Op) -> bool {
        let mut by_party: BTreeMap<String, Vec<ObjectKey>> = BTreeMap::new();
        for &i in &op.active {
            let fl = &op.flights[i];
            if fl.state != FlightState::Blocked {
                continue;
            }
            for (p, keys) in &fl.owners {
                let list = by_party.entry(p.clone()).or_default();
                for k in keys {
                    if !list.contains(k) {
                        list.push(*k);
                    }
                }
            }
        }
        for (p, keys) in by_party.iter_mut() {
            let c = &self.clients[p];
            keys.retain(|k| !c.consumed.contains(k));
            if keys.iter().any(|k| c.unlocking.contains(k)) {
                // Another unlock over these keys is in flight.
                return false;
            }
        }
        by_party.retain(|_, keys| !keys.is_empty());
        if by_party.is_empty() {
            return self.fast_done(op, false, "inputs consumed elsewhere".into());
        }
        let epoch = op.flights[op.active[0]].driver.tx().epoch;
        let multi = self.scenario.unlock_mode == super::scenario::ModeSpec::Multi;
        for (p, keys) in by_party {
            let Some(gas) = self.pick_gas(op, &p) else {
                continue;
            };
            let kp = party_key(&p);
            let mut rqt = UnlockRqt::new(
                keys.clone(),
                if multi {
                    UnlockMode::Multi
                } else {
                    UnlockMode::Single
                },
                gas,
                epoch,
            );
            let mut replacement = None;
            let first = op.flights[op.active[0]].driver.tx().clone();
            if multi && first.input_keys().all(|k| keys.contains(&k)) {
                let nonce = self.nonce();
                let tx = resign(first.with_nonce(nonce), std::slice::from_ref(&p));
                self.record_tx_sent(op.id, &p, &tx);
                rqt = rqt.with_replacement(tx.clone());
                replacement = Some(tx);
            }
            let owners: Vec<(ObjectId, &KeyPair)> = keys
                .iter()
                .map(|k| (k.id, &kp))
                .chain([(gas.id, &kp)])
                .collect();
            let rqt = rqt.authorize_simple(owners);
            self.start_unlock(op, p, rqt, true, replacement);
        }
        if op.round.is_empty() {
            return self.fast_done(op, false, "no gas for unlock".into());
        }
        true
    }

    fn after_recovery(&mut self, op: &mut Op) -> bool {
        if !self.settle_unlocks(op) {
            return false;
        }
        let client = op.client.clone();
        let certs: Vec<EffectCert> = op
            .round
            .iter()
            .filter_map(|&i| match &op.unlocks[i].state {
                UnlockState::Finalized(ec) => Some(ec.clone()),
                _ => None,
            })
            .collect();
        let replacements: BTreeSet<Digest> = op
            .round
            .iter()
            .filter_map(|&i| op.unlocks[i].replacement.as_ref().map(Transaction::digest))
            .collect();
        let mut done = false;
        for ec in &certs {
            let EffectsPayload::Unlock(u) = &ec.payload else {
                continue;
            };
            for e in &u.executions {
                let flight = op
                    .active
                    .iter()
                    .copied()
                    .find(|&i| op.flights[i].driver.digest() == e.tx);
                if flight.is_none() && !replacements.contains(&e.tx) {
                    continue;
                }
                done = true;
                let round_trips = flight.map_or(0, |i| op.flights[i].driver.round_trips());
                if let Some(i) = flight {
                    op.flights[i].state = FlightState::Finalized;
                }
                let body = Body::TxFinalized {
                    op: op.id,
                    tx: e.tx,
                    via_unlock: true,
                    effects: e.clone(),
                    round_trips,
                };
                self.trace.push(self.now, client.clone(), body);
            }
        }
        if done {
            op.round.clear();
            return self.fast_done(op, true, "finalized through unlock".into());
        }
        let first = op.flights[op.active[0]].clone();
        op.round.clear();
        if op.attempts >= MAX_ATTEMPTS {
            return self.fast_done(op, false, "attempts exhausted".into());
        }
        op.attempts += 1;
        let mut tx = first.driver.tx().clone();
        for ec in &certs {
            tx = retry_after_unlock(&tx, ec);
        }
        let parties: Vec<String> = first.owners.keys().cloned().collect();
        let tx = resign(tx.with_nonce(self.nonce()), &parties);
        let view_owners = first.owners.clone();
        self.start_fast(op, vec![(tx, None)], &[]);
        let i = *op.active.last().expect("started");
        let mut owners: BTreeMap<String, Vec<ObjectKey>> = BTreeMap::new();
        let tx = op.flights[i].driver.tx().clone();
        for key in tx.input_keys() {
            if let Some((p, _)) = view_owners
                .iter()
                .find(|(_, ks)| ks.iter().any(|k| k.id == key.id))
            {
                owners.entry(p.clone()).or_default().push(key);
            }
        }
        op.flights[i].owners = owners;
        true
    }

    fn fast_done(&mut self, op: &mut Op, ok: bool, detail: String) -> bool {
        if let Action::Drain { .. } = op.spec.action {
            if ok {
                let i = *op
                    .active
                    .iter()
                    .find(|&&i| op.flights[i].state == FlightState::Finalized)
                    .expect("finalized");
                let fl = &op.flights[i];
                let success = fl.driver.effect_cert().is_none_or(|ec| match &ec.payload {
                    EffectsPayload::Tx(e) => e.is_success(),
                    EffectsPayload::Unlock(_) => true,
                });
                if let (true, TxKind::Debit { amount }) = (success, &fl.driver.tx().kind) {
                    op.spent += amount;
                }
            } else {
                op.attempts += 1;
            }
            op.draining = false;
            let ctr = op.flights[op.active[0]].driver.tx().commutative_inputs[0];
            self.release_gas(op);
            self.start_consolidation(op, ctr, None);
            return true;
        }
        if !ok
            && op.attempts < MAX_ATTEMPTS
            && !matches!(op.spec.action, Action::Debit { .. } | Action::Credit { .. })
        {
            op.attempts += 1;
            self.release_gas(op);
            self.start_query(op);
            return true;
        }
        self.complete(op, ok, detail);
        true
    }

    fn release_gas(&mut self, op: &mut Op) {
        for gid in op.reserved.drain(..) {
            for c in self.clients.values_mut() {
                c.busy.remove(&gid);
            }
        }
    }

    fn complete(&mut self, op: &mut Op, ok: bool, detail: String) {
        self.release_gas(op);
        for &i in &op.round {
            let owner = op.unlocks[i].owner.clone();
            if let Some(c) = self.clients.get_mut(&owner) {
                for k in &op.unlocks[i].driver.rqt().keys {
                    c.unlocking.remove(k);
                }
            }
        }
        let body = Body::ActionDone {
            op: op.id,
            action: op.spec.action.name().into(),
            label: op.spec.label.clone(),
            ok,
            detail,
            consolidations: op.consolidations,
        };
        self.trace.push(self.now, op.client.clone(), body);
        op.stage = Stage::Done;
    }
}
