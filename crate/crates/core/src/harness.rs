// SPDX-License-Identifier: Apache-2.0

//! In-process committee with a synchronous, lossless transport.
//!
//! Callers choose which validators see each message, which is enough to
//! stage splits, lagging validators and epoch boundaries by hand.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::Digest;
use crate::sequencer::{SeqPayload, Sequencer, SequencerError, Submitted};
use crate::types::{
    CertSign, Certificate, Committee, CommitteeParams, EffectCert, EffectSign, Object, Transaction,
    UnlockRqt, UnlockVote, ValidatorId,
};
use crate::validator::{CertOutcome, Event, Output, Validator, ValidatorConfig, ValidatorError};

pub struct Cluster {
    committee: Committee,
    validators: Vec<Validator>,
    sequencer: Sequencer,
    signs: BTreeMap<Digest, Vec<EffectSign>>,
    superseded: BTreeMap<Digest, BTreeSet<ValidatorId>>,
    events: Vec<(ValidatorId, Event)>,
    /// Validators that currently receive sequenced items.
    live: BTreeSet<ValidatorId>,
    /// Validator submissions buffered while in flight.
    held: Option<Vec<SeqPayload>>,
}

impl Cluster {
    pub fn new(params: CommitteeParams, genesis: &[Object]) -> Self {
        Self::with_delta(params, genesis, None)
    }

    pub fn with_delta(
        params: CommitteeParams,
        genesis: &[Object],
        auto_unlock_delta: Option<u64>,
    ) -> Self {
        let committee = Committee::deterministic(params);
        let validators: Vec<Validator> = committee
            .members()
            .map(|id| {
                Validator::new(
                    ValidatorConfig {
                        id,
                        committee: committee.clone(),
                        auto_unlock_delta,
                    },
                    genesis,
                )
            })
            .collect();
        let live = committee.members().collect();
        Self {
            sequencer: Sequencer::new(committee.clone()),
            committee,
            validators,
            signs: BTreeMap::new(),
            superseded: BTreeMap::new(),
            events: Vec::new(),
            live,
            held: None,
        }
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn ids(&self) -> Vec<ValidatorId> {
        self.committee.members().collect()
    }

    pub fn validator(&self, id: ValidatorId) -> &Validator {
        &self.validators[id.0 as usize]
    }

    pub fn validator_mut(&mut self, id: ValidatorId) -> &mut Validator {
        &mut self.validators[id.0 as usize]
    }

    pub fn validators(&self) -> &[Validator] {
        &self.validators
    }

    pub fn sequencer(&self) -> &Sequencer {
        &self.sequencer
    }

    pub fn set_time(&mut self, now: u64) {
        self.validators.iter_mut().for_each(|v| v.set_time(now));
    }

    /// Stops delivering sequenced items to `id` until [`resume`](Self::resume).
    pub fn pause(&mut self, id: ValidatorId) {
        self.live.remove(&id);
    }

    pub fn resume(&mut self, id: ValidatorId) {
        self.live.insert(id);
    }

    /// Buffers validator submissions until [`release`](Self::release).
    pub fn hold(&mut self) {
        self.held.get_or_insert_with(Vec::new);
    }

    /// Submits buffered items in order and stops buffering.
    pub fn release(&mut self) {
        for p in self.held.take().unwrap_or_default() {
            let _ = self.sequencer.submit(p);
        }
    }

    pub fn vote(
        &mut self,
        tx: &Transaction,
        to: &[ValidatorId],
    ) -> Vec<(ValidatorId, Result<CertSign, ValidatorError>)> {
        let out = to
            .iter()
            .map(|id| (*id, self.validator_mut(*id).process_tx(tx)))
            .collect();
        self.collect();
        out
    }

    /// Certificate from the votes of `to`, if they reach a quorum.
    pub fn certify(&mut self, tx: &Transaction, to: &[ValidatorId]) -> Option<Certificate> {
        let votes: Vec<CertSign> = self
            .vote(tx, to)
            .into_iter()
            .filter_map(|(_, r)| r.ok())
            .collect();
        (votes.len() >= self.committee.quorum())
            .then(|| Certificate::from_votes(tx.clone(), &votes))
    }

    pub fn send_cert(
        &mut self,
        cert: &Certificate,
        to: &[ValidatorId],
    ) -> Vec<(ValidatorId, Result<CertOutcome, ValidatorError>)> {
        let mut out = Vec::new();
        for id in to {
            let r = self.validator_mut(*id).process_cert(cert);
            if let Ok(CertOutcome::Executed(sign)) = &r {
                self.record_sign(sign.clone());
            }
            out.push((*id, r));
        }
        self.collect();
        out
    }

    pub fn unlock_votes(
        &mut self,
        rqt: &UnlockRqt,
        to: &[ValidatorId],
    ) -> Vec<(ValidatorId, Result<UnlockVote, ValidatorError>)> {
        let out = to
            .iter()
            .map(|id| (*id, self.validator_mut(*id).process_unlock_rqt(rqt)))
            .collect();
        self.collect();
        out
    }

    pub fn submit(&mut self, payload: SeqPayload) -> Result<Submitted, SequencerError> {
        self.sequencer.submit(payload)
    }

    pub fn begin_epoch_change(&mut self, to: &[ValidatorId]) {
        for id in to {
            self.validator_mut(*id).begin_epoch_change();
        }
        self.collect();
    }

    fn record_sign(&mut self, sign: EffectSign) {
        let list = self.signs.entry(sign.payload.subject()).or_default();
        if !list.contains(&sign) {
            list.push(sign);
        }
    }

    /// Moves validator outputs to the sequencer and the effect pool.
    fn collect(&mut self) -> bool {
        let mut moved = false;
        for i in 0..self.validators.len() {
            let id = self.validators[i].id();
            for out in self.validators[i].take_outputs() {
                moved = true;
                match out {
                    Output::Submit(p) => match &mut self.held {
                        Some(held) => held.push(p),
                        None => {
                            let _ = self.sequencer.submit(p);
                        }
                    },
                    Output::Effects(sign) => self.record_sign(sign),
                    Output::Superseded(d) => {
                        self.superseded.entry(d).or_default().insert(id);
                    }
                }
            }
            self.events.extend(
                self.validators[i]
                    .take_events()
                    .into_iter()
                    .map(|e| (id, e)),
            );
        }
        moved
    }

    /// Delivers sequenced items to live validators until nothing moves.
    pub fn pump(&mut self) {
        loop {
            let mut moved = self.collect();
            for i in 0..self.validators.len() {
                let id = self.validators[i].id();
                if !self.live.contains(&id) {
                    continue;
                }
                let from = self.validators[i].next_sequence();
                let items = self.sequencer.deliver(from).to_vec();
                for item in &items {
                    self.validators[i].process_sequenced(item);
                    moved = true;
                }
            }
            moved |= self.collect();
            if !moved {
                break;
            }
        }
    }

    pub fn signs(&self, subject: &Digest) -> &[EffectSign] {
        self.signs.get(subject).map_or(&[], Vec::as_slice)
    }

    pub fn effect_cert(&self, subject: &Digest) -> Option<EffectCert> {
        EffectCert::assemble(self.signs(subject), &self.committee)
    }

    pub fn superseded_by(&self, tx: &Digest) -> BTreeSet<ValidatorId> {
        self.superseded.get(tx).cloned().unwrap_or_default()
    }

    pub fn take_events(&mut self) -> Vec<(ValidatorId, Event)> {
        self.collect();
        std::mem::take(&mut self.events)
    }

    /// Votes, certifies and executes `tx` at every validator.
    pub fn execute(&mut self, tx: &Transaction) -> Option<EffectCert> {
        let all = self.ids();
        let cert = self.certify(tx, &all)?;
        self.send_cert(&cert, &all);
        self.pump();
        self.effect_cert(&tx.digest())
    }
}
