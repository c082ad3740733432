// SPDX-License-Identifier: Apache-2.0

//! Client-side drivers: collect votes into certificates, certificates into
//! effect certificates, and unlock votes into unlock certificates.
//!
//! Drivers are message-in, decision-out; the caller owns the transport.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::Digest;
use crate::types::{
    CertSign, Certificate, Committee, EffectCert, EffectSign, EffectsPayload, ObjectKey,
    Transaction, UnlockCert, UnlockOutcome, UnlockRqt, UnlockVote, ValidatorId, VoteRecord,
};
use crate::validator::{ErrorClass, ValidatorError};

/// Ticks a driver waits for missing replies before resending.
pub const DEFAULT_RETRY_TICKS: u64 = 50;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("{have} distinct valid votes, {need} needed")]
    Incomplete { have: usize, need: usize },
    #[error("votes are over different unlock requests")]
    MixedRequests,
}

/// Builds an unlock certificate from votes on `rqt`, carrying the union of
/// their certificate sets. Invalid votes are not counted.
pub fn assemble_unlock_cert(
    rqt: &UnlockRqt,
    votes: &[UnlockVote],
    committee: &Committee,
) -> Result<UnlockCert, AssembleError> {
    let request = rqt.digest();
    if votes.iter().any(|v| v.request != request) {
        return Err(AssembleError::MixedRequests);
    }
    let mut records: BTreeMap<ValidatorId, VoteRecord> = BTreeMap::new();
    let mut union: BTreeSet<Certificate> = BTreeSet::new();
    for vote in votes {
        if records.contains_key(&vote.signer) || !vote.verify(committee) {
            continue;
        }
        union.extend(vote.certs.iter().cloned());
        records.insert(
            vote.signer,
            VoteRecord {
                signer: vote.signer,
                certs: vote.cert_digests(),
                signature: vote.signature,
            },
        );
    }
    if records.len() < committee.quorum() {
        return Err(AssembleError::Incomplete {
            have: records.len(),
            need: committee.quorum(),
        });
    }
    Ok(UnlockCert {
        rqt: rqt.clone(),
        votes: records.into_values().collect(),
        certs: union.into_iter().collect(),
    })
}

/// `tx` moved onto the object versions an unlock produced. Signatures are
/// dropped since the digest changes; authorization proofs are kept.
pub fn retry_after_unlock(tx: &Transaction, unlock: &EffectCert) -> Transaction {
    let produced: BTreeMap<_, ObjectKey> = unlock
        .payload
        .all_effects()
        .into_iter()
        .flat_map(|e| e.produced.iter().map(|(k, _)| (k.id, *k)))
        .collect();
    let bump = |k: &ObjectKey| {
        produced
            .get(&k.id)
            .copied()
            .filter(|n| n.version > k.version)
            .unwrap_or(*k)
    };
    let mut next = tx.clone();
    next.inputs = tx.inputs.iter().map(bump).collect();
    next.gas = bump(&tx.gas);
    next.evidence.signatures.clear();
    next
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FastPathStatus {
    Voting,
    /// Certificate formed; waiting for effects.
    Certified,
    Finalized,
    /// Conflicting votes leave no quorum reachable.
    Locked,
    /// Validators refuse the transaction itself.
    Rejected(ValidatorError),
    /// The certificate lost to an unlock or another checkpoint.
    Superseded,
}

/// Drives one transaction through voting and certified execution.
#[derive(Clone, Debug)]
pub struct FastPathDriver {
    tx: Transaction,
    digest: Digest,
    committee: Committee,
    votes: BTreeMap<ValidatorId, CertSign>,
    conflicts: BTreeMap<ValidatorId, ValidatorError>,
    rejections: BTreeMap<ValidatorId, ValidatorError>,
    cert: Option<Certificate>,
    effects: BTreeMap<ValidatorId, EffectSign>,
    superseded: BTreeSet<ValidatorId>,
    finalized: Option<EffectCert>,
    round_trips: u32,
}

impl FastPathDriver {
    pub fn new(tx: Transaction, committee: Committee) -> Self {
        let digest = tx.digest();
        Self {
            tx,
            digest,
            committee,
            votes: BTreeMap::new(),
            conflicts: BTreeMap::new(),
            rejections: BTreeMap::new(),
            cert: None,
            effects: BTreeMap::new(),
            superseded: BTreeSet::new(),
            finalized: None,
            round_trips: 1,
        }
    }

    /// Starts from an existing certificate.
    pub fn from_certificate(cert: Certificate, committee: Committee) -> Self {
        let mut d = Self::new(cert.tx.clone(), committee);
        d.cert = Some(cert);
        d.round_trips = 1;
        d
    }

    pub fn tx(&self) -> &Transaction {
        &self.tx
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        self.cert.as_ref()
    }

    pub fn effect_cert(&self) -> Option<&EffectCert> {
        self.finalized.as_ref()
    }

    /// Broadcast phases so far: one for the transaction, one for the certificate.
    pub fn round_trips(&self) -> u32 {
        self.round_trips
    }

    /// Validators that have not answered the current phase.
    pub fn missing(&self) -> Vec<ValidatorId> {
        self.committee
            .members()
            .filter(|v| match self.cert {
                None => {
                    !self.votes.contains_key(v)
                        && !self.conflicts.contains_key(v)
                        && !self.rejections.contains_key(v)
                }
                Some(_) => !self.effects.contains_key(v) && !self.superseded.contains(v),
            })
            .collect()
    }

    /// Records a vote reply. Returns the certificate when it first forms.
    pub fn on_vote(
        &mut self,
        from: ValidatorId,
        reply: Result<CertSign, ValidatorError>,
    ) -> Option<Certificate> {
        if self.cert.is_some() {
            return None;
        }
        match reply {
            Ok(sign) => {
                if sign.signer != from || sign.tx != self.digest || !sign.verify(&self.committee) {
                    return None;
                }
                self.conflicts.remove(&from);
                self.votes.insert(from, sign);
            }
            Err(_) if self.votes.contains_key(&from) => {}
            Err(e) => match e.class() {
                ErrorClass::Conflict => {
                    self.conflicts.insert(from, e);
                }
                ErrorClass::Permanent => {
                    self.rejections.insert(from, e);
                }
                ErrorClass::Transient => {}
            },
        }
        if self.votes.len() >= self.committee.quorum() {
            let cert = Certificate::from_votes(self.tx.clone(), self.votes.values());
            self.cert = Some(cert.clone());
            self.round_trips += 1;
            return Some(cert);
        }
        None
    }

    /// Records a signed effect. Returns the effect certificate when it first forms.
    pub fn on_effects(&mut self, sign: EffectSign) -> Option<EffectCert> {
        if self.finalized.is_some() || sign.payload.subject() != self.digest {
            return None;
        }
        if !matches!(sign.payload, EffectsPayload::Tx(_)) || !sign.verify(&self.committee) {
            return None;
        }
        self.effects.insert(sign.signer, sign);
        self.finalized = EffectCert::assemble(self.effects.values(), &self.committee);
        self.finalized.clone()
    }

    pub fn on_superseded(&mut self, from: ValidatorId) {
        self.superseded.insert(from);
    }

    pub fn status(&self) -> FastPathStatus {
        if self.finalized.is_some() {
            return FastPathStatus::Finalized;
        }
        if self.superseded.len() >= self.committee.params().validity_threshold() {
            return FastPathStatus::Superseded;
        }
        if self.cert.is_some() {
            return FastPathStatus::Certified;
        }
        let n = self.committee.size();
        let blocked = self.conflicts.len() + self.rejections.len();
        if n - blocked < self.committee.quorum() {
            if self.rejections.len() >= self.committee.params().validity_threshold() {
                let e = self.rejections.values().next().cloned().expect("non-empty");
                return FastPathStatus::Rejected(e);
            }
            return FastPathStatus::Locked;
        }
        FastPathStatus::Voting
    }

    /// Keys held by the transaction, for an unlock request.
    pub fn owned_keys(&self) -> Vec<ObjectKey> {
        self.tx.input_keys().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnlockStatus {
    Voting,
    /// Unlock certificate formed; waiting for sequenced effects.
    Submitted,
    Finalized(UnlockOutcome),
    /// Not enough validators will vote.
    Unauthorized,
}

/// Drives one unlock request to finality.
#[derive(Clone, Debug)]
pub struct UnlockDriver {
    rqt: UnlockRqt,
    digest: Digest,
    committee: Committee,
    votes: BTreeMap<ValidatorId, UnlockVote>,
    rejections: BTreeMap<ValidatorId, ValidatorError>,
    ucert: Option<UnlockCert>,
    effects: BTreeMap<ValidatorId, EffectSign>,
    finalized: Option<EffectCert>,
}

impl UnlockDriver {
    pub fn new(rqt: UnlockRqt, committee: Committee) -> Self {
        let digest = rqt.digest();
        Self {
            rqt,
            digest,
            committee,
            votes: BTreeMap::new(),
            rejections: BTreeMap::new(),
            ucert: None,
            effects: BTreeMap::new(),
            finalized: None,
        }
    }

    pub fn rqt(&self) -> &UnlockRqt {
        &self.rqt
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn unlock_cert(&self) -> Option<&UnlockCert> {
        self.ucert.as_ref()
    }

    pub fn effect_cert(&self) -> Option<&EffectCert> {
        self.finalized.as_ref()
    }

    pub fn missing(&self) -> Vec<ValidatorId> {
        self.committee
            .members()
            .filter(|v| match self.ucert {
                None => !self.votes.contains_key(v) && !self.rejections.contains_key(v),
                Some(_) => !self.effects.contains_key(v),
            })
            .collect()
    }

    /// Records a vote reply. Returns the unlock certificate when it first forms.
    pub fn on_vote(
        &mut self,
        from: ValidatorId,
        reply: Result<UnlockVote, ValidatorError>,
    ) -> Option<UnlockCert> {
        if self.ucert.is_some() {
            return None;
        }
        match reply {
            Ok(vote) => {
                if vote.signer != from
                    || vote.request != self.digest
                    || !vote.verify(&self.committee)
                {
                    return None;
                }
                self.rejections.remove(&from);
                self.votes.insert(from, vote);
            }
            Err(e) => {
                if e.class() != ErrorClass::Transient && !self.votes.contains_key(&from) {
                    self.rejections.insert(from, e);
                }
            }
        }
        let votes: Vec<UnlockVote> = self.votes.values().cloned().collect();
        match assemble_unlock_cert(&self.rqt, &votes, &self.committee) {
            Ok(u) => {
                self.ucert = Some(u.clone());
                Some(u)
            }
            Err(_) => None,
        }
    }

    pub fn on_effects(&mut self, sign: EffectSign) -> Option<EffectCert> {
        if self.finalized.is_some() || sign.payload.subject() != self.digest {
            return None;
        }
        if !matches!(sign.payload, EffectsPayload::Unlock(_)) || !sign.verify(&self.committee) {
            return None;
        }
        self.effects.insert(sign.signer, sign);
        self.finalized = EffectCert::assemble(self.effects.values(), &self.committee);
        self.finalized.clone()
    }

    pub fn outcome(&self) -> Option<UnlockOutcome> {
        match &self.finalized.as_ref()?.payload {
            EffectsPayload::Unlock(u) => Some(u.outcome),
            EffectsPayload::Tx(_) => None,
        }
    }

    pub fn status(&self) -> UnlockStatus {
        if let Some(o) = self.outcome() {
            return UnlockStatus::Finalized(o);
        }
        if self.ucert.is_some() {
            return UnlockStatus::Submitted;
        }
        if self.committee.size() - self.rejections.len() < self.committee.quorum() {
            return UnlockStatus::Unauthorized;
        }
        UnlockStatus::Voting
    }
}
