// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::{verify, Digest, KeyPair, Signature};
use crate::encoding::{hash_with, Encode, Encoder};

use super::committee::{Committee, ValidatorId};
use super::object::ObjectKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    InsufficientBalance,
    InsufficientGas,
    /// A commutative input was consolidated to a newer version first.
    StaleCommutative,
}

impl Encode for ExecStatus {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            ExecStatus::Success => 0,
            ExecStatus::InsufficientBalance => 1,
            ExecStatus::InsufficientGas => 2,
            ExecStatus::StaleCommutative => 3,
        });
    }
}

/// Result of executing one transaction. Identical inputs give identical effects.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Effects {
    pub tx: Digest,
    pub status: ExecStatus,
    pub consumed: Vec<ObjectKey>,
    /// New object versions with their content digests.
    pub produced: Vec<(ObjectKey, Digest)>,
    /// Commutative objects updated in place.
    pub commutative: Vec<ObjectKey>,
}

impl Encode for Effects {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.tx)
            .item(&self.status)
            .seq(&self.consumed)
            .seq(&self.produced)
            .seq(&self.commutative);
    }
}

impl Effects {
    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlockOutcome {
    /// No certificate was carried; the keys moved on by a no-op.
    NoOp,
    /// No certificate was carried; the replacement transaction ran.
    Replacement,
    /// The carried certificates ran.
    Carried,
    /// A key was already confirmed when the request was sequenced; only gas was spent.
    Superseded,
    /// A bounded counter moved to a new version.
    Consolidated,
}

impl Encode for UnlockOutcome {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            UnlockOutcome::NoOp => 0,
            UnlockOutcome::Replacement => 1,
            UnlockOutcome::Carried => 2,
            UnlockOutcome::Superseded => 3,
            UnlockOutcome::Consolidated => 4,
        });
    }
}

/// Effects of one sequenced unlock certificate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnlockEffects {
    pub request: Digest,
    pub outcome: UnlockOutcome,
    /// Spend of the request's gas object.
    pub gas: Effects,
    pub executions: Vec<Effects>,
}

impl Encode for UnlockEffects {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.request)
            .item(&self.outcome)
            .item(&self.gas)
            .seq(&self.executions);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectsPayload {
    Tx(Effects),
    Unlock(UnlockEffects),
}

impl Encode for EffectsPayload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            EffectsPayload::Tx(e) => enc.u8(0).item(e),
            EffectsPayload::Unlock(u) => enc.u8(1).item(u),
        };
    }
}

impl EffectsPayload {
    pub fn digest(&self) -> Digest {
        Digest::of("cuttlefish.effects", self)
    }

    /// Transaction digest or unlock request digest.
    pub fn subject(&self) -> Digest {
        match self {
            EffectsPayload::Tx(e) => e.tx,
            EffectsPayload::Unlock(u) => u.request,
        }
    }

    /// Every transaction-level effect contained in the payload.
    pub fn all_effects(&self) -> Vec<&Effects> {
        match self {
            EffectsPayload::Tx(e) => vec![e],
            EffectsPayload::Unlock(u) => {
                std::iter::once(&u.gas).chain(u.executions.iter()).collect()
            }
        }
    }
}

fn effects_vote_digest(payload: &Digest) -> Digest {
    hash_with("cuttlefish.effects-vote", &payload.0)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EffectSign {
    pub payload: EffectsPayload,
    pub signer: ValidatorId,
    pub signature: Signature,
}

impl EffectSign {
    pub fn new(payload: EffectsPayload, signer: ValidatorId, kp: &KeyPair) -> Self {
        let signature = kp.sign(&effects_vote_digest(&payload.digest()));
        Self {
            payload,
            signer,
            signature,
        }
    }

    pub fn verify(&self, committee: &Committee) -> bool {
        committee.key(self.signer).is_some_and(|pk| {
            verify(
                pk,
                &effects_vote_digest(&self.payload.digest()),
                &self.signature,
            )
        })
    }
}

/// Effects signed by a quorum: proof of finality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectCert {
    pub payload: EffectsPayload,
    pub signers: Vec<(ValidatorId, Signature)>,
}

impl EffectCert {
    /// Aggregates signatures over bit-identical payloads; `None` until some
    /// payload has a quorum of valid, distinct signers.
    pub fn assemble<'a>(
        signs: impl IntoIterator<Item = &'a EffectSign>,
        committee: &Committee,
    ) -> Option<Self> {
        let mut groups: BTreeMap<Digest, (&EffectsPayload, BTreeMap<ValidatorId, Signature>)> =
            BTreeMap::new();
        for s in signs {
            if !s.verify(committee) {
                continue;
            }
            let entry = groups
                .entry(s.payload.digest())
                .or_insert((&s.payload, BTreeMap::new()));
            entry.1.entry(s.signer).or_insert(s.signature);
        }
        groups
            .into_values()
            .find(|(_, sigs)| sigs.len() >= committee.quorum())
            .map(|(payload, sigs)| Self {
                payload: payload.clone(),
                signers: sigs.into_iter().collect(),
            })
    }

    pub fn verify(&self, committee: &Committee) -> bool {
        let msg = effects_vote_digest(&self.payload.digest());
        let mut seen = BTreeSet::new();
        self.signers.iter().all(|(id, sig)| {
            seen.insert(*id) && committee.key(*id).is_some_and(|pk| verify(pk, &msg, sig))
        }) && seen.len() >= committee.quorum()
    }
}
