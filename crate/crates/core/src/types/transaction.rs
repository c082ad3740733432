// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthCommitment, AuthEvidence, AuthProof};
use crate::crypto::{Digest, KeyPair};
use crate::encoding::{Encode, Encoder};

use super::object::{ObjectId, ObjectKey};

/// The fixed instruction set.
///
/// `Credit`/`Debit` act on the first commutative input if there is one,
/// otherwise on the first non-gas owned input.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum TxKind {
    /// Every non-gas owned input gets `recipient` as owner.
    Transfer {
        recipient: AuthCommitment,
    },
    /// Exchanges the owners of exactly two non-gas owned inputs.
    Swap,
    NoOp,
    /// Creates an owned object whose id is derived from the transaction digest.
    Mint {
        owner: AuthCommitment,
        balance: u64,
    },
    Credit {
        amount: u64,
    },
    Debit {
        amount: u64,
    },
}

impl Encode for TxKind {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            TxKind::Transfer { recipient } => enc.u8(0).item(recipient),
            TxKind::Swap => enc.u8(1),
            TxKind::NoOp => enc.u8(2),
            TxKind::Mint { owner, balance } => enc.u8(3).item(owner).u64(*balance),
            TxKind::Credit { amount } => enc.u8(4).u64(*amount),
            TxKind::Debit { amount } => enc.u8(5).u64(*amount),
        };
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TxShapeError {
    #[error("duplicate input {0:?}")]
    DuplicateInput(ObjectKey),
    #[error("duplicate shared input {0:?}")]
    DuplicateShared(ObjectId),
    #[error("{0} needs {1}")]
    Arity(&'static str, &'static str),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    /// Owned and read-only inputs at exact versions.
    pub inputs: Vec<ObjectKey>,
    /// Shared objects; versions are assigned when the transaction is sequenced.
    pub shared_inputs: Vec<ObjectId>,
    /// Commutative objects; checked for existence but never locked.
    pub commutative_inputs: Vec<ObjectKey>,
    pub kind: TxKind,
    pub gas: ObjectKey,
    pub epoch: u64,
    /// Distinguishes otherwise identical transactions.
    pub nonce: u64,
    /// Not covered by the digest.
    pub evidence: AuthEvidence,
}

impl Transaction {
    pub fn new(inputs: Vec<ObjectKey>, kind: TxKind, gas: ObjectKey, epoch: u64) -> Self {
        Self {
            inputs,
            shared_inputs: Vec::new(),
            commutative_inputs: Vec::new(),
            kind,
            gas,
            epoch,
            nonce: 0,
            evidence: AuthEvidence::default(),
        }
    }

    pub fn with_nonce(mut self, nonce: u64) -> Self {
        self.nonce = nonce;
        self
    }

    pub fn with_shared(mut self, shared: Vec<ObjectId>) -> Self {
        self.shared_inputs = shared;
        self
    }

    pub fn with_commutative(mut self, keys: Vec<ObjectKey>) -> Self {
        self.commutative_inputs = keys;
        self
    }

    pub fn digest(&self) -> Digest {
        Digest::of("cuttlefish.tx", &TxBody(self))
    }

    /// `inputs` followed by `gas`.
    pub fn input_keys(&self) -> impl Iterator<Item = ObjectKey> + '_ {
        self.inputs.iter().copied().chain(std::iter::once(self.gas))
    }

    /// Every object id named by the transaction.
    pub fn object_ids(&self) -> BTreeSet<ObjectId> {
        self.input_keys()
            .map(|k| k.id)
            .chain(self.shared_inputs.iter().copied())
            .chain(self.commutative_inputs.iter().map(|k| k.id))
            .collect()
    }

    pub fn has_shared(&self) -> bool {
        !self.shared_inputs.is_empty()
    }

    pub fn check_shape(&self) -> Result<(), TxShapeError> {
        let mut ids = BTreeSet::new();
        for key in self
            .input_keys()
            .chain(self.commutative_inputs.iter().copied())
        {
            if !ids.insert(key.id) {
                return Err(TxShapeError::DuplicateInput(key));
            }
        }
        for id in &self.shared_inputs {
            if !ids.insert(*id) {
                return Err(TxShapeError::DuplicateShared(*id));
            }
        }
        match self.kind {
            TxKind::Swap if self.inputs.len() != 2 => Err(TxShapeError::Arity(
                "swap",
                "exactly two inputs besides gas",
            )),
            TxKind::Credit { .. } | TxKind::Debit { .. }
                if self.inputs.is_empty() && self.commutative_inputs.is_empty() =>
            {
                Err(TxShapeError::Arity("credit/debit", "a target object"))
            }
            _ => Ok(()),
        }
    }

    /// Adds a signature by `kp` over the digest.
    pub fn sign(&mut self, kp: &KeyPair) {
        let digest = self.digest();
        self.evidence.sign(kp, &digest);
    }

    /// Signs with every key and attaches single-key proofs for every input
    /// owned by one of them (`owners` maps inputs to their signing key).
    pub fn authorize_simple<'a>(
        mut self,
        owners: impl IntoIterator<Item = (ObjectId, &'a KeyPair)>,
    ) -> Self {
        let mut signers: Vec<&KeyPair> = Vec::new();
        for (id, kp) in owners {
            self.evidence
                .set_proof(id, AuthProof::single_key(kp.public()));
            if !signers.iter().any(|s| s.public() == kp.public()) {
                signers.push(kp);
            }
        }
        for kp in signers {
            self.sign(kp);
        }
        self
    }
}

struct TxBody<'a>(&'a Transaction);

impl Encode for TxBody<'_> {
    fn encode(&self, enc: &mut Encoder) {
        let tx = self.0;
        enc.seq(&tx.inputs)
            .seq(&tx.shared_inputs)
            .seq(&tx.commutative_inputs)
            .item(&tx.kind)
            .item(&tx.gas)
            .u64(tx.epoch)
            .u64(tx.nonce);
    }
}

impl Encode for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&TxBody(self)).item(&self.evidence);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(name: &str, v: u64) -> ObjectKey {
        ObjectKey::new(ObjectId::from_name(name), v)
    }

    #[test]
    fn digest_ignores_evidence() {
        let kp = KeyPair::from_name("alice");
        let tx = Transaction::new(vec![key("a", 0)], TxKind::NoOp, key("g", 0), 0);
        let signed = tx
            .clone()
            .authorize_simple([(ObjectId::from_name("a"), &kp)]);
        assert_eq!(tx.digest(), signed.digest());
        assert_ne!(tx.digest(), tx.clone().with_nonce(1).digest());
    }

    #[test]
    fn duplicate_inputs_rejected() {
        let tx = Transaction::new(vec![key("a", 0), key("a", 1)], TxKind::NoOp, key("g", 0), 0);
        assert!(matches!(
            tx.check_shape(),
            Err(TxShapeError::DuplicateInput(_))
        ));
        let tx = Transaction::new(vec![key("g", 0)], TxKind::NoOp, key("g", 0), 0);
        assert!(tx.check_shape().is_err());
        let tx = Transaction::new(vec![key("a", 0)], TxKind::Swap, key("g", 0), 0);
        assert!(tx.check_shape().is_err());
    }
}
