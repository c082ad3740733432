// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::crypto::{verify, Digest, KeyPair, Signature};
use crate::encoding::{hash_with, Encode, Encoder};

use super::committee::{Committee, ValidatorId};
use super::transaction::Transaction;

/// Message a validator signs to vote for a transaction.
pub fn tx_vote_digest(tx: &Digest) -> Digest {
    hash_with("cuttlefish.tx-vote", &tx.0)
}

/// One validator's vote: it holds locks on every owned input for `tx`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CertSign {
    pub tx: Digest,
    pub signer: ValidatorId,
    pub signature: Signature,
}

impl CertSign {
    pub fn new(tx: Digest, signer: ValidatorId, kp: &KeyPair) -> Self {
        Self {
            tx,
            signer,
            signature: kp.sign(&tx_vote_digest(&tx)),
        }
    }

    pub fn verify(&self, committee: &Committee) -> bool {
        committee
            .key(self.signer)
            .is_some_and(|pk| verify(pk, &tx_vote_digest(&self.tx), &self.signature))
    }
}

/// A transaction with votes from a quorum.
///
/// Equality, ordering and hashing use the transaction digest only, so two
/// certificates for the same transaction with different signer sets are the
/// same certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub tx: Transaction,
    pub signers: Vec<(ValidatorId, Signature)>,
}

impl Certificate {
    /// Builds a certificate from votes, keeping the first vote per signer.
    pub fn from_votes<'a>(tx: Transaction, votes: impl IntoIterator<Item = &'a CertSign>) -> Self {
        let digest = tx.digest();
        let mut seen = BTreeSet::new();
        let mut signers = Vec::new();
        for v in votes {
            if v.tx == digest && seen.insert(v.signer) {
                signers.push((v.signer, v.signature));
            }
        }
        signers.sort_by_key(|(id, _)| *id);
        Self { tx, signers }
    }

    pub fn digest(&self) -> Digest {
        self.tx.digest()
    }
}

impl PartialEq for Certificate {
    fn eq(&self, other: &Self) -> bool {
        self.digest() == other.digest()
    }
}

impl Eq for Certificate {}

impl PartialOrd for Certificate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Certificate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.digest().cmp(&other.digest())
    }
}

impl Hash for Certificate {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.digest().hash(state);
    }
}

impl Encode for Certificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.tx).seq(&self.signers);
    }
}

/// True iff the signers are distinct committee members, every signature
/// verifies over the transaction digest, and there are at least a quorum.
pub fn verify_certificate(cert: &Certificate, committee: &Committee) -> bool {
    let msg = tx_vote_digest(&cert.digest());
    let mut seen = BTreeSet::new();
    for (id, sig) in &cert.signers {
        if !seen.insert(*id) {
            return false;
        }
        match committee.key(*id) {
            Some(pk) if verify(pk, &msg, sig) => {}
            _ => return false,
        }
    }
    seen.len() >= committee.quorum()
}
