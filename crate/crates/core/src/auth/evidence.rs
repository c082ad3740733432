// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::{verify, Digest, KeyPair, PublicKey, Signature};
use crate::encoding::{Encode, Encoder};
use crate::types::ObjectId;

use super::eval::{verify_reveal, AuthContext};
use super::merkle::{CommittedTerm, RevealNode};
use super::path::AuthPath;
use super::term::AuthTerm;
use super::{AuthCommitment, AuthError};

/// Reveal and path showing that one object's authenticator is satisfied.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuthProof {
    pub reveal: RevealNode,
    pub path: AuthPath,
}

impl AuthProof {
    /// Proof for an object owned by a single unblinded key.
    pub fn single_key(pk: PublicKey) -> Self {
        let term = CommittedTerm::plain(&AuthTerm::pk(pk)).expect("leaf term is valid");
        Self {
            reveal: term.full_reveal().clone(),
            path: AuthPath::empty(),
        }
    }

    /// Minimal proof along `path` for a committed term.
    pub fn for_path(term: &CommittedTerm, path: AuthPath) -> Result<Self, AuthError> {
        Ok(Self {
            reveal: term.reveal(&path)?,
            path,
        })
    }
}

impl Encode for AuthProof {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.reveal).item(&self.path);
    }
}

/// Signatures plus per-object proofs attached to a transaction or unlock request.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuthEvidence {
    /// Sorted by public key, at most one per key.
    pub signatures: Vec<(PublicKey, Signature)>,
    /// Sorted by object id, at most one per object.
    pub proofs: Vec<(ObjectId, AuthProof)>,
}

impl AuthEvidence {
    pub fn sign(&mut self, kp: &KeyPair, msg: &Digest) {
        let entry = (kp.public(), kp.sign(msg));
        match self
            .signatures
            .binary_search_by_key(&entry.0, |(pk, _)| *pk)
        {
            Ok(i) => self.signatures[i] = entry,
            Err(i) => self.signatures.insert(i, entry),
        }
    }

    pub fn set_proof(&mut self, id: ObjectId, proof: AuthProof) {
        match self.proofs.binary_search_by_key(&id, |(oid, _)| *oid) {
            Ok(i) => self.proofs[i].1 = proof,
            Err(i) => self.proofs.insert(i, (id, proof)),
        }
    }

    pub fn proof(&self, id: &ObjectId) -> Option<&AuthProof> {
        self.proofs
            .binary_search_by_key(id, |(oid, _)| *oid)
            .ok()
            .map(|i| &self.proofs[i].1)
    }

    /// Keys whose signature over `msg` verifies.
    pub fn verified_signers(&self, msg: &Digest) -> BTreeSet<PublicKey> {
        self.signatures
            .iter()
            .filter(|(pk, sig)| verify(pk, msg, sig))
            .map(|(pk, _)| *pk)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty() && self.proofs.is_empty()
    }

    /// Whether the proof for `id` satisfies `owner` under `ctx`.
    pub fn authorizes(
        &self,
        id: &ObjectId,
        owner: &AuthCommitment,
        ctx: &AuthContext<'_>,
    ) -> Result<bool, AuthError> {
        match self.proof(id) {
            None => Ok(false),
            Some(p) => verify_reveal(owner, &p.reveal, &p.path, ctx),
        }
    }
}

impl Encode for AuthEvidence {
    fn encode(&self, enc: &mut Encoder) {
        enc.seq(&self.signatures).seq(&self.proofs);
    }
}
