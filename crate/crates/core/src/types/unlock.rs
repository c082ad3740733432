// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthEvidence, AuthProof};
use crate::crypto::{verify, Digest, KeyPair, Signature};
use crate::encoding::{hash_with, Encode, Encoder};

use super::certificate::{verify_certificate, Certificate};
use super::committee::{Committee, ValidatorId};
use super::object::{ObjectId, ObjectKey};
use super::transaction::Transaction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlockMode {
    /// Voting always marks the keys unlocked; an empty certificate set runs a no-op.
    Single,
    /// Voting marks the keys unlocked only when no certificate is known; an
    /// empty certificate set runs the replacement transaction.
    Multi,
    /// Moves a bounded counter (the single key) to a new version.
    Consolidate,
}

impl Encode for UnlockMode {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            UnlockMode::Single => 0,
            UnlockMode::Multi => 1,
            UnlockMode::Consolidate => 2,
        });
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnlockRqt {
    pub keys: Vec<ObjectKey>,
    pub replacement: Option<Transaction>,
    pub mode: UnlockMode,
    /// Fresh gas object, spent once the request is sequenced.
    pub gas: ObjectKey,
    pub epoch: u64,
    pub nonce: u64,
    /// Not covered by the digest.
    pub evidence: AuthEvidence,
}

struct RqtBody<'a>(&'a UnlockRqt);

impl Encode for RqtBody<'_> {
    fn encode(&self, enc: &mut Encoder) {
        let r = self.0;
        enc.seq(&r.keys)
            .option(r.replacement.as_ref().map(Transaction::digest).as_ref())
            .item(&r.mode)
            .item(&r.gas)
            .u64(r.epoch)
            .u64(r.nonce);
    }
}

impl Encode for UnlockRqt {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&RqtBody(self))
            .option(self.replacement.as_ref())
            .item(&self.evidence);
    }
}

impl UnlockRqt {
    pub fn new(keys: Vec<ObjectKey>, mode: UnlockMode, gas: ObjectKey, epoch: u64) -> Self {
        Self {
            keys,
            replacement: None,
            mode,
            gas,
            epoch,
            nonce: 0,
            evidence: AuthEvidence::default(),
        }
    }

    pub fn with_replacement(mut self, tx: Transaction) -> Self {
        self.replacement = Some(tx);
        self
    }

    pub fn digest(&self) -> Digest {
        Digest::of("cuttlefish.unlock-rqt", &RqtBody(self))
    }

    pub fn sign(&mut self, kp: &KeyPair) {
        let d = self.digest();
        self.evidence.sign(kp, &d);
    }

    /// Signs with every key and attaches single-key proofs for the objects
    /// each one owns, as [`Transaction::authorize_simple`] does.
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

    /// Checks that need no validator state.
    pub fn check_shape(&self) -> Result<(), InvalidUnlockCert> {
        let ids: BTreeSet<_> = self.keys.iter().map(|k| k.id).collect();
        if self.keys.is_empty() || ids.len() != self.keys.len() || ids.contains(&self.gas.id) {
            return Err(InvalidUnlockCert::Shape(
                "keys must be distinct, non-empty and exclude gas",
            ));
        }
        match (self.mode, &self.replacement) {
            (UnlockMode::Single, Some(_)) => Err(InvalidUnlockCert::Shape(
                "single mode carries no replacement",
            )),
            (UnlockMode::Consolidate, _) if self.keys.len() != 1 => {
                Err(InvalidUnlockCert::Shape("consolidation names one counter"))
            }
            (_, Some(tx)) => {
                if tx.check_shape().is_err() || tx.has_shared() {
                    return Err(InvalidUnlockCert::Shape("malformed replacement"));
                }
                if self.mode == UnlockMode::Multi
                    && !tx.input_keys().all(|k| self.keys.contains(&k))
                {
                    return Err(InvalidUnlockCert::Shape(
                        "replacement inputs outside request keys",
                    ));
                }
                if self.mode == UnlockMode::Consolidate
                    && (tx.commutative_inputs.as_slice() != self.keys.as_slice()
                        || !matches!(tx.kind, super::TxKind::Debit { .. }))
                {
                    return Err(InvalidUnlockCert::Shape(
                        "consolidation replacement must debit the counter",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether a certificate is relevant to this request.
    pub fn concerns(&self, cert: &Certificate) -> bool {
        match self.mode {
            UnlockMode::Consolidate => cert.tx.commutative_inputs.contains(&self.keys[0]),
            _ => cert.tx.input_keys().any(|k| self.keys.contains(&k)),
        }
    }
}

/// Message signed by an unlock vote.
pub fn unlock_vote_digest(request: &Digest, certs: &[Digest]) -> Digest {
    let mut enc = Encoder::new();
    enc.item(request).seq(certs);
    hash_with("cuttlefish.unlock-vote", &enc.finish())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlockVote {
    pub request: Digest,
    /// Sorted by digest, no duplicates.
    pub certs: Vec<Certificate>,
    pub signer: ValidatorId,
    pub signature: Signature,
}

impl UnlockVote {
    pub fn new(
        request: Digest,
        mut certs: Vec<Certificate>,
        signer: ValidatorId,
        kp: &KeyPair,
    ) -> Self {
        certs.sort();
        certs.dedup();
        let digests: Vec<Digest> = certs.iter().map(Certificate::digest).collect();
        let signature = kp.sign(&unlock_vote_digest(&request, &digests));
        Self {
            request,
            certs,
            signer,
            signature,
        }
    }

    pub fn cert_digests(&self) -> Vec<Digest> {
        self.certs.iter().map(Certificate::digest).collect()
    }

    pub fn verify(&self, committee: &Committee) -> bool {
        let msg = unlock_vote_digest(&self.request, &self.cert_digests());
        committee
            .key(self.signer)
            .is_some_and(|pk| verify(pk, &msg, &self.signature))
            && self.certs.windows(2).all(|w| w[0] < w[1])
            && self.certs.iter().all(|c| verify_certificate(c, committee))
    }
}

/// One vote inside an unlock certificate, with its certificate set by digest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoteRecord {
    pub signer: ValidatorId,
    pub certs: Vec<Digest>,
    pub signature: Signature,
}

impl Encode for VoteRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.signer)
            .seq(&self.certs)
            .item(&self.signature);
    }
}

/// A quorum of unlock votes over one request plus the union of their certificates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlockCert {
    pub rqt: UnlockRqt,
    pub votes: Vec<VoteRecord>,
    /// Sorted by digest; empty for a no-commit certificate.
    pub certs: Vec<Certificate>,
}

impl UnlockCert {
    pub fn digest(&self) -> Digest {
        Digest::of("cuttlefish.unlock-cert", self)
    }

    pub fn is_no_commit(&self) -> bool {
        self.certs.is_empty()
    }
}

impl Encode for UnlockCert {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.rqt).seq(&self.votes).seq(&self.certs);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum InvalidUnlockCert {
    #[error("malformed request: {0}")]
    Shape(&'static str),
    #[error("{0} valid distinct votes, quorum is {1}")]
    BelowQuorum(usize, usize),
    #[error("bad vote signature from {0}")]
    BadVote(ValidatorId),
    #[error("carried certificates differ from the union of the votes")]
    UnionMismatch,
    #[error("carried certificate {0:?} is invalid")]
    BadCertificate(Digest),
    #[error("carried certificate {0:?} does not concern the request")]
    Unrelated(Digest),
}

/// Full structural and cryptographic check of an unlock certificate.
pub fn verify_unlock_cert(
    ucert: &UnlockCert,
    committee: &Committee,
) -> Result<(), InvalidUnlockCert> {
    ucert.rqt.check_shape()?;
    let request = ucert.rqt.digest();
    let mut signers = BTreeSet::new();
    let mut union = BTreeSet::new();
    for v in &ucert.votes {
        let msg = unlock_vote_digest(&request, &v.certs);
        let ok = committee
            .key(v.signer)
            .is_some_and(|pk| verify(pk, &msg, &v.signature));
        if !ok {
            return Err(InvalidUnlockCert::BadVote(v.signer));
        }
        if signers.insert(v.signer) {
            union.extend(v.certs.iter().copied());
        }
    }
    if signers.len() < committee.quorum() {
        return Err(InvalidUnlockCert::BelowQuorum(
            signers.len(),
            committee.quorum(),
        ));
    }
    let carried: BTreeMap<Digest, &Certificate> =
        ucert.certs.iter().map(|c| (c.digest(), c)).collect();
    if carried.len() != ucert.certs.len() || !carried.keys().copied().eq(union.iter().copied()) {
        return Err(InvalidUnlockCert::UnionMismatch);
    }
    for (d, c) in carried {
        if !verify_certificate(c, committee) {
            return Err(InvalidUnlockCert::BadCertificate(d));
        }
        if !ucert.rqt.concerns(c) {
            return Err(InvalidUnlockCert::Unrelated(d));
        }
    }
    Ok(())
}
