// SPDX-License-Identifier: Apache-2.0

//! Total-order sequencer standing in for consensus.
//!
//! A single deterministic process: it deduplicates submissions by digest,
//! rejects structurally invalid items, and assigns gapless sequence numbers.
//! Delivery to each validator is a prefix of the one log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify, Digest, KeyPair, Signature};
use crate::encoding::{hash_with, Encode, Encoder};
use crate::types::{
    verify_certificate, verify_unlock_cert, Certificate, Committee, UnlockCert, ValidatorId,
};

/// Message a validator signs when it is ready to close an epoch.
pub fn end_of_epoch_digest(validator: ValidatorId, epoch: u64) -> Digest {
    let mut enc = Encoder::new();
    enc.item(&validator).u64(epoch);
    hash_with("cuttlefish.end-of-epoch", &enc.finish())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SeqPayload {
    UnlockCert(UnlockCert),
    CheckpointCert(Certificate),
    EndOfEpoch {
        validator: ValidatorId,
        epoch: u64,
        signature: Signature,
    },
}

impl SeqPayload {
    pub fn end_of_epoch(validator: ValidatorId, epoch: u64, kp: &KeyPair) -> Self {
        let signature = kp.sign(&end_of_epoch_digest(validator, epoch));
        SeqPayload::EndOfEpoch {
            validator,
            epoch,
            signature,
        }
    }

    /// Content digest used for deduplication.
    pub fn digest(&self) -> Digest {
        Digest::of("cuttlefish.seq-item", self)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SeqPayload::UnlockCert(_) => "unlock_cert",
            SeqPayload::CheckpointCert(_) => "checkpoint_cert",
            SeqPayload::EndOfEpoch { .. } => "end_of_epoch",
        }
    }
}

impl Encode for SeqPayload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            SeqPayload::UnlockCert(u) => enc.u8(0).item(&u.rqt.digest()),
            // One item per transaction and per unlock request, whatever the signers.
            SeqPayload::CheckpointCert(c) => enc.u8(1).item(&c.digest()),
            SeqPayload::EndOfEpoch {
                validator, epoch, ..
            } => enc.u8(2).item(validator).u64(*epoch),
        };
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencedItem {
    pub seq: u64,
    pub payload: SeqPayload,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SequencerError {
    #[error("invalid item: {0}")]
    InvalidItem(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Submitted {
    /// Newly assigned this sequence number.
    Accepted(u64),
    /// Already sequenced under this number.
    Duplicate(u64),
}

#[derive(Clone, Debug)]
pub struct Sequencer {
    committee: Committee,
    log: Vec<SequencedItem>,
    seen: BTreeMap<Digest, u64>,
}

impl Sequencer {
    pub fn new(committee: Committee) -> Self {
        Self {
            committee,
            log: Vec::new(),
            seen: Default::default(),
        }
    }

    pub fn check(&self, item: &SeqPayload) -> Result<(), SequencerError> {
        match item {
            SeqPayload::UnlockCert(u) => verify_unlock_cert(u, &self.committee)
                .map_err(|e| SequencerError::InvalidItem(e.to_string())),
            SeqPayload::CheckpointCert(c) => {
                if verify_certificate(c, &self.committee) {
                    Ok(())
                } else {
                    Err(SequencerError::InvalidItem(
                        "certificate below quorum or badly signed".into(),
                    ))
                }
            }
            SeqPayload::EndOfEpoch {
                validator,
                epoch,
                signature,
            } => {
                let ok = self.committee.key(*validator).is_some_and(|pk| {
                    verify(pk, &end_of_epoch_digest(*validator, *epoch), signature)
                });
                if ok {
                    Ok(())
                } else {
                    Err(SequencerError::InvalidItem(
                        "bad end-of-epoch signature".into(),
                    ))
                }
            }
        }
    }

    /// Orders `item` at most once by content digest.
    pub fn submit(&mut self, item: SeqPayload) -> Result<Submitted, SequencerError> {
        let digest = item.digest();
        if let Some(seq) = self.seen.get(&digest) {
            return Ok(Submitted::Duplicate(*seq));
        }
        self.check(&item)?;
        let seq = self.log.len() as u64;
        self.seen.insert(digest, seq);
        self.log.push(SequencedItem { seq, payload: item });
        Ok(Submitted::Accepted(seq))
    }

    pub fn len(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn get(&self, seq: u64) -> Option<&SequencedItem> {
        self.log.get(seq as usize)
    }

    /// Items from `from` onward.
    pub fn deliver(&self, from: u64) -> &[SequencedItem] {
        &self.log[(from as usize).min(self.log.len())..]
    }

    pub fn log(&self) -> &[SequencedItem] {
        &self.log
    }

    /// One JSON object per line.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for item in &self.log {
            out.push_str(&serde_json::to_string(item).expect("sequenced items serialize"));
            out.push('\n');
        }
        out
    }
}
