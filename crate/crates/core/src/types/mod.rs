// SPDX-License-Identifier: Apache-2.0

//! Protocol value types.

mod certificate;
mod committee;
mod effects;
mod object;
mod transaction;
mod unlock;

pub use certificate::{tx_vote_digest, verify_certificate, CertSign, Certificate};
pub use committee::{validator_keypair, Committee, CommitteeError, CommitteeParams, ValidatorId};
pub use effects::{
    EffectCert, EffectSign, Effects, EffectsPayload, ExecStatus, UnlockEffects, UnlockOutcome,
};
pub use object::{CommutativeKind, Contents, Object, ObjectId, ObjectKey, ObjectKind, Version};
pub use transaction::{Transaction, TxKind, TxShapeError};
pub use unlock::{
    unlock_vote_digest, verify_unlock_cert, InvalidUnlockCert, UnlockCert, UnlockMode, UnlockRqt,
    UnlockVote, VoteRecord,
};
