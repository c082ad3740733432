// SPDX-License-Identifier: Apache-2.0

//! Validator state machine: fast-path voting and execution, unlock voting,
//! and deterministic processing of the sequenced stream.

mod execute;
mod state;
mod store;

use thiserror::Error;

use crate::crypto::Digest;
use crate::types::{ObjectId, ObjectKey};

pub use execute::{execute, noop, spend_gas, CommutativeUpdate, ExecInputs, ExecOutput, GAS_FEE};
pub use state::{
    genesis_tables, CertOutcome, Decision, DeferReason, Event, ExecPath, ObjectInfo, Output,
    SkipReason, Validator, ValidatorConfig,
};
pub use store::{
    AtomicPersist, CounterLineage, GroupRef, Job, JobKind, LockEntry, Op, SeqState, Store, Tables,
    UndoRecord, UnlockGroup, UnlockStatus,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ValidatorError {
    #[error("{key:?} is locked by {holder:?}")]
    ConflictingLock { key: ObjectKey, holder: Digest },
    #[error("object {0:?} not available at this version")]
    MissingObject(ObjectKey),
    #[error("{0:?} is no longer the live version")]
    StaleVersion(ObjectKey),
    #[error("evidence does not authorize {0:?}")]
    BadEvidence(ObjectId),
    #[error("{0:?} is unlocked and takes no new fast-path transactions")]
    ObjectUnlocked(ObjectKey),
    #[error("{0:?} is already confirmed by the sequencer")]
    AlreadyConfirmed(ObjectKey),
    #[error("expected epoch {expected}, got {got}")]
    WrongEpoch { expected: u64, got: u64 },
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("certificate below quorum or badly signed")]
    InvalidCertificate,
    #[error("unusable gas: {0}")]
    BadGas(&'static str),
    #[error("debit of {amount} exceeds local budget {budget} on {counter:?}")]
    BudgetExhausted {
        counter: ObjectKey,
        budget: u64,
        amount: u64,
    },
    #[error("epoch change in progress")]
    EpochChangeInProgress,
}

/// How a client should react to a rejection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Another transaction holds or may hold the object.
    Conflict,
    /// Retrying the same request later may succeed.
    Transient,
    /// The request can never succeed here.
    Permanent,
}

impl ValidatorError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ValidatorError::ConflictingLock { .. } | ValidatorError::ObjectUnlocked(_) => {
                ErrorClass::Conflict
            }
            ValidatorError::MissingObject(_) | ValidatorError::EpochChangeInProgress => {
                ErrorClass::Transient
            }
            _ => ErrorClass::Permanent,
        }
    }
}
