// SPDX-License-Identifier: Apache-2.0

//! Authorization terms for owned and collective objects.
//!
//! An object stores only an [`AuthCommitment`], the Merkle root of its term.
//! Evidence reveals the part of the tree needed to show the term holds and
//! replaces every other subtree by its digest.

mod eval;
mod evidence;
mod merkle;
mod path;
mod term;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, PublicKey};
use crate::encoding::{Encode, Encoder};

pub use eval::{
    evaluate, evaluate_counted, evaluate_reveal, verify_reveal, AuthContext, EvalStats,
    EventOracle, NoEvents,
};
pub use evidence::{AuthEvidence, AuthProof};
pub use merkle::{
    commit, CommittedTerm, DecodeStats, NoNonces, Nonce, NonceSource, RevealNode, SeededNonces,
};
pub use path::{AuthPath, Selection};
pub use term::{AuthTerm, LeafTerm, MAX_DEPTH};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("term deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("branch without children")]
    EmptyBranch,
    #[error("threshold must be at least 1")]
    ZeroThreshold,
    #[error("threshold weights must be positive")]
    ZeroWeight,
    #[error("malformed path: {0}")]
    MalformedPath(&'static str),
    #[error("path enters a hidden subtree")]
    HiddenOnPath,
}

/// Merkle root of an authorization term, stored as an object's owner.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthCommitment(pub Digest);

impl AuthCommitment {
    /// Owner commitment for a plain single-key address.
    pub fn single_key(pk: PublicKey) -> Self {
        RevealNode::from_term(&AuthTerm::pk(pk), &mut NoNonces).commitment()
    }
}

impl fmt::Debug for AuthCommitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Auth({})", self.0.short())
    }
}

impl Encode for AuthCommitment {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.0);
    }
}
