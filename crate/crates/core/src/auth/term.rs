// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::crypto::PublicKey;
use crate::encoding::{DecodeError, Decoder, Encode, Encoder};
use crate::types::ObjectId;

use super::AuthError;

/// Maximum nesting of an authorization term.
pub const MAX_DEPTH: usize = 32;

/// A leaf of the authorization grammar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafTerm {
    PublicKey(PublicKey),
    ObjectId(ObjectId),
    /// True iff the local time is strictly less than `t`.
    BeforeTime(u64),
    /// True iff the local time is strictly greater than `t`.
    AfterTime(u64),
    EventOccurred {
        chain: String,
        event: String,
    },
}

impl Encode for LeafTerm {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            LeafTerm::PublicKey(pk) => enc.u8(0x01).item(pk),
            LeafTerm::ObjectId(oid) => enc.u8(0x02).item(oid),
            LeafTerm::BeforeTime(t) => enc.u8(0x03).u64(*t),
            LeafTerm::AfterTime(t) => enc.u8(0x04).u64(*t),
            LeafTerm::EventOccurred { chain, event } => enc.u8(0x05).str(chain).str(event),
        };
    }
}

impl LeafTerm {
    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0x01 => LeafTerm::PublicKey(PublicKey(dec.fixed()?)),
            0x02 => LeafTerm::ObjectId(ObjectId(dec.fixed()?)),
            0x03 => LeafTerm::BeforeTime(dec.u64()?),
            0x04 => LeafTerm::AfterTime(dec.u64()?),
            0x05 => LeafTerm::EventOccurred {
                chain: dec.string()?,
                event: dec.string()?,
            },
            tag => return Err(DecodeError::BadTag(tag)),
        })
    }

    pub fn is_time(&self) -> bool {
        matches!(self, LeafTerm::BeforeTime(_) | LeafTerm::AfterTime(_))
    }
}

/// Authorization term. Owned objects whose owner is a single key use
/// `AuthTerm::Leaf(LeafTerm::PublicKey(..))`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthTerm {
    Leaf(LeafTerm),
    Threshold {
        threshold: u64,
        children: Vec<(u64, AuthTerm)>,
    },
    And(Vec<AuthTerm>),
    Or(Vec<AuthTerm>),
}

impl AuthTerm {
    pub fn pk(pk: PublicKey) -> Self {
        AuthTerm::Leaf(LeafTerm::PublicKey(pk))
    }

    pub fn oid(oid: ObjectId) -> Self {
        AuthTerm::Leaf(LeafTerm::ObjectId(oid))
    }

    pub fn before(t: u64) -> Self {
        AuthTerm::Leaf(LeafTerm::BeforeTime(t))
    }

    pub fn after(t: u64) -> Self {
        AuthTerm::Leaf(LeafTerm::AfterTime(t))
    }

    pub fn event(chain: impl Into<String>, event: impl Into<String>) -> Self {
        AuthTerm::Leaf(LeafTerm::EventOccurred {
            chain: chain.into(),
            event: event.into(),
        })
    }

    /// Number of levels; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            AuthTerm::Leaf(_) => 1,
            AuthTerm::And(c) | AuthTerm::Or(c) => {
                1 + c.iter().map(AuthTerm::depth).max().unwrap_or(0)
            }
            AuthTerm::Threshold { children, .. } => {
                1 + children.iter().map(|(_, t)| t.depth()).max().unwrap_or(0)
            }
        }
    }

    /// Number of nodes, counted in pre-order (one nonce slot each).
    pub fn node_count(&self) -> usize {
        match self {
            AuthTerm::Leaf(_) => 1,
            AuthTerm::And(c) | AuthTerm::Or(c) => {
                1 + c.iter().map(AuthTerm::node_count).sum::<usize>()
            }
            AuthTerm::Threshold { children, .. } => {
                1 + children.iter().map(|(_, t)| t.node_count()).sum::<usize>()
            }
        }
    }

    pub fn mentions_time(&self) -> bool {
        match self {
            AuthTerm::Leaf(l) => l.is_time(),
            AuthTerm::And(c) | AuthTerm::Or(c) => c.iter().any(AuthTerm::mentions_time),
            AuthTerm::Threshold { children, .. } => children.iter().any(|(_, t)| t.mentions_time()),
        }
    }

    /// Checks the grammar's structural rules.
    pub fn validate(&self) -> Result<(), AuthError> {
        if self.depth() > MAX_DEPTH {
            return Err(AuthError::TooDeep);
        }
        self.validate_shape()
    }

    fn validate_shape(&self) -> Result<(), AuthError> {
        match self {
            AuthTerm::Leaf(_) => Ok(()),
            AuthTerm::And(c) | AuthTerm::Or(c) => {
                if c.is_empty() {
                    return Err(AuthError::EmptyBranch);
                }
                c.iter().try_for_each(AuthTerm::validate_shape)
            }
            AuthTerm::Threshold {
                threshold,
                children,
            } => {
                check_threshold(*threshold, children.iter().map(|(w, _)| *w), children.len())?;
                children.iter().try_for_each(|(_, t)| t.validate_shape())
            }
        }
    }
}

pub(crate) fn check_threshold(
    threshold: u64,
    weights: impl Iterator<Item = u64>,
    len: usize,
) -> Result<(), AuthError> {
    if len == 0 {
        return Err(AuthError::EmptyBranch);
    }
    if threshold == 0 {
        return Err(AuthError::ZeroThreshold);
    }
    if weights.into_iter().any(|w| w == 0) {
        return Err(AuthError::ZeroWeight);
    }
    Ok(())
}

/// Canonical encoding of a bare term: the full reveal without nonces.
impl Encode for AuthTerm {
    fn encode(&self, enc: &mut Encoder) {
        super::merkle::RevealNode::from_term(self, &mut super::merkle::NoNonces).encode(enc);
    }
}
