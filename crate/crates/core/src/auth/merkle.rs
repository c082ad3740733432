// SPDX-License-Identifier: Apache-2.0

//! Merkle commitments over authorization terms.
//!
//! Node hashes (`H(d, x)` is [`hash_with`]):
//!
//! ```text
//! leaf      = H("cuttlefish.auth.leaf", opt(nonce) || leaf_term)
//! and       = H("cuttlefish.auth.node", opt(nonce) || 0x10 || u32 k || h_1 .. h_k)
//! or        = H("cuttlefish.auth.node", opt(nonce) || 0x11 || u32 k || h_1 .. h_k)
//! threshold = H("cuttlefish.auth.node", opt(nonce) || 0x12 || u64 W || u32 k || (u64 w_i || h_i)*)
//! ```
//!
//! `opt(nonce)` is `0x00` or `0x01 || nonce`. `leaf_term` is `0x01 || pk`,
//! `0x02 || oid`, `0x03 || u64 t` (before), `0x04 || u64 t` (after) or
//! `0x05 || str chain || str event`, where `str` is a `u32` length prefix and
//! UTF-8 bytes. A hidden subtree contributes its digest unchanged.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{bytes32_newtype, Digest};
use crate::encoding::{hash_with, DecodeError, Decoder, Encode, Encoder};

use super::path::{AuthPath, PathCursor};
use super::term::{AuthTerm, LeafTerm, MAX_DEPTH};
use super::{AuthCommitment, AuthError};

bytes32_newtype!(
    /// Blinding value mixed into a node hash.
    Nonce
);

const LEAF_DOMAIN: &str = "cuttlefish.auth.leaf";
const NODE_DOMAIN: &str = "cuttlefish.auth.node";

/// Supplies one optional nonce per node, in pre-order.
pub trait NonceSource {
    fn next_nonce(&mut self) -> Option<Nonce>;
}

/// Every node is unblinded.
pub struct NoNonces;

impl NonceSource for NoNonces {
    fn next_nonce(&mut self) -> Option<Nonce> {
        None
    }
}

/// Deterministic nonce stream from a seed.
pub struct SeededNonces(ChaCha20Rng);

impl SeededNonces {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }
}

impl NonceSource for SeededNonces {
    fn next_nonce(&mut self) -> Option<Nonce> {
        let mut out = [0u8; 32];
        self.0.fill_bytes(&mut out);
        Some(Nonce(out))
    }
}

/// A term tree as shown to a verifier; any subtree may be replaced by its digest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealNode {
    Hidden(Digest),
    Leaf {
        nonce: Option<Nonce>,
        term: LeafTerm,
    },
    And {
        nonce: Option<Nonce>,
        children: Vec<RevealNode>,
    },
    Or {
        nonce: Option<Nonce>,
        children: Vec<RevealNode>,
    },
    Threshold {
        nonce: Option<Nonce>,
        threshold: u64,
        children: Vec<(u64, RevealNode)>,
    },
}

impl RevealNode {
    /// Full reveal of `term`, drawing nonces in pre-order.
    pub fn from_term(term: &AuthTerm, nonces: &mut dyn NonceSource) -> Self {
        let nonce = nonces.next_nonce();
        match term {
            AuthTerm::Leaf(l) => RevealNode::Leaf {
                nonce,
                term: l.clone(),
            },
            AuthTerm::And(c) => RevealNode::And {
                nonce,
                children: c.iter().map(|t| Self::from_term(t, nonces)).collect(),
            },
            AuthTerm::Or(c) => RevealNode::Or {
                nonce,
                children: c.iter().map(|t| Self::from_term(t, nonces)).collect(),
            },
            AuthTerm::Threshold {
                threshold,
                children,
            } => RevealNode::Threshold {
                nonce,
                threshold: *threshold,
                children: children
                    .iter()
                    .map(|(w, t)| (*w, Self::from_term(t, nonces)))
                    .collect(),
            },
        }
    }

    pub fn hash(&self) -> Digest {
        let mut enc = Encoder::new();
        match self {
            RevealNode::Hidden(d) => return *d,
            RevealNode::Leaf { nonce, term } => {
                enc.option(nonce.as_ref()).item(term);
                return hash_with(LEAF_DOMAIN, &enc.finish());
            }
            RevealNode::And { nonce, children } | RevealNode::Or { nonce, children } => {
                let tag = if matches!(self, RevealNode::And { .. }) {
                    0x10
                } else {
                    0x11
                };
                enc.option(nonce.as_ref())
                    .u8(tag)
                    .u32(children.len() as u32);
                for c in children {
                    enc.item(&c.hash());
                }
            }
            RevealNode::Threshold {
                nonce,
                threshold,
                children,
            } => {
                enc.option(nonce.as_ref())
                    .u8(0x12)
                    .u64(*threshold)
                    .u32(children.len() as u32);
                for (w, c) in children {
                    enc.u64(*w).item(&c.hash());
                }
            }
        }
        hash_with(NODE_DOMAIN, &enc.finish())
    }

    pub fn commitment(&self) -> AuthCommitment {
        AuthCommitment(self.hash())
    }

    pub fn depth(&self) -> usize {
        match self {
            RevealNode::Hidden(_) | RevealNode::Leaf { .. } => 1,
            RevealNode::And { children, .. } | RevealNode::Or { children, .. } => {
                1 + children.iter().map(RevealNode::depth).max().unwrap_or(0)
            }
            RevealNode::Threshold { children, .. } => {
                1 + children.iter().map(|(_, c)| c.depth()).max().unwrap_or(0)
            }
        }
    }

    /// Prunes every subtree the path does not pursue down to its digest.
    pub fn restrict(&self, path: &AuthPath) -> Result<RevealNode, AuthError> {
        let mut cursor = path.cursor();
        let out = self.restrict_inner(&mut cursor)?;
        cursor.finish()?;
        Ok(out)
    }

    fn restrict_inner(&self, cursor: &mut PathCursor<'_>) -> Result<RevealNode, AuthError> {
        Ok(match self {
            RevealNode::Hidden(_) => return Err(AuthError::HiddenOnPath),
            RevealNode::Leaf { .. } => self.clone(),
            RevealNode::And { nonce, children } => RevealNode::And {
                nonce: *nonce,
                children: children
                    .iter()
                    .map(|c| c.restrict_inner(cursor))
                    .collect::<Result<_, _>>()?,
            },
            RevealNode::Or { nonce, children } => {
                let pick = cursor.take_or(children.len())?;
                let mut out = Vec::with_capacity(children.len());
                for (i, c) in children.iter().enumerate() {
                    out.push(if i == pick {
                        c.restrict_inner(cursor)?
                    } else {
                        RevealNode::Hidden(c.hash())
                    });
                }
                RevealNode::Or {
                    nonce: *nonce,
                    children: out,
                }
            }
            RevealNode::Threshold {
                nonce,
                threshold,
                children,
            } => {
                let picks = cursor.take_threshold(children.len())?;
                let mut out = Vec::with_capacity(children.len());
                for (i, (w, c)) in children.iter().enumerate() {
                    let node = if picks.contains(&(i as u32)) {
                        c.restrict_inner(cursor)?
                    } else {
                        RevealNode::Hidden(c.hash())
                    };
                    out.push((*w, node));
                }
                RevealNode::Threshold {
                    nonce: *nonce,
                    threshold: *threshold,
                    children: out,
                }
            }
        })
    }

    /// Decodes a reveal, counting the leaf terms that were materialised.
    pub fn decode_counted(bytes: &[u8]) -> Result<(RevealNode, DecodeStats), DecodeError> {
        let mut dec = Decoder::new(bytes);
        let mut stats = DecodeStats::default();
        let node = Self::decode_inner(&mut dec, &mut stats, 1)?;
        dec.finish()?;
        Ok((node, stats))
    }

    pub fn decode(bytes: &[u8]) -> Result<RevealNode, DecodeError> {
        Self::decode_counted(bytes).map(|(n, _)| n)
    }

    fn decode_inner(
        dec: &mut Decoder<'_>,
        stats: &mut DecodeStats,
        depth: usize,
    ) -> Result<RevealNode, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(DecodeError::Invalid("reveal too deep"));
        }
        let tag = dec.u8()?;
        if tag == 0x00 {
            stats.hidden += 1;
            return Ok(RevealNode::Hidden(Digest(dec.fixed()?)));
        }
        let nonce = match dec.u8()? {
            0 => None,
            1 => Some(Nonce(dec.fixed()?)),
            t => return Err(DecodeError::BadTag(t)),
        };
        Ok(match tag {
            0x01 => {
                stats.leaves += 1;
                RevealNode::Leaf {
                    nonce,
                    term: LeafTerm::decode(dec)?,
                }
            }
            0x02 | 0x03 => {
                let n = dec.u32()?;
                let mut children = Vec::new();
                for _ in 0..n {
                    children.push(Self::decode_inner(dec, stats, depth + 1)?);
                }
                if tag == 0x02 {
                    RevealNode::And { nonce, children }
                } else {
                    RevealNode::Or { nonce, children }
                }
            }
            0x04 => {
                let threshold = dec.u64()?;
                let n = dec.u32()?;
                let mut children = Vec::new();
                for _ in 0..n {
                    let w = dec.u64()?;
                    children.push((w, Self::decode_inner(dec, stats, depth + 1)?));
                }
                RevealNode::Threshold {
                    nonce,
                    threshold,
                    children,
                }
            }
            t => return Err(DecodeError::BadTag(t)),
        })
    }
}

/// Wire format: `0x00 || digest` for a hidden subtree, otherwise a node tag
/// (`0x01` leaf, `0x02` and, `0x03` or, `0x04` threshold), `opt(nonce)`, then
/// the leaf term or `[u64 W] || u32 k || ([u64 w_i] || child)*`.
impl Encode for RevealNode {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            RevealNode::Hidden(d) => {
                enc.u8(0x00).item(d);
            }
            RevealNode::Leaf { nonce, term } => {
                enc.u8(0x01).option(nonce.as_ref()).item(term);
            }
            RevealNode::And { nonce, children } | RevealNode::Or { nonce, children } => {
                let tag = if matches!(self, RevealNode::And { .. }) {
                    0x02
                } else {
                    0x03
                };
                enc.u8(tag).option(nonce.as_ref()).seq(children);
            }
            RevealNode::Threshold {
                nonce,
                threshold,
                children,
            } => {
                enc.u8(0x04)
                    .option(nonce.as_ref())
                    .u64(*threshold)
                    .seq(children);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub leaves: usize,
    pub hidden: usize,
}

/// A term together with the nonces its owner keeps private.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedTerm {
    full: RevealNode,
}

impl CommittedTerm {
    pub fn new(term: &AuthTerm, nonces: &mut dyn NonceSource) -> Result<Self, AuthError> {
        term.validate()?;
        Ok(Self {
            full: RevealNode::from_term(term, nonces),
        })
    }

    /// A term committed without blinding.
    pub fn plain(term: &AuthTerm) -> Result<Self, AuthError> {
        Self::new(term, &mut NoNonces)
    }

    pub fn commitment(&self) -> AuthCommitment {
        self.full.commitment()
    }

    pub fn full_reveal(&self) -> &RevealNode {
        &self.full
    }

    /// Minimal reveal for `path`.
    pub fn reveal(&self, path: &AuthPath) -> Result<RevealNode, AuthError> {
        self.full.restrict(path)
    }
}

/// Root of the Merkle tree over `term`.
pub fn commit(term: &AuthTerm, nonces: &mut dyn NonceSource) -> Result<AuthCommitment, AuthError> {
    CommittedTerm::new(term, nonces).map(|c| c.commitment())
}
