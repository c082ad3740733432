// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashSet};

use crate::crypto::PublicKey;
use crate::types::ObjectId;

use super::merkle::{NoNonces, RevealNode};
use super::path::{AuthPath, PathCursor};
use super::term::{check_threshold, AuthTerm, LeafTerm, MAX_DEPTH};
use super::{AuthCommitment, AuthError};

/// Answers whether an external event has happened.
pub trait EventOracle {
    fn occurred(&self, chain: &str, event: &str) -> bool;
}

/// No event has ever happened.
pub struct NoEvents;

impl EventOracle for NoEvents {
    fn occurred(&self, _chain: &str, _event: &str) -> bool {
        false
    }
}

impl EventOracle for HashSet<(String, String)> {
    fn occurred(&self, chain: &str, event: &str) -> bool {
        self.contains(&(chain.to_owned(), event.to_owned()))
    }
}

impl EventOracle for BTreeSet<(String, String)> {
    fn occurred(&self, chain: &str, event: &str) -> bool {
        self.contains(&(chain.to_owned(), event.to_owned()))
    }
}

/// What a validator knows when it checks evidence.
pub struct AuthContext<'a> {
    pub signers: BTreeSet<PublicKey>,
    pub included_oids: BTreeSet<ObjectId>,
    /// The receiving validator's own clock.
    pub local_time: u64,
    pub events: &'a dyn EventOracle,
}

impl<'a> AuthContext<'a> {
    pub fn new(local_time: u64, events: &'a dyn EventOracle) -> Self {
        Self {
            signers: BTreeSet::new(),
            included_oids: BTreeSet::new(),
            local_time,
            events,
        }
    }

    pub fn with_signers(mut self, signers: impl IntoIterator<Item = PublicKey>) -> Self {
        self.signers.extend(signers);
        self
    }

    pub fn with_oids(mut self, oids: impl IntoIterator<Item = ObjectId>) -> Self {
        self.included_oids.extend(oids);
        self
    }

    fn leaf(&self, leaf: &LeafTerm) -> bool {
        match leaf {
            LeafTerm::PublicKey(pk) => self.signers.contains(pk),
            LeafTerm::ObjectId(oid) => self.included_oids.contains(oid),
            LeafTerm::BeforeTime(t) => self.local_time < *t,
            LeafTerm::AfterTime(t) => self.local_time > *t,
            LeafTerm::EventOccurred { chain, event } => self.events.occurred(chain, event),
        }
    }
}

/// Counters recorded while evaluating a reveal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub leaves_evaluated: usize,
}

/// Evaluates `term` along `path`. A malformed path is an error, not `false`.
pub fn evaluate(
    term: &AuthTerm,
    path: &AuthPath,
    ctx: &AuthContext<'_>,
) -> Result<bool, AuthError> {
    term.validate()?;
    evaluate_reveal(&RevealNode::from_term(term, &mut NoNonces), path, ctx)
}

pub fn evaluate_reveal(
    node: &RevealNode,
    path: &AuthPath,
    ctx: &AuthContext<'_>,
) -> Result<bool, AuthError> {
    evaluate_counted(node, path, ctx).map(|(b, _)| b)
}

pub fn evaluate_counted(
    node: &RevealNode,
    path: &AuthPath,
    ctx: &AuthContext<'_>,
) -> Result<(bool, EvalStats), AuthError> {
    if node.depth() > MAX_DEPTH {
        return Err(AuthError::TooDeep);
    }
    let mut stats = EvalStats::default();
    let mut cursor = path.cursor();
    let out = eval_node(node, &mut cursor, ctx, &mut stats)?;
    cursor.finish()?;
    Ok((out, stats))
}

fn eval_node(
    node: &RevealNode,
    cursor: &mut PathCursor<'_>,
    ctx: &AuthContext<'_>,
    stats: &mut EvalStats,
) -> Result<bool, AuthError> {
    match node {
        RevealNode::Hidden(_) => Err(AuthError::HiddenOnPath),
        RevealNode::Leaf { term, .. } => {
            stats.leaves_evaluated += 1;
            Ok(ctx.leaf(term))
        }
        RevealNode::And { children, .. } => {
            if children.is_empty() {
                return Err(AuthError::EmptyBranch);
            }
            let mut all = true;
            for c in children {
                all &= eval_node(c, cursor, ctx, stats)?;
            }
            Ok(all)
        }
        RevealNode::Or { children, .. } => {
            if children.is_empty() {
                return Err(AuthError::EmptyBranch);
            }
            let pick = cursor.take_or(children.len())?;
            eval_node(&children[pick], cursor, ctx, stats)
        }
        RevealNode::Threshold {
            threshold,
            children,
            ..
        } => {
            check_threshold(*threshold, children.iter().map(|(w, _)| *w), children.len())?;
            let picks = cursor.take_threshold(children.len())?;
            let mut weight = 0u64;
            for &i in picks {
                let (w, child) = &children[i as usize];
                if eval_node(child, cursor, ctx, stats)? {
                    weight = weight.saturating_add(*w);
                }
            }
            Ok(weight >= *threshold)
        }
    }
}

/// `Ok(false)` when the reveal does not hash to `commitment` or the condition
/// is unmet; `Err` when the reveal or path is structurally invalid.
pub fn verify_reveal(
    commitment: &AuthCommitment,
    revealed: &RevealNode,
    path: &AuthPath,
    ctx: &AuthContext<'_>,
) -> Result<bool, AuthError> {
    if revealed.depth() > MAX_DEPTH {
        return Err(AuthError::TooDeep);
    }
    if revealed.commitment() != *commitment {
        return Ok(false);
    }
    evaluate_reveal(revealed, path, ctx)
}
