// SPDX-License-Identifier: Apache-2.0

//! Commutative objects: grow-only counter, U-Set, PN-Set and the bounded counter.
//!
//! Certificates on commutative objects run on the fast path in any order and
//! never bump the object version. A bounded counter additionally gives every
//! validator a local spending budget; debits are voted against it, credits
//! replenish half their value, and an exhausted counter is consolidated through
//! the sequencer into a new version with fresh budgets.

use std::collections::BTreeSet;

use crate::types::{
    CommitteeParams, CommutativeKind, Contents, Object, ObjectId, ObjectKey, ObjectKind,
};

/// Per-validator budget for a counter whose spendable value is `max_credit`:
/// `floor(max_credit * (q - f) / (n - f))` for quorum `q`, which is
/// `floor(max_credit * (f + 1) / (2f + 1))` when `n = 3f + 1`.
///
/// A finalized debit consumes budget at `q - f` honest validators, so the
/// `n - f` honest budgets together cover at most `max_credit`.
pub fn initial_budget(max_credit: u64, params: CommitteeParams) -> u64 {
    let f = params.f() as u128;
    let q = params.quorum() as u128;
    let n = params.n() as u128;
    ((max_credit as u128 * (q - f)) / (n - f)) as u64
}

/// Budget added to a validator when it executes a credit of `amount`.
pub fn credit_half(amount: u64) -> u64 {
    amount / 2
}

/// Spendable value left after the counted credits and debits.
pub fn outstanding(max_credit: u64, credits: u64, debits: u64) -> u64 {
    (max_credit as u128 + credits as u128)
        .saturating_sub(debits as u128)
        .min(u64::MAX as u128) as u64
}

pub fn g_counter(id: ObjectId) -> Object {
    commutative(id, CommutativeKind::GCounter, Contents::Balance(0))
}

pub fn u_set(id: ObjectId) -> Object {
    commutative(id, CommutativeKind::USet, empty_set())
}

pub fn pn_set(id: ObjectId) -> Object {
    commutative(id, CommutativeKind::PnSet, empty_set())
}

pub fn bounded_counter(id: ObjectId, max_credit: u64) -> Object {
    commutative(
        id,
        CommutativeKind::BoundedCounter,
        Contents::Counter {
            max_credit,
            credited: 0,
            debited: 0,
        },
    )
}

fn empty_set() -> Contents {
    Contents::Set {
        added: BTreeSet::new(),
        removed: BTreeSet::new(),
    }
}

fn commutative(id: ObjectId, kind: CommutativeKind, contents: Contents) -> Object {
    Object {
        key: ObjectKey::new(id, 0),
        kind: ObjectKind::Commutative(kind),
        owner: None,
        contents,
    }
}

/// Membership in a set object: added and not tombstoned.
pub fn contains(obj: &Object, item: u64) -> bool {
    match &obj.contents {
        Contents::Set { added, removed } => added.contains(&item) && !removed.contains(&item),
        _ => false,
    }
}

/// Current members of a set object.
pub fn members(obj: &Object) -> BTreeSet<u64> {
    match &obj.contents {
        Contents::Set { added, removed } => added.difference(removed).copied().collect(),
        _ => BTreeSet::new(),
    }
}

pub fn is_bounded_counter(obj: &Object) -> bool {
    obj.kind == ObjectKind::Commutative(CommutativeKind::BoundedCounter)
}

/// `max_credit` of a bounded counter object.
pub fn max_credit(obj: &Object) -> Option<u64> {
    match obj.contents {
        Contents::Counter { max_credit, .. } => Some(max_credit),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_formula() {
        let p = |n, f| CommitteeParams::new(n, f).unwrap();
        assert_eq!(initial_budget(100, p(4, 1)), 66);
        assert_eq!(initial_budget(0, p(4, 1)), 0);
        assert_eq!(initial_budget(21, p(4, 1)), 14);
        assert_eq!(initial_budget(100, p(7, 2)), 60);
        assert_eq!(initial_budget(100, p(6, 1)), 60);
    }

    #[test]
    fn credit_half_floors() {
        assert_eq!(credit_half(20), 10);
        assert_eq!(credit_half(21), 10);
    }

    #[test]
    fn outstanding_saturates() {
        assert_eq!(outstanding(100, 0, 40), 60);
        assert_eq!(outstanding(10, 5, 40), 0);
    }
}
