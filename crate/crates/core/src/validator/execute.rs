// SPDX-License-Identifier: Apache-2.0

//! Deterministic execution of the fixed instruction set.

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::types::{
    CommutativeKind, Contents, Effects, ExecStatus, Object, ObjectId, ObjectKey, ObjectKind,
    Transaction, TxKind,
};

/// Charged to the gas object on every execution.
pub const GAS_FEE: u64 = 1;

/// In-place change to a commutative object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommutativeUpdate {
    Credit { key: ObjectKey, amount: u64 },
    Debit { key: ObjectKey, amount: u64 },
}

impl CommutativeUpdate {
    pub fn key(&self) -> ObjectKey {
        match self {
            CommutativeUpdate::Credit { key, .. } | CommutativeUpdate::Debit { key, .. } => *key,
        }
    }

    /// Applies the update. Returns false if it does not fit the object kind.
    pub fn apply(&self, obj: &mut Object) -> bool {
        let (credit, amount) = match self {
            CommutativeUpdate::Credit { amount, .. } => (true, *amount),
            CommutativeUpdate::Debit { amount, .. } => (false, *amount),
        };
        match (&obj.kind, &mut obj.contents) {
            (ObjectKind::Commutative(CommutativeKind::GCounter), Contents::Balance(b))
                if credit =>
            {
                *b = b.saturating_add(amount);
                true
            }
            (ObjectKind::Commutative(CommutativeKind::USet), Contents::Set { added, .. })
                if credit =>
            {
                added.insert(amount);
                true
            }
            (ObjectKind::Commutative(CommutativeKind::PnSet), Contents::Set { added, removed }) => {
                if credit {
                    added.insert(amount);
                } else {
                    removed.insert(amount);
                }
                true
            }
            (
                ObjectKind::Commutative(CommutativeKind::BoundedCounter),
                Contents::Counter {
                    credited, debited, ..
                },
            ) => {
                if credit {
                    *credited = credited.saturating_add(amount);
                } else {
                    *debited = debited.saturating_add(amount);
                }
                true
            }
            _ => false,
        }
    }

    /// Reverses [`apply`](Self::apply). Set additions are grow-only and stay.
    pub fn revert(&self, obj: &mut Object) {
        match (self, &mut obj.contents) {
            (CommutativeUpdate::Credit { amount, .. }, Contents::Balance(b)) => {
                *b = b.saturating_sub(*amount);
            }
            (CommutativeUpdate::Credit { amount, .. }, Contents::Counter { credited, .. }) => {
                *credited = credited.saturating_sub(*amount);
            }
            (CommutativeUpdate::Debit { amount, .. }, Contents::Counter { debited, .. }) => {
                *debited = debited.saturating_sub(*amount);
            }
            _ => {}
        }
    }
}

/// Input objects for one execution, each at the version the transaction names.
pub struct ExecInputs<'a> {
    /// Same order as `tx.inputs`.
    pub inputs: Vec<&'a Object>,
    pub gas: &'a Object,
    /// Same order as `tx.shared_inputs`.
    pub shared: Vec<&'a Object>,
    /// Same order as `tx.commutative_inputs`; `None` when they are stale.
    pub commutative: Option<Vec<&'a Object>>,
}

#[derive(Clone, Debug)]
pub struct ExecOutput {
    pub effects: Effects,
    /// Every object written, at its new version.
    pub writes: Vec<Object>,
    pub commutative: Vec<CommutativeUpdate>,
}

/// Runs `tx`. Failed executions still bump every mutable input and charge gas.
pub fn execute(
    tx: &Transaction,
    digest: Digest,
    inputs: ExecInputs<'_>,
    forced: Option<ExecStatus>,
) -> ExecOutput {
    let mut mutable: Vec<Object> = inputs
        .inputs
        .iter()
        .chain(inputs.shared.iter())
        .filter(|o| o.kind != ObjectKind::ReadOnly)
        .map(|o| (*o).clone())
        .collect();
    let mut gas = inputs.gas.clone();
    let mut created = Vec::new();
    let mut commutative = Vec::new();

    let gas_balance = gas.contents.balance().unwrap_or(0);
    let status = if let Some(s) = forced {
        s
    } else if gas_balance < GAS_FEE {
        ExecStatus::InsufficientGas
    } else if inputs.commutative.is_none() && !tx.commutative_inputs.is_empty() {
        ExecStatus::StaleCommutative
    } else {
        apply_kind(
            tx,
            digest,
            &mut mutable,
            inputs.commutative.as_deref().unwrap_or(&[]),
            &mut created,
            &mut commutative,
        )
    };
    if status != ExecStatus::Success {
        mutable = inputs
            .inputs
            .iter()
            .chain(inputs.shared.iter())
            .filter(|o| o.kind != ObjectKind::ReadOnly)
            .map(|o| (*o).clone())
            .collect();
        created.clear();
        commutative.clear();
    }
    if let Contents::Balance(b) = &mut gas.contents {
        *b = b.saturating_sub(GAS_FEE);
    }

    let mut consumed = Vec::new();
    let mut writes = Vec::new();
    for obj in mutable.into_iter().chain(std::iter::once(gas)) {
        consumed.push(obj.key);
        writes.push(obj.bumped());
    }
    writes.extend(created);
    let produced = writes.iter().map(|o| (o.key, o.content_digest())).collect();
    ExecOutput {
        effects: Effects {
            tx: digest,
            status,
            consumed,
            produced,
            commutative: commutative.iter().map(CommutativeUpdate::key).collect(),
        },
        writes,
        commutative,
    }
}

fn apply_kind(
    tx: &Transaction,
    digest: Digest,
    mutable: &mut [Object],
    commutative_objs: &[&Object],
    created: &mut Vec<Object>,
    updates: &mut Vec<CommutativeUpdate>,
) -> ExecStatus {
    match &tx.kind {
        TxKind::NoOp => ExecStatus::Success,
        TxKind::Transfer { recipient } => {
            for o in mutable.iter_mut().filter(|o| o.kind == ObjectKind::Owned) {
                o.owner = Some(*recipient);
            }
            ExecStatus::Success
        }
        TxKind::Swap => {
            let owned: Vec<usize> = mutable
                .iter()
                .enumerate()
                .filter(|(_, o)| o.kind == ObjectKind::Owned)
                .map(|(i, _)| i)
                .collect();
            if let [a, b] = owned[..] {
                let tmp = mutable[a].owner;
                mutable[a].owner = mutable[b].owner;
                mutable[b].owner = tmp;
            }
            ExecStatus::Success
        }
        TxKind::Mint { owner, balance } => {
            created.push(Object::owned(ObjectId::derived(&digest), *owner, *balance));
            ExecStatus::Success
        }
        TxKind::Credit { amount } | TxKind::Debit { amount } => {
            let credit = matches!(tx.kind, TxKind::Credit { .. });
            if let Some(target) = commutative_objs.first() {
                let update = if credit {
                    CommutativeUpdate::Credit {
                        key: target.key,
                        amount: *amount,
                    }
                } else {
                    CommutativeUpdate::Debit {
                        key: target.key,
                        amount: *amount,
                    }
                };
                let mut probe = (*target).clone();
                if !update.apply(&mut probe) {
                    return ExecStatus::InsufficientBalance;
                }
                updates.push(update);
                return ExecStatus::Success;
            }
            let Some(target) = mutable.first_mut() else {
                return ExecStatus::InsufficientBalance;
            };
            match &mut target.contents {
                Contents::Balance(b) if credit => {
                    *b = b.saturating_add(*amount);
                    ExecStatus::Success
                }
                Contents::Balance(b) if *b >= *amount => {
                    *b -= amount;
                    ExecStatus::Success
                }
                _ => ExecStatus::InsufficientBalance,
            }
        }
    }
}

/// Effects of spending an unlock request's gas object.
pub fn spend_gas(request: Digest, gas: &Object) -> (Effects, Object) {
    let mut next = gas.bumped();
    if let Contents::Balance(b) = &mut next.contents {
        *b = b.saturating_sub(GAS_FEE);
    }
    let effects = Effects {
        tx: request,
        status: ExecStatus::Success,
        consumed: vec![gas.key],
        produced: vec![(next.key, next.content_digest())],
        commutative: Vec::new(),
    };
    (effects, next)
}

/// Effects of the no-op that replaces a blocked version: version +1, contents unchanged.
pub fn noop(request: Digest, objs: &[&Object]) -> (Effects, Vec<Object>) {
    let writes: Vec<Object> = objs.iter().map(|o| o.bumped()).collect();
    let effects = Effects {
        tx: request,
        status: ExecStatus::Success,
        consumed: objs.iter().map(|o| o.key).collect(),
        produced: writes.iter().map(|o| (o.key, o.content_digest())).collect(),
        commutative: Vec::new(),
    };
    (effects, writes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::AuthCommitment;
    use crate::crypto::KeyPair;

    fn owned(name: &str, owner: &str, balance: u64, version: u64) -> Object {
        let mut o = Object::owned(
            ObjectId::from_name(name),
            AuthCommitment::single_key(KeyPair::from_name(owner).public()),
            balance,
        );
        o.key.version = crate::types::Version(version);
        o
    }

    fn run(tx: &Transaction, inputs: &[&Object], gas: &Object) -> ExecOutput {
        execute(
            tx,
            tx.digest(),
            ExecInputs {
                inputs: inputs.to_vec(),
                gas,
                shared: vec![],
                commutative: Some(vec![]),
            },
            None,
        )
    }

    #[test]
    fn noop_bumps_version_only() {
        let a = owned("a", "alice", 42, 5);
        let g = owned("g", "alice", 10, 0);
        let tx = Transaction::new(vec![a.key], TxKind::NoOp, g.key, 0);
        let out = run(&tx, &[&a], &g);
        assert_eq!(out.writes[0].key, ObjectKey::new(a.id(), 6));
        assert_eq!(out.writes[0].contents, Contents::Balance(42));
        assert_eq!(out.writes[0].content_digest(), a.content_digest());
        assert_eq!(out.writes[1].contents, Contents::Balance(9));
    }

    #[test]
    fn swap_exchanges_owners() {
        let a = owned("a", "alice", 1, 0);
        let b = owned("b", "bob", 1, 3);
        let g = owned("g", "alice", 10, 0);
        let tx = Transaction::new(vec![a.key, b.key], TxKind::Swap, g.key, 0);
        let out = run(&tx, &[&a, &b], &g);
        assert_eq!(out.writes[0].owner, b.owner);
        assert_eq!(out.writes[1].owner, a.owner);
        assert_eq!(out.writes[0].version().0, 1);
        assert_eq!(out.writes[1].version().0, 4);
    }

    #[test]
    fn debit_below_zero_fails_but_charges_gas() {
        let a = owned("a", "alice", 7, 0);
        let g = owned("g", "alice", 10, 0);
        let tx = Transaction::new(vec![a.key], TxKind::Debit { amount: 10 }, g.key, 0);
        let out = run(&tx, &[&a], &g);
        assert_eq!(out.effects.status, ExecStatus::InsufficientBalance);
        assert_eq!(out.writes[0].contents, Contents::Balance(7));
        assert_eq!(out.writes[0].version().0, 1);
        assert_eq!(out.writes[1].contents, Contents::Balance(9));
    }

    #[test]
    fn empty_gas_fails() {
        let a = owned("a", "alice", 7, 0);
        let g = owned("g", "alice", 0, 0);
        let tx = Transaction::new(vec![a.key], TxKind::NoOp, g.key, 0);
        assert_eq!(
            run(&tx, &[&a], &g).effects.status,
            ExecStatus::InsufficientGas
        );
    }

    #[test]
    fn mint_creates_object_at_version_zero() {
        let g = owned("g", "alice", 10, 0);
        let owner = AuthCommitment::single_key(KeyPair::from_name("carol").public());
        let tx = Transaction::new(vec![], TxKind::Mint { owner, balance: 5 }, g.key, 0);
        let out = run(&tx, &[], &g);
        let minted = out.writes.last().unwrap();
        assert_eq!(
            minted.key,
            ObjectKey::new(ObjectId::derived(&tx.digest()), 0)
        );
        assert_eq!(minted.contents, Contents::Balance(5));
    }
}
