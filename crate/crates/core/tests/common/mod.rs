// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use cuttlefish::auth::AuthCommitment;
use cuttlefish::crypto::KeyPair;
use cuttlefish::harness::Cluster;
use cuttlefish::types::{
    CommitteeParams, Object, ObjectId, ObjectKey, Transaction, TxKind, UnlockMode, UnlockRqt,
    ValidatorId,
};

pub fn kp(name: &str) -> KeyPair {
    KeyPair::from_name(name)
}

pub fn addr(name: &str) -> AuthCommitment {
    AuthCommitment::single_key(kp(name).public())
}

pub fn owned(name: &str, owner: &str, balance: u64) -> Object {
    Object::owned(ObjectId::from_name(name), addr(owner), balance)
}

pub fn key(name: &str, version: u64) -> ObjectKey {
    ObjectKey::new(ObjectId::from_name(name), version)
}

pub fn params(n: usize, f: usize) -> CommitteeParams {
    CommitteeParams::new(n, f).unwrap()
}

pub fn ids(v: &[u32]) -> Vec<ValidatorId> {
    v.iter().copied().map(ValidatorId).collect()
}

/// Transfer of `obj` paid with `gas`, both owned by `owner`.
pub fn transfer(obj: ObjectKey, gas: ObjectKey, owner: &str, to: &str, nonce: u64) -> Transaction {
    let k = kp(owner);
    Transaction::new(
        vec![obj],
        TxKind::Transfer {
            recipient: addr(to),
        },
        gas,
        0,
    )
    .with_nonce(nonce)
    .authorize_simple([(obj.id, &k), (gas.id, &k)])
}

pub fn unlock(keys: Vec<ObjectKey>, gas: ObjectKey, owner: &str, mode: UnlockMode) -> UnlockRqt {
    let k = kp(owner);
    let owners: Vec<_> = keys
        .iter()
        .map(|x| (x.id, &k))
        .chain([(gas.id, &k)])
        .collect();
    UnlockRqt::new(keys, mode, gas, 0).authorize_simple(owners)
}

/// A 4-validator committee with alice's coin, two gas objects, and bob's coin.
pub fn four() -> Cluster {
    Cluster::new(
        params(4, 1),
        &[
            owned("coin", "alice", 100),
            owned("gas1", "alice", 10),
            owned("gas2", "alice", 10),
            owned("gas3", "alice", 10),
            owned("bobcoin", "bob", 50),
            owned("bobgas", "bob", 10),
        ],
    )
}

/// Smallest overlap between two `q`-subsets of `n` members, by enumeration.
pub fn min_pairwise_overlap(n: usize, q: usize) -> usize {
    let sets: Vec<u32> = (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == q)
        .collect();
    let mut min = usize::MAX;
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i..] {
            min = min.min((a & b).count_ones() as usize);
        }
    }
    min
}
