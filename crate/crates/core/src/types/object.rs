// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::auth::AuthCommitment;
use crate::crypto::{bytes32_newtype, Digest};
use crate::encoding::{hash_with, Encode, Encoder};

bytes32_newtype!(
    /// Opaque 32-byte object identifier.
    ObjectId
);

impl ObjectId {
    /// Stable id for a named object in a scenario or test.
    pub fn from_name(name: &str) -> Self {
        Self(hash_with("cuttlefish.object", name.as_bytes()).0)
    }

    /// Id of the object created by a `Mint` transaction.
    pub fn derived(tx: &Digest) -> Self {
        Self(hash_with("cuttlefish.mint", &tx.0).0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Version(pub u64);

impl Version {
    pub fn next(self) -> Self {
        Version(self.0 + 1)
    }
}

impl fmt::Debug for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// `(ObjectId, Version)`: the unit of locking.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectKey {
    pub id: ObjectId,
    pub version: Version,
}

impl ObjectKey {
    pub fn new(id: ObjectId, version: u64) -> Self {
        Self {
            id,
            version: Version(version),
        }
    }

    pub fn next(&self) -> Self {
        Self {
            id: self.id,
            version: self.version.next(),
        }
    }
}

impl fmt::Debug for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.id.short(), self.version)
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Encode for ObjectKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.id).u64(self.version.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommutativeKind {
    GCounter,
    USet,
    PnSet,
    BoundedCounter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    ReadOnly,
    Owned,
    Shared,
    Commutative(CommutativeKind),
}

impl Encode for ObjectKind {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            ObjectKind::ReadOnly => enc.u8(0),
            ObjectKind::Owned => enc.u8(1),
            ObjectKind::Shared => enc.u8(2),
            ObjectKind::Commutative(k) => enc.u8(3).u8(match k {
                CommutativeKind::GCounter => 0,
                CommutativeKind::USet => 1,
                CommutativeKind::PnSet => 2,
                CommutativeKind::BoundedCounter => 3,
            }),
        };
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contents {
    Balance(u64),
    Bytes(Vec<u8>),
    /// U-Set and PN-Set state; a U-Set never tombstones.
    Set {
        added: BTreeSet<u64>,
        removed: BTreeSet<u64>,
    },
    /// Bounded counter: spendable value is `max_credit + credited - debited`.
    Counter {
        max_credit: u64,
        credited: u64,
        debited: u64,
    },
}

impl Contents {
    pub fn balance(&self) -> Option<u64> {
        match self {
            Contents::Balance(b) => Some(*b),
            Contents::Counter {
                max_credit,
                credited,
                debited,
            } => Some((max_credit + credited).saturating_sub(*debited)),
            Contents::Bytes(_) | Contents::Set { .. } => None,
        }
    }
}

impl Encode for Contents {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Contents::Balance(b) => enc.u8(0).u64(*b),
            Contents::Bytes(b) => enc.u8(1).bytes(b),
            Contents::Set { added, removed } => {
                let added: Vec<u64> = added.iter().copied().collect();
                let removed: Vec<u64> = removed.iter().copied().collect();
                enc.u8(2).seq(&added).seq(&removed)
            }
            Contents::Counter {
                max_credit,
                credited,
                debited,
            } => enc.u8(3).u64(*max_credit).u64(*credited).u64(*debited),
        };
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub key: ObjectKey,
    pub kind: ObjectKind,
    pub owner: Option<AuthCommitment>,
    pub contents: Contents,
}

impl Object {
    pub fn owned(id: ObjectId, owner: AuthCommitment, balance: u64) -> Self {
        Self {
            key: ObjectKey::new(id, 0),
            kind: ObjectKind::Owned,
            owner: Some(owner),
            contents: Contents::Balance(balance),
        }
    }

    pub fn id(&self) -> ObjectId {
        self.key.id
    }

    pub fn version(&self) -> Version {
        self.key.version
    }

    pub fn is_owned(&self) -> bool {
        self.kind == ObjectKind::Owned
    }

    /// Digest of everything except the version; unchanged by a no-op.
    pub fn content_digest(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.item(&self.kind)
            .option(self.owner.as_ref())
            .item(&self.contents);
        hash_with("cuttlefish.object.content", &enc.finish())
    }

    /// Copy of this object at the next version.
    pub fn bumped(&self) -> Self {
        let mut next = self.clone();
        next.key = self.key.next();
        next
    }
}

impl Encode for Object {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.key)
            .item(&self.kind)
            .option(self.owner.as_ref())
            .item(&self.contents);
    }
}
