// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey, SecretKey};
use crate::encoding::{hash_with, Encode, Encoder};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

impl fmt::Debug for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl Encode for ValidatorId {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum CommitteeError {
    #[error("malformed committee: n = {n} must be at least 3f + 1 = {}", 3 * f + 1)]
    Malformed { n: usize, f: usize },
}

/// Committee size `n` and fault bound `f`, with `n >= 3f + 1` enforced on construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct CommitteeParams {
    n: usize,
    f: usize,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n: usize,
    f: usize,
}

impl TryFrom<RawParams> for CommitteeParams {
    type Error = CommitteeError;
    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        CommitteeParams::new(raw.n, raw.f)
    }
}

impl From<CommitteeParams> for RawParams {
    fn from(p: CommitteeParams) -> Self {
        RawParams { n: p.n, f: p.f }
    }
}

impl CommitteeParams {
    pub fn new(n: usize, f: usize) -> Result<Self, CommitteeError> {
        if n < 3 * f + 1 {
            return Err(CommitteeError::Malformed { n, f });
        }
        Ok(Self { n, f })
    }

    /// Largest tolerated `f` for `n` validators.
    pub fn max_faults(n: usize) -> Result<Self, CommitteeError> {
        if n == 0 {
            return Err(CommitteeError::Malformed { n, f: 0 });
        }
        Self::new(n, (n - 1) / 3)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    /// Certificate size: `ceil((n + f + 1) / 2)`, which is `2f + 1` when
    /// `n = 3f + 1` and keeps any two quorums `f + 1` apart otherwise.
    pub fn quorum(&self) -> usize {
        (self.n + self.f + 2) / 2
    }

    /// Smallest set guaranteed to contain an honest validator: `f + 1`.
    pub fn validity_threshold(&self) -> usize {
        self.f + 1
    }
}

/// The validator set of an epoch: parameters plus one public key per member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Committee {
    params: CommitteeParams,
    keys: Vec<PublicKey>,
}

impl Committee {
    /// Committee whose members use [`validator_keypair`] keys.
    pub fn deterministic(params: CommitteeParams) -> Self {
        let keys = (0..params.n() as u32)
            .map(|i| validator_keypair(ValidatorId(i)).public())
            .collect();
        Self { params, keys }
    }

    pub fn params(&self) -> CommitteeParams {
        self.params
    }

    pub fn size(&self) -> usize {
        self.keys.len()
    }

    pub fn quorum(&self) -> usize {
        self.params.quorum()
    }

    pub fn key(&self, id: ValidatorId) -> Option<&PublicKey> {
        self.keys.get(id.0 as usize)
    }

    pub fn members(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        (0..self.keys.len() as u32).map(ValidatorId)
    }
}

pub fn validator_keypair(id: ValidatorId) -> KeyPair {
    KeyPair::from_secret(SecretKey(
        hash_with("cuttlefish.validator", &id.0.to_le_bytes()).0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quorum_values() {
        assert_eq!(CommitteeParams::new(4, 1).unwrap().quorum(), 3);
        assert_eq!(CommitteeParams::new(7, 2).unwrap().quorum(), 5);
        assert_eq!(CommitteeParams::new(10, 3).unwrap().quorum(), 7);
        assert_eq!(CommitteeParams::new(6, 1).unwrap().quorum(), 4);
        assert_eq!(
            CommitteeParams::new(4, 2),
            Err(CommitteeError::Malformed { n: 4, f: 2 })
        );
    }

    #[test]
    fn validity_threshold_values() {
        assert_eq!(CommitteeParams::new(4, 1).unwrap().validity_threshold(), 2);
        assert_eq!(CommitteeParams::new(7, 2).unwrap().validity_threshold(), 3);
        assert_eq!(CommitteeParams::new(10, 3).unwrap().validity_threshold(), 4);
    }

    #[test]
    fn malformed_params_rejected_by_serde() {
        let err = serde_json::from_str::<CommitteeParams>(r#"{"n":4,"f":2}"#);
        assert!(err.is_err());
        let ok: CommitteeParams = serde_json::from_str(r#"{"n":7,"f":2}"#).unwrap();
        assert_eq!(ok.quorum(), 5);
    }

    #[test]
    fn max_faults() {
        assert_eq!(CommitteeParams::max_faults(4).unwrap().f(), 1);
        assert_eq!(CommitteeParams::max_faults(6).unwrap().f(), 1);
        assert_eq!(CommitteeParams::max_faults(7).unwrap().f(), 2);
        assert!(CommitteeParams::max_faults(0).is_err());
    }
}
