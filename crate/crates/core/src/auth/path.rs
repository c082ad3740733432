// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::encoding::{DecodeError, Decoder, Encode, Encoder};

use super::AuthError;

/// Choice made at one `Or` or `Threshold` node.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Index of the satisfied child.
    Or(u32),
    /// Strictly increasing indices of the children offered as satisfied.
    Threshold(Vec<u32>),
}

/// Selections for every `Or`/`Threshold` node that evaluation visits, in
/// pre-order. `And` nodes consume nothing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthPath(pub Vec<Selection>);

impl AuthPath {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(selections: Vec<Selection>) -> Self {
        Self(selections)
    }

    pub(crate) fn cursor(&self) -> PathCursor<'_> {
        PathCursor { rest: &self.0 }
    }
}

pub(crate) struct PathCursor<'a> {
    rest: &'a [Selection],
}

impl<'a> PathCursor<'a> {
    pub fn take_or(&mut self, arity: usize) -> Result<usize, AuthError> {
        match self.next()? {
            Selection::Or(i) if (*i as usize) < arity => Ok(*i as usize),
            Selection::Or(_) => Err(AuthError::MalformedPath("or index out of range")),
            Selection::Threshold(_) => Err(AuthError::MalformedPath("expected or selection")),
        }
    }

    pub fn take_threshold(&mut self, arity: usize) -> Result<&'a [u32], AuthError> {
        match self.next()? {
            Selection::Threshold(set) => {
                if set.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(AuthError::MalformedPath(
                        "threshold subset not strictly increasing",
                    ));
                }
                if set.last().is_some_and(|&i| i as usize >= arity) {
                    return Err(AuthError::MalformedPath("threshold index out of range"));
                }
                Ok(set)
            }
            Selection::Or(_) => Err(AuthError::MalformedPath("expected threshold selection")),
        }
    }

    fn next(&mut self) -> Result<&'a Selection, AuthError> {
        let (head, tail) = self
            .rest
            .split_first()
            .ok_or(AuthError::MalformedPath("path exhausted"))?;
        self.rest = tail;
        Ok(head)
    }

    pub fn finish(self) -> Result<(), AuthError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(AuthError::MalformedPath("unused selections"))
        }
    }
}

impl Encode for AuthPath {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.0.len() as u32);
        for sel in &self.0 {
            match sel {
                Selection::Or(i) => enc.u8(0).u32(*i),
                Selection::Threshold(set) => enc.u8(1).seq(set),
            };
        }
    }
}

impl AuthPath {
    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let len = dec.u32()?;
        let mut out = Vec::new();
        for _ in 0..len {
            out.push(match dec.u8()? {
                0 => Selection::Or(dec.u32()?),
                1 => {
                    let n = dec.u32()?;
                    let mut set = Vec::new();
                    for _ in 0..n {
                        set.push(dec.u32()?);
                    }
                    Selection::Threshold(set)
                }
                tag => return Err(DecodeError::BadTag(tag)),
            });
        }
        Ok(Self(out))
    }
}
