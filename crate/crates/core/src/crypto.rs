// SPDX-License-Identifier: Apache-2.0

//! Digests, keys and the pluggable signature scheme.
//!
//! The protocol treats signatures as a black box. [`KeyedDigestScheme`] is the
//! default: a signature is a domain-separated digest of the signer's public key
//! and the message digest. It is deterministic and cheap, which is what the
//! simulator needs; it is not unforgeable. Simulated adversaries are modelled
//! as computationally bounded by never producing tags for keys they do not hold.

use std::fmt;

use crate::encoding::{hash_with, Encode};

macro_rules! bytes32_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub fn to_hex(&self) -> String {
                ::hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, ::hex::FromHexError> {
                let mut out = [0u8; 32];
                ::hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }

            pub fn short(&self) -> String {
                ::hex::encode(&self.0[..4])
            }
        }

        impl ::std::fmt::Debug for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                write!(f, "{}({})", stringify!($name), self.short())
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl ::serde::Serialize for $name {
            fn serialize<S: ::serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $name {
            fn deserialize<D: ::serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <String as ::serde::Deserialize>::deserialize(d)?;
                Self::from_hex(&s).map_err(::serde::de::Error::custom)
            }
        }

        impl $crate::encoding::Encode for $name {
            fn encode(&self, enc: &mut $crate::encoding::Encoder) {
                enc.fixed(&self.0);
            }
        }
    };
}
pub(crate) use bytes32_newtype;

bytes32_newtype!(
    /// 32-byte SHA-256 digest.
    Digest
);
bytes32_newtype!(PublicKey);
bytes32_newtype!(Signature);
bytes32_newtype!(SecretKey);

impl Digest {
    pub fn of<T: Encode + ?Sized>(domain: &str, value: &T) -> Self {
        value.digest_with(domain)
    }
}

/// Signing interface the protocol code is written against.
pub trait SignatureScheme {
    fn public_key(secret: &SecretKey) -> PublicKey;
    fn sign(secret: &SecretKey, msg: &Digest) -> Signature;
    fn verify(public: &PublicKey, msg: &Digest, sig: &Signature) -> bool;
}

/// Deterministic keyed digest: `sig = H("sig", pk || msg)`.
pub struct KeyedDigestScheme;

impl SignatureScheme for KeyedDigestScheme {
    fn public_key(secret: &SecretKey) -> PublicKey {
        PublicKey(hash_with("cuttlefish.pk", &secret.0).0)
    }

    fn sign(secret: &SecretKey, msg: &Digest) -> Signature {
        Self::tag(&Self::public_key(secret), msg)
    }

    fn verify(public: &PublicKey, msg: &Digest, sig: &Signature) -> bool {
        Self::tag(public, msg) == *sig
    }
}

impl KeyedDigestScheme {
    fn tag(public: &PublicKey, msg: &Digest) -> Signature {
        let mut bytes = Vec::with_capacity(64);
        bytes.extend_from_slice(&public.0);
        bytes.extend_from_slice(&msg.0);
        Signature(hash_with("cuttlefish.sig", &bytes).0)
    }
}

/// The scheme used throughout the crate.
pub type Scheme = KeyedDigestScheme;

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    secret: SecretKey,
    public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish()
    }
}

impl KeyPair {
    pub fn from_secret(secret: SecretKey) -> Self {
        let public = Scheme::public_key(&secret);
        Self { secret, public }
    }

    /// Deterministic key derived from a human-readable name (accounts in scenarios).
    pub fn from_name(name: &str) -> Self {
        Self::from_secret(SecretKey(
            hash_with("cuttlefish.account", name.as_bytes()).0,
        ))
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, msg: &Digest) -> Signature {
        Scheme::sign(&self.secret, msg)
    }
}

pub fn verify(public: &PublicKey, msg: &Digest, sig: &Signature) -> bool {
    Scheme::verify(public, msg, sig)
}
