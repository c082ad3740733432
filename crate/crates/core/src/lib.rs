// SPDX-License-Identifier: Apache-2.0

//! Owned-object fast path with consensus-backed unlock.
//!
//! Validators lock owned object versions for the first transaction they see
//! and sign it; a quorum of signatures is a certificate, which any validator
//! executes without consensus. When conflicting transactions leave an object
//! locked with no certificate, its owner runs an unlock through the sequencer,
//! which either finalizes a certificate that may already be final somewhere or
//! moves the object on with a no-op (or a replacement transaction).

pub mod auth;
pub mod client;
pub mod commutative;
pub mod crypto;
pub mod encoding;
pub mod harness;
pub mod sequencer;
pub mod sim;
pub mod types;
pub mod validator;
