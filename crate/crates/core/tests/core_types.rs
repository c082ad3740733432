// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use cuttlefish::types::{
    validator_keypair, verify_certificate, CertSign, Certificate, Committee, CommitteeParams,
    TxKind, ValidatorId,
};
use proptest::prelude::*;

#[test]
fn quorums_intersect_in_a_validity_threshold() {
    for n in 1..=13 {
        for f in 0..=n {
            let Ok(p) = CommitteeParams::new(n, f) else {
                assert!(n < 3 * f + 1);
                continue;
            };
            assert!(
                min_pairwise_overlap(n, p.quorum()) >= p.validity_threshold(),
                "n={n} f={f}"
            );
        }
    }
}

fn cert_from(signers: &[u32], committee_n: usize) -> (Certificate, Committee) {
    let committee = Committee::deterministic(CommitteeParams::max_faults(committee_n).unwrap());
    let tx = transfer(key("coin", 0), key("gas", 0), "alice", "bob", 0);
    let votes: Vec<CertSign> = signers
        .iter()
        .map(|&i| {
            CertSign::new(
                tx.digest(),
                ValidatorId(i),
                &validator_keypair(ValidatorId(i)),
            )
        })
        .collect();
    let mut cert = Certificate::from_votes(tx, &[]);
    cert.signers = votes.iter().map(|v| (v.signer, v.signature)).collect();
    (cert, committee)
}

#[test]
fn certificate_examples() {
    assert!(verify_certificate(
        &cert_from(&[0, 1, 2], 4).0,
        &cert_from(&[], 4).1
    ));
    let (c, k) = cert_from(&[0, 1], 4);
    assert!(!verify_certificate(&c, &k));
    let (c, k) = cert_from(&[0, 1, 1], 4);
    assert!(!verify_certificate(&c, &k));
    let (c, k) = cert_from(&[0, 1, 9], 4);
    assert!(!verify_certificate(&c, &k));
}

#[test]
fn only_distinct_signer_sets_of_quorum_size_verify() {
    // Every signer sequence of length 1..=4 over four validators.
    for len in 1..=4u32 {
        for code in 0..4u32.pow(len) {
            let idx: Vec<u32> = (0..len).map(|i| code / 4u32.pow(i) % 4).collect();
            let distinct = idx.iter().collect::<std::collections::BTreeSet<_>>().len();
            let (c, k) = cert_from(&idx, 4);
            assert_eq!(
                verify_certificate(&c, &k),
                distinct == idx.len() && distinct >= 3,
                "{idx:?}"
            );
        }
    }
}

#[test]
fn tampered_signature_fails() {
    let (mut c, k) = cert_from(&[0, 1, 2], 4);
    c.signers[1].1 = c.signers[0].1;
    assert!(!verify_certificate(&c, &k));
    let (mut c, k) = cert_from(&[0, 1, 2], 4);
    c.tx = transfer(key("coin", 0), key("gas", 0), "alice", "carol", 0);
    assert!(!verify_certificate(&c, &k));
}

proptest! {
    #[test]
    fn verification_ignores_signer_order(perm in Just(vec![0u32, 1, 2, 3]).prop_shuffle(), take in 1usize..=4) {
        let (c, k) = cert_from(&perm[..take], 4);
        let (sorted, _) = cert_from(&{ let mut s = perm[..take].to_vec(); s.sort(); s }, 4);
        prop_assert_eq!(verify_certificate(&c, &k), verify_certificate(&sorted, &k));
        prop_assert_eq!(verify_certificate(&c, &k), take >= 3);
    }
}

#[test]
fn certificates_from_different_quorums_are_equal() {
    let (a, k) = cert_from(&[0, 1, 2], 4);
    let (b, _) = cert_from(&[1, 2, 3], 4);
    assert!(verify_certificate(&a, &k) && verify_certificate(&b, &k));
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
}

#[test]
fn digests_are_reproducible_and_kind_sensitive() {
    let a = transfer(key("coin", 0), key("gas", 0), "alice", "bob", 0);
    let b = transfer(key("coin", 0), key("gas", 0), "alice", "bob", 0);
    assert_eq!(a.digest(), b.digest());
    let mut c = a.clone();
    c.kind = TxKind::NoOp;
    assert_ne!(a.digest(), c.digest());
    let mut d = a.clone();
    d.evidence.signatures.clear();
    assert_eq!(a.digest(), d.digest());
}
