// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use cuttlefish::client::assemble_unlock_cert;
use cuttlefish::sequencer::{SeqPayload, Sequencer};
use cuttlefish::types::{
    Committee, Contents, EffectsPayload, ExecStatus, ObjectId, TxKind, UnlockMode, UnlockOutcome,
    UnlockRqt, UnlockVote, ValidatorId,
};
use cuttlefish::validator::{
    CertOutcome, DeferReason, LockEntry, Output, UnlockStatus, Validator, ValidatorConfig,
    ValidatorError,
};

fn coin_version(c: &cuttlefish::harness::Cluster, v: u32) -> u64 {
    c.validator(cuttlefish::types::ValidatorId(v))
        .object(&ObjectId::from_name("coin"))
        .unwrap()
        .version()
        .0
}

#[test]
fn uncontended_transfer_finalizes() {
    let mut c = four();
    let tx = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let ec = c.execute(&tx).expect("effect certificate");
    assert!(ec.verify(c.committee()));
    for v in 0..4 {
        let coin = c
            .validator(cuttlefish::types::ValidatorId(v))
            .object(&ObjectId::from_name("coin"))
            .unwrap();
        assert_eq!(coin.version().0, 1);
        assert_eq!(coin.owner, Some(addr("bob")));
    }
}

#[test]
fn process_tx_is_idempotent_and_rejects_conflicts() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let t2 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 1);
    let v0 = cuttlefish::types::ValidatorId(0);
    let a = c.validator_mut(v0).process_tx(&t1).unwrap();
    let b = c.validator_mut(v0).process_tx(&t1).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        c.validator_mut(v0).process_tx(&t2),
        Err(ValidatorError::ConflictingLock { .. })
    ));
}

#[test]
fn bad_evidence_is_rejected_without_state_change() {
    let mut c = four();
    let tx = transfer(key("coin", 0), key("gas1", 0), "mallory", "mallory", 0);
    let v0 = cuttlefish::types::ValidatorId(0);
    assert!(matches!(
        c.validator_mut(v0).process_tx(&tx),
        Err(ValidatorError::BadEvidence(_))
    ));
    assert!(c.validator(v0).lock(&key("coin", 0)).is_none());
}

#[test]
fn split_votes_then_noop_unlock() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let t2 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 1);
    assert!(c.certify(&t1, &ids(&[0, 1])).is_none());
    assert!(c.certify(&t2, &ids(&[2, 3])).is_none());

    let rqt = unlock(
        vec![key("coin", 0), key("gas1", 0)],
        key("gas2", 0),
        "alice",
        UnlockMode::Single,
    );
    let votes: Vec<UnlockVote> = c
        .unlock_votes(&rqt, &ids(&[0, 1, 2, 3]))
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    assert!(votes.iter().all(|v| v.certs.is_empty()));
    let ucert = assemble_unlock_cert(&rqt, &votes[..3], c.committee()).unwrap();
    assert!(ucert.is_no_commit());
    c.submit(SeqPayload::UnlockCert(ucert)).unwrap();
    c.pump();
    let ec = c.effect_cert(&rqt.digest()).expect("unlock finalized");
    let EffectsPayload::Unlock(u) = &ec.payload else {
        panic!()
    };
    assert_eq!(u.outcome, UnlockOutcome::NoOp);
    for v in 0..4 {
        let coin = c
            .validator(cuttlefish::types::ValidatorId(v))
            .object(&ObjectId::from_name("coin"))
            .unwrap();
        assert_eq!(coin.version().0, 1);
        assert_eq!(coin.contents, Contents::Balance(100));
        assert_eq!(coin.owner, Some(addr("alice")));
        let gas2 = c
            .validator(cuttlefish::types::ValidatorId(v))
            .object(&ObjectId::from_name("gas2"))
            .unwrap();
        assert_eq!(gas2.version().0, 1);
        assert_eq!(gas2.contents, Contents::Balance(9));
    }
    // Old transactions can no longer be certified.
    let v0 = cuttlefish::types::ValidatorId(0);
    let err = c.validator_mut(v0).process_tx(&t1).unwrap_err();
    assert!(
        matches!(
            err,
            ValidatorError::StaleVersion(_) | ValidatorError::AlreadyConfirmed(_)
        ),
        "{err:?}"
    );
}

#[test]
fn unlock_carries_partially_executed_certificate() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let cert = c.certify(&t1, &ids(&[0, 1, 2])).unwrap();
    // Only validator 0 executes before the owner starts an unlock; its
    // checkpoint is still in flight.
    c.hold();
    let r = c.send_cert(&cert, &ids(&[0]));
    assert!(matches!(r[0].1, Ok(CertOutcome::Executed(_))));
    assert_eq!(coin_version(&c, 0), 1);

    let rqt = unlock(
        vec![key("coin", 0), key("gas1", 0)],
        key("gas2", 0),
        "alice",
        UnlockMode::Single,
    );
    let votes: Vec<UnlockVote> = c
        .unlock_votes(&rqt, &ids(&[0, 1, 2]))
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    assert_eq!(votes[0].certs.len(), 1);
    let ucert = assemble_unlock_cert(&rqt, &votes, c.committee()).unwrap();
    assert_eq!(ucert.certs.len(), 1);
    // Late certificate delivery is deferred on unlocked keys.
    let r = c.send_cert(&cert, &ids(&[1]));
    assert!(matches!(
        r[0].1,
        Ok(CertOutcome::Deferred(DeferReason::Unlocked))
    ));

    c.submit(SeqPayload::UnlockCert(ucert)).unwrap();
    c.release();
    c.pump();
    let ec = c.effect_cert(&rqt.digest()).unwrap();
    let EffectsPayload::Unlock(u) = &ec.payload else {
        panic!()
    };
    assert_eq!(u.outcome, UnlockOutcome::Carried);
    assert_eq!(u.executions.len(), 1);
    assert!(c.effect_cert(&t1.digest()).is_some());
    for v in 0..4 {
        let coin = c
            .validator(cuttlefish::types::ValidatorId(v))
            .object(&ObjectId::from_name("coin"))
            .unwrap();
        assert_eq!(coin.version().0, 1);
        assert_eq!(coin.owner, Some(addr("bob")));
    }
}

#[test]
fn noop_unlock_undoes_one_fast_path_execution() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let cert = c.certify(&t1, &ids(&[0, 1, 2])).unwrap();
    // Validator 3 executes; the unlock quorum never heard of the certificate.
    let rqt = unlock(
        vec![key("coin", 0), key("gas1", 0)],
        key("gas2", 0),
        "alice",
        UnlockMode::Single,
    );
    let votes: Vec<UnlockVote> = c
        .unlock_votes(&rqt, &ids(&[0, 1, 2]))
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    c.hold();
    c.send_cert(&cert, &ids(&[3]));
    assert_eq!(coin_version(&c, 3), 1);
    let ucert = assemble_unlock_cert(&rqt, &votes, c.committee()).unwrap();
    assert!(ucert.is_no_commit());
    c.submit(SeqPayload::UnlockCert(ucert)).unwrap();
    c.release();
    c.pump();
    let ec = c.effect_cert(&rqt.digest()).unwrap();
    let EffectsPayload::Unlock(u) = &ec.payload else {
        panic!()
    };
    assert_eq!(u.outcome, UnlockOutcome::NoOp);
    for v in 0..4 {
        let val = c.validator(cuttlefish::types::ValidatorId(v));
        let coin = val.object(&ObjectId::from_name("coin")).unwrap();
        assert_eq!(coin.version().0, 1, "validator {v}");
        assert_eq!(coin.owner, Some(addr("alice")), "validator {v}");
        assert!(!val.tables().executed.contains_key(&t1.digest()));
    }
    // The checkpoint of the losing certificate is skipped everywhere.
    assert_eq!(c.superseded_by(&t1.digest()).len(), 4);
}

#[test]
fn checkpoint_first_supersedes_unlock_and_spends_gas_once() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let cert = c.certify(&t1, &ids(&[0, 1, 2])).unwrap();
    let rqt = unlock(
        vec![key("coin", 0), key("gas1", 0)],
        key("gas2", 0),
        "alice",
        UnlockMode::Single,
    );
    let votes: Vec<UnlockVote> = c
        .unlock_votes(&rqt, &ids(&[1, 2, 3]))
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    let ucert = assemble_unlock_cert(&rqt, &votes, c.committee()).unwrap();
    c.submit(SeqPayload::CheckpointCert(cert)).unwrap();
    c.submit(SeqPayload::UnlockCert(ucert.clone())).unwrap();
    c.pump();
    let ec = c.effect_cert(&rqt.digest()).unwrap();
    let EffectsPayload::Unlock(u) = &ec.payload else {
        panic!()
    };
    assert_eq!(u.outcome, UnlockOutcome::Superseded);
    assert!(u.executions.is_empty());
    assert!(c.effect_cert(&t1.digest()).is_some());
    for v in 0..4 {
        let val = c.validator(cuttlefish::types::ValidatorId(v));
        assert_eq!(
            val.object(&ObjectId::from_name("gas2"))
                .unwrap()
                .version()
                .0,
            1
        );
        assert_eq!(
            val.object(&ObjectId::from_name("coin")).unwrap().owner,
            Some(addr("bob"))
        );
    }
    // Resubmitting is deduplicated by the sequencer.
    assert!(matches!(
        c.submit(SeqPayload::UnlockCert(ucert)),
        Ok(cuttlefish::sequencer::Submitted::Duplicate(_))
    ));
}

#[test]
fn multi_unlock_runs_replacement_when_no_certificate() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let t2 = transfer(key("coin", 0), key("gas1", 0), "alice", "carol", 1);
    c.certify(&t1, &ids(&[0, 1]));
    c.certify(&t2, &ids(&[2, 3]));
    let replacement = transfer(key("coin", 0), key("gas1", 0), "alice", "dave", 2);
    let rqt = unlock(
        vec![key("coin", 0), key("gas1", 0)],
        key("gas2", 0),
        "alice",
        UnlockMode::Multi,
    )
    .with_replacement(replacement.clone());
    let rqt = {
        let k = kp("alice");
        let mut r = rqt;
        r.evidence.signatures.clear();
        r.sign(&k);
        r
    };
    let votes: Vec<UnlockVote> = c
        .unlock_votes(&rqt, &ids(&[0, 1, 2]))
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    let ucert = assemble_unlock_cert(&rqt, &votes, c.committee()).unwrap();
    c.submit(SeqPayload::UnlockCert(ucert)).unwrap();
    c.pump();
    let ec = c.effect_cert(&rqt.digest()).unwrap();
    let EffectsPayload::Unlock(u) = &ec.payload else {
        panic!()
    };
    assert_eq!(u.outcome, UnlockOutcome::Replacement);
    assert_eq!(u.executions[0].tx, replacement.digest());
    for v in 0..4 {
        let coin = c
            .validator(cuttlefish::types::ValidatorId(v))
            .object(&ObjectId::from_name("coin"))
            .unwrap();
        assert_eq!(coin.owner, Some(addr("dave")));
        assert_eq!(coin.version().0, 1);
    }
}

#[test]
fn unlock_after_confirm_is_refused_and_gas_is_checked() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    c.execute(&t1).unwrap();
    let v0 = cuttlefish::types::ValidatorId(0);
    // Not confirmed yet until the checkpoint is applied; pump did that.
    let rqt = unlock(
        vec![key("coin", 0)],
        key("gas2", 0),
        "alice",
        UnlockMode::Single,
    );
    assert!(matches!(
        c.validator_mut(v0).process_unlock_rqt(&rqt),
        Err(ValidatorError::AlreadyConfirmed(_))
    ));
    let rqt = unlock(
        vec![key("bobcoin", 0)],
        key("gas2", 0),
        "bob",
        UnlockMode::Single,
    );
    assert!(matches!(
        c.validator_mut(v0).process_unlock_rqt(&rqt),
        Err(ValidatorError::BadGas(_))
    ));
    assert_eq!(
        c.validator(v0).tables().unlock_status(&key("bobcoin", 0)),
        None
    );
}

#[test]
fn epoch_change_checkpoints_then_clears_locks() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let cert = c.certify(&t1, &ids(&[0, 1, 2, 3])).unwrap();
    c.send_cert(&cert, &ids(&[0, 1, 2, 3]));
    let t2 = transfer(key("bobcoin", 0), key("bobgas", 0), "bob", "alice", 0);
    c.vote(&t2, &ids(&[0, 1]));
    c.begin_epoch_change(&ids(&[0, 1, 2, 3]));
    c.pump();
    let log = c.sequencer().log();
    let cp = log
        .iter()
        .position(
            |i| matches!(&i.payload, SeqPayload::CheckpointCert(x) if x.digest() == t1.digest()),
        )
        .unwrap();
    let eoe = log
        .iter()
        .filter(|i| matches!(i.payload, SeqPayload::EndOfEpoch { .. }))
        .map(|i| i.seq)
        .nth(2)
        .unwrap();
    assert!((cp as u64) < eoe);
    for v in 0..4 {
        let val = c.validator(cuttlefish::types::ValidatorId(v));
        assert_eq!(val.epoch(), 1);
        assert!(val.tables().lock_db.is_empty());
    }
    let v0 = cuttlefish::types::ValidatorId(0);
    assert!(matches!(
        c.validator_mut(v0).process_tx(&t2),
        Err(ValidatorError::WrongEpoch { .. })
    ));
    let mut t3 = t2.clone();
    t3.epoch = 1;
    t3.evidence.signatures.clear();
    t3.sign(&kp("bob"));
    assert!(c.execute(&t3).is_some());
}

#[test]
fn insufficient_gas_still_bumps_versions() {
    let mut c = cuttlefish::harness::Cluster::new(
        params(4, 1),
        &[owned("coin", "alice", 5), owned("empty", "alice", 0)],
    );
    let k = kp("alice");
    let tx = cuttlefish::types::Transaction::new(
        vec![key("coin", 0)],
        TxKind::Debit { amount: 1 },
        key("empty", 0),
        0,
    )
    .authorize_simple([
        (ObjectId::from_name("coin"), &k),
        (ObjectId::from_name("empty"), &k),
    ]);
    let ec = c.execute(&tx).unwrap();
    let EffectsPayload::Tx(e) = &ec.payload else {
        panic!()
    };
    assert_eq!(e.status, ExecStatus::InsufficientGas);
    assert_eq!(coin_version(&c, 0), 1);
}

#[test]
fn lock_entries_upgrade_to_certificates() {
    let mut c = four();
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let cert = c.certify(&t1, &ids(&[0, 1, 2])).unwrap();
    let v3 = cuttlefish::types::ValidatorId(3);
    assert!(c.validator(v3).lock(&key("coin", 0)).is_none());
    let mut c2 = c;
    c2.validator_mut(v3).begin_epoch_change();
    let r = c2.send_cert(&cert, &ids(&[3]));
    assert!(matches!(
        r[0].1,
        Ok(CertOutcome::Deferred(DeferReason::EpochChange))
    ));
    assert!(matches!(
        c2.validator(v3).lock(&key("coin", 0)),
        Some(LockEntry::Certified(_))
    ));
    assert_eq!(
        c2.validator(v3).tables().unlock_status(&key("coin", 0)),
        None::<UnlockStatus>
    );
}

#[test]
fn auto_unlock_waits_for_delta() {
    let mut c = cuttlefish::harness::Cluster::with_delta(
        params(4, 1),
        &[
            owned("coin", "alice", 100),
            owned("gas1", "alice", 10),
            owned("gas2", "alice", 10),
            owned("mgas", "mallory", 10),
        ],
        Some(100),
    );
    c.set_time(10);
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    c.vote(&t1, &ids(&[0, 1]));
    let m = kp("mallory");
    let rqt = UnlockRqt::new(vec![key("coin", 0)], UnlockMode::Single, key("mgas", 0), 0)
        .authorize_simple([(ObjectId::from_name("mgas"), &m)]);
    let v0 = cuttlefish::types::ValidatorId(0);
    assert!(!c.validator(v0).check_auto_unlock(&rqt, 50, Some(100)));
    assert!(c.validator(v0).check_auto_unlock(&rqt, 120, Some(100)));
    c.set_time(50);
    assert!(matches!(
        c.validator_mut(v0).process_unlock_rqt(&rqt),
        Err(ValidatorError::BadEvidence(_))
    ));
    c.set_time(120);
    assert!(c.validator_mut(v0).process_unlock_rqt(&rqt).is_ok());
    // The owner is never delayed.
    let own = unlock(
        vec![key("coin", 0)],
        key("gas2", 0),
        "alice",
        UnlockMode::Single,
    );
    let v1 = cuttlefish::types::ValidatorId(1);
    c.validator_mut(v1).set_time(11);
    assert!(c.validator_mut(v1).process_unlock_rqt(&own).is_ok());
}

#[test]
fn wal_recovery_restores_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let committee = Committee::deterministic(params(4, 1));
    let genesis = [
        owned("coin", "alice", 100),
        owned("gas1", "alice", 10),
        owned("gas2", "alice", 10),
    ];
    let cfg = |id| ValidatorConfig {
        id: ValidatorId(id),
        committee: committee.clone(),
        auto_unlock_delta: None,
    };
    let mut vals: Vec<Validator> = (0..4)
        .map(|i| {
            Validator::with_wal(cfg(i), &genesis, &dir.path().join(format!("v{i}.wal"))).unwrap()
        })
        .collect();
    let mut seq = Sequencer::new(committee.clone());
    let t1 = transfer(key("coin", 0), key("gas1", 0), "alice", "bob", 0);
    let votes: Vec<_> = vals
        .iter_mut()
        .take(3)
        .map(|v| v.process_tx(&t1).unwrap())
        .collect();
    let cert = cuttlefish::types::Certificate::from_votes(t1.clone(), &votes);
    for v in vals.iter_mut() {
        v.process_cert(&cert).unwrap();
        for out in v.take_outputs() {
            if let Output::Submit(p) = out {
                let _ = seq.submit(p);
            }
        }
    }
    for v in vals.iter_mut() {
        for item in seq.deliver(v.next_sequence()).to_vec() {
            v.process_sequenced(&item);
        }
    }
    let before: Vec<_> = vals.iter().map(Validator::state_digest).collect();
    drop(vals);
    for i in 0..4 {
        let v = Validator::recover(cfg(i), &dir.path().join(format!("v{i}.wal"))).unwrap();
        assert_eq!(v.state_digest(), before[i as usize]);
        assert_eq!(
            v.object(&ObjectId::from_name("coin")).unwrap().owner,
            Some(addr("bob"))
        );
    }
}
