// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use cuttlefish::client::assemble_unlock_cert;
use cuttlefish::commutative::{bounded_counter, initial_budget};
use cuttlefish::harness::Cluster;
use cuttlefish::sequencer::SeqPayload;
use cuttlefish::types::{
    Contents, EffectsPayload, ExecStatus, ObjectId, ObjectKey, Transaction, TxKind, UnlockMode,
    UnlockOutcome, UnlockRqt, UnlockVote, ValidatorId,
};
use cuttlefish::validator::ValidatorError;

fn ctr(version: u64) -> ObjectKey {
    ObjectKey::new(ObjectId::from_name("ctr"), version)
}

fn cluster() -> Cluster {
    let mut genesis = vec![bounded_counter(ObjectId::from_name("ctr"), 100)];
    for i in 0..12 {
        genesis.push(owned(&format!("g{i}"), "alice", 10));
    }
    Cluster::new(params(4, 1), &genesis)
}

fn op(kind: TxKind, gas: u32, version: u64, counter: u64) -> Transaction {
    let k = kp("alice");
    let gas = key(&format!("g{gas}"), version);
    Transaction::new(Vec::new(), kind, gas, 0)
        .with_commutative(vec![ctr(counter)])
        .authorize_simple([(gas.id, &k)])
}

fn budget(c: &Cluster, v: u32, counter: u64) -> u64 {
    c.validator(ValidatorId(v)).tables().budgets[&ctr(counter)]
}

fn counter_contents(c: &Cluster, v: u32) -> Contents {
    c.validator(ValidatorId(v))
        .object(&ObjectId::from_name("ctr"))
        .unwrap()
        .contents
        .clone()
}

#[test]
fn debit_reserves_budget_and_rejects_overdraft() {
    let mut c = cluster();
    assert_eq!(budget(&c, 0, 0), initial_budget(100, params(4, 1)));
    let d = op(TxKind::Debit { amount: 10 }, 0, 0, 0);
    c.execute(&d).unwrap();
    for v in 0..4 {
        assert_eq!(budget(&c, v, 0), 56);
    }
    let big = op(TxKind::Debit { amount: 57 }, 1, 0, 0);
    let r = c.vote(&big, &ids(&[0]));
    assert!(matches!(
        r[0].1,
        Err(ValidatorError::BudgetExhausted {
            budget: 56,
            amount: 57,
            ..
        })
    ));
    assert_eq!(budget(&c, 0, 0), 56);
}

#[test]
fn concurrent_debits_against_budget_reject_exactly_one() {
    let mut c = cluster();
    let a = op(TxKind::Debit { amount: 40 }, 0, 0, 0);
    let b = op(TxKind::Debit { amount: 40 }, 1, 0, 0);
    let v0 = ValidatorId(0);
    let ra = c.validator_mut(v0).process_tx(&a);
    let rb = c.validator_mut(v0).process_tx(&b);
    assert_eq!(ra.is_ok() as u8 + rb.is_ok() as u8, 1);
}

#[test]
fn credits_add_half_and_counter_version_is_stable() {
    let mut c = cluster();
    c.execute(&op(TxKind::Credit { amount: 20 }, 0, 0, 0))
        .unwrap();
    for v in 0..4 {
        assert_eq!(budget(&c, v, 0), 76);
        assert_eq!(
            c.validator(ValidatorId(v))
                .object(&ObjectId::from_name("ctr"))
                .unwrap()
                .version()
                .0,
            0
        );
    }
    assert_eq!(
        counter_contents(&c, 0),
        Contents::Counter {
            max_credit: 100,
            credited: 20,
            debited: 0
        }
    );
}

#[test]
fn missing_counter_is_reported() {
    let mut c = cluster();
    let tx = op(TxKind::Debit { amount: 1 }, 0, 0, 3);
    let r = c.vote(&tx, &ids(&[0]));
    assert!(matches!(
        r[0].1,
        Err(ValidatorError::MissingObject(_) | ValidatorError::StaleVersion(_))
    ));
}

fn consolidate(c: &mut Cluster, counter: u64, gas: u32) -> (u64, UnlockOutcome) {
    let k = kp("alice");
    let g = key(&format!("g{gas}"), 0);
    let rqt = UnlockRqt::new(vec![ctr(counter)], UnlockMode::Consolidate, g, 0)
        .authorize_simple([(g.id, &k)]);
    let votes: Vec<UnlockVote> = c
        .unlock_votes(&rqt, &ids(&[0, 1, 2]))
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    let ucert = assemble_unlock_cert(&rqt, &votes, c.committee()).unwrap();
    c.submit(SeqPayload::UnlockCert(ucert)).unwrap();
    c.pump();
    let ec = c
        .effect_cert(&rqt.digest())
        .expect("consolidation finalized");
    let EffectsPayload::Unlock(u) = &ec.payload else {
        panic!()
    };
    let Contents::Counter { max_credit, .. } = counter_contents(c, 0) else {
        panic!()
    };
    (max_credit, u.outcome)
}

#[test]
fn consolidation_moves_to_outstanding_value() {
    let mut c = cluster();
    c.execute(&op(TxKind::Debit { amount: 25 }, 0, 0, 0))
        .unwrap();
    c.execute(&op(TxKind::Debit { amount: 15 }, 1, 0, 0))
        .unwrap();
    let (max, outcome) = consolidate(&mut c, 0, 5);
    assert_eq!(outcome, UnlockOutcome::Consolidated);
    assert_eq!(max, 60);
    for v in 0..4 {
        let val = c.validator(ValidatorId(v));
        assert_eq!(
            val.object(&ObjectId::from_name("ctr")).unwrap().version().0,
            1
        );
        assert_eq!(
            val.tables().budgets[&ctr(1)],
            initial_budget(60, params(4, 1))
        );
    }
    // Old-version debits are refused.
    let stale = op(TxKind::Debit { amount: 1 }, 2, 0, 0);
    assert!(c.vote(&stale, &ids(&[0]))[0].1.is_err());
}

#[test]
fn consolidation_carries_unfinalized_debits() {
    let mut c = cluster();
    // A certified debit only validator 3 executed; its checkpoint is in flight.
    let d = op(TxKind::Debit { amount: 30 }, 0, 0, 0);
    let cert = c.certify(&d, &ids(&[0, 1, 3])).unwrap();
    c.hold();
    c.send_cert(&cert, &ids(&[3]));
    let k = kp("alice");
    let g = key("g5", 0);
    let rqt =
        UnlockRqt::new(vec![ctr(0)], UnlockMode::Consolidate, g, 0).authorize_simple([(g.id, &k)]);
    let votes: Vec<UnlockVote> = c
        .unlock_votes(&rqt, &ids(&[1, 2, 3]))
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    let ucert = assemble_unlock_cert(&rqt, &votes, c.committee()).unwrap();
    assert_eq!(ucert.certs.len(), 1);
    c.submit(SeqPayload::UnlockCert(ucert)).unwrap();
    c.release();
    c.pump();
    let Contents::Counter { max_credit, .. } = counter_contents(&c, 0) else {
        panic!()
    };
    assert_eq!(max_credit, 70);
    assert!(c.effect_cert(&d.digest()).is_some());
    for v in 0..4 {
        assert_eq!(counter_contents(&c, v), counter_contents(&c, 0));
    }
}

#[test]
fn exhausted_debit_rides_consolidation_as_replacement() {
    let mut c = cluster();
    c.execute(&op(TxKind::Debit { amount: 60 }, 0, 0, 0))
        .unwrap();
    // Budgets are now 6; a debit of 20 is refused on the fast path.
    let want = op(TxKind::Debit { amount: 20 }, 1, 0, 0);
    assert!(c.vote(&want, &ids(&[0]))[0].1.is_err());
    let k = kp("alice");
    let g = key("g5", 0);
    let replacement = want.clone();
    let rqt = UnlockRqt::new(vec![ctr(0)], UnlockMode::Consolidate, g, 0)
        .with_replacement(replacement.clone())
        .authorize_simple([(g.id, &k), (replacement.gas.id, &k)]);
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
    assert_eq!(u.outcome, UnlockOutcome::Consolidated);
    assert!(u
        .executions
        .iter()
        .any(|e| e.tx == replacement.digest() && e.status == ExecStatus::Success));
    let Contents::Counter { max_credit, .. } = counter_contents(&c, 0) else {
        panic!()
    };
    assert_eq!(max_credit, 20);
}
