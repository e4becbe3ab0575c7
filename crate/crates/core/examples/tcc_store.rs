//! Two replicas of the transactional store: out-of-order delivery is held
//! back until its causal dependencies arrive, and snapshots stay stable.

use causalkv::crdt::{Op, ReplicaId};
use causalkv::store::{Ablations, ObjectKey, ObjectKind, Replica, SessionToken};

fn main() {
    let mut r0 = Replica::new(ReplicaId(0), 2, Ablations::default());
    let mut r1 = Replica::new(ReplicaId(1), 2, Ablations::default());
    let pw = ObjectKey::new("acct", "password", ObjectKind::Register);
    let acl = ObjectKey::new("acct", "acl", ObjectKind::Set);
    let mut session = SessionToken::default();

    let mut t = r0.try_begin(&session).unwrap();
    r0.update(&mut t, &pw, &Op::Assign("hunter2".into()).into())
        .unwrap();
    let first = r0.commit(&mut t).unwrap();
    session.observe(&first.clock);

    let mut t = r0.try_begin(&session).unwrap();
    r0.update(&mut t, &acl, &Op::SetAdd("bob".into()).into())
        .unwrap();
    let second = r0.commit(&mut t).unwrap();

    for rec in second.records {
        let id = rec.id;
        println!("r1 receives {id} early: {} visible", r1.receive(rec));
    }
    println!(
        "r1 acl before its cause arrives: {}",
        r1.value(&acl).unwrap().to_json()
    );
    for rec in first.records {
        let id = rec.id;
        println!("r1 receives {id}: {} visible", r1.receive(rec));
    }
    println!("r1 acl now: {}", r1.value(&acl).unwrap().to_json());

    let mut reader = r1.try_begin(&SessionToken::default()).unwrap();
    let mut t = r1.try_begin(&SessionToken::default()).unwrap();
    r1.update(&mut t, &pw, &Op::Assign("correct horse".into()).into())
        .unwrap();
    r1.commit(&mut t).unwrap();
    println!(
        "old snapshot still reads {}, the replica reads {}",
        r1.read(&mut reader, &pw).unwrap().to_json(),
        r1.value(&pw).unwrap().to_json()
    );
}
