use serde_json::json;

use super::random::{random_scenario, WorkloadShape};
use super::*;
use crate::crdt::{Op, QueryValue};
use crate::store::{ObjectKind, TxnHandle, Update};

fn r(i: u32) -> ReplicaId {
    ReplicaId(i)
}

fn counter() -> ObjectKey {
    ObjectKey::new("cnt", "x", ObjectKind::Counter)
}

fn add(n: i64) -> Work {
    Work::Action(ClientAction::Txn {
        reads: vec![],
        updates: vec![KeyUpdate {
            key: counter(),
            op: Update::Crdt(Op::Add(n)),
        }],
        protected: vec![],
    })
}

fn value_at(sim: &Simulation, i: u32) -> i64 {
    sim.replica(r(i))
        .value(&counter())
        .ok()
        .and_then(|v| v.as_counter())
        .unwrap_or(0)
}

#[test]
fn identical_seeds_give_identical_traces() {
    let s = random_scenario(11, &WorkloadShape::default());
    let a = run(&s);
    let b = run(&s);
    assert_eq!(a.trace.render(), b.trace.render());
    let c = run_with(&s, Some(12), Ablations::default(), None);
    assert_ne!(a.trace.render(), c.trace.render());
}

#[test]
fn duplicated_messages_apply_once() {
    let mut cfg = SimConfig::new(3, 5);
    cfg.duplication = 1.0;
    let mut sim = Simulation::new(cfg);
    for i in 0..3 {
        sim.submit(&format!("c{i}"), r(i), add(i as i64 + 1))
            .unwrap();
    }
    sim.drain();
    assert!(sim.quiescent());
    assert_eq!(sim.check_convergence(), Ok(true));
    assert_eq!(value_at(&sim, 2), 6);
    assert!(sim.violations().is_empty());
}

#[test]
fn partitions_park_traffic_until_heal() {
    let mut sim = Simulation::new(SimConfig::new(4, 1));
    assert!(sim.quiescent());
    sim.partition(&[vec![r(0), r(1)], vec![r(2), r(3)]])
        .unwrap();
    sim.submit("c", r(0), add(1)).unwrap();
    sim.advance(50);
    assert_eq!(value_at(&sim, 1), 1);
    assert_eq!((value_at(&sim, 2), value_at(&sim, 3)), (0, 0));
    assert!(!sim.quiescent());
    assert_eq!(sim.check_convergence(), Err(SimError::NotQuiescent));
    sim.heal();
    sim.heal();
    sim.drain();
    assert_eq!(sim.check_convergence(), Ok(true));
    assert_eq!(value_at(&sim, 3), 1);
}

#[test]
fn malformed_partitions_are_refused() {
    let mut sim = Simulation::new(SimConfig::new(3, 1));
    assert!(sim
        .partition(&[vec![r(0)], vec![r(0), r(1), r(2)]])
        .is_err());
    assert!(sim.partition(&[vec![r(0)], vec![r(1)]]).is_err());
    assert!(sim.partition(&[vec![r(0)], vec![r(1), r(7)]]).is_err());
    assert!(sim.submit("c", r(9), add(1)).is_err());
}

fn read_then_increment(seen: std::rc::Rc<std::cell::RefCell<Vec<i64>>>) -> impl TxnBody {
    move |rep: &mut Replica, txn: &mut TxnHandle| {
        let v = rep.read(txn, &counter())?.as_counter().unwrap_or(0);
        seen.borrow_mut().push(v);
        rep.update(txn, &counter(), &Update::Crdt(Op::Add(1)))?;
        Ok(BodyOutput::ok(json!(v)))
    }
}

#[test]
fn protected_sections_are_serial() {
    let seen = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
    let mut sim = Simulation::new(SimConfig::new(3, 9));
    for i in 0..3 {
        for k in 0..2 {
            let body = read_then_increment(seen.clone());
            sim.run_protected(&format!("p{i}-{k}"), r(i), vec![counter()], "guarded", body)
                .unwrap();
        }
    }
    sim.drain();
    let mut got = seen.borrow().clone();
    got.sort();
    assert_eq!(got, vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(value_at(&sim, 0), 6);
    assert!(mutual_exclusion_violations(sim.trace()).is_empty());
    let report = sim.into_report("serial");
    assert!(report.passed());
    assert!(availability_violations(&report).is_empty());
}

#[test]
fn protected_section_waits_out_a_partition() {
    let seen = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
    let mut sim = Simulation::new(SimConfig::new(2, 3));
    let home = crate::cpsync::token_home(&counter(), 2);
    let away = ReplicaId(1 - home.0);
    sim.partition(&[vec![home], vec![away]]).unwrap();
    sim.run_protected(
        "a",
        away,
        vec![counter()],
        "guarded",
        read_then_increment(seen.clone()),
    )
    .unwrap();
    sim.run_protected(
        "h",
        home,
        vec![counter()],
        "guarded",
        read_then_increment(seen.clone()),
    )
    .unwrap();
    sim.advance(100);
    assert_eq!(*seen.borrow(), vec![0]);
    sim.heal();
    sim.drain();
    assert_eq!(
        *seen.borrow(),
        vec![0, 1],
        "the fence makes the second section see the first"
    );
    let outcomes = sim.outcomes();
    let waited: Vec<bool> = outcomes.iter().map(|o| o.blocked).collect();
    assert_eq!(waited, vec![false, true]);
    assert!(sim
        .trace()
        .of(Category::Blocked)
        .any(|e| e.payload["reason"] == "token"));
}

#[test]
fn migrating_client_waits_for_its_session() {
    let mut sim = Simulation::new(SimConfig::new(2, 4));
    sim.partition(&[vec![r(0)], vec![r(1)]]).unwrap();
    sim.submit("c", r(0), add(1)).unwrap();
    let read = Work::Action(ClientAction::Txn {
        reads: vec![counter()],
        updates: vec![],
        protected: vec![],
    });
    sim.submit("c", r(1), read).unwrap();
    sim.advance(30);
    assert_eq!(sim.outcomes().len(), 1);
    let reasons: Vec<String> = sim
        .trace()
        .of(Category::Blocked)
        .map(|e| e.payload["reason"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(reasons, vec!["session_migration"]);
    sim.heal();
    sim.drain();
    let last = sim.outcomes().last().unwrap();
    assert!(last.blocked);
    let seen = &sim.observations().last().unwrap().reads["cnt/x"];
    assert_eq!(seen, &json!(1));
    let report = sim.into_report("migration");
    assert_eq!(availability_violations(&report).len(), 2);
}

fn stock() -> ObjectKey {
    ObjectKey::new("stock", "s", ObjectKind::Bounded)
}

fn bounded_sim(shares: &[u64]) -> Simulation {
    let mut sim = Simulation::new(SimConfig::new(shares.len(), 2));
    let total: u64 = shares.iter().sum();
    let state = BoundedCounterState::new(0, total as i64, shares).unwrap();
    sim.declare_bounded(stock(), state);
    sim
}

fn dec(n: u64) -> Work {
    Work::Action(ClientAction::BcDecrement { key: stock(), n })
}

fn bounded_value(sim: &Simulation, i: u32) -> i64 {
    match sim.replica(r(i)).value(&stock()).unwrap() {
        QueryValue::Counter(v) => v,
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn local_decrement_needs_no_synchronisation() {
    let mut sim = bounded_sim(&[2, 2]);
    sim.partition(&[vec![r(0)], vec![r(1)]]).unwrap();
    sim.submit("b", r(1), dec(2)).unwrap();
    let o = &sim.outcomes()[0];
    assert_eq!(
        (o.result, o.blocked, o.synced),
        (OpResult::Ok, false, false)
    );
    sim.heal();
    sim.drain();
    assert_eq!(bounded_value(&sim, 0), 2);
}

#[test]
fn short_decrement_transfers_rights_first() {
    let mut sim = bounded_sim(&[3, 0]);
    sim.submit("b", r(1), dec(2)).unwrap();
    sim.drain();
    let o = &sim.outcomes()[0];
    assert_eq!((o.result, o.blocked, o.synced), (OpResult::Ok, true, true));
    assert_eq!(bounded_value(&sim, 0), 1);
    assert_eq!(sim.check_convergence(), Ok(true));
    assert!(availability_violations(&sim.into_report("t")).is_empty());
}

#[test]
fn transfer_blocks_across_a_partition_and_denies_when_dry() {
    let mut sim = bounded_sim(&[3, 0]);
    sim.partition(&[vec![r(0)], vec![r(1)]]).unwrap();
    sim.submit("b", r(1), dec(1)).unwrap();
    sim.advance(100);
    assert!(sim.outcomes().is_empty());
    assert!(sim
        .trace()
        .of(Category::Blocked)
        .any(|e| e.payload["reason"] == "sync_transfer"));
    sim.heal();
    sim.drain();
    assert_eq!(sim.outcomes()[0].result, OpResult::Ok);

    sim.submit("b", r(1), dec(5)).unwrap();
    sim.drain();
    assert_eq!(sim.outcomes()[1].result, OpResult::Denied);
    assert_eq!(bounded_value(&sim, 1), 2);
    assert!(sim.violations().is_empty());
}

#[test]
fn random_runs_converge() {
    let shape = WorkloadShape::default();
    for seed in 0..25 {
        let report = run(&random_scenario(seed, &shape));
        assert_eq!(
            report.converged,
            Some(true),
            "seed {seed}: {:?}",
            report.failures
        );
        assert!(
            report.passed(),
            "seed {seed}: {:?} {:?}",
            report.failures,
            report.violations
        );
        assert!(mutual_exclusion_violations(&report.trace).is_empty());
        assert!(availability_violations(&report).is_empty(), "seed {seed}");
    }
}
