//! Concurrent updates on two replicas of each CRDT, exchanged in both
//! directions.

use causalkv::crdt::{apply, new_state, CrdtState, Dot, DotSource, Op, ReplicaId, TypeTag};

struct Clock(ReplicaId, u64);

impl DotSource for Clock {
    fn next_dot(&mut self) -> Dot {
        self.1 += 1;
        Dot::new(self.0, self.1)
    }
}

fn concurrently(tag: TypeTag, setup: &[Op], left: Op, right: Op) -> (CrdtState, CrdtState) {
    let (mut a, mut b) = (Clock(ReplicaId(0), 0), Clock(ReplicaId(1), 0));
    let mut base = new_state(tag);
    for op in setup {
        base = apply(&base, &op.prepare(&base, ReplicaId(0), &mut a).unwrap()).unwrap();
    }
    b.1 = a.1;
    let e1 = left.prepare(&base, ReplicaId(0), &mut a).unwrap();
    let e2 = right.prepare(&base, ReplicaId(1), &mut b).unwrap();
    let at_a = apply(&apply(&base, &e1).unwrap(), &e2).unwrap();
    let at_b = apply(&apply(&base, &e2).unwrap(), &e1).unwrap();
    (at_a, at_b)
}

fn show(what: &str, (a, b): (CrdtState, CrdtState)) {
    assert_eq!(a, b);
    println!("{what:<32} {}", a.value().to_json());
}

fn main() {
    show(
        "register: x || y",
        concurrently(
            TypeTag::Register,
            &[],
            Op::Assign("x".into()),
            Op::Assign("y".into()),
        ),
    );
    show(
        "counter: +5 || -2",
        concurrently(TypeTag::Counter, &[], Op::Add(5), Op::Add(-2)),
    );
    show(
        "set: re-add || remove",
        concurrently(
            TypeTag::Set,
            &[Op::SetAdd("milk".into())],
            Op::SetAdd("milk".into()),
            Op::SetRemove("milk".into()),
        ),
    );
    let update = |f: &str, op| Op::MapUpdate {
        field: f.into(),
        op: Box::new(op),
    };
    show(
        "map: update field || remove it",
        concurrently(
            TypeTag::Map,
            &[update("qty", Op::Add(3))],
            update("qty", Op::Add(1)),
            Op::MapRemove("qty".into()),
        ),
    );
}
