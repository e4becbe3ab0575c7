//! Escrow counter with bound 0: local decrements within a replica's share,
//! a refusal past it, and a rights transfer that makes the decrement legal.

use causalkv::bounded::BoundedCounterState;
use causalkv::crdt::ReplicaId;

fn main() {
    let (a, b) = (ReplicaId(0), ReplicaId(1));
    let start = BoundedCounterState::new(0, 6, &[3, 3]).unwrap();
    let (mut at_a, mut at_b) = (start.clone(), start);

    at_a.decrement(a, 2).unwrap();
    at_b.decrement(b, 3).unwrap();
    println!(
        "a holds {}, b holds {}",
        at_a.local_rights(a),
        at_b.local_rights(b)
    );

    match at_b.decrement(b, 1) {
        Ok(()) => unreachable!(),
        Err(e) => println!("b refused: {e}"),
    }

    at_a.transfer(a, b, 1).unwrap();
    at_b.merge_assign(&at_a).unwrap();
    at_b.decrement(b, 1).unwrap();
    at_a.merge_assign(&at_b).unwrap();
    assert_eq!(at_a, at_b);
    println!(
        "after transfer and merge: value {}, a holds {}, b holds {}",
        at_a.value(),
        at_a.local_rights(a),
        at_a.local_rights(b)
    );
}
