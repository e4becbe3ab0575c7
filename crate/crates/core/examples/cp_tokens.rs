//! Token coordination for protected objects: homes, arrival-order grants,
//! fences and deadlock-free acquisition order.

use causalkv::clock::VectorClock;
use causalkv::cpsync::{canonical_order, token_home, TokenTable};
use causalkv::crdt::ReplicaId;
use causalkv::fmke::prescription_key;

fn main() {
    let keys = [
        prescription_key("rx-9"),
        prescription_key("rx-2"),
        prescription_key("rx-9"),
    ];
    for k in &keys[..2] {
        println!("{k} lives at {}", token_home(k, 3));
    }
    println!(
        "acquire in order: {:?}",
        canonical_order(&keys)
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
    );

    let rx = &keys[0];
    let mut table = TokenTable::new();
    let first = table.request(rx, (ReplicaId(1), 0)).unwrap();
    println!("r1 granted, fence {}", first.fence);
    assert!(table.request(rx, (ReplicaId(2), 1)).is_none());
    println!("r2 queued behind it ({} waiting)", table.waiting(rx));

    let commit = VectorClock::new().with(ReplicaId(1), 4);
    let (next, token) = table
        .release(rx, (ReplicaId(1), 0), &commit)
        .unwrap()
        .unwrap();
    println!("r1 released; {} granted with fence {}", next.0, token.fence);
    println!(
        "r1 releasing again: {}",
        table.release(rx, (ReplicaId(1), 0), &commit).unwrap_err()
    );
}
