//! Seeded random workloads for convergence testing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{BoundedDecl, ClientAction, ClientStep, KeyUpdate, Scenario, Step};
use crate::crdt::{Op, ReplicaId};
use crate::store::{ObjectKey, ObjectKind, Update};

/// Shape of generated workloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadShape {
    pub replicas: (usize, usize),
    pub ops: (usize, usize),
    pub episodes: (usize, usize),
}

impl Default for WorkloadShape {
    fn default() -> Self {
        Self {
            replicas: (3, 5),
            ops: (50, 200),
            episodes: (0, 3),
        }
    }
}

pub fn bounded_key() -> ObjectKey {
    ObjectKey::new("stock", "units", ObjectKind::Bounded)
}

pub fn protected_key() -> ObjectKey {
    ObjectKey::new("ledger", "guarded", ObjectKind::Counter)
}

const REGISTERS: [&str; 3] = ["r0", "r1", "r2"];
const COUNTERS: [&str; 3] = ["c0", "c1", "c2"];
const SETS: [&str; 2] = ["s0", "s1"];
const MAPS: [&str; 2] = ["m0", "m1"];
const ELEMENTS: [&str; 4] = ["a", "b", "c", "d"];

/// Field names carry their type: `reg*` registers, `cnt*` counters, `set*`
/// sets and `sub*` nested maps.
fn map_op(rng: &mut ChaCha8Rng, depth: usize) -> Op {
    let kind = rng.gen_range(0..if depth == 0 { 5 } else { 4 });
    let suffix = rng.gen_range(0..2);
    let (field, op) = match kind {
        0 => (
            format!("reg{suffix}"),
            Op::Assign(format!("v{}", rng.gen_range(0..5))),
        ),
        1 => (format!("cnt{suffix}"), Op::Add(rng.gen_range(-3..=3))),
        2 => (format!("set{suffix}"), set_op(rng)),
        3 => {
            return Op::MapRemove(format!(
                "{}{suffix}",
                ["reg", "cnt", "set"][rng.gen_range(0..3)]
            ))
        }
        _ => (format!("sub{suffix}"), map_op(rng, depth + 1)),
    };
    Op::MapUpdate {
        field,
        op: Box::new(op),
    }
}

fn set_op(rng: &mut ChaCha8Rng) -> Op {
    let e = ELEMENTS.choose(rng).unwrap().to_string();
    if rng.gen_bool(0.6) {
        Op::SetAdd(e)
    } else {
        Op::SetRemove(e)
    }
}

fn random_update(rng: &mut ChaCha8Rng) -> KeyUpdate {
    match rng.gen_range(0..4) {
        0 => KeyUpdate {
            key: ObjectKey::new("reg", *REGISTERS.choose(rng).unwrap(), ObjectKind::Register),
            op: Update::Crdt(Op::Assign(format!("v{}", rng.gen_range(0..10)))),
        },
        1 => KeyUpdate {
            key: ObjectKey::new("cnt", *COUNTERS.choose(rng).unwrap(), ObjectKind::Counter),
            op: Update::Crdt(Op::Add(rng.gen_range(-5..=5))),
        },
        2 => KeyUpdate {
            key: ObjectKey::new("set", *SETS.choose(rng).unwrap(), ObjectKind::Set),
            op: Update::Crdt(set_op(rng)),
        },
        _ => KeyUpdate {
            key: ObjectKey::new("map", *MAPS.choose(rng).unwrap(), ObjectKind::Map),
            op: Update::Crdt(map_op(rng, 0)),
        },
    }
}

fn random_action(rng: &mut ChaCha8Rng, replicas: usize, from: usize) -> (String, ClientAction) {
    let roll = rng.gen_range(0..100);
    if roll < 75 {
        let updates = (0..rng.gen_range(1..=3))
            .map(|_| random_update(rng))
            .collect();
        let reads = (0..rng.gen_range(0..=2))
            .map(|_| random_update(rng).key)
            .collect();
        let action = ClientAction::Txn {
            reads,
            updates,
            protected: Vec::new(),
        };
        (format!("c{from}"), action)
    } else if roll < 85 {
        let action = ClientAction::Txn {
            reads: vec![protected_key()],
            updates: vec![KeyUpdate {
                key: protected_key(),
                op: Update::Crdt(Op::Add(rng.gen_range(1..=3))),
            }],
            protected: vec![protected_key()],
        };
        (format!("p{from}"), action)
    } else {
        let key = bounded_key();
        let n = rng.gen_range(1..=3);
        let action = match rng.gen_range(0..3) {
            0 => ClientAction::BcIncrement { key, n },
            1 => ClientAction::BcDecrement { key, n },
            _ => {
                let to = (from + rng.gen_range(1..replicas)) % replicas;
                ClientAction::BcTransfer {
                    key,
                    to: ReplicaId(to as u32),
                    n,
                }
            }
        };
        (format!("b{from}"), action)
    }
}

fn random_split(rng: &mut ChaCha8Rng, replicas: usize) -> Vec<Vec<ReplicaId>> {
    let mut ids: Vec<ReplicaId> = (0..replicas as u32).map(ReplicaId).collect();
    ids.shuffle(rng);
    let cut = rng.gen_range(1..replicas);
    let mut groups = vec![ids[..cut].to_vec(), ids[cut..].to_vec()];
    for g in &mut groups {
        g.sort();
    }
    groups
}

/// Generates a workload for `seed`. Each client stays on one replica, so
/// sessions never block, and the run ends healed.
pub fn random_scenario(seed: u64, shape: &WorkloadShape) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replicas = rng.gen_range(shape.replicas.0..=shape.replicas.1);
    let ops = rng.gen_range(shape.ops.0..=shape.ops.1);
    let episodes = rng.gen_range(shape.episodes.0..=shape.episodes.1);

    let mut cuts: Vec<usize> = (0..episodes * 2).map(|_| rng.gen_range(0..=ops)).collect();
    cuts.sort();

    let mut steps = Vec::new();
    let mut partitioned = false;
    let mut next_cut = 0;
    for i in 0..ops {
        while next_cut < cuts.len() && cuts[next_cut] == i {
            steps.push(if partitioned {
                Step::Heal
            } else {
                Step::Partition(random_split(&mut rng, replicas))
            });
            partitioned = !partitioned;
            next_cut += 1;
        }
        let from = rng.gen_range(0..replicas);
        let (client, action) = random_action(&mut rng, replicas, from);
        steps.push(Step::Op(ClientStep {
            client,
            replica: ReplicaId(from as u32),
            action,
        }));
        let pause = rng.gen_range(0..=3);
        if pause > 0 {
            steps.push(Step::Advance(pause));
        }
    }
    if partitioned {
        steps.push(Step::Heal);
    }

    let per = 4;
    Scenario {
        name: format!("random-{seed}"),
        replica_count: replicas,
        seed,
        delay_range: [1, 8],
        duplication_probability: 0.05,
        fifo: false,
        process_mode: Default::default(),
        ablations: Default::default(),
        bounded: vec![BoundedDecl {
            key: bounded_key(),
            bound: 0,
            initial: (replicas * per) as i64,
            shares: vec![per as u64; replicas],
        }],
        steps,
    }
}
