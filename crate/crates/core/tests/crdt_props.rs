//! Random causal histories over three replicas: every causal delivery order
//! of the same effects reaches the same state.

use causalkv::crdt::{
    apply, new_state, CrdtEffect, CrdtState, Dot, DotSource, Op, QueryValue, ReplicaId, TypeTag,
};
use proptest::prelude::*;

const REPLICAS: usize = 3;

struct Lamport<'a>(ReplicaId, &'a mut u64);

impl DotSource for Lamport<'_> {
    fn next_dot(&mut self) -> Dot {
        *self.1 += 1;
        Dot::new(self.0, *self.1)
    }
}

#[derive(Debug, Clone)]
enum Action {
    Local(usize, Op),
    /// Deliver everything `from` has seen to `to`.
    Sync(usize, usize),
}

fn element() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("a".to_string()),
        Just("b".to_string()),
        Just("c".to_string())
    ]
}

fn leaf(tag: TypeTag) -> BoxedStrategy<Op> {
    match tag {
        TypeTag::Register => prop_oneof![Just("x"), Just("y"), Just("z")]
            .prop_map(|v| Op::Assign(v.to_string()))
            .boxed(),
        TypeTag::Counter => (-3i64..=3).prop_map(Op::Add).boxed(),
        TypeTag::Set => prop_oneof![
            element().prop_map(Op::SetAdd),
            element().prop_map(Op::SetRemove)
        ]
        .boxed(),
        TypeTag::Map => {
            let field = prop_oneof![
                Just(("reg", TypeTag::Register)),
                Just(("cnt", TypeTag::Counter)),
                Just(("set", TypeTag::Set)),
            ];
            prop_oneof![
                3 => field.prop_flat_map(|(f, t)| {
                    leaf(t).prop_map(move |op| Op::MapUpdate { field: f.to_string(), op: Box::new(op) })
                }),
                1 => prop_oneof![Just("reg"), Just("cnt"), Just("set")].prop_map(|f| Op::MapRemove(f.to_string())),
            ]
            .boxed()
        }
    }
}

fn history() -> impl Strategy<Value = (TypeTag, Vec<Action>)> {
    prop_oneof![
        Just(TypeTag::Register),
        Just(TypeTag::Counter),
        Just(TypeTag::Set),
        Just(TypeTag::Map)
    ]
    .prop_flat_map(|tag| {
        let action = prop_oneof![
            3 => (0..REPLICAS, leaf(tag)).prop_map(|(r, op)| Action::Local(r, op)),
            1 => (0..REPLICAS, 0..REPLICAS).prop_map(|(a, b)| Action::Sync(a, b)),
        ];
        (Just(tag), prop::collection::vec(action, 1..14))
    })
}

/// An effect plus the indices of effects its origin had seen.
struct Logged {
    effect: CrdtEffect,
    deps: Vec<usize>,
}

struct Run {
    log: Vec<Logged>,
    states: Vec<CrdtState>,
}

fn execute(tag: TypeTag, actions: &[Action]) -> Run {
    let mut log: Vec<Logged> = Vec::new();
    let mut states = vec![new_state(tag); REPLICAS];
    let mut seen: Vec<Vec<usize>> = vec![Vec::new(); REPLICAS];
    let mut clocks = [0u64; REPLICAS];
    for action in actions {
        match action {
            Action::Local(r, op) => {
                let mut dots = Lamport(ReplicaId(*r as u32), &mut clocks[*r]);
                let effect = op
                    .prepare(&states[*r], ReplicaId(*r as u32), &mut dots)
                    .unwrap();
                states[*r] = apply(&states[*r], &effect).unwrap();
                log.push(Logged {
                    effect,
                    deps: seen[*r].clone(),
                });
                seen[*r].push(log.len() - 1);
            }
            Action::Sync(from, to) => {
                if from == to {
                    continue;
                }
                let missing: Vec<usize> = seen[*from]
                    .iter()
                    .copied()
                    .filter(|e| !seen[*to].contains(e))
                    .collect();
                for e in missing {
                    states[*to] = apply(&states[*to], &log[e].effect).unwrap();
                    clocks[*to] = clocks[*to].max(log[e].effect.max_time());
                    seen[*to].push(e);
                }
            }
        }
    }
    Run { log, states }
}

/// Picks the next ready effect using `choices` as a source of randomness.
fn causal_order(log: &[Logged], choices: &[usize]) -> Vec<usize> {
    let mut done = vec![false; log.len()];
    let mut order = Vec::new();
    for step in 0..log.len() {
        let ready: Vec<usize> = (0..log.len())
            .filter(|&e| !done[e] && log[e].deps.iter().all(|&d| done[d]))
            .collect();
        let pick = ready[choices[step % choices.len()] % ready.len()];
        done[pick] = true;
        order.push(pick);
    }
    order
}

fn replay(tag: TypeTag, log: &[Logged], order: &[usize]) -> CrdtState {
    order
        .iter()
        .fold(new_state(tag), |s, &e| apply(&s, &log[e].effect).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn causal_delivery_orders_agree(
        (tag, actions) in history(),
        choices in prop::collection::vec(0usize..64, 1..16),
        more in prop::collection::vec(0usize..64, 1..16),
    ) {
        let run = execute(tag, &actions);
        let a = replay(tag, &run.log, &causal_order(&run.log, &choices));
        let b = replay(tag, &run.log, &causal_order(&run.log, &more));
        let issue: Vec<usize> = (0..run.log.len()).collect();
        let c = replay(tag, &run.log, &issue);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }

    #[test]
    fn replicas_that_saw_everything_match_replay(
        (tag, actions) in history(),
    ) {
        let mut actions = actions;
        for to in 0..REPLICAS {
            for from in 0..REPLICAS {
                actions.push(Action::Sync(from, to));
            }
        }
        for from in 0..REPLICAS {
            actions.push(Action::Sync(from, 0));
        }
        for to in 1..REPLICAS {
            actions.push(Action::Sync(0, to));
        }
        let run = execute(tag, &actions);
        let issue: Vec<usize> = (0..run.log.len()).collect();
        let whole = replay(tag, &run.log, &issue);
        for s in &run.states {
            prop_assert_eq!(s, &whole);
        }
    }

    #[test]
    fn counter_value_is_the_sum_of_deltas(deltas in prop::collection::vec((0..REPLICAS, -5i64..=5), 0..20)) {
        let mut s = new_state(TypeTag::Counter);
        let mut clock = 0;
        for (r, d) in &deltas {
            let e = Op::Add(*d).prepare(&s, ReplicaId(*r as u32), &mut Lamport(ReplicaId(*r as u32), &mut clock)).unwrap();
            s = apply(&s, &e).unwrap();
        }
        prop_assert_eq!(s.value(), QueryValue::Counter(deltas.iter().map(|(_, d)| d).sum()));
    }
}

#[test]
fn add_wins_over_a_concurrent_remove() {
    let actions = vec![
        Action::Local(0, Op::SetAdd("a".into())),
        Action::Sync(0, 1),
        Action::Local(1, Op::SetRemove("a".into())),
        Action::Local(0, Op::SetAdd("a".into())),
        Action::Sync(1, 0),
        Action::Sync(0, 1),
    ];
    let run = execute(TypeTag::Set, &actions);
    for s in &run.states[..2] {
        assert!(matches!(s, CrdtState::Set(set) if set.contains("a")));
    }
}

#[test]
fn causally_later_assignment_wins() {
    let actions = vec![
        Action::Local(0, Op::Assign("x".into())),
        Action::Local(0, Op::Assign("x".into())),
        Action::Local(0, Op::Assign("x".into())),
        Action::Sync(0, 1),
        Action::Local(1, Op::Assign("y".into())),
        Action::Sync(1, 0),
    ];
    let run = execute(TypeTag::Register, &actions);
    for s in &run.states[..2] {
        assert_eq!(s.value(), QueryValue::Register(Some("y".into())));
    }
}
