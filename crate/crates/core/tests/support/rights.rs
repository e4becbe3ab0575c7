//! Escrow counter explored exhaustively against an event-log oracle.
//!
//! The oracle records every event each replica creates and, per replica,
//! how many of each origin's events it has seen; rights and value are sums
//! over the seen events and share no code with the rights matrix. Seen sets
//! are per-origin prefixes.

use std::collections::HashSet;
use std::rc::Rc;

use causalkv::bounded::{BoundedCounterState, BoundedError};
use causalkv::crdt::ReplicaId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Inc(u8),
    Dec(u8),
    Give(u8, u8),
}

/// Events replica `me` has seen: a prefix of every origin's history.
fn seen(node: &Node, me: usize) -> impl Iterator<Item = (usize, Kind)> + '_ {
    let mut taken = vec![0u8; node.n];
    node.made.iter().filter_map(move |&(o, k)| {
        let o = o as usize;
        taken[o] += 1;
        (taken[o] <= node.known[me * node.n + o]).then_some((o, k))
    })
}

fn rights(node: &Node, shares: &[u64], me: usize) -> i64 {
    let mut r = shares[me] as i64;
    for (origin, kind) in seen(node, me) {
        match kind {
            Kind::Inc(n) if origin == me => r += n as i64,
            Kind::Dec(n) if origin == me => r -= n as i64,
            Kind::Give(_, n) if origin == me => r -= n as i64,
            Kind::Give(to, n) if to as usize == me => r += n as i64,
            _ => {}
        }
    }
    r
}

fn total(initial: i64, events: impl Iterator<Item = Kind>) -> i64 {
    events.fold(initial, |v, k| match k {
        Kind::Inc(n) => v + n as i64,
        Kind::Dec(n) => v - n as i64,
        Kind::Give(..) => v,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub replicas: usize,
    pub bound: i64,
    pub initial: i64,
    pub decrements: u8,
    pub increments: u8,
    pub transfers: u8,
    /// Amounts tried for decrements.
    pub amounts: &'static [u64],
}

#[derive(Debug, Default)]
pub struct Exploration {
    pub states: usize,
    pub steps: usize,
    pub refused_decrements: usize,
    pub violations: Vec<String>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Node {
    n: usize,
    bound: i64,
    /// Per replica: its counter's rights matrix, row-major, then its
    /// consumed vector.
    cells: Vec<u8>,
    /// `(origin, kind)` grouped by origin, each group in creation order.
    made: Vec<(u8, Kind)>,
    /// `known[i * n + o]`: how many of `o`'s events replica `i` has seen.
    known: Vec<u8>,
    budget: (u8, u8, u8),
}

impl Node {
    fn width(&self) -> usize {
        self.n * self.n + self.n
    }

    fn counter(&self, i: usize) -> BoundedCounterState {
        let n = self.n;
        let c = &self.cells[i * self.width()..(i + 1) * self.width()];
        BoundedCounterState {
            bound: self.bound,
            rights: c[..n * n]
                .chunks(n)
                .map(|row| row.iter().map(|&x| x as u64).collect())
                .collect(),
            consumed: c[n * n..].iter().map(|&x| x as u64).collect(),
        }
    }

    fn cells_of(&self, c: &BoundedCounterState) -> Vec<u8> {
        c.rights
            .iter()
            .flatten()
            .chain(&c.consumed)
            .map(|&x| u8::try_from(x).expect("cell fits the encoding"))
            .collect()
    }

    fn set_counter(&mut self, i: usize, c: &BoundedCounterState) {
        let w = self.width();
        let cells = self.cells_of(c);
        self.cells[i * w..(i + 1) * w].copy_from_slice(&cells);
    }

    fn push(&mut self, origin: usize, kind: Kind) {
        let at = self
            .made
            .iter()
            .rposition(|(o, _)| *o as usize <= origin)
            .map_or(0, |p| p + 1);
        self.made.insert(at, (origin as u8, kind));
        self.known[origin * self.n + origin] += 1;
    }
}

/// Shares of `initial - bound` spread as evenly as possible.
pub fn shares(limits: &Limits) -> Vec<u64> {
    let total = (limits.initial - limits.bound) as u64;
    let n = limits.replicas as u64;
    (0..n)
        .map(|i| total / n + u64::from(i < total % n))
        .collect()
}

/// Every interleaving of the allowed operations with merges anywhere.
pub fn explore(limits: Limits) -> Exploration {
    let shares = shares(&limits);
    let start = BoundedCounterState::new(limits.bound, limits.initial, &shares).unwrap();
    let n = limits.replicas;
    let mut root = Node {
        n,
        bound: limits.bound,
        cells: vec![0; n * (n * n + n)],
        made: Vec::new(),
        known: vec![0; n * n],
        budget: (limits.decrements, limits.increments, limits.transfers),
    };
    for i in 0..n {
        root.set_counter(i, &start);
    }
    let root = Rc::new(root);
    let mut seen = HashSet::from([Rc::clone(&root)]);
    let mut stack = vec![root];
    let mut out = Exploration::default();
    while let Some(node) = stack.pop() {
        out.states += 1;
        check_node(&node, &limits, &shares, &mut out);
        for next in successors(&node, &limits, &shares, &mut out) {
            out.steps += 1;
            let next = Rc::new(next);
            if seen.insert(Rc::clone(&next)) {
                stack.push(next);
            }
        }
    }
    out
}

fn check_node(node: &Node, limits: &Limits, shares: &[u64], out: &mut Exploration) {
    for i in 0..node.n {
        let c = node.counter(i);
        let r = ReplicaId(i as u32);
        let oracle = total(limits.initial, seen(node, i).map(|(_, k)| k));
        if c.value() < limits.bound {
            out.violations
                .push(format!("r{i} sees value {} below bound", c.value()));
        }
        if c.value() != oracle {
            out.violations
                .push(format!("r{i} value {} but oracle {oracle}", c.value()));
        }
        let held = rights(node, shares, i);
        if c.local_rights(r) != held {
            out.violations.push(format!(
                "r{i} rights {} but oracle {held}",
                c.local_rights(r)
            ));
        }
    }
    let global = total(limits.initial, node.made.iter().map(|(_, k)| *k));
    if global < limits.bound {
        out.violations
            .push(format!("true value {global} below bound"));
    }
}

fn successors(node: &Node, limits: &Limits, shares: &[u64], out: &mut Exploration) -> Vec<Node> {
    let mut next = Vec::new();
    let n = limits.replicas;
    let (decs, incs, gives) = node.budget;
    let record = |node: &Node, i: usize, kind: Kind, counter: &BoundedCounterState| {
        let mut m = node.clone();
        m.push(i, kind);
        m.set_counter(i, counter);
        m
    };
    for i in 0..n {
        let r = ReplicaId(i as u32);
        let mine = node.counter(i);
        let oracle = rights(node, shares, i);
        if decs > 0 {
            for &amount in limits.amounts {
                let mut c = mine.clone();
                match c.decrement(r, amount) {
                    Ok(()) => {
                        if oracle < amount as i64 {
                            out.violations
                                .push(format!("r{i} decremented {amount} holding {oracle}"));
                        }
                        let mut m = record(node, i, Kind::Dec(amount as u8), &c);
                        m.budget.0 -= 1;
                        next.push(m);
                    }
                    Err(BoundedError::InsufficientRights { available, .. }) => {
                        out.refused_decrements += 1;
                        if oracle >= amount as i64 || available != oracle {
                            out.violations.push(format!(
                                "r{i} refused {amount}: reported {available}, oracle {oracle}"
                            ));
                        }
                        if c != mine {
                            out.violations
                                .push(format!("r{i} refused decrement changed state"));
                        }
                    }
                    Err(e) => out.violations.push(format!("r{i} decrement: {e}")),
                }
            }
        }
        if incs > 0 {
            let mut c = mine.clone();
            c.increment(r, 1).unwrap();
            let mut m = record(node, i, Kind::Inc(1), &c);
            m.budget.1 -= 1;
            next.push(m);
        }
        for j in (0..n).filter(|j| *j != i) {
            if gives > 0 {
                let mut c = mine.clone();
                match c.transfer(r, ReplicaId(j as u32), 1) {
                    Ok(()) => {
                        if oracle < 1 {
                            out.violations.push(format!("r{i} gave a right it lacks"));
                        }
                        let mut m = record(node, i, Kind::Give(j as u8, 1), &c);
                        m.budget.2 -= 1;
                        next.push(m);
                    }
                    Err(BoundedError::InsufficientRights { .. }) if oracle < 1 => {}
                    Err(e) => out.violations.push(format!("r{i} transfer: {e}")),
                }
            }
            let merged = mine.merge(&node.counter(j)).unwrap();
            if merged != mine {
                let mut m = node.clone();
                m.set_counter(i, &merged);
                for o in 0..n {
                    m.known[i * n + o] = m.known[i * n + o].max(node.known[j * n + o]);
                }
                next.push(m);
            }
        }
    }
    next
}
