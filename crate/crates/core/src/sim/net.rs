use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cpsync::SyncMsg;
use crate::crdt::ReplicaId;
use crate::store::TxnRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Message {
    Txn(TxnRecord),
    Sync(SyncMsg),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: ReplicaId,
    pub to: ReplicaId,
    pub msg: Message,
}

/// Message queue with seeded delays, duplication and partitions.
#[derive(Debug, Clone)]
pub struct Network {
    replicas: usize,
    delay: (u64, u64),
    duplication: f64,
    fifo: bool,
    queue: BTreeMap<(u64, u64), Envelope>,
    parked: Vec<Envelope>,
    group_of: Option<Vec<usize>>,
    link_last: HashMap<(ReplicaId, ReplicaId), u64>,
    seq: u64,
}

impl Network {
    pub fn new(replicas: usize, delay: (u64, u64), duplication: f64, fifo: bool) -> Self {
        Self {
            replicas,
            delay,
            duplication,
            fifo,
            queue: BTreeMap::new(),
            parked: Vec::new(),
            group_of: None,
            link_last: HashMap::new(),
            seq: 0,
        }
    }

    pub fn connected(&self, a: ReplicaId, b: ReplicaId) -> bool {
        match &self.group_of {
            None => true,
            Some(g) => g[a.index()] == g[b.index()],
        }
    }

    pub fn is_partitioned(&self) -> bool {
        self.group_of.is_some()
    }

    /// Enqueues `env` for delivery after a random delay, possibly twice, or
    /// parks it when the endpoints are in different groups.
    pub fn schedule(&mut self, env: Envelope, now: u64, rng: &mut ChaCha8Rng) {
        if !self.connected(env.from, env.to) {
            self.parked.push(env);
            return;
        }
        let dup = self.duplication > 0.0 && rng.gen_bool(self.duplication);
        if dup {
            self.enqueue(env.clone(), now, rng);
        }
        self.enqueue(env, now, rng);
    }

    fn enqueue(&mut self, env: Envelope, now: u64, rng: &mut ChaCha8Rng) {
        let mut at = now + rng.gen_range(self.delay.0..=self.delay.1);
        if self.fifo {
            let last = self.link_last.entry((env.from, env.to)).or_insert(0);
            at = at.max(*last);
            *last = at;
        }
        self.seq += 1;
        self.queue.insert((at, self.seq), env);
    }

    pub fn next_time(&self) -> Option<u64> {
        self.queue.keys().next().map(|k| k.0)
    }

    /// Next message due at or before `limit`. Messages whose endpoints were
    /// separated after sending are parked instead of returned.
    pub fn pop_due(&mut self, limit: Option<u64>) -> Option<(u64, Envelope)> {
        loop {
            let (&(at, seq), _) = self.queue.iter().next()?;
            if limit.is_some_and(|l| at > l) {
                return None;
            }
            let env = self.queue.remove(&(at, seq)).unwrap();
            if self.connected(env.from, env.to) {
                return Some((at, env));
            }
            self.parked.push(env);
        }
    }

    /// Installs a partition. Groups must already be validated.
    pub fn partition(&mut self, groups: &[Vec<ReplicaId>]) {
        let mut group_of = vec![0; self.replicas];
        for (g, members) in groups.iter().enumerate() {
            for r in members {
                group_of[r.index()] = g;
            }
        }
        self.group_of = Some(group_of);
    }

    /// Removes the partition and reschedules every parked message with a
    /// fresh delay. No-op when not partitioned.
    pub fn heal(&mut self, now: u64, rng: &mut ChaCha8Rng) -> usize {
        if self.group_of.take().is_none() {
            return 0;
        }
        let n = self.parked.len();
        for env in std::mem::take(&mut self.parked) {
            self.enqueue(env, now, rng);
        }
        n
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn parked(&self) -> usize {
        self.parked.len()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.parked.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpsync::SyncMsg;
    use crate::store::{ObjectKey, ObjectKind};
    use rand::SeedableRng;

    fn env(from: u32, to: u32, req: u64) -> Envelope {
        Envelope {
            from: ReplicaId(from),
            to: ReplicaId(to),
            msg: Message::Sync(SyncMsg::TokenRequest {
                object: ObjectKey::new("b", "k", ObjectKind::Map),
                req,
            }),
        }
    }

    #[test]
    fn unit_delay_delivers_in_send_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::new(2, (1, 1), 0.0, false);
        for i in 0..5 {
            net.schedule(env(0, 1, i), 0, &mut rng);
        }
        let got: Vec<_> = std::iter::from_fn(|| net.pop_due(None)).collect();
        assert!(got.iter().all(|(t, _)| *t == 1));
        let reqs: Vec<u64> = got
            .iter()
            .map(|(_, e)| match &e.msg {
                Message::Sync(SyncMsg::TokenRequest { req, .. }) => *req,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(reqs, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fifo_flag_keeps_link_order_under_random_delays() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Network::new(2, (1, 20), 0.0, true);
        for i in 0..50 {
            net.schedule(env(0, 1, i), i, &mut rng);
        }
        let mut last = None;
        while let Some((_, e)) = net.pop_due(None) {
            let Message::Sync(SyncMsg::TokenRequest { req, .. }) = e.msg else {
                unreachable!()
            };
            assert!(last < Some(req));
            last = Some(req);
        }
    }

    #[test]
    fn partition_parks_and_heal_flushes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::new(3, (1, 3), 0.0, false);
        net.schedule(env(0, 1, 0), 0, &mut rng);
        net.partition(&[vec![ReplicaId(0)], vec![ReplicaId(1)], vec![ReplicaId(2)]]);
        net.schedule(env(0, 2, 1), 0, &mut rng);
        assert!(net.pop_due(None).is_none());
        assert_eq!(net.parked(), 2);
        assert_eq!(net.heal(10, &mut rng), 2);
        assert_eq!(net.heal(10, &mut rng), 0);
        let times: Vec<u64> = std::iter::from_fn(|| net.pop_due(None))
            .map(|(t, _)| t)
            .collect();
        assert_eq!(times.len(), 2);
        assert!(times.iter().all(|t| (11..=13).contains(t)));
        assert!(net.is_idle());
    }

    #[test]
    fn full_duplication_sends_twice() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::new(2, (1, 4), 1.0, false);
        net.schedule(env(1, 0, 0), 0, &mut rng);
        assert_eq!(net.in_flight(), 2);
    }
}
