use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::bounded::{BoundedCounterState, BoundedOp};
use crate::clock::VectorClock;
use crate::crdt::{CrdtState, Dot, DotSource, QueryValue, ReplicaId};

use super::txn::{Buffered, SessionToken, TxnHandle, TxnStatus};
use super::{
    bottom, Ablations, Fragment, Object, ObjectKey, StoreError, TxnId, TxnRecord, Update, Write,
};

/// Result of a successful commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitInfo {
    /// Commit clock of the transaction (the snapshot for read-only ones).
    pub clock: VectorClock,
    /// Records to ship to every peer; empty for read-only transactions.
    pub records: Vec<TxnRecord>,
}

/// One replica's state machine.
#[derive(Debug, Clone)]
pub struct Replica {
    id: ReplicaId,
    replicas: usize,
    ablations: Ablations,
    applied: VectorClock,
    log: Vec<TxnRecord>,
    pending: BTreeMap<TxnId, TxnRecord>,
    seen: HashSet<TxnId>,
    cache: BTreeMap<ObjectKey, Object>,
    genesis: BTreeMap<ObjectKey, BoundedCounterState>,
    by_key: HashMap<ObjectKey, Vec<usize>>,
    lamport: u64,
    fragments: BTreeMap<TxnId, (usize, usize)>,
    reported_partial: BTreeSet<TxnId>,
    violations: Vec<String>,
    held_tokens: BTreeSet<ObjectKey>,
}

struct Lamport<'a> {
    origin: ReplicaId,
    clock: &'a mut u64,
}

impl DotSource for Lamport<'_> {
    fn next_dot(&mut self) -> Dot {
        *self.clock += 1;
        Dot::new(self.origin, *self.clock)
    }
}

impl Replica {
    pub fn new(id: ReplicaId, replicas: usize, ablations: Ablations) -> Self {
        Self {
            id,
            replicas,
            ablations,
            applied: VectorClock::new(),
            log: Vec::new(),
            pending: BTreeMap::new(),
            seen: HashSet::new(),
            cache: BTreeMap::new(),
            genesis: BTreeMap::new(),
            by_key: HashMap::new(),
            lamport: 0,
            fragments: BTreeMap::new(),
            reported_partial: BTreeSet::new(),
            violations: Vec::new(),
            held_tokens: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn replica_count(&self) -> usize {
        self.replicas
    }

    pub fn ablations(&self) -> Ablations {
        self.ablations
    }

    pub fn applied(&self) -> &VectorClock {
        &self.applied
    }

    pub fn log(&self) -> &[TxnRecord] {
        &self.log
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn cache(&self) -> &BTreeMap<ObjectKey, Object> {
        &self.cache
    }

    /// Built-in invariant violations detected so far.
    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn take_violations(&mut self) -> Vec<String> {
        std::mem::take(&mut self.violations)
    }

    /// Installs the initial state of a bounded counter. Must be identical at
    /// every replica and happen before any transaction touches `key`.
    pub fn declare_bounded(&mut self, key: ObjectKey, state: BoundedCounterState) {
        self.cache
            .insert(key.clone(), Object::Bounded(state.clone()));
        self.genesis.insert(key, state);
    }

    pub fn grant_token(&mut self, key: ObjectKey) {
        self.held_tokens.insert(key);
    }

    pub fn drop_token(&mut self, key: &ObjectKey) {
        self.held_tokens.remove(key);
    }

    pub fn holds_token(&self, key: &ObjectKey) -> bool {
        self.held_tokens.contains(key)
    }

    fn initial(&self, key: &ObjectKey) -> Result<Object, StoreError> {
        match bottom(key) {
            Some(obj) => Ok(obj),
            None => self
                .genesis
                .get(key)
                .cloned()
                .map(Object::Bounded)
                .ok_or_else(|| StoreError::UnknownBounded(key.clone())),
        }
    }

    /// Latest local state of `key`.
    pub fn current(&self, key: &ObjectKey) -> Result<Object, StoreError> {
        match self.cache.get(key) {
            Some(obj) => Ok(obj.clone()),
            None => self.initial(key),
        }
    }

    pub fn value(&self, key: &ObjectKey) -> Result<QueryValue, StoreError> {
        Ok(self.current(key)?.value())
    }

    /// State of `key` as of clock `at`: every logged record with
    /// `commit <= at`, folded in log order.
    pub fn materialise(&self, key: &ObjectKey, at: &VectorClock) -> Result<Object, StoreError> {
        if !at.leq(&self.applied) {
            return Err(StoreError::SnapshotAhead {
                at: at.clone(),
                applied: self.applied.clone(),
            });
        }
        if *at == self.applied && !self.ablations.no_causal_deps {
            return self.current(key);
        }
        let mut obj = self.initial(key)?;
        for &idx in self.by_key.get(key).into_iter().flatten() {
            let rec = &self.log[idx];
            if rec.commit.leq(at) {
                for w in &rec.writes[key] {
                    apply_write(&mut obj, w)?;
                }
            }
        }
        Ok(obj)
    }

    /// Opens a transaction if the replica has caught up with `session`;
    /// `None` means the caller must wait for more records to arrive.
    pub fn try_begin(&self, session: &SessionToken) -> Option<TxnHandle> {
        if !session.last_seen.leq(&self.applied) {
            return None;
        }
        Some(TxnHandle::new(
            self.id,
            self.applied.clone(),
            session.clone(),
        ))
    }

    fn check_open(&self, txn: &TxnHandle) -> Result<(), StoreError> {
        if txn.status != TxnStatus::Open {
            return Err(StoreError::TxnNotOpen);
        }
        if txn.replica != self.id {
            return Err(StoreError::WrongReplica(txn.replica));
        }
        Ok(())
    }

    fn view(&self, txn: &mut TxnHandle, key: &ObjectKey) -> Result<Object, StoreError> {
        let mut obj = if self.ablations.no_snapshots {
            self.current(key)?
        } else if let Some(v) = txn.views.get(key) {
            v.clone()
        } else {
            let v = self.materialise(key, &txn.snapshot)?;
            txn.views.insert(key.clone(), v.clone());
            v
        };
        for b in txn.buffer.get(key).into_iter().flatten() {
            match (b, &mut obj) {
                (Buffered::Effect(e), Object::Crdt(s)) => s.apply(e)?,
                (Buffered::Bounded(op), Object::Bounded(s)) => op.apply(s, txn.replica)?,
                _ => return Err(StoreError::KindMismatch(key.clone())),
            }
        }
        Ok(obj)
    }

    /// Snapshot value plus the transaction's own buffered writes.
    pub fn read(&self, txn: &mut TxnHandle, key: &ObjectKey) -> Result<QueryValue, StoreError> {
        self.check_open(txn)?;
        let value = self.view(txn, key)?.value();
        txn.read_values.insert(key.clone(), value.clone());
        Ok(value)
    }

    /// Bounded counter state visible to the transaction.
    pub fn read_bounded(
        &self,
        txn: &mut TxnHandle,
        key: &ObjectKey,
    ) -> Result<BoundedCounterState, StoreError> {
        self.check_open(txn)?;
        match self.view(txn, key)? {
            Object::Bounded(b) => {
                txn.read_values
                    .insert(key.clone(), QueryValue::Counter(b.value()));
                Ok(b)
            }
            Object::Crdt(_) => Err(StoreError::KindMismatch(key.clone())),
        }
    }

    /// Translates `update` into an effect against the transaction's view and
    /// buffers it.
    pub fn update(
        &mut self,
        txn: &mut TxnHandle,
        key: &ObjectKey,
        update: &Update,
    ) -> Result<(), StoreError> {
        self.check_open(txn)?;
        let view = self.view(txn, key)?;
        let buffered = match (update, view) {
            (Update::Crdt(op), Object::Crdt(state)) => {
                if key.kind.crdt_tag() != Some(op.type_tag()) {
                    return Err(StoreError::KindMismatch(key.clone()));
                }
                let mut dots = Lamport {
                    origin: self.id,
                    clock: &mut self.lamport,
                };
                Buffered::Effect(op.prepare(&state, self.id, &mut dots)?)
            }
            (Update::Bounded(op), Object::Bounded(mut state)) => {
                op.apply(&mut state, txn.replica)?;
                Buffered::Bounded(*op)
            }
            _ => return Err(StoreError::KindMismatch(key.clone())),
        };
        txn.buffer.entry(key.clone()).or_default().push(buffered);
        Ok(())
    }

    pub fn abort(&self, txn: &mut TxnHandle) -> Result<(), StoreError> {
        if txn.status != TxnStatus::Open {
            return Err(StoreError::TxnNotOpen);
        }
        txn.status = TxnStatus::Aborted;
        txn.buffer.clear();
        Ok(())
    }

    /// Applies the transaction locally as one step and returns the records
    /// to broadcast.
    pub fn commit(&mut self, txn: &mut TxnHandle) -> Result<CommitInfo, StoreError> {
        self.check_open(txn)?;
        if let Some(key) = txn
            .required_tokens
            .iter()
            .find(|k| !self.held_tokens.contains(*k))
        {
            let key = key.clone();
            self.abort(txn)?;
            return Err(StoreError::TokenNotHeld(key));
        }
        if txn.buffer.is_empty() {
            txn.status = TxnStatus::Committed;
            return Ok(CommitInfo {
                clock: txn.snapshot.clone(),
                records: Vec::new(),
            });
        }

        let (writes, lamport) = match self.build_writes(txn) {
            Ok(built) => built,
            Err(e) => {
                self.abort(txn)?;
                return Err(e);
            }
        };

        let base = self.applied.get(self.id);
        let groups: Vec<BTreeMap<ObjectKey, Vec<Write>>> =
            if self.ablations.no_atomic_writes && writes.len() > 1 {
                writes.into_iter().map(|(k, w)| [(k, w)].into()).collect()
            } else {
                vec![writes]
            };
        let total = groups.len();
        let parent = TxnId {
            origin: self.id,
            seq: base + 1,
        };
        let mut records = Vec::with_capacity(total);
        for (i, group) in groups.into_iter().enumerate() {
            let seq = base + 1 + i as u64;
            let rec = TxnRecord {
                id: TxnId {
                    origin: self.id,
                    seq,
                },
                snapshot: txn.snapshot.clone(),
                commit: txn.snapshot.clone().with(self.id, seq),
                writes: group,
                lamport,
                fragment: (total > 1).then_some(Fragment {
                    parent,
                    index: i,
                    total,
                }),
            };
            self.seen.insert(rec.id);
            self.apply_record(rec.clone());
            records.push(rec);
        }
        txn.status = TxnStatus::Committed;
        let clock = records.last().map(|r| r.commit.clone()).unwrap();
        Ok(CommitInfo { clock, records })
    }

    fn build_writes(
        &self,
        txn: &TxnHandle,
    ) -> Result<(BTreeMap<ObjectKey, Vec<Write>>, u64), StoreError> {
        let mut writes = BTreeMap::new();
        let mut lamport = 0;
        for (key, items) in &txn.buffer {
            let mut out = Vec::new();
            let mut bounded: Option<BoundedCounterState> = None;
            for item in items {
                match item {
                    Buffered::Effect(e) => {
                        lamport = lamport.max(e.max_time());
                        out.push(Write::Effect(e.clone()));
                    }
                    Buffered::Bounded(op) => {
                        // rights are re-checked against the latest local state
                        let state = match &mut bounded {
                            Some(s) => s,
                            None => bounded.insert(match self.current(key)? {
                                Object::Bounded(b) => b,
                                Object::Crdt(_) => {
                                    return Err(StoreError::KindMismatch(key.clone()))
                                }
                            }),
                        };
                        op.apply(state, self.id)?;
                    }
                }
            }
            if let Some(state) = bounded {
                out.push(Write::Bounded(state.owned_by(self.id)));
            }
            writes.insert(key.clone(), out);
        }
        Ok((writes, lamport))
    }

    fn ready(&self, rec: &TxnRecord) -> bool {
        rec.snapshot.leq(&self.applied) && self.applied.get(rec.id.origin) + 1 == rec.id.seq
    }

    /// Delivers a record from a peer; returns how many records became
    /// visible (this one plus any pending ones it unblocked).
    pub fn receive(&mut self, rec: TxnRecord) -> usize {
        if !self.seen.insert(rec.id) {
            return 0;
        }
        if self.ablations.no_causal_deps {
            self.apply_record(rec);
            return 1;
        }
        if !self.ready(&rec) {
            self.pending.insert(rec.id, rec);
            return 0;
        }
        self.apply_record(rec);
        let mut count = 1;
        loop {
            let next = self
                .pending
                .iter()
                .find(|(_, r)| self.ready(r))
                .map(|(id, _)| *id);
            match next {
                Some(id) => {
                    let rec = self.pending.remove(&id).unwrap();
                    self.apply_record(rec);
                    count += 1;
                }
                None => break,
            }
        }
        count
    }

    fn apply_record(&mut self, rec: TxnRecord) {
        if !rec.snapshot.leq(&self.applied) {
            self.violations.push(format!(
                "causality: {} applied at {} before its dependencies {} (applied {})",
                rec.id, self.id, rec.snapshot, self.applied
            ));
        }
        if self.applied.get(rec.id.origin) + 1 != rec.id.seq {
            self.violations.push(format!(
                "fifo: {} applied at {} with applied[{}] = {}",
                rec.id,
                self.id,
                rec.id.origin.0,
                self.applied.get(rec.id.origin)
            ));
        }
        for (key, ws) in &rec.writes {
            let mut obj = match self.current(key) {
                Ok(o) => o,
                Err(e) => {
                    self.violations.push(format!("apply {}: {e}", rec.id));
                    continue;
                }
            };
            for w in ws {
                if let Err(e) = apply_write(&mut obj, w) {
                    self.violations
                        .push(format!("apply {} to {key}: {e}", rec.id));
                }
            }
            self.cache.insert(key.clone(), obj);
        }
        if let Some(f) = rec.fragment {
            let entry = self.fragments.entry(f.parent).or_insert((0, f.total));
            entry.0 += 1;
        }
        let idx = self.log.len();
        for key in rec.writes.keys() {
            self.by_key.entry(key.clone()).or_default().push(idx);
        }
        self.applied.observe(rec.id.origin, rec.id.seq);
        self.lamport = self.lamport.max(rec.lamport);
        self.log.push(rec);
    }

    /// Records a violation for every transaction of which only part is
    /// visible. Called between events: within one event a transaction's
    /// records may be applied one by one.
    pub fn check_atomic_visibility(&mut self) {
        for (parent, (seen, total)) in &self.fragments {
            if seen < total && self.reported_partial.insert(*parent) {
                self.violations.push(format!(
                    "atomicity: {parent} partially visible at {} ({seen}/{total} parts)",
                    self.id
                ));
            }
        }
    }

    /// Full consistency audit of the log: per-origin gap freedom, causal
    /// closure, and cache equal to the fold of the log.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut per_origin: BTreeMap<ReplicaId, Vec<u64>> = BTreeMap::new();
        for rec in &self.log {
            per_origin
                .entry(rec.id.origin)
                .or_default()
                .push(rec.id.seq);
            if !rec.snapshot.leq(&self.applied) {
                problems.push(format!("{} depends on unapplied {}", rec.id, rec.snapshot));
            }
        }
        for (origin, mut seqs) in per_origin {
            seqs.sort_unstable();
            let expected: Vec<u64> = (1..=seqs.len() as u64).collect();
            if seqs != expected || self.applied.get(origin) != seqs.len() as u64 {
                problems.push(format!("gap in records from {origin}"));
            }
        }
        for key in self.cache.keys() {
            let mut obj = match self.initial(key) {
                Ok(o) => o,
                Err(e) => {
                    problems.push(e.to_string());
                    continue;
                }
            };
            for &idx in self.by_key.get(key).into_iter().flatten() {
                for w in &self.log[idx].writes[key] {
                    let _ = apply_write(&mut obj, w);
                }
            }
            if Some(&obj) != self.cache.get(key) {
                problems.push(format!("cache of {key} differs from log"));
            }
        }
        problems
    }

    /// Runs `op` on a bounded counter in a transaction of its own.
    pub fn bounded_txn(
        &mut self,
        key: &ObjectKey,
        op: BoundedOp,
    ) -> Result<CommitInfo, StoreError> {
        let mut txn = TxnHandle::new(self.id, self.applied.clone(), SessionToken::default());
        self.update(&mut txn, key, &Update::Bounded(op))?;
        self.commit(&mut txn)
    }
}

fn apply_write(obj: &mut Object, w: &Write) -> Result<(), StoreError> {
    match (obj, w) {
        (Object::Crdt(s), Write::Effect(e)) => Ok(CrdtState::apply(s, e)?),
        (Object::Bounded(s), Write::Bounded(b)) => Ok(s.merge_assign(b)?),
        _ => Err(StoreError::WriteMismatch),
    }
}
