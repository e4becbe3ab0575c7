use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bounded::BoundedOp;
use crate::clock::VectorClock;
use crate::crdt::{CrdtEffect, QueryValue, ReplicaId};

use super::{Object, ObjectKey};

/// Causal context a client carries between transactions, possibly across
/// replicas.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub last_seen: VectorClock,
}

impl SessionToken {
    pub fn observe(&mut self, clock: &VectorClock) {
        self.last_seen.join_assign(clock);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnStatus {
    Open,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Buffered {
    Effect(CrdtEffect),
    Bounded(BoundedOp),
}

/// An open transaction at one replica.
#[derive(Debug, Clone)]
pub struct TxnHandle {
    pub(crate) replica: ReplicaId,
    pub(crate) snapshot: VectorClock,
    pub(crate) status: TxnStatus,
    pub(crate) session: SessionToken,
    pub(crate) buffer: BTreeMap<ObjectKey, Vec<Buffered>>,
    /// Snapshot states of objects touched so far, before buffered writes.
    pub(crate) views: BTreeMap<ObjectKey, Object>,
    pub(crate) read_values: BTreeMap<ObjectKey, QueryValue>,
    pub(crate) required_tokens: BTreeSet<ObjectKey>,
}

impl TxnHandle {
    pub(crate) fn new(replica: ReplicaId, snapshot: VectorClock, session: SessionToken) -> Self {
        Self {
            replica,
            snapshot,
            status: TxnStatus::Open,
            session,
            buffer: BTreeMap::new(),
            views: BTreeMap::new(),
            read_values: BTreeMap::new(),
            required_tokens: BTreeSet::new(),
        }
    }

    pub fn replica(&self) -> ReplicaId {
        self.replica
    }

    pub fn snapshot(&self) -> &VectorClock {
        &self.snapshot
    }

    pub fn status(&self) -> TxnStatus {
        self.status
    }

    pub fn session(&self) -> &SessionToken {
        &self.session
    }

    pub fn read_set(&self) -> impl Iterator<Item = &ObjectKey> {
        self.read_values.keys()
    }

    /// Last value returned for each key this transaction read.
    pub fn read_values(&self) -> &BTreeMap<ObjectKey, QueryValue> {
        &self.read_values
    }

    pub fn is_read_only(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn written_keys(&self) -> impl Iterator<Item = &ObjectKey> {
        self.buffer.keys()
    }

    pub fn buffered_effects(&self, key: &ObjectKey) -> Vec<CrdtEffect> {
        self.buffer
            .get(key)
            .into_iter()
            .flatten()
            .filter_map(|b| match b {
                Buffered::Effect(e) => Some(e.clone()),
                Buffered::Bounded(_) => None,
            })
            .collect()
    }

    /// Commit will fail unless the replica holds a token for `key`.
    pub fn require_token(&mut self, key: ObjectKey) {
        self.required_tokens.insert(key);
    }
}
