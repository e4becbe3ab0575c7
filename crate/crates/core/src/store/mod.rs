//! Transactional causally consistent replica.
//!
//! Each replica applies whole transaction records, one at a time, only once
//! every record they depend on has been applied. Transactions read from a
//! snapshot fixed at begin and buffer their writes until commit.

mod replica;
mod txn;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounded::{BoundedCounterState, BoundedError, BoundedOp};
use crate::clock::VectorClock;
use crate::crdt::{
    new_state, CrdtEffect, CrdtError, CrdtState, Op, QueryValue, ReplicaId, TypeTag,
};

pub use replica::{CommitInfo, Replica};
pub use txn::{SessionToken, TxnHandle, TxnStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Register,
    Counter,
    Set,
    Map,
    Bounded,
}

impl ObjectKind {
    pub fn crdt_tag(self) -> Option<TypeTag> {
        match self {
            ObjectKind::Register => Some(TypeTag::Register),
            ObjectKind::Counter => Some(TypeTag::Counter),
            ObjectKind::Set => Some(TypeTag::Set),
            ObjectKind::Map => Some(TypeTag::Map),
            ObjectKind::Bounded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectKey {
    pub bucket: String,
    pub key: String,
    #[serde(rename = "type")]
    pub kind: ObjectKind,
}

impl ObjectKey {
    pub fn new(bucket: impl Into<String>, key: impl Into<String>, kind: ObjectKind) -> Self {
        Self {
            bucket: bucket.into(),
            key: key.into(),
            kind,
        }
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.bucket, self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Object {
    Crdt(CrdtState),
    Bounded(BoundedCounterState),
}

impl Object {
    pub fn value(&self) -> QueryValue {
        match self {
            Object::Crdt(s) => s.value(),
            Object::Bounded(b) => QueryValue::Counter(b.value()),
        }
    }

    pub fn as_bounded(&self) -> Option<&BoundedCounterState> {
        match self {
            Object::Bounded(b) => Some(b),
            Object::Crdt(_) => None,
        }
    }
}

/// Update issued against an object inside a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Update {
    Crdt(Op),
    Bounded(BoundedOp),
}

impl From<Op> for Update {
    fn from(op: Op) -> Self {
        Update::Crdt(op)
    }
}

impl From<BoundedOp> for Update {
    fn from(op: BoundedOp) -> Self {
        Update::Bounded(op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxnId {
    pub origin: ReplicaId,
    pub seq: u64,
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.origin.0, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Write {
    Effect(CrdtEffect),
    /// Cells of a bounded counter owned by the record's origin, merged by
    /// cell-wise maximum at the receiver.
    Bounded(BoundedCounterState),
}

/// Sibling records of one transaction split apart by the `no-atomic-writes`
/// ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub parent: TxnId,
    pub index: usize,
    pub total: usize,
}

/// Unit of replication: everything one transaction wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnRecord {
    pub id: TxnId,
    pub snapshot: VectorClock,
    pub commit: VectorClock,
    #[serde(with = "pairs")]
    pub writes: BTreeMap<ObjectKey, Vec<Write>>,
    /// Largest logical time used by any effect in the record.
    pub lamport: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragment: Option<Fragment>,
}

/// Deliberate weakenings of the store used to reproduce anomalies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Apply records on arrival, ignoring dependencies and per-origin order.
    #[serde(default)]
    pub no_causal_deps: bool,
    /// Ship each object's writes as a separate record.
    #[serde(default)]
    pub no_atomic_writes: bool,
    /// Serve every read from the replica's latest state.
    #[serde(default)]
    pub no_snapshots: bool,
}

impl Ablations {
    pub fn any(&self) -> bool {
        self.no_causal_deps || self.no_atomic_writes || self.no_snapshots
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.no_causal_deps {
            out.push("no-causal-deps");
        }
        if self.no_atomic_writes {
            out.push("no-atomic-writes");
        }
        if self.no_snapshots {
            out.push("no-snapshots");
        }
        out
    }

    pub fn union(self, other: Ablations) -> Ablations {
        Ablations {
            no_causal_deps: self.no_causal_deps || other.no_causal_deps,
            no_atomic_writes: self.no_atomic_writes || other.no_atomic_writes,
            no_snapshots: self.no_snapshots || other.no_snapshots,
        }
    }
}

impl FromStr for Ablations {
    type Err = StoreError;

    /// Comma-separated list, e.g. `no-causal-deps,no-snapshots`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Ablations::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "no-causal-deps" => out.no_causal_deps = true,
                "no-atomic-writes" => out.no_atomic_writes = true,
                "no-snapshots" => out.no_snapshots = true,
                other => return Err(StoreError::UnknownAblation(other.to_string())),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error(transparent)]
    Crdt(#[from] CrdtError),
    #[error(transparent)]
    Bounded(#[from] BoundedError),
    #[error("transaction is not open")]
    TxnNotOpen,
    #[error("transaction belongs to replica {0}")]
    WrongReplica(ReplicaId),
    #[error("snapshot {at} is not covered by applied clock {applied}")]
    SnapshotAhead {
        at: VectorClock,
        applied: VectorClock,
    },
    #[error("bounded counter {0} was never declared")]
    UnknownBounded(ObjectKey),
    #[error("update does not match the type of {0}")]
    KindMismatch(ObjectKey),
    #[error("record write does not match the object type")]
    WriteMismatch,
    #[error("commit requires the token for {0}")]
    TokenNotHeld(ObjectKey),
    #[error("unknown ablation `{0}`")]
    UnknownAblation(String),
}

pub(crate) fn bottom(key: &ObjectKey) -> Option<Object> {
    key.kind.crdt_tag().map(|t| Object::Crdt(new_state(t)))
}

/// Serializes a map with non-string keys as a list of `[key, value]` pairs.
pub mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize,
        V: Serialize,
        S: Serializer,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let items: Vec<(K, V)> = Vec::deserialize(d)?;
        Ok(items.into_iter().collect())
    }
}
