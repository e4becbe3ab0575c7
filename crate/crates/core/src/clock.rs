//! Vector clocks over replica ids.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crdt::ReplicaId;

/// Per-replica sequence numbers; absent entries read as zero and are never
/// stored, so structural equality is clock equality.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorClock {
    entries: BTreeMap<ReplicaId, u64>,
}

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, replica: ReplicaId) -> u64 {
        self.entries.get(&replica).copied().unwrap_or(0)
    }

    pub fn set(&mut self, replica: ReplicaId, value: u64) {
        if value == 0 {
            self.entries.remove(&replica);
        } else {
            self.entries.insert(replica, value);
        }
    }

    /// Raises the entry for `replica` to at least `value`.
    pub fn observe(&mut self, replica: ReplicaId, value: u64) {
        if value > self.get(replica) {
            self.set(replica, value);
        }
    }

    /// Pointwise `self <= other`.
    pub fn leq(&self, other: &VectorClock) -> bool {
        self.entries.iter().all(|(r, v)| *v <= other.get(*r))
    }

    pub fn concurrent(&self, other: &VectorClock) -> bool {
        !self.leq(other) && !other.leq(self)
    }

    pub fn join_assign(&mut self, other: &VectorClock) {
        for (r, v) in &other.entries {
            self.observe(*r, *v);
        }
    }

    pub fn join(&self, other: &VectorClock) -> VectorClock {
        let mut out = self.clone();
        out.join_assign(other);
        out
    }

    pub fn with(mut self, replica: ReplicaId, value: u64) -> Self {
        self.set(replica, value);
        self
    }

    pub fn sum(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ReplicaId, u64)> + '_ {
        self.entries.iter().map(|(r, v)| (*r, *v))
    }
}

impl FromIterator<(ReplicaId, u64)> for VectorClock {
    fn from_iter<I: IntoIterator<Item = (ReplicaId, u64)>>(iter: I) -> Self {
        let mut vc = VectorClock::new();
        for (r, v) in iter {
            vc.observe(r, v);
        }
        vc
    }
}

impl PartialOrd for VectorClock {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self.leq(other), other.leq(self)) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}

impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (r, v)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", r.0, v)?;
        }
        f.write_str("}")
    }
}
