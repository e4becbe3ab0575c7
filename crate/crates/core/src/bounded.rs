//! Escrow counter that keeps `value() >= bound` without coordinating
//! decrements that fit in the local share.
//!
//! `rights[i][i]` counts the rights replica `i` created (initial share plus
//! increments), `rights[i][j]` the rights `i` handed to `j`, and
//! `consumed[i]` the decrements performed at `i`. Replica `i` only ever writes
//! row `i` and `consumed[i]`, every cell only grows, and replicas converge by
//! cell-wise maximum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crdt::ReplicaId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundedError {
    #[error("insufficient rights at {replica}: holds {available}, needs {requested}")]
    InsufficientRights {
        replica: ReplicaId,
        available: i64,
        requested: u64,
    },
    #[error("shares sum to {sum} but initial - bound = {expected}")]
    BadShares { sum: u64, expected: i64 },
    #[error("initial value {initial} below bound {bound}")]
    BelowBound { initial: i64, bound: i64 },
    #[error("counter states differ in bound or replica count")]
    Mismatch,
    #[error("replica {0} out of range")]
    UnknownReplica(ReplicaId),
    #[error("cannot transfer rights from {0} to itself")]
    SelfTransfer(ReplicaId),
    #[error("amount must be positive")]
    ZeroAmount,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundedCounterState {
    pub bound: i64,
    pub rights: Vec<Vec<u64>>,
    pub consumed: Vec<u64>,
}

impl BoundedCounterState {
    pub fn new(bound: i64, initial: i64, shares: &[u64]) -> Result<Self, BoundedError> {
        if initial < bound {
            return Err(BoundedError::BelowBound { initial, bound });
        }
        let sum: u64 = shares.iter().sum();
        if sum as i64 != initial - bound {
            return Err(BoundedError::BadShares {
                sum,
                expected: initial - bound,
            });
        }
        let n = shares.len();
        let mut rights = vec![vec![0; n]; n];
        for (i, share) in shares.iter().enumerate() {
            rights[i][i] = *share;
        }
        Ok(Self {
            bound,
            rights,
            consumed: vec![0; n],
        })
    }

    pub fn replicas(&self) -> usize {
        self.consumed.len()
    }

    pub fn value(&self) -> i64 {
        let created: u64 = (0..self.replicas()).map(|i| self.rights[i][i]).sum();
        let consumed: u64 = self.consumed.iter().sum();
        self.bound + created as i64 - consumed as i64
    }

    pub fn local_rights(&self, replica: ReplicaId) -> i64 {
        let i = replica.index();
        if i >= self.replicas() {
            return 0;
        }
        let mut rights = self.rights[i][i] as i64 - self.consumed[i] as i64;
        for j in (0..self.replicas()).filter(|j| *j != i) {
            rights += self.rights[j][i] as i64;
            rights -= self.rights[i][j] as i64;
        }
        rights
    }

    fn check_replica(&self, replica: ReplicaId) -> Result<usize, BoundedError> {
        let i = replica.index();
        if i < self.replicas() {
            Ok(i)
        } else {
            Err(BoundedError::UnknownReplica(replica))
        }
    }

    fn require(&self, replica: ReplicaId, n: u64) -> Result<(), BoundedError> {
        let available = self.local_rights(replica);
        if available < n as i64 {
            Err(BoundedError::InsufficientRights {
                replica,
                available,
                requested: n,
            })
        } else {
            Ok(())
        }
    }

    pub fn increment(&mut self, replica: ReplicaId, n: u64) -> Result<(), BoundedError> {
        if n == 0 {
            return Err(BoundedError::ZeroAmount);
        }
        let i = self.check_replica(replica)?;
        self.rights[i][i] += n;
        Ok(())
    }

    /// Consumes `n` local rights; on failure the state is untouched.
    pub fn decrement(&mut self, replica: ReplicaId, n: u64) -> Result<(), BoundedError> {
        if n == 0 {
            return Err(BoundedError::ZeroAmount);
        }
        let i = self.check_replica(replica)?;
        self.require(replica, n)?;
        self.consumed[i] += n;
        Ok(())
    }

    pub fn transfer(&mut self, from: ReplicaId, to: ReplicaId, n: u64) -> Result<(), BoundedError> {
        if n == 0 {
            return Err(BoundedError::ZeroAmount);
        }
        if from == to {
            return Err(BoundedError::SelfTransfer(from));
        }
        let i = self.check_replica(from)?;
        let j = self.check_replica(to)?;
        self.require(from, n)?;
        self.rights[i][j] += n;
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self, BoundedError> {
        let mut out = self.clone();
        out.merge_assign(other)?;
        Ok(out)
    }

    pub fn merge_assign(&mut self, other: &Self) -> Result<(), BoundedError> {
        if self.bound != other.bound || self.replicas() != other.replicas() {
            return Err(BoundedError::Mismatch);
        }
        for (row, orow) in self.rights.iter_mut().zip(&other.rights) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c = (*c).max(*o);
            }
        }
        for (c, o) in self.consumed.iter_mut().zip(&other.consumed) {
            *c = (*c).max(*o);
        }
        Ok(())
    }

    /// Copy keeping only the cells owned by `replica` (its rights row and
    /// consumption entry); all other cells are zero.
    pub fn owned_by(&self, replica: ReplicaId) -> Self {
        let i = replica.index();
        let n = self.replicas();
        let mut rights = vec![vec![0; n]; n];
        let mut consumed = vec![0; n];
        if i < n {
            rights[i] = self.rights[i].clone();
            consumed[i] = self.consumed[i];
        }
        Self {
            bound: self.bound,
            rights,
            consumed,
        }
    }

    /// Whether every cell of `self` is >= the same cell of `earlier`.
    pub fn dominates(&self, earlier: &Self) -> bool {
        self.replicas() == earlier.replicas()
            && self
                .rights
                .iter()
                .flatten()
                .zip(earlier.rights.iter().flatten())
                .all(|(a, b)| a >= b)
            && self
                .consumed
                .iter()
                .zip(&earlier.consumed)
                .all(|(a, b)| a >= b)
    }
}

/// Operation on a bounded counter issued inside a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundedOp {
    BcIncrement(u64),
    BcDecrement(u64),
    BcTransfer { to: ReplicaId, n: u64 },
}

impl BoundedOp {
    pub fn apply(
        &self,
        state: &mut BoundedCounterState,
        at: ReplicaId,
    ) -> Result<(), BoundedError> {
        match *self {
            BoundedOp::BcIncrement(n) => state.increment(at, n),
            BoundedOp::BcDecrement(n) => state.decrement(at, n),
            BoundedOp::BcTransfer { to, n } => state.transfer(at, to, n),
        }
    }
}
