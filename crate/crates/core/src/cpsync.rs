//! Selective synchronisation: exclusive per-object tokens and rights transfer
//! for bounded counters.
//!
//! Every object has a static coordinator replica that grants its token to
//! one requester at a time. A token carries a fence, the commit clock of the
//! last protected transaction on the object; the next holder must apply
//! everything up to the fence before it begins, so protected transactions on
//! one object are totally ordered and each observes all of its predecessors.
//! A requester cut off from the coordinator stays blocked until the partition
//! heals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounded::{BoundedCounterState, BoundedOp};
use crate::clock::VectorClock;
use crate::crdt::ReplicaId;
use crate::store::{CommitInfo, Object, ObjectKey, Replica, StoreError};

/// Coordinator of `key`'s token: FNV-1a of `bucket/key` modulo the replica
/// count.
pub fn token_home(key: &ObjectKey, replicas: usize) -> ReplicaId {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key
        .bucket
        .bytes()
        .chain(std::iter::once(b'/'))
        .chain(key.key.bytes())
    {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ReplicaId((hash % replicas.max(1) as u64) as u32)
}

/// Objects in acquisition order, duplicates removed. Every protected
/// transaction acquires in this order, so waits-for cycles cannot form.
pub fn canonical_order<'a>(objects: impl IntoIterator<Item = &'a ObjectKey>) -> Vec<ObjectKey> {
    objects
        .into_iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncToken {
    pub object: ObjectKey,
    pub holder: Option<ReplicaId>,
    pub fence: VectorClock,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("{replica} does not hold the token for {object}")]
    NotHolder {
        object: ObjectKey,
        replica: ReplicaId,
    },
}

/// Identifies one acquisition attempt: requesting replica and a request id
/// unique at that replica.
pub type Requester = (ReplicaId, u64);

#[derive(Debug, Clone, Default)]
struct Slot {
    holder: Option<Requester>,
    fence: VectorClock,
    waiters: VecDeque<Requester>,
}

/// Token state kept at a coordinator replica.
#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    slots: BTreeMap<ObjectKey, Slot>,
}

impl TokenTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Grants the token if free, otherwise queues the requester (grants are
    /// served in arrival order).
    pub fn request(&mut self, object: &ObjectKey, who: Requester) -> Option<SyncToken> {
        let slot = self.slots.entry(object.clone()).or_default();
        if slot.holder.is_none() {
            slot.holder = Some(who);
            Some(SyncToken {
                object: object.clone(),
                holder: Some(who.0),
                fence: slot.fence.clone(),
            })
        } else {
            slot.waiters.push_back(who);
            None
        }
    }

    /// Returns the token, raising its fence to include `commit`, and grants
    /// it to the next waiter if any.
    pub fn release(
        &mut self,
        object: &ObjectKey,
        who: Requester,
        commit: &VectorClock,
    ) -> Result<Option<(Requester, SyncToken)>, SyncError> {
        let slot = match self.slots.get_mut(object) {
            Some(s) if s.holder == Some(who) => s,
            _ => {
                return Err(SyncError::NotHolder {
                    object: object.clone(),
                    replica: who.0,
                })
            }
        };
        slot.fence.join_assign(commit);
        slot.holder = slot.waiters.pop_front();
        Ok(slot.holder.map(|next| {
            (
                next,
                SyncToken {
                    object: object.clone(),
                    holder: Some(next.0),
                    fence: slot.fence.clone(),
                },
            )
        }))
    }

    pub fn holder(&self, object: &ObjectKey) -> Option<ReplicaId> {
        self.slots.get(object).and_then(|s| s.holder.map(|h| h.0))
    }

    pub fn fence(&self, object: &ObjectKey) -> VectorClock {
        self.slots
            .get(object)
            .map(|s| s.fence.clone())
            .unwrap_or_default()
    }

    pub fn waiting(&self, object: &ObjectKey) -> usize {
        self.slots.get(object).map_or(0, |s| s.waiters.len())
    }

    pub fn is_idle(&self) -> bool {
        self.slots
            .values()
            .all(|s| s.holder.is_none() && s.waiters.is_empty())
    }
}

/// Messages of the synchronisation protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "msg", rename_all = "snake_case")]
pub enum SyncMsg {
    TokenRequest {
        object: ObjectKey,
        req: u64,
    },
    TokenGrant {
        token: SyncToken,
        req: u64,
    },
    TokenRelease {
        object: ObjectKey,
        req: u64,
        fence: VectorClock,
    },
    TransferRequest {
        key: ObjectKey,
        amount: u64,
        req: u64,
    },
    TransferReply {
        key: ObjectKey,
        req: u64,
        granted: u64,
        commit: Option<VectorClock>,
    },
}

/// Peers to ask for rights, richest first according to `state` (ties by
/// replica id).
pub fn transfer_candidates(state: &BoundedCounterState, requester: ReplicaId) -> Vec<ReplicaId> {
    let mut peers: Vec<ReplicaId> = (0..state.replicas() as u32)
        .map(ReplicaId)
        .filter(|r| *r != requester)
        .collect();
    peers.sort_by_key(|r| (std::cmp::Reverse(state.local_rights(*r)), *r));
    peers
}

/// Peer side of a rights transfer: hands over as much of `amount` as its
/// local share allows, in a transaction of its own.
pub fn serve_transfer(
    peer: &mut Replica,
    key: &ObjectKey,
    requester: ReplicaId,
    amount: u64,
) -> Result<(u64, Option<CommitInfo>), StoreError> {
    let available = match peer.current(key)? {
        Object::Bounded(b) => b.local_rights(peer.id()),
        Object::Crdt(_) => return Err(StoreError::KindMismatch(key.clone())),
    };
    let give = amount.min(available.max(0) as u64);
    if give == 0 {
        return Ok((0, None));
    }
    let info = peer.bounded_txn(
        key,
        BoundedOp::BcTransfer {
            to: requester,
            n: give,
        },
    )?;
    Ok((give, Some(info)))
}
