//! A replicated key-value store that stays available under partition while
//! preserving application invariants:
//!
//! * [`crdt`]: operation-based register, counter, add-wins set and map.
//! * [`bounded`]: escrow counter keeping `value >= bound`.
//! * [`store`]: replicas providing transactional causal consistency.
//! * [`cpsync`]: per-object tokens and rights transfer for the few
//!   operations that must synchronise.
//! * [`sim`]: deterministic network simulator and scenario runner.
//! * [`cise`]: bounded checker for individual correctness, convergence and
//!   precondition stability.
//! * [`fmke`]: prescription application built on the store.

pub mod bounded;
pub mod cise;
pub mod clock;
pub mod cpsync;
pub mod crdt;
pub mod demos;
pub mod fmke;
pub mod sim;
pub mod store;

/// Stable single-line text encoding used in traces and golden comparisons.
pub trait Canonical {
    fn canonical(&self) -> String;
}

impl<T: serde::Serialize + ?Sized> Canonical for T {
    fn canonical(&self) -> String {
        serde_json::to_string(self).expect("canonical encoding")
    }
}
