//! Deterministic discrete-event simulation of a set of replicas.
//!
//! Time is a logical tick. All randomness (message delays and duplication)
//! comes from one seeded generator, so a scenario and a seed fully determine
//! the trace.

mod audit;
mod check;
mod client;
mod net;
pub mod random;
mod scenario;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::bounded::BoundedCounterState;
use crate::clock::VectorClock;
use crate::cpsync::{token_home, SyncMsg, SyncToken, TokenTable};
use crate::crdt::ReplicaId;
use crate::fmke::ProcessMode;
use crate::store::{Ablations, ObjectKey, Replica, TxnRecord};
use crate::Canonical;

pub use audit::{availability_violations, mutual_exclusion_violations};
pub use client::{BodyOutput, OpOutcome, OpResult, TxnBody, Work};
pub use net::{Envelope, Message, Network};
pub use scenario::{
    check_groups, BoundedDecl, Check, ClientAction, ClientStep, KeyUpdate, ReadCondition, ReadPath,
    Scenario, ScenarioError, Step,
};
pub use trace::{Category, Trace, TraceEvent};

use client::Client;

/// Upper bound on processed events per run; reaching it is a failure.
const EVENT_LIMIT: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub replicas: usize,
    pub seed: u64,
    pub delay: (u64, u64),
    pub duplication: f64,
    pub fifo: bool,
    pub ablations: Ablations,
    pub process_mode: ProcessMode,
}

impl SimConfig {
    pub fn new(replicas: usize, seed: u64) -> Self {
        Self {
            replicas,
            seed,
            delay: (1, 5),
            duplication: 0.0,
            fifo: false,
            ablations: Ablations::default(),
            process_mode: ProcessMode::BestEffort,
        }
    }
}

/// A transaction's reads, kept for assertions over what clients observed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub time: u64,
    pub client: String,
    pub replica: ReplicaId,
    pub snapshot: VectorClock,
    /// Values keyed by `bucket/key`.
    pub reads: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertFailure {
    pub step: usize,
    pub check: String,
    pub message: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("{0}")]
    BadPartition(String),
    #[error("system is not quiescent")]
    NotQuiescent,
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
}

/// Everything produced by [`run`].
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub trace: Trace,
    pub failures: Vec<AssertFailure>,
    pub violations: Vec<String>,
    pub outcomes: Vec<OpOutcome>,
    pub observations: Vec<Observation>,
    pub quiescent: bool,
    /// `None` when the run ended without quiescence.
    pub converged: Option<bool>,
    pub end_time: u64,
}

impl RunReport {
    /// Every assertion held and no built-in store invariant was violated.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.violations.is_empty()
    }

    pub fn outcomes_of<'a>(&'a self, action: &'a str) -> impl Iterator<Item = &'a OpOutcome> {
        self.outcomes.iter().filter(move |o| o.action == action)
    }
}

pub struct Simulation {
    cfg: SimConfig,
    now: u64,
    rng: ChaCha8Rng,
    net: Network,
    replicas: Vec<Replica>,
    tokens: Vec<TokenTable>,
    clients: BTreeMap<String, Client>,
    grants: BTreeMap<(ReplicaId, u64), SyncToken>,
    replies: BTreeMap<(ReplicaId, u64), (u64, Option<VectorClock>)>,
    bounded: BTreeMap<ObjectKey, i64>,
    reported_unsafe: BTreeSet<(ReplicaId, ObjectKey)>,
    /// Protocol messages already handled, so duplicates are dropped.
    delivered_sync: BTreeSet<(ReplicaId, ReplicaId, String)>,
    next_req: u64,
    next_op: u64,
    transitions: u64,
    events: u64,
    trace: Trace,
    observations: Vec<Observation>,
    outcomes: Vec<OpOutcome>,
    violations: Vec<String>,
    failures: Vec<AssertFailure>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Self {
        let n = cfg.replicas;
        Self {
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            net: Network::new(n, cfg.delay, cfg.duplication, cfg.fifo),
            replicas: (0..n as u32)
                .map(|i| Replica::new(ReplicaId(i), n, cfg.ablations))
                .collect(),
            tokens: vec![TokenTable::new(); n],
            clients: BTreeMap::new(),
            grants: BTreeMap::new(),
            replies: BTreeMap::new(),
            bounded: BTreeMap::new(),
            reported_unsafe: BTreeSet::new(),
            delivered_sync: BTreeSet::new(),
            next_req: 0,
            next_op: 0,
            transitions: 0,
            events: 0,
            trace: Trace::default(),
            observations: Vec::new(),
            outcomes: Vec::new(),
            violations: Vec::new(),
            failures: Vec::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn replica(&self, r: ReplicaId) -> &Replica {
        &self.replicas[r.index()]
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn outcomes(&self) -> &[OpOutcome] {
        &self.outcomes
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Installs the same initial bounded counter at every replica.
    pub fn declare_bounded(&mut self, key: ObjectKey, state: BoundedCounterState) {
        self.bounded.insert(key.clone(), state.bound);
        for rep in &mut self.replicas {
            rep.declare_bounded(key.clone(), state.clone());
        }
    }

    /// Queues `work` for `client` at `replica` and lets every client make
    /// progress.
    pub fn submit(
        &mut self,
        client: &str,
        replica: ReplicaId,
        work: Work,
    ) -> Result<u64, SimError> {
        if replica.index() >= self.replicas.len() {
            return Err(SimError::UnknownReplica(replica));
        }
        self.next_op += 1;
        let id = self.next_op;
        let now = self.now;
        self.clients
            .entry(client.to_string())
            .or_default()
            .enqueue(id, replica, work, now);
        self.progress_all();
        Ok(id)
    }

    /// Runs `body` under the tokens of `objects`: the protected section is
    /// totally ordered with every other protected section on those objects.
    pub fn run_protected(
        &mut self,
        client: &str,
        replica: ReplicaId,
        objects: Vec<ObjectKey>,
        name: &str,
        body: impl TxnBody + 'static,
    ) -> Result<u64, SimError> {
        let work = Work::Custom {
            name: name.to_string(),
            protected: objects,
            body: Box::new(body),
        };
        self.submit(client, replica, work)
    }

    pub fn partition(&mut self, groups: &[Vec<ReplicaId>]) -> Result<(), SimError> {
        check_groups(groups, self.replicas.len()).map_err(SimError::BadPartition)?;
        self.net.partition(groups);
        let payload = json!({ "partition": groups });
        self.trace.push(self.now, None, Category::Net, payload);
        Ok(())
    }

    pub fn heal(&mut self) {
        if !self.net.is_partitioned() {
            return;
        }
        let flushed = self.net.heal(self.now, &mut self.rng);
        let payload = json!({ "heal": { "flushed": flushed } });
        self.trace.push(self.now, None, Category::Net, payload);
    }

    /// Processes every event due within the next `ticks` ticks.
    pub fn advance(&mut self, ticks: u64) {
        let limit = self.now + ticks;
        self.process(Some(limit));
        self.now = self.now.max(limit);
    }

    /// Processes events until the queue is empty.
    pub fn drain(&mut self) {
        self.process(None);
    }

    fn process(&mut self, limit: Option<u64>) {
        while let Some((at, env)) = self.net.pop_due(limit) {
            self.events += 1;
            if self.events > EVENT_LIMIT {
                self.failures.push(AssertFailure {
                    step: usize::MAX,
                    check: "event_limit".into(),
                    message: format!("more than {EVENT_LIMIT} events"),
                });
                return;
            }
            self.now = at;
            self.deliver(env);
            self.after_event();
        }
    }

    /// No message in flight or parked, no client work outstanding, no open
    /// transaction, no pending record and no token held or awaited.
    pub fn quiescent(&self) -> bool {
        self.net.is_idle()
            && self.clients.values().all(Client::is_idle)
            && self.replicas.iter().all(|r| r.pending_count() == 0)
            && self.tokens.iter().all(TokenTable::is_idle)
    }

    /// Whether every replica holds the same state.
    pub fn check_convergence(&self) -> Result<bool, SimError> {
        if !self.quiescent() {
            return Err(SimError::NotQuiescent);
        }
        let encode = |r: &Replica| r.cache().iter().collect::<Vec<_>>().canonical();
        let first = encode(&self.replicas[0]);
        Ok(self.replicas[1..].iter().all(|r| encode(r) == first))
    }

    /// Evaluates `check`, records the result in the trace and returns it.
    pub fn assert(&mut self, step: usize, check: &Check) -> bool {
        let result = self.evaluate(check);
        let payload = match &result {
            Ok(()) => json!({ "check": check.name(), "pass": true }),
            Err(m) => json!({ "check": check.name(), "pass": false, "message": m }),
        };
        self.trace.push(self.now, None, Category::Assert, payload);
        match result {
            Ok(()) => true,
            Err(message) => {
                self.failures.push(AssertFailure {
                    step,
                    check: check.name().to_string(),
                    message,
                });
                false
            }
        }
    }

    pub fn failures(&self) -> &[AssertFailure] {
        &self.failures
    }

    pub fn into_report(self, name: &str) -> RunReport {
        let quiescent = self.quiescent();
        let converged = self.check_convergence().ok();
        RunReport {
            name: name.to_string(),
            seed: self.cfg.seed,
            trace: self.trace,
            failures: self.failures,
            violations: self.violations,
            outcomes: self.outcomes,
            observations: self.observations,
            quiescent,
            converged,
            end_time: self.now,
        }
    }

    fn send(&mut self, from: ReplicaId, to: ReplicaId, msg: Message) {
        let env = Envelope { from, to, msg };
        self.net.schedule(env, self.now, &mut self.rng);
    }

    fn broadcast(&mut self, from: ReplicaId, records: Vec<TxnRecord>) {
        for rec in records {
            for to in 0..self.replicas.len() as u32 {
                if to != from.0 {
                    self.send(from, ReplicaId(to), Message::Txn(rec.clone()));
                }
            }
        }
    }

    fn trace_records(&mut self, at: ReplicaId, records: &[TxnRecord], category: Category) {
        for rec in records {
            let mut payload = json!({
                "txn": rec.id.to_string(),
                "snapshot": rec.snapshot,
                "commit": rec.commit,
                "keys": rec.writes.keys().map(|k| k.to_string()).collect::<Vec<_>>(),
            });
            if let Some(f) = rec.fragment {
                payload["fragment"] = json!([f.parent.to_string(), f.index, f.total]);
            }
            self.trace.push(self.now, Some(at), category, payload);
        }
    }

    fn deliver(&mut self, env: Envelope) {
        let Envelope { from, to, msg } = env;
        if let Message::Sync(m) = &msg {
            if !self.delivered_sync.insert((from, to, m.canonical())) {
                let payload = json!({ "duplicate": m, "from": from });
                self.trace.push(self.now, Some(to), Category::Net, payload);
                return;
            }
        }
        match msg {
            Message::Txn(rec) => {
                let rep = &mut self.replicas[to.index()];
                let before = rep.log().len();
                let id = rec.id;
                let made_visible = rep.receive(rec);
                let applied = rep.applied().clone();
                let fresh = rep.log()[before..].to_vec();
                let payload = json!({
                    "txn": id.to_string(),
                    "from": from,
                    "visible": made_visible,
                    "applied": applied,
                });
                self.trace
                    .push(self.now, Some(to), Category::Receive, payload);
                self.trace_records(to, &fresh, Category::Apply);
            }
            Message::Sync(SyncMsg::TokenRequest { object, req }) => {
                self.token_request(to, (from, req), object);
            }
            Message::Sync(SyncMsg::TokenGrant { token, req }) => {
                self.grants.insert((to, req), token);
            }
            Message::Sync(SyncMsg::TokenRelease { object, req, fence }) => {
                self.token_release(to, (from, req), &object, &fence);
            }
            Message::Sync(SyncMsg::TransferRequest { key, amount, req }) => {
                self.transfer_request(to, from, key, amount, req);
            }
            Message::Sync(SyncMsg::TransferReply {
                granted,
                commit,
                req,
                ..
            }) => {
                self.replies.insert((to, req), (granted, commit));
            }
        }
    }

    fn token_request(&mut self, home: ReplicaId, who: (ReplicaId, u64), object: ObjectKey) {
        let granted = self.tokens[home.index()].request(&object, who);
        let payload = json!({
            "event": if granted.is_some() { "grant" } else { "queued" },
            "object": object.to_string(),
            "holder": who.0,
            "req": who.1,
            "fence": granted.as_ref().map(|t| t.fence.clone()),
        });
        self.trace
            .push(self.now, Some(home), Category::Token, payload);
        if let Some(token) = granted {
            self.hand_over(home, who, token);
        }
    }

    fn hand_over(&mut self, home: ReplicaId, who: (ReplicaId, u64), token: SyncToken) {
        if who.0 == home {
            self.grants.insert(who, token);
        } else {
            let msg = SyncMsg::TokenGrant { token, req: who.1 };
            self.send(home, who.0, Message::Sync(msg));
        }
    }

    fn token_release(
        &mut self,
        home: ReplicaId,
        who: (ReplicaId, u64),
        object: &ObjectKey,
        fence: &VectorClock,
    ) {
        match self.tokens[home.index()].release(object, who, fence) {
            Ok(next) => {
                let payload = json!({
                    "event": "release",
                    "object": object.to_string(),
                    "holder": who.0,
                    "req": who.1,
                    "fence": self.tokens[home.index()].fence(object),
                });
                self.trace
                    .push(self.now, Some(home), Category::Token, payload);
                if let Some((next, token)) = next {
                    let payload = json!({
                        "event": "grant",
                        "object": object.to_string(),
                        "holder": next.0,
                        "req": next.1,
                        "fence": token.fence,
                    });
                    self.trace
                        .push(self.now, Some(home), Category::Token, payload);
                    self.hand_over(home, next, token);
                }
            }
            Err(e) => self.record_violation(Some(home), format!("token: {e}")),
        }
    }

    /// Releases a token held by `replica`, raising its fence to `fence`.
    fn release_token(
        &mut self,
        replica: ReplicaId,
        object: &ObjectKey,
        req: u64,
        fence: VectorClock,
    ) {
        self.replicas[replica.index()].drop_token(object);
        let home = token_home(object, self.replicas.len());
        if home == replica {
            self.token_release(home, (replica, req), object, &fence);
        } else {
            let msg = SyncMsg::TokenRelease {
                object: object.clone(),
                req,
                fence,
            };
            self.send(replica, home, Message::Sync(msg));
        }
    }

    fn transfer_request(
        &mut self,
        peer: ReplicaId,
        requester: ReplicaId,
        key: ObjectKey,
        amount: u64,
        req: u64,
    ) {
        let served = crate::cpsync::serve_transfer(
            &mut self.replicas[peer.index()],
            &key,
            requester,
            amount,
        );
        let (granted, commit) = match served {
            Ok((granted, Some(info))) => {
                self.trace_records(peer, &info.records, Category::Commit);
                let clock = info.clock.clone();
                self.broadcast(peer, info.records);
                (granted, Some(clock))
            }
            Ok((granted, None)) => (granted, None),
            Err(e) => {
                self.record_violation(Some(peer), format!("transfer: {e}"));
                (0, None)
            }
        };
        let payload = json!({
            "event": "serve",
            "key": key.to_string(),
            "to": requester,
            "requested": amount,
            "granted": granted,
        });
        self.trace
            .push(self.now, Some(peer), Category::Transfer, payload);
        let msg = SyncMsg::TransferReply {
            key,
            req,
            granted,
            commit,
        };
        self.send(peer, requester, Message::Sync(msg));
    }

    fn record_violation(&mut self, replica: Option<ReplicaId>, message: String) {
        self.trace
            .push(self.now, replica, Category::Violation, json!(message));
        self.violations.push(message);
    }

    /// Built-in checks run after every event, then client progress.
    fn after_event(&mut self) {
        for i in 0..self.replicas.len() {
            self.replicas[i].check_atomic_visibility();
            for v in self.replicas[i].take_violations() {
                self.record_violation(Some(ReplicaId(i as u32)), v);
            }
        }
        self.check_bounded();
        self.progress_all();
    }

    fn check_bounded(&mut self) {
        let mut found = Vec::new();
        for (key, bound) in &self.bounded {
            for rep in &self.replicas {
                let below = rep
                    .value(key)
                    .ok()
                    .and_then(|v| v.as_counter())
                    .is_some_and(|v| v < *bound);
                if below && !self.reported_unsafe.contains(&(rep.id(), key.clone())) {
                    found.push((rep.id(), key.clone()));
                }
            }
        }
        for (r, key) in found {
            self.reported_unsafe.insert((r, key.clone()));
            self.record_violation(Some(r), format!("bound: {key} below its bound at {r}"));
        }
    }

    fn progress_all(&mut self) {
        loop {
            let before = self.transitions;
            let names: Vec<String> = self.clients.keys().cloned().collect();
            for name in names {
                self.progress_client(&name);
            }
            if self.transitions == before {
                break;
            }
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> RunReport {
    run_with(scenario, None, Ablations::default(), None)
}

/// Runs a scenario with an optional seed override, extra ablations and an
/// optional process-mode override.
pub fn run_with(
    scenario: &Scenario,
    seed: Option<u64>,
    ablations: Ablations,
    mode: Option<ProcessMode>,
) -> RunReport {
    let cfg = SimConfig {
        replicas: scenario.replica_count,
        seed: seed.unwrap_or(scenario.seed),
        delay: (scenario.delay_range[0], scenario.delay_range[1]),
        duplication: scenario.duplication_probability,
        fifo: scenario.fifo,
        ablations: scenario.ablations.union(ablations),
        process_mode: mode.unwrap_or(scenario.process_mode),
    };
    let mut sim = Simulation::new(cfg);
    for decl in &scenario.bounded {
        match BoundedCounterState::new(decl.bound, decl.initial, &decl.shares) {
            Ok(state) => sim.declare_bounded(decl.key.clone(), state),
            Err(e) => sim.failures.push(AssertFailure {
                step: 0,
                check: "bounded".into(),
                message: format!("{}: {e}", decl.key),
            }),
        }
    }
    for (i, step) in scenario.steps.iter().enumerate() {
        match step {
            Step::Op(op) => {
                let work = Work::Action(op.action.clone());
                if let Err(e) = sim.submit(&op.client, op.replica, work) {
                    sim.failures.push(AssertFailure {
                        step: i,
                        check: "op".into(),
                        message: e.to_string(),
                    });
                }
            }
            Step::Partition(groups) => {
                if let Err(e) = sim.partition(groups) {
                    sim.failures.push(AssertFailure {
                        step: i,
                        check: "partition".into(),
                        message: e.to_string(),
                    });
                }
            }
            Step::Heal => sim.heal(),
            Step::Advance(n) => sim.advance(*n),
            Step::Assert(check) => {
                sim.assert(i, check);
            }
        }
    }
    sim.drain();
    sim.into_report(&scenario.name)
}

#[cfg(test)]
mod tests;
