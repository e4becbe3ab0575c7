use std::collections::VecDeque;

use serde::Serialize;
use serde_json::{json, Value};

use crate::bounded::{BoundedError, BoundedOp};
use crate::clock::VectorClock;
use crate::cpsync::{canonical_order, token_home, transfer_candidates, SyncMsg};
use crate::crdt::{QueryValue, ReplicaId};
use crate::fmke::{self, ProcessMode};
use crate::store::{ObjectKey, Replica, SessionToken, StoreError, TxnHandle, Update};

use super::{Category, ClientAction, Message, Observation, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpResult {
    Ok,
    Delivered,
    Rejected,
    /// A transfer round found no rights to spare.
    Denied,
    Aborted,
    Failed,
}

impl OpResult {
    pub fn as_str(self) -> &'static str {
        match self {
            OpResult::Ok => "ok",
            OpResult::Delivered => "delivered",
            OpResult::Rejected => "rejected",
            OpResult::Denied => "denied",
            OpResult::Aborted => "aborted",
            OpResult::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpOutcome {
    pub id: u64,
    pub client: String,
    pub replica: ReplicaId,
    pub action: String,
    pub result: OpResult,
    pub detail: Value,
    pub submitted: u64,
    /// When the operation reached the head of its client's queue.
    pub started: u64,
    pub completed: u64,
    /// The operation waited at some point before completing.
    pub blocked: bool,
    /// Ran under cp-sync tokens.
    pub protected: bool,
    /// Needed a synchronous rights transfer.
    pub synced: bool,
    pub commit: Option<VectorClock>,
}

/// What a transaction body decided.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyOutput {
    pub result: OpResult,
    pub detail: Value,
}

impl BodyOutput {
    pub fn ok(detail: Value) -> Self {
        Self {
            result: OpResult::Ok,
            detail,
        }
    }
}

/// Code run inside a transaction at one replica. Returning
/// [`OpResult::Aborted`] aborts instead of committing.
pub trait TxnBody {
    fn run(&mut self, replica: &mut Replica, txn: &mut TxnHandle)
        -> Result<BodyOutput, StoreError>;
}

impl<F> TxnBody for F
where
    F: FnMut(&mut Replica, &mut TxnHandle) -> Result<BodyOutput, StoreError>,
{
    fn run(
        &mut self,
        replica: &mut Replica,
        txn: &mut TxnHandle,
    ) -> Result<BodyOutput, StoreError> {
        self(replica, txn)
    }
}

pub enum Work {
    Action(ClientAction),
    Custom {
        name: String,
        protected: Vec<ObjectKey>,
        body: Box<dyn TxnBody>,
    },
}

impl Work {
    fn name(&self) -> String {
        match self {
            Work::Action(a) => a.name().to_string(),
            Work::Custom { name, .. } => name.clone(),
        }
    }

    fn protected(&self, mode: ProcessMode) -> Vec<ObjectKey> {
        match self {
            Work::Action(ClientAction::Txn { protected, .. }) => canonical_order(protected),
            Work::Action(ClientAction::ProcessPrescription { prescription, .. })
                if mode == ProcessMode::Cp =>
            {
                vec![fmke::prescription_key(prescription)]
            }
            Work::Custom { protected, .. } => canonical_order(protected),
            _ => Vec::new(),
        }
    }

    /// Steps of a transaction the client already opened.
    fn is_interactive(&self) -> bool {
        matches!(
            self,
            Work::Action(
                ClientAction::Read { .. }
                    | ClientAction::Update { .. }
                    | ClientAction::Commit
                    | ClientAction::Abort
            )
        )
    }
}

struct Pending {
    id: u64,
    replica: ReplicaId,
    work: Work,
    submitted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Acquire(usize),
    Grant(usize, u64),
    Fence,
    Run,
    Transfer,
}

struct TransferState {
    key: ObjectKey,
    amount: u64,
    candidates: Vec<ReplicaId>,
    next: usize,
    waiting: Option<(ReplicaId, u64)>,
    apply: Option<VectorClock>,
}

struct Active {
    op: Pending,
    started: u64,
    phase: Phase,
    objects: Vec<ObjectKey>,
    held: Vec<(ObjectKey, u64)>,
    fence: VectorClock,
    blocked: Option<&'static str>,
    was_blocked: bool,
    transfer: Option<TransferState>,
}

#[derive(Default)]
pub(super) struct Client {
    session: SessionToken,
    last_replica: Option<ReplicaId>,
    queue: VecDeque<Pending>,
    active: Option<Active>,
    open: Option<TxnHandle>,
}

impl Client {
    pub(super) fn enqueue(&mut self, id: u64, replica: ReplicaId, work: Work, now: u64) {
        self.queue.push_back(Pending {
            id,
            replica,
            work,
            submitted: now,
        });
    }

    pub(super) fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.active.is_none() && self.open.is_none()
    }
}

enum Progress {
    Done(OpResult, Value, Option<VectorClock>),
    Blocked(&'static str),
}

impl Simulation {
    pub(super) fn progress_client(&mut self, name: &str) {
        loop {
            let client = self.clients.get_mut(name).expect("client exists");
            if client.active.is_none() {
                let Some(op) = client.queue.pop_front() else {
                    return;
                };
                let objects = op.work.protected(self.cfg.process_mode);
                client.active = Some(Active {
                    op,
                    started: self.now,
                    phase: Phase::Acquire(0),
                    objects,
                    held: Vec::new(),
                    fence: VectorClock::new(),
                    blocked: None,
                    was_blocked: false,
                    transfer: None,
                });
                self.transitions += 1;
            }
            let mut act = client.active.take().unwrap();
            match self.step(name, &mut act) {
                Progress::Done(result, detail, commit) => {
                    self.transitions += 1;
                    self.finish(name, act, result, detail, commit);
                }
                Progress::Blocked(reason) => {
                    if act.blocked != Some(reason) {
                        act.blocked = Some(reason);
                        act.was_blocked = true;
                        let payload = json!({
                            "client": name,
                            "op": act.op.id,
                            "action": act.op.work.name(),
                            "reason": reason,
                            "objects": act.objects.iter().map(|k| k.to_string()).collect::<Vec<_>>(),
                        });
                        self.trace
                            .push(self.now, Some(act.op.replica), Category::Blocked, payload);
                    }
                    self.clients.get_mut(name).unwrap().active = Some(act);
                    return;
                }
            }
        }
    }

    fn finish(
        &mut self,
        name: &str,
        act: Active,
        result: OpResult,
        detail: Value,
        commit: Option<VectorClock>,
    ) {
        let client = self.clients.get_mut(name).unwrap();
        client.last_replica = Some(act.op.replica);
        let outcome = OpOutcome {
            id: act.op.id,
            client: name.to_string(),
            replica: act.op.replica,
            action: act.op.work.name(),
            result,
            detail,
            submitted: act.op.submitted,
            started: act.started,
            completed: self.now,
            blocked: act.was_blocked,
            protected: !act.objects.is_empty(),
            synced: act.transfer.is_some(),
            commit,
        };
        let payload = json!({
            "client": name,
            "op": outcome.id,
            "action": outcome.action,
            "result": result.as_str(),
            "detail": outcome.detail,
        });
        self.trace
            .push(self.now, Some(outcome.replica), Category::Outcome, payload);
        self.outcomes.push(outcome);
    }

    fn step(&mut self, name: &str, act: &mut Active) -> Progress {
        let r = act.op.replica;
        loop {
            match act.phase {
                Phase::Acquire(i) if i == act.objects.len() => act.phase = Phase::Fence,
                Phase::Acquire(i) => {
                    self.next_req += 1;
                    let req = self.next_req;
                    let object = act.objects[i].clone();
                    let home = token_home(&object, self.replicas.len());
                    let payload = json!({
                        "event": "request",
                        "object": object.to_string(),
                        "home": home,
                        "req": req,
                    });
                    self.trace.push(self.now, Some(r), Category::Token, payload);
                    if home == r {
                        self.token_request(home, (r, req), object);
                    } else {
                        let msg = SyncMsg::TokenRequest { object, req };
                        self.send(r, home, Message::Sync(msg));
                    }
                    act.phase = Phase::Grant(i, req);
                    self.transitions += 1;
                }
                Phase::Grant(i, req) => match self.grants.remove(&(r, req)) {
                    Some(token) => {
                        let object = act.objects[i].clone();
                        self.replicas[r.index()].grant_token(object.clone());
                        act.fence.join_assign(&token.fence);
                        act.held.push((object, req));
                        act.phase = Phase::Acquire(i + 1);
                        self.transitions += 1;
                    }
                    None => return Progress::Blocked("token"),
                },
                Phase::Fence => {
                    if !act.fence.leq(self.replicas[r.index()].applied()) {
                        return Progress::Blocked("fence");
                    }
                    act.phase = Phase::Run;
                }
                Phase::Run => return self.run_op(name, act),
                Phase::Transfer => {
                    if let Some(p) = self.transfer_wait(r, act) {
                        return p;
                    }
                }
            }
        }
    }

    /// Advances a pending rights transfer. `None` means the decrement should
    /// be retried.
    fn transfer_wait(&mut self, r: ReplicaId, act: &mut Active) -> Option<Progress> {
        let ts = act.transfer.as_mut().expect("transfer state");
        if let Some(clock) = &ts.apply {
            if !clock.leq(self.replicas[r.index()].applied()) {
                return Some(Progress::Blocked("sync_transfer"));
            }
            ts.apply = None;
            act.phase = Phase::Run;
            self.transitions += 1;
            return None;
        }
        if let Some((peer, req)) = ts.waiting {
            let Some((granted, commit)) = self.replies.remove(&(r, req)) else {
                return Some(Progress::Blocked("sync_transfer"));
            };
            let payload = json!({
                "event": "reply",
                "key": ts.key.to_string(),
                "from": peer,
                "granted": granted,
            });
            self.trace
                .push(self.now, Some(r), Category::Transfer, payload);
            ts.waiting = None;
            ts.next += 1;
            self.transitions += 1;
            if granted > 0 {
                ts.apply = commit;
            }
            // Retries the decrement once the transfer is visible.
            if ts.apply.is_some() {
                return None;
            }
        }
        if ts.next >= ts.candidates.len() {
            let detail = json!({ "key": ts.key.to_string(), "missing": ts.amount });
            return Some(Progress::Done(OpResult::Denied, detail, None));
        }
        self.next_req += 1;
        let req = self.next_req;
        let peer = ts.candidates[ts.next];
        ts.waiting = Some((peer, req));
        let payload = json!({
            "event": "request",
            "key": ts.key.to_string(),
            "to": peer,
            "amount": ts.amount,
        });
        self.trace
            .push(self.now, Some(r), Category::Transfer, payload);
        let msg = SyncMsg::TransferRequest {
            key: ts.key.clone(),
            amount: ts.amount,
            req,
        };
        self.send(r, peer, Message::Sync(msg));
        self.transitions += 1;
        Some(Progress::Blocked("sync_transfer"))
    }

    fn run_op(&mut self, name: &str, act: &mut Active) -> Progress {
        let r = act.op.replica;
        if act.op.work.is_interactive() {
            return self.run_interactive(name, act);
        }
        let client = self.clients.get_mut(name).unwrap();
        let begin_only = matches!(act.op.work, Work::Action(ClientAction::Begin));
        if begin_only && client.open.is_some() {
            return Progress::Done(
                OpResult::Failed,
                json!("a transaction is already open"),
                None,
            );
        }
        let migrated = client.last_replica.is_some_and(|l| l != r);
        let Some(mut txn) = self.replicas[r.index()].try_begin(&client.session) else {
            return Progress::Blocked(if migrated {
                "session_migration"
            } else {
                "session"
            });
        };
        let payload = json!({
            "client": name,
            "op": act.op.id,
            "snapshot": txn.snapshot(),
        });
        self.trace.push(self.now, Some(r), Category::Begin, payload);
        if begin_only {
            self.clients.get_mut(name).unwrap().open = Some(txn);
            return Progress::Done(OpResult::Ok, Value::Null, None);
        }
        for (key, _) in &act.held {
            txn.require_token(key.clone());
        }

        let rep = &mut self.replicas[r.index()];
        let body = match &mut act.op.work {
            Work::Action(action) => run_action(rep, &mut txn, action),
            Work::Custom { body, .. } => body.run(rep, &mut txn),
        };
        let out = match body {
            Ok(out) => out,
            Err(StoreError::Bounded(BoundedError::InsufficientRights {
                available,
                requested,
                ..
            })) => {
                let _ = rep.abort(&mut txn);
                self.trace.push(
                    self.now,
                    Some(r),
                    Category::Abort,
                    json!({ "client": name, "op": act.op.id }),
                );
                return self.start_transfer(act, available, requested);
            }
            Err(e) => {
                let _ = rep.abort(&mut txn);
                self.trace.push(
                    self.now,
                    Some(r),
                    Category::Abort,
                    json!({ "client": name, "op": act.op.id }),
                );
                self.release_all(r, act, VectorClock::new());
                return Progress::Done(OpResult::Failed, json!(e.to_string()), None);
            }
        };
        if out.result == OpResult::Aborted {
            let _ = rep.abort(&mut txn);
            self.trace.push(
                self.now,
                Some(r),
                Category::Abort,
                json!({ "client": name, "op": act.op.id }),
            );
            self.observe(name, &txn);
            self.release_all(r, act, VectorClock::new());
            return Progress::Done(OpResult::Aborted, out.detail, None);
        }
        match self.commit_txn(name, r, &mut txn) {
            Ok(clock) => {
                self.release_all(r, act, clock.clone());
                Progress::Done(out.result, out.detail, Some(clock))
            }
            Err(e) => {
                self.release_all(r, act, VectorClock::new());
                Progress::Done(OpResult::Failed, json!(e.to_string()), None)
            }
        }
    }

    fn start_transfer(&mut self, act: &mut Active, available: i64, requested: u64) -> Progress {
        let key = match &act.op.work {
            Work::Action(ClientAction::BcDecrement { key, .. }) => key.clone(),
            _ => {
                let detail = json!(format!("insufficient rights: {available} available"));
                return Progress::Done(OpResult::Failed, detail, None);
            }
        };
        let r = act.op.replica;
        let amount = requested - available.clamp(0, requested as i64) as u64;
        match &mut act.transfer {
            Some(ts) => ts.amount = amount,
            None => {
                let candidates = match self.replicas[r.index()].current(&key) {
                    Ok(obj) => obj
                        .as_bounded()
                        .map(|b| transfer_candidates(b, r))
                        .unwrap_or_default(),
                    Err(_) => Vec::new(),
                };
                act.transfer = Some(TransferState {
                    key,
                    amount,
                    candidates,
                    next: 0,
                    waiting: None,
                    apply: None,
                });
            }
        }
        act.phase = Phase::Transfer;
        self.transitions += 1;
        match self.transfer_wait(r, act) {
            Some(p) => p,
            None => Progress::Blocked("sync_transfer"),
        }
    }

    fn release_all(&mut self, r: ReplicaId, act: &mut Active, fence: VectorClock) {
        for (object, req) in std::mem::take(&mut act.held) {
            let payload = json!({
                "event": "return",
                "object": object.to_string(),
                "req": req,
                "fence": fence,
            });
            self.trace.push(self.now, Some(r), Category::Token, payload);
            self.release_token(r, &object, req, fence.clone());
        }
    }

    fn commit_txn(
        &mut self,
        name: &str,
        r: ReplicaId,
        txn: &mut TxnHandle,
    ) -> Result<VectorClock, StoreError> {
        let info = self.replicas[r.index()].commit(txn)?;
        self.observe(name, txn);
        if info.records.is_empty() {
            let payload = json!({ "client": name, "read_only": true, "snapshot": info.clock });
            self.trace
                .push(self.now, Some(r), Category::Commit, payload);
        } else {
            self.trace_records(r, &info.records, Category::Commit);
        }
        let client = self.clients.get_mut(name).unwrap();
        client.session.observe(&info.clock);
        let clock = info.clock.clone();
        self.broadcast(r, info.records);
        Ok(clock)
    }

    fn observe(&mut self, name: &str, txn: &TxnHandle) {
        if txn.read_values().is_empty() {
            return;
        }
        self.observations.push(Observation {
            time: self.now,
            client: name.to_string(),
            replica: txn.replica(),
            snapshot: txn.snapshot().clone(),
            reads: txn
                .read_values()
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_json()))
                .collect(),
        });
    }

    fn run_interactive(&mut self, name: &str, act: &mut Active) -> Progress {
        let r = act.op.replica;
        let client = self.clients.get_mut(name).unwrap();
        let Some(mut txn) = client.open.take() else {
            return Progress::Done(OpResult::Failed, json!("no open transaction"), None);
        };
        if txn.replica() != r {
            client.open = Some(txn);
            return Progress::Done(
                OpResult::Failed,
                json!("transaction is open at another replica"),
                None,
            );
        }
        let rep = &mut self.replicas[r.index()];
        let Work::Action(action) = &act.op.work else {
            unreachable!("interactive work is an action")
        };
        let step = match action {
            ClientAction::Read { key } => rep.read(&mut txn, key).map(|v| v.to_json()),
            ClientAction::Update { key, op } => rep.update(&mut txn, key, op).map(|_| Value::Null),
            ClientAction::Abort => {
                let res = rep.abort(&mut txn).map(|_| Value::Null);
                self.trace.push(
                    self.now,
                    Some(r),
                    Category::Abort,
                    json!({ "client": name, "op": act.op.id }),
                );
                self.observe(name, &txn);
                return match res {
                    Ok(_) => Progress::Done(OpResult::Aborted, Value::Null, None),
                    Err(e) => Progress::Done(OpResult::Failed, json!(e.to_string()), None),
                };
            }
            ClientAction::Commit => {
                return match self.commit_txn(name, r, &mut txn) {
                    Ok(clock) => Progress::Done(OpResult::Ok, Value::Null, Some(clock)),
                    Err(e) => Progress::Done(OpResult::Failed, json!(e.to_string()), None),
                };
            }
            _ => unreachable!("not an interactive step"),
        };
        self.clients.get_mut(name).unwrap().open = Some(txn);
        match step {
            Ok(v) => Progress::Done(OpResult::Ok, v, None),
            Err(e) => Progress::Done(OpResult::Failed, json!(e.to_string()), None),
        }
    }
}

/// Body of a non-interactive action.
fn run_action(
    rep: &mut Replica,
    txn: &mut TxnHandle,
    action: &ClientAction,
) -> Result<BodyOutput, StoreError> {
    match action {
        ClientAction::Txn { reads, updates, .. } => {
            let mut values = serde_json::Map::new();
            for key in reads {
                values.insert(key.to_string(), rep.read(txn, key)?.to_json());
            }
            for u in updates {
                rep.update(txn, &u.key, &u.op)?;
            }
            Ok(BodyOutput::ok(Value::Object(values)))
        }
        ClientAction::CreatePrescription {
            prescription,
            patient,
            doctor,
            pharmacy,
            medications,
        } => {
            let p = fmke::NewPrescription {
                id: prescription.clone(),
                patient: patient.clone(),
                doctor: doctor.clone(),
                pharmacy: pharmacy.clone(),
                medications: medications.clone(),
            };
            fmke::create_prescription(rep, txn, &p)?;
            Ok(BodyOutput::ok(Value::Null))
        }
        ClientAction::UpdatePrescriptionMedication {
            prescription,
            medication,
            delta,
        } => {
            if fmke::update_prescription_medication(rep, txn, prescription, medication, *delta)? {
                Ok(BodyOutput::ok(Value::Null))
            } else {
                Ok(BodyOutput {
                    result: OpResult::Rejected,
                    detail: json!("unknown prescription"),
                })
            }
        }
        ClientAction::ProcessPrescription {
            prescription,
            medication,
            n,
        } => {
            let res = fmke::process_prescription(rep, txn, prescription, medication, *n)?;
            let result = match res {
                fmke::Processed::Delivered => OpResult::Delivered,
                fmke::Processed::Rejected => OpResult::Rejected,
            };
            Ok(BodyOutput {
                result,
                detail: Value::Null,
            })
        }
        ClientAction::GetStaffPrescriptions { staff } => {
            let list = fmke::get_staff_prescriptions(rep, txn, staff)?;
            Ok(BodyOutput::ok(
                serde_json::to_value(list).expect("serializable"),
            ))
        }
        ClientAction::GetPharmacyPrescriptions { pharmacy } => {
            let list = fmke::get_pharmacy_prescriptions(rep, txn, pharmacy)?;
            Ok(BodyOutput::ok(
                serde_json::to_value(list).expect("serializable"),
            ))
        }
        ClientAction::BcIncrement { key, n } => {
            rep.update(txn, key, &Update::Bounded(BoundedOp::BcIncrement(*n)))?;
            Ok(BodyOutput::ok(counter_value(rep, txn, key)?))
        }
        ClientAction::BcDecrement { key, n } => {
            rep.update(txn, key, &Update::Bounded(BoundedOp::BcDecrement(*n)))?;
            Ok(BodyOutput::ok(counter_value(rep, txn, key)?))
        }
        ClientAction::BcTransfer { key, to, n } => {
            rep.update(
                txn,
                key,
                &Update::Bounded(BoundedOp::BcTransfer { to: *to, n: *n }),
            )?;
            Ok(BodyOutput::ok(Value::Null))
        }
        ClientAction::Begin
        | ClientAction::Read { .. }
        | ClientAction::Update { .. }
        | ClientAction::Commit
        | ClientAction::Abort => unreachable!("handled by the interactive path"),
    }
}

fn counter_value(rep: &Replica, txn: &mut TxnHandle, key: &ObjectKey) -> Result<Value, StoreError> {
    let state = rep.read_bounded(txn, key)?;
    Ok(json!(QueryValue::Counter(state.value()).to_json()))
}
