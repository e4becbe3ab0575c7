//! Prescription management application.
//!
//! Each prescription lives in its own map record and is copied into the
//! records of its patient, doctor and pharmacy. Every operation updates all
//! copies in one transaction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cise::{AppModel, Counterexample, OpInstance, Val};
use crate::cpsync::token_home;
use crate::crdt::{Op, QueryValue, ReplicaId};
use crate::sim::{Check, ClientAction, ClientStep, Scenario, Step};
use crate::store::{Ablations, ObjectKey, ObjectKind, Replica, StoreError, TxnHandle, Update};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessMode {
    /// `process_prescription` runs under the prescription's token.
    Cp,
    /// `process_prescription` is a plain transaction and may over-deliver.
    #[default]
    BestEffort,
}

impl FromStr for ProcessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cp" => Ok(ProcessMode::Cp),
            "best-effort" => Ok(ProcessMode::BestEffort),
            other => Err(format!("unknown process mode `{other}`")),
        }
    }
}

impl fmt::Display for ProcessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProcessMode::Cp => "cp",
            ProcessMode::BestEffort => "best-effort",
        })
    }
}

pub const ROLES: [&str; 3] = ["patient", "doctor", "pharmacy"];

pub fn prescription_key(id: &str) -> ObjectKey {
    ObjectKey::new("prescription", id, ObjectKind::Map)
}

pub fn patient_key(id: &str) -> ObjectKey {
    ObjectKey::new("patient", id, ObjectKind::Map)
}

pub fn doctor_key(id: &str) -> ObjectKey {
    ObjectKey::new("doctor", id, ObjectKind::Map)
}

pub fn pharmacy_key(id: &str) -> ObjectKey {
    ObjectKey::new("pharmacy", id, ObjectKind::Map)
}

fn role_key(role: &str, id: &str) -> ObjectKey {
    ObjectKey::new(role, id, ObjectKind::Map)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewPrescription {
    pub id: String,
    pub patient: String,
    pub doctor: String,
    pub pharmacy: String,
    pub medications: BTreeMap<String, u64>,
}

impl NewPrescription {
    pub fn validate(&self) -> Result<(), String> {
        let ids = [&self.id, &self.patient, &self.doctor, &self.pharmacy];
        if ids.iter().any(|i| i.is_empty()) {
            return Err("identifiers must be non-empty".into());
        }
        if self.medications.is_empty() || self.medications.values().any(|c| *c == 0) {
            return Err("medication counts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Processed {
    Delivered,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrescriptionView {
    pub id: String,
    pub patient: String,
    pub doctor: String,
    pub pharmacy: String,
    pub medications: BTreeMap<String, i64>,
}

fn field(field: &str, op: Op) -> Update {
    Update::Crdt(Op::MapUpdate {
        field: field.to_string(),
        op: Box::new(op),
    })
}

fn nested(path: &[&str], leaf: Op) -> Op {
    path.iter().rev().fold(leaf, |op, f| Op::MapUpdate {
        field: f.to_string(),
        op: Box::new(op),
    })
}

/// Adds `delta` to `med` in the prescription record and in every copy.
fn add_everywhere(
    rep: &mut Replica,
    txn: &mut TxnHandle,
    view: &PrescriptionView,
    med: &str,
    delta: i64,
) -> Result<(), StoreError> {
    let pkey = prescription_key(&view.id);
    rep.update(
        txn,
        &pkey,
        &Update::Crdt(nested(&["medications", med], Op::Add(delta))),
    )?;
    for (role, id) in ROLES
        .iter()
        .zip([&view.patient, &view.doctor, &view.pharmacy])
    {
        let op = nested(
            &["prescriptions", &view.id, "medications", med],
            Op::Add(delta),
        );
        rep.update(txn, &role_key(role, id), &Update::Crdt(op))?;
    }
    Ok(())
}

/// Writes the prescription record, then links it into the patient, doctor
/// and pharmacy records, all in `txn`. Arguments must be valid.
pub fn create_prescription(
    rep: &mut Replica,
    txn: &mut TxnHandle,
    p: &NewPrescription,
) -> Result<(), StoreError> {
    let pkey = prescription_key(&p.id);
    for (role, id) in ROLES.iter().zip([&p.patient, &p.doctor, &p.pharmacy]) {
        rep.update(txn, &pkey, &field(role, Op::Assign(id.clone())))?;
    }
    let view = PrescriptionView {
        id: p.id.clone(),
        patient: p.patient.clone(),
        doctor: p.doctor.clone(),
        pharmacy: p.pharmacy.clone(),
        medications: BTreeMap::new(),
    };
    for (med, count) in &p.medications {
        add_everywhere(rep, txn, &view, med, *count as i64)?;
    }
    Ok(())
}

/// Reads a prescription record; `None` when it is not initialised in the
/// transaction's snapshot.
pub fn read_prescription(
    rep: &Replica,
    txn: &mut TxnHandle,
    id: &str,
) -> Result<Option<PrescriptionView>, StoreError> {
    let value = rep.read(txn, &prescription_key(id))?;
    Ok(view_of(id, &value))
}

fn view_of(id: &str, value: &QueryValue) -> Option<PrescriptionView> {
    let map = value.as_map()?;
    let reg = |name: &str| match map.get(name) {
        Some(QueryValue::Register(Some(v))) => Some(v.clone()),
        _ => None,
    };
    let medications = match map.get("medications") {
        Some(QueryValue::Map(m)) => m
            .iter()
            .filter_map(|(k, v)| v.as_counter().map(|c| (k.clone(), c)))
            .collect(),
        _ => BTreeMap::new(),
    };
    Some(PrescriptionView {
        id: id.to_string(),
        patient: reg("patient")?,
        doctor: reg("doctor")?,
        pharmacy: reg("pharmacy")?,
        medications,
    })
}

/// Returns `false` without writing when the prescription does not exist.
pub fn update_prescription_medication(
    rep: &mut Replica,
    txn: &mut TxnHandle,
    id: &str,
    med: &str,
    delta: u64,
) -> Result<bool, StoreError> {
    let Some(view) = read_prescription(rep, txn, id)? else {
        return Ok(false);
    };
    if delta == 0 {
        return Ok(false);
    }
    add_everywhere(rep, txn, &view, med, delta as i64)?;
    Ok(true)
}

/// Delivers `n` units of `med` if the prescription allows it in the
/// transaction's snapshot.
pub fn process_prescription(
    rep: &mut Replica,
    txn: &mut TxnHandle,
    id: &str,
    med: &str,
    n: u64,
) -> Result<Processed, StoreError> {
    let Some(view) = read_prescription(rep, txn, id)? else {
        return Ok(Processed::Rejected);
    };
    let count = view.medications.get(med).copied().unwrap_or(0);
    if n == 0 || count < n as i64 {
        return Ok(Processed::Rejected);
    }
    add_everywhere(rep, txn, &view, med, -(n as i64))?;
    Ok(Processed::Delivered)
}

fn listed(
    rep: &Replica,
    txn: &mut TxnHandle,
    key: &ObjectKey,
) -> Result<Vec<PrescriptionView>, StoreError> {
    let record = rep.read(txn, key)?;
    let ids: Vec<String> = record
        .as_map()
        .and_then(|m| m.get("prescriptions"))
        .and_then(QueryValue::as_map)
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    let mut out = Vec::new();
    for id in ids {
        if let Some(v) = read_prescription(rep, txn, &id)? {
            out.push(v);
        }
    }
    Ok(out)
}

/// Prescriptions written by doctor `staff`.
pub fn get_staff_prescriptions(
    rep: &Replica,
    txn: &mut TxnHandle,
    staff: &str,
) -> Result<Vec<PrescriptionView>, StoreError> {
    listed(rep, txn, &doctor_key(staff))
}

pub fn get_pharmacy_prescriptions(
    rep: &Replica,
    txn: &mut TxnHandle,
    pharmacy: &str,
) -> Result<Vec<PrescriptionView>, StoreError> {
    listed(rep, txn, &pharmacy_key(pharmacy))
}

fn meds_of(v: Option<&Value>) -> Value {
    v.cloned()
        .unwrap_or_else(|| Value::Object(Default::default()))
}

/// Problems visible in one transaction's reads (keyed `bucket/key`): a copy
/// whose medications differ from the prescription record, a prescription
/// not linked from a record it names, or a link to a prescription that is
/// not initialised.
pub fn check_reads(reads: &BTreeMap<String, Value>) -> Vec<String> {
    let mut problems = Vec::new();
    for (key, value) in reads {
        if let Some(pid) = key.strip_prefix("prescription/") {
            if value.get("patient").is_none() {
                continue;
            }
            let meds = meds_of(value.get("medications"));
            for role in ROLES {
                let Some(id) = value.get(role).and_then(Value::as_str) else {
                    problems.push(format!("{key} lacks a {role}"));
                    continue;
                };
                let Some(record) = reads.get(&format!("{role}/{id}")) else {
                    continue;
                };
                match record.get("prescriptions").and_then(|p| p.get(pid)) {
                    None => problems.push(format!("{key} is not linked from {role}/{id}")),
                    Some(copy) => {
                        let copied = meds_of(copy.get("medications"));
                        if copied != meds {
                            problems.push(format!(
                                "{role}/{id} holds {copied} for {pid}, the prescription holds {meds}"
                            ));
                        }
                    }
                }
            }
        }
        for role in ROLES {
            if key.strip_prefix(role).is_some_and(|r| r.starts_with('/')) {
                let linked = value.get("prescriptions").and_then(Value::as_object);
                for pid in linked.into_iter().flat_map(|m| m.keys()) {
                    let target = reads.get(&format!("prescription/{pid}"));
                    if target.is_some_and(|t| t.get("patient").is_none()) {
                        problems.push(format!("{key} links to missing prescription {pid}"));
                    }
                }
            }
        }
    }
    problems
}

/// Checker model of the application, with medication counts in `0..=3`.
pub fn fmke_model() -> AppModel {
    AppModel::from_json(include_str!("../models/fmke.json")).expect("bundled model is valid")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("counter-example has no second operation")]
    MissingOperation,
    #[error("cannot replay a state with {0}")]
    UnsupportedState(String),
    #[error("cannot replay operation {0}")]
    UnsupportedOperation(String),
}

const REPLAY_ID: &str = "rx-1";
const REPLAY_MED: &str = "aspirin";

fn int_arg(inst: &OpInstance, name: &str) -> Result<u64, ReplayError> {
    match inst.args.get(name) {
        Some(Val::Int(n)) if *n > 0 => Ok(*n as u64),
        _ => Err(ReplayError::UnsupportedOperation(inst.to_string())),
    }
}

fn replay_action(inst: &OpInstance) -> Result<ClientAction, ReplayError> {
    Ok(match inst.op.as_str() {
        "process_prescription" => ClientAction::ProcessPrescription {
            prescription: REPLAY_ID.into(),
            medication: REPLAY_MED.into(),
            n: int_arg(inst, "n")?,
        },
        "update_prescription_medication" => ClientAction::UpdatePrescriptionMedication {
            prescription: REPLAY_ID.into(),
            medication: REPLAY_MED.into(),
            delta: int_arg(inst, "d")?,
        },
        "get_staff_prescriptions" => ClientAction::GetStaffPrescriptions {
            staff: "doc-1".into(),
        },
        "get_pharmacy_prescriptions" => ClientAction::GetPharmacyPrescriptions {
            pharmacy: "ph-1".into(),
        },
        _ => return Err(ReplayError::UnsupportedOperation(inst.to_string())),
    })
}

/// Scenario that sets up the counter-example's state on two replicas, then
/// runs its two operations on opposite sides of a partition. The first
/// operation runs at the prescription's token home.
pub fn counterexample_scenario(
    cex: &Counterexample,
    mode: ProcessMode,
) -> Result<Scenario, ReplayError> {
    let op2 = cex.op2.as_ref().ok_or(ReplayError::MissingOperation)?;
    match cex.state.get("created") {
        Some(Val::Int(1)) => {}
        other => {
            return Err(ReplayError::UnsupportedState(format!(
                "created = {other:?}"
            )))
        }
    }
    let count = match cex.state.get("count") {
        Some(Val::Int(c)) if *c >= 0 => *c as u64,
        other => return Err(ReplayError::UnsupportedState(format!("count = {other:?}"))),
    };
    let home = token_home(&prescription_key(REPLAY_ID), 2);
    let away = ReplicaId(1 - home.0);
    let op = |client: &str, replica: ReplicaId, action: ClientAction| {
        Step::Op(ClientStep {
            client: client.into(),
            replica,
            action,
        })
    };
    let create = ClientAction::CreatePrescription {
        prescription: REPLAY_ID.into(),
        patient: "pat-1".into(),
        doctor: "doc-1".into(),
        pharmacy: "ph-1".into(),
        medications: [(REPLAY_MED.to_string(), count.max(1))].into(),
    };
    let mut steps = vec![op("doctor", home, create)];
    if count == 0 {
        steps.push(op(
            "setup",
            home,
            ClientAction::ProcessPrescription {
                prescription: REPLAY_ID.into(),
                medication: REPLAY_MED.into(),
                n: 1,
            },
        ));
    }
    steps.extend([
        Step::Advance(20),
        Step::Partition(vec![vec![home], vec![away]]),
        op("pharmacist-a", home, replay_action(&cex.op1)?),
        op("pharmacist-b", away, replay_action(op2)?),
        Step::Advance(10),
        Step::Heal,
        Step::Advance(30),
        Step::Assert(Check::Converged),
        Step::Assert(Check::FmkeConsistent),
    ]);
    Ok(Scenario {
        name: format!("replay {} || {}", cex.op1, op2),
        replica_count: 2,
        seed: 1,
        delay_range: [1, 3],
        duplication_probability: 0.0,
        fifo: false,
        process_mode: mode,
        ablations: Ablations::default(),
        bounded: Vec::new(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, OpResult};
    use crate::store::SessionToken;
    use serde_json::json;

    fn rx(meds: &[(&str, u64)]) -> NewPrescription {
        NewPrescription {
            id: "rx".into(),
            patient: "pat".into(),
            doctor: "doc".into(),
            pharmacy: "ph".into(),
            medications: meds.iter().map(|(m, c)| (m.to_string(), *c)).collect(),
        }
    }

    fn committed(rep: &mut Replica, f: impl FnOnce(&mut Replica, &mut TxnHandle)) {
        let mut t = rep.try_begin(&SessionToken::default()).unwrap();
        f(rep, &mut t);
        rep.commit(&mut t).unwrap();
    }

    #[test]
    fn create_then_process_sequentially() {
        let mut rep = Replica::new(ReplicaId(0), 1, Ablations::default());
        committed(&mut rep, |r, t| {
            create_prescription(r, t, &rx(&[("aspirin", 1)])).unwrap()
        });
        let mut t = rep.try_begin(&SessionToken::default()).unwrap();
        let list = get_staff_prescriptions(&rep, &mut t, "doc").unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].medications["aspirin"], 1);
        assert!(check_reads(
            &t.read_values()
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_json()))
                .collect()
        )
        .is_empty());

        let mut first = Processed::Rejected;
        committed(&mut rep, |r, t| {
            first = process_prescription(r, t, "rx", "aspirin", 1).unwrap()
        });
        let mut second = Processed::Delivered;
        committed(&mut rep, |r, t| {
            second = process_prescription(r, t, "rx", "aspirin", 1).unwrap()
        });
        assert_eq!((first, second), (Processed::Delivered, Processed::Rejected));
    }

    #[test]
    fn update_creates_missing_medication_in_all_copies() {
        let mut rep = Replica::new(ReplicaId(0), 1, Ablations::default());
        committed(&mut rep, |r, t| {
            create_prescription(r, t, &rx(&[("aspirin", 1)])).unwrap()
        });
        committed(&mut rep, |r, t| {
            assert!(update_prescription_medication(r, t, "rx", "chamomile", 2).unwrap())
        });
        let v = rep.value(&pharmacy_key("ph")).unwrap().to_json();
        assert_eq!(
            v["prescriptions"]["rx"]["medications"]["chamomile"],
            json!(2)
        );
        let mut t = rep.try_begin(&SessionToken::default()).unwrap();
        assert!(!update_prescription_medication(&mut rep, &mut t, "nope", "x", 1).unwrap());
        assert!(get_pharmacy_prescriptions(&rep, &mut t, "unknown")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn check_reads_flags_unequal_and_dangling() {
        let mut reads = BTreeMap::new();
        reads.insert(
            "prescription/rx".to_string(),
            json!({"patient": "p", "doctor": "d", "pharmacy": "f", "medications": {"a": 1}}),
        );
        reads.insert(
            "patient/p".to_string(),
            json!({"prescriptions": {"rx": {"medications": {"a": 2}}}}),
        );
        reads.insert("pharmacy/f".to_string(), json!({}));
        reads.insert(
            "doctor/d".to_string(),
            json!({"prescriptions": {"rx": {"medications": {"a": 1}}, "ghost": {}}}),
        );
        reads.insert("prescription/ghost".to_string(), json!({}));
        let problems = check_reads(&reads);
        assert_eq!(problems.len(), 3, "{problems:?}");
    }

    #[test]
    fn validation() {
        assert!(rx(&[("a", 1)]).validate().is_ok());
        assert!(rx(&[]).validate().is_err());
        assert!(rx(&[("a", 0)]).validate().is_err());
        let mut p = rx(&[("a", 1)]);
        p.doctor.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn replay_contrasts_modes() {
        let report = crate::cise::check_stability(&fmke_model()).unwrap();
        let cex = report.counterexamples().next().unwrap().clone();
        let be = run(&counterexample_scenario(&cex, ProcessMode::BestEffort).unwrap());
        let delivered = be
            .outcomes_of("process_prescription")
            .filter(|o| o.result == OpResult::Delivered)
            .count();
        assert_eq!(delivered, 2);
        let cp = run(&counterexample_scenario(&cex, ProcessMode::Cp).unwrap());
        let results: Vec<(OpResult, bool)> = cp
            .outcomes_of("process_prescription")
            .map(|o| (o.result, o.blocked))
            .collect();
        assert_eq!(
            results,
            vec![(OpResult::Delivered, false), (OpResult::Rejected, true)]
        );
        assert!(cp.passed(), "{:?}", cp.failures);
    }

    #[test]
    fn mode_names() {
        assert_eq!("cp".parse::<ProcessMode>(), Ok(ProcessMode::Cp));
        assert_eq!(ProcessMode::BestEffort.to_string(), "best-effort");
        assert!("ap".parse::<ProcessMode>().is_err());
    }
}
