use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crdt::ReplicaId;
use crate::fmke::ProcessMode;
use crate::store::{Ablations, ObjectKey, Update};

/// Scripted simulation input, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub replica_count: usize,
    pub seed: u64,
    /// Inclusive range of per-message delays, in ticks.
    pub delay_range: [u64; 2],
    #[serde(default)]
    pub duplication_probability: f64,
    /// Deliver messages on each link in send order.
    #[serde(default)]
    pub fifo: bool,
    #[serde(default)]
    pub process_mode: ProcessMode,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default)]
    pub bounded: Vec<BoundedDecl>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundedDecl {
    pub key: ObjectKey,
    pub bound: i64,
    pub initial: i64,
    pub shares: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Op(ClientStep),
    Partition(Vec<Vec<ReplicaId>>),
    Heal,
    Advance(u64),
    Assert(Check),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientStep {
    pub client: String,
    pub replica: ReplicaId,
    #[serde(flatten)]
    pub action: ClientAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyUpdate {
    pub key: ObjectKey,
    pub op: Update,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ClientAction {
    /// Opens an interactive transaction kept by the client until `commit`
    /// or `abort`.
    Begin,
    Read {
        key: ObjectKey,
    },
    Update {
        key: ObjectKey,
        op: Update,
    },
    Commit,
    Abort,
    /// One-shot transaction: all reads, then all updates, then commit. With
    /// `protected` non-empty it runs under the tokens of those objects.
    Txn {
        #[serde(default)]
        reads: Vec<ObjectKey>,
        #[serde(default)]
        updates: Vec<KeyUpdate>,
        #[serde(default)]
        protected: Vec<ObjectKey>,
    },
    CreatePrescription {
        prescription: String,
        patient: String,
        doctor: String,
        pharmacy: String,
        medications: BTreeMap<String, u64>,
    },
    UpdatePrescriptionMedication {
        prescription: String,
        medication: String,
        delta: u64,
    },
    ProcessPrescription {
        prescription: String,
        medication: String,
        n: u64,
    },
    GetStaffPrescriptions {
        staff: String,
    },
    GetPharmacyPrescriptions {
        pharmacy: String,
    },
    BcIncrement {
        key: ObjectKey,
        n: u64,
    },
    /// Decrement that falls back to a synchronous rights transfer when the
    /// local share is too small.
    BcDecrement {
        key: ObjectKey,
        n: u64,
    },
    BcTransfer {
        key: ObjectKey,
        to: ReplicaId,
        n: u64,
    },
}

impl ClientAction {
    pub fn name(&self) -> &'static str {
        match self {
            ClientAction::Begin => "begin",
            ClientAction::Read { .. } => "read",
            ClientAction::Update { .. } => "update",
            ClientAction::Commit => "commit",
            ClientAction::Abort => "abort",
            ClientAction::Txn { .. } => "txn",
            ClientAction::CreatePrescription { .. } => "create_prescription",
            ClientAction::UpdatePrescriptionMedication { .. } => "update_prescription_medication",
            ClientAction::ProcessPrescription { .. } => "process_prescription",
            ClientAction::GetStaffPrescriptions { .. } => "get_staff_prescriptions",
            ClientAction::GetPharmacyPrescriptions { .. } => "get_pharmacy_prescriptions",
            ClientAction::BcIncrement { .. } => "bc_increment",
            ClientAction::BcDecrement { .. } => "bc_decrement",
            ClientAction::BcTransfer { .. } => "bc_transfer",
        }
    }
}

/// Value at `path` inside the value read for `key`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadPath {
    pub key: ObjectKey,
    #[serde(default)]
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadCondition {
    pub key: ObjectKey,
    #[serde(default)]
    pub path: Vec<String>,
    pub equals: serde_json::Value,
}

/// Pure assertion evaluated at the point it appears in the step list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Quiescent and every replica holds identical state.
    Converged,
    Quiescent,
    /// No built-in store invariant has been violated so far.
    NoViolations,
    /// No transaction so far observed all of the conditions at once.
    ReadsNever {
        all: Vec<ReadCondition>,
    },
    /// Every transaction that read both paths saw equal values.
    ReadsEqual {
        a: ReadPath,
        b: ReadPath,
    },
    /// Every transaction saw identical prescription copies and no dangling
    /// prescription references.
    FmkeConsistent,
    /// Number of finished operations with the given result.
    Outcomes {
        #[serde(default)]
        action: Option<String>,
        result: String,
        /// Restrict to operations that did (or did not) wait.
        #[serde(default)]
        blocked: Option<bool>,
        #[serde(default)]
        min: Option<usize>,
        #[serde(default)]
        max: Option<usize>,
    },
    /// Current value at one replica.
    Value {
        replica: ReplicaId,
        key: ObjectKey,
        #[serde(default)]
        path: Vec<String>,
        equals: serde_json::Value,
    },
    /// Every bounded counter is at or above its bound at every replica.
    BoundedSafe,
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::Converged => "converged",
            Check::Quiescent => "quiescent",
            Check::NoViolations => "no_violations",
            Check::ReadsNever { .. } => "reads_never",
            Check::ReadsEqual { .. } => "reads_equal",
            Check::FmkeConsistent => "fmke_consistent",
            Check::Outcomes { .. } => "outcomes",
            Check::Value { .. } => "value",
            Check::BoundedSafe => "bounded_safe",
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.replica_count == 0 {
            return bad("replica_count must be positive".into());
        }
        if self.delay_range[0] > self.delay_range[1] {
            return bad(format!("empty delay range {:?}", self.delay_range));
        }
        if !(0.0..=1.0).contains(&self.duplication_probability) {
            return bad("duplication_probability must be in [0, 1]".into());
        }
        let valid = |r: ReplicaId| r.index() < self.replica_count;
        for decl in &self.bounded {
            if decl.shares.len() != self.replica_count {
                return bad(format!("{}: one share per replica expected", decl.key));
            }
        }
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                Step::Op(op) => {
                    if !valid(op.replica) {
                        return bad(format!("step {i}: unknown replica {}", op.replica));
                    }
                    if let ClientAction::BcTransfer { to, .. } = &op.action {
                        if !valid(*to) {
                            return bad(format!("step {i}: unknown replica {to}"));
                        }
                    }
                }
                Step::Partition(groups) => {
                    check_groups(groups, self.replica_count)
                        .map_err(|m| ScenarioError::Invalid(format!("step {i}: {m}")))?;
                }
                Step::Assert(Check::Value { replica, .. }) if !valid(*replica) => {
                    return bad(format!("step {i}: unknown replica {replica}"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Groups must be disjoint and cover every replica.
pub fn check_groups(groups: &[Vec<ReplicaId>], replicas: usize) -> Result<(), String> {
    let mut seen = vec![false; replicas];
    for r in groups.iter().flatten() {
        match seen.get_mut(r.index()) {
            None => return Err(format!("unknown replica {r} in partition")),
            Some(true) => return Err(format!("replica {r} in two partition groups")),
            Some(s) => *s = true,
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(format!("replica r{i} missing from partition"));
    }
    Ok(())
}
