//! Operation-based CRDTs: last-writer-wins register, PN-counter, add-wins set
//! and add-wins map.
//!
//! States and effects are plain values. An effect carries all the context
//! (timestamp, dot, observed dots) needed to apply it at any replica, so two
//! effects generated by concurrent transactions can be applied in either order
//! and yield the same state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense replica index in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl ReplicaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Globally unique event tag: `(origin, counter)` with `counter` strictly
/// increasing per origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Dot {
    pub origin: ReplicaId,
    pub counter: u64,
}

impl Dot {
    pub fn new(origin: ReplicaId, counter: u64) -> Self {
        Self { origin, counter }
    }
}

/// Register timestamp, compared lexicographically on `(time, replica)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LwwTs {
    pub time: u64,
    pub replica: ReplicaId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeTag {
    Register,
    Counter,
    Set,
    Map,
}

impl FromStr for TypeTag {
    type Err = CrdtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "register" => Ok(TypeTag::Register),
            "counter" => Ok(TypeTag::Counter),
            "set" => Ok(TypeTag::Set),
            "map" => Ok(TypeTag::Map),
            other => Err(CrdtError::UnknownType(other.to_string())),
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TypeTag::Register => "register",
            TypeTag::Counter => "counter",
            TypeTag::Set => "set",
            TypeTag::Map => "map",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("unknown type tag `{0}`")]
    UnknownType(String),
    #[error("type mismatch: state is {state}, effect targets {effect}")]
    TypeMismatch { state: TypeTag, effect: TypeTag },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwwRegister {
    pub value: Option<String>,
    pub ts: Option<LwwTs>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PnCounter {
    pub inc: BTreeMap<ReplicaId, u64>,
    pub dec: BTreeMap<ReplicaId, u64>,
}

impl PnCounter {
    pub fn value(&self) -> i64 {
        let inc: u64 = self.inc.values().sum();
        let dec: u64 = self.dec.values().sum();
        inc as i64 - dec as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwSet {
    /// An element is present iff its dot set is non-empty; empty sets are
    /// never stored.
    pub entries: BTreeMap<String, BTreeSet<Dot>>,
}

impl AwSet {
    pub fn contains(&self, element: &str) -> bool {
        self.entries.contains_key(element)
    }

    pub fn dots_of(&self, element: &str) -> BTreeSet<Dot> {
        self.entries.get(element).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapField {
    pub tag: TypeTag,
    /// Dots of the updates that keep this field visible. A field whose alive
    /// set is empty is hidden but keeps its nested state.
    pub alive: BTreeSet<Dot>,
    pub state: CrdtState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwMap {
    pub entries: BTreeMap<String, MapField>,
}

impl AwMap {
    pub fn field(&self, name: &str) -> Option<&CrdtState> {
        self.entries
            .get(name)
            .filter(|f| !f.alive.is_empty())
            .map(|f| &f.state)
    }

    pub fn alive_dots(&self, name: &str) -> BTreeSet<Dot> {
        self.entries
            .get(name)
            .map(|f| f.alive.clone())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CrdtState {
    Register(LwwRegister),
    Counter(PnCounter),
    Set(AwSet),
    Map(AwMap),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CrdtEffect {
    RegisterAssign {
        value: String,
        ts: LwwTs,
    },
    CounterAdd {
        origin: ReplicaId,
        delta: i64,
    },
    SetAdd {
        element: String,
        dot: Dot,
    },
    SetRemove {
        element: String,
        observed: BTreeSet<Dot>,
    },
    MapUpdate {
        field: String,
        effect: Box<CrdtEffect>,
        dot: Dot,
    },
    MapRemove {
        field: String,
        observed: BTreeSet<Dot>,
    },
}

impl CrdtEffect {
    pub fn type_tag(&self) -> TypeTag {
        match self {
            CrdtEffect::RegisterAssign { .. } => TypeTag::Register,
            CrdtEffect::CounterAdd { .. } => TypeTag::Counter,
            CrdtEffect::SetAdd { .. } | CrdtEffect::SetRemove { .. } => TypeTag::Set,
            CrdtEffect::MapUpdate { .. } | CrdtEffect::MapRemove { .. } => TypeTag::Map,
        }
    }

    /// Largest logical time mentioned by this effect (dot counters and
    /// register timestamps).
    pub fn max_time(&self) -> u64 {
        match self {
            CrdtEffect::RegisterAssign { ts, .. } => ts.time,
            CrdtEffect::CounterAdd { .. } => 0,
            CrdtEffect::SetAdd { dot, .. } => dot.counter,
            CrdtEffect::SetRemove { observed, .. } | CrdtEffect::MapRemove { observed, .. } => {
                observed.iter().map(|d| d.counter).max().unwrap_or(0)
            }
            CrdtEffect::MapUpdate { effect, dot, .. } => dot.counter.max(effect.max_time()),
        }
    }
}

/// User-facing value with CRDT metadata stripped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryValue {
    Register(Option<String>),
    Counter(i64),
    Set(BTreeSet<String>),
    Map(BTreeMap<String, QueryValue>),
}

impl QueryValue {
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            QueryValue::Register(v) => v.clone().map(Value::String).unwrap_or(Value::Null),
            QueryValue::Counter(c) => Value::from(*c),
            QueryValue::Set(s) => Value::Array(s.iter().cloned().map(Value::String).collect()),
            QueryValue::Map(m) => {
                Value::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
            }
        }
    }

    pub fn as_counter(&self) -> Option<i64> {
        match self {
            QueryValue::Counter(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, QueryValue>> {
        match self {
            QueryValue::Map(m) => Some(m),
            _ => None,
        }
    }
}

impl Serialize for QueryValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

/// Empty state of the given type.
pub fn new_state(tag: TypeTag) -> CrdtState {
    match tag {
        TypeTag::Register => CrdtState::Register(LwwRegister::default()),
        TypeTag::Counter => CrdtState::Counter(PnCounter::default()),
        TypeTag::Set => CrdtState::Set(AwSet::default()),
        TypeTag::Map => CrdtState::Map(AwMap::default()),
    }
}

/// Pure form of [`CrdtState::apply`].
pub fn apply(state: &CrdtState, effect: &CrdtEffect) -> Result<CrdtState, CrdtError> {
    let mut next = state.clone();
    next.apply(effect)?;
    Ok(next)
}

pub fn value_of(state: &CrdtState) -> QueryValue {
    state.value()
}

/// Whether `e1` and `e2` yield the same state from `state` in both orders.
pub fn concurrent_commute(
    state: &CrdtState,
    e1: &CrdtEffect,
    e2: &CrdtEffect,
) -> Result<bool, CrdtError> {
    let a = apply(&apply(state, e1)?, e2)?;
    let b = apply(&apply(state, e2)?, e1)?;
    Ok(a == b)
}

impl CrdtState {
    pub fn type_tag(&self) -> TypeTag {
        match self {
            CrdtState::Register(_) => TypeTag::Register,
            CrdtState::Counter(_) => TypeTag::Counter,
            CrdtState::Set(_) => TypeTag::Set,
            CrdtState::Map(_) => TypeTag::Map,
        }
    }

    pub fn apply(&mut self, effect: &CrdtEffect) -> Result<(), CrdtError> {
        match (self, effect) {
            (CrdtState::Register(reg), CrdtEffect::RegisterAssign { value, ts }) => {
                if reg.ts.is_none_or(|cur| *ts > cur) {
                    reg.value = Some(value.clone());
                    reg.ts = Some(*ts);
                }
            }
            (CrdtState::Counter(ctr), CrdtEffect::CounterAdd { origin, delta }) => {
                if *delta > 0 {
                    *ctr.inc.entry(*origin).or_insert(0) += delta.unsigned_abs();
                } else if *delta < 0 {
                    *ctr.dec.entry(*origin).or_insert(0) += delta.unsigned_abs();
                }
            }
            (CrdtState::Set(set), CrdtEffect::SetAdd { element, dot }) => {
                set.entries.entry(element.clone()).or_default().insert(*dot);
            }
            (CrdtState::Set(set), CrdtEffect::SetRemove { element, observed }) => {
                if let Some(dots) = set.entries.get_mut(element) {
                    dots.retain(|d| !observed.contains(d));
                    if dots.is_empty() {
                        set.entries.remove(element);
                    }
                }
            }
            (CrdtState::Map(map), CrdtEffect::MapUpdate { field, effect, dot }) => {
                let tag = effect.type_tag();
                let entry = map
                    .entries
                    .entry(field.clone())
                    .or_insert_with(|| MapField {
                        tag,
                        alive: BTreeSet::new(),
                        state: new_state(tag),
                    });
                if entry.tag != tag {
                    return Err(CrdtError::TypeMismatch {
                        state: entry.tag,
                        effect: tag,
                    });
                }
                entry.state.apply(effect)?;
                entry.alive.insert(*dot);
            }
            (CrdtState::Map(map), CrdtEffect::MapRemove { field, observed }) => {
                if let Some(entry) = map.entries.get_mut(field) {
                    entry.alive.retain(|d| !observed.contains(d));
                }
            }
            (state, effect) => {
                return Err(CrdtError::TypeMismatch {
                    state: state.type_tag(),
                    effect: effect.type_tag(),
                })
            }
        }
        Ok(())
    }

    pub fn value(&self) -> QueryValue {
        match self {
            CrdtState::Register(r) => QueryValue::Register(r.value.clone()),
            CrdtState::Counter(c) => QueryValue::Counter(c.value()),
            CrdtState::Set(s) => QueryValue::Set(s.entries.keys().cloned().collect()),
            CrdtState::Map(m) => QueryValue::Map(
                m.entries
                    .iter()
                    .filter(|(_, f)| !f.alive.is_empty())
                    .map(|(k, f)| (k.clone(), f.state.value()))
                    .collect(),
            ),
        }
    }
}

/// Source of fresh dots and register timestamps for effect generation.
pub trait DotSource {
    fn next_dot(&mut self) -> Dot;

    fn next_ts(&mut self) -> LwwTs {
        let dot = self.next_dot();
        LwwTs {
            time: dot.counter,
            replica: dot.origin,
        }
    }
}

/// High-level update, translated into an effect against a read view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Assign(String),
    Add(i64),
    SetAdd(String),
    SetRemove(String),
    MapUpdate { field: String, op: Box<Op> },
    MapRemove(String),
}

impl Op {
    pub fn type_tag(&self) -> TypeTag {
        match self {
            Op::Assign(_) => TypeTag::Register,
            Op::Add(_) => TypeTag::Counter,
            Op::SetAdd(_) | Op::SetRemove(_) => TypeTag::Set,
            Op::MapUpdate { .. } | Op::MapRemove(_) => TypeTag::Map,
        }
    }

    /// Builds the effect for this op as seen from `view`. Removals capture
    /// the dots present in `view`.
    pub fn prepare(
        &self,
        view: &CrdtState,
        origin: ReplicaId,
        dots: &mut dyn DotSource,
    ) -> Result<CrdtEffect, CrdtError> {
        let tag = self.type_tag();
        if view.type_tag() != tag {
            return Err(CrdtError::TypeMismatch {
                state: view.type_tag(),
                effect: tag,
            });
        }
        Ok(match (self, view) {
            (Op::Assign(v), _) => CrdtEffect::RegisterAssign {
                value: v.clone(),
                ts: dots.next_ts(),
            },
            (Op::Add(delta), _) => CrdtEffect::CounterAdd {
                origin,
                delta: *delta,
            },
            (Op::SetAdd(e), _) => CrdtEffect::SetAdd {
                element: e.clone(),
                dot: dots.next_dot(),
            },
            (Op::SetRemove(e), CrdtState::Set(set)) => CrdtEffect::SetRemove {
                element: e.clone(),
                observed: set.dots_of(e),
            },
            (Op::MapUpdate { field, op }, CrdtState::Map(map)) => {
                let nested_tag = op.type_tag();
                let nested_view = match map.entries.get(field) {
                    Some(f) if f.tag != nested_tag => {
                        return Err(CrdtError::TypeMismatch {
                            state: f.tag,
                            effect: nested_tag,
                        })
                    }
                    Some(f) => f.state.clone(),
                    None => new_state(nested_tag),
                };
                let effect = op.prepare(&nested_view, origin, dots)?;
                CrdtEffect::MapUpdate {
                    field: field.clone(),
                    effect: Box::new(effect),
                    dot: dots.next_dot(),
                }
            }
            (Op::MapRemove(field), CrdtState::Map(map)) => CrdtEffect::MapRemove {
                field: field.clone(),
                observed: map.alive_dots(field),
            },
            _ => unreachable!("tag checked above"),
        })
    }
}
