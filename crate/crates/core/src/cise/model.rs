use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::{Expr, ExprError, Val};

/// Finite domain of a state variable or parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Inclusive integer range.
    Int([i64; 2]),
    Bool,
    /// One of the listed strings.
    Enum(Vec<String>),
    /// Any subset of the listed strings.
    Set(Vec<String>),
}

impl Domain {
    pub fn size(&self) -> u128 {
        match self {
            Domain::Int([lo, hi]) => (i128::from(*hi) - i128::from(*lo) + 1).max(0) as u128,
            Domain::Bool => 2,
            Domain::Enum(items) => items.len() as u128,
            Domain::Set(items) => 1u128.checked_shl(items.len() as u32).unwrap_or(u128::MAX),
        }
    }

    /// All values in canonical order.
    pub fn values(&self) -> Vec<Val> {
        match self {
            Domain::Int([lo, hi]) => (*lo..=*hi).map(Val::Int).collect(),
            Domain::Bool => vec![Val::Bool(false), Val::Bool(true)],
            Domain::Enum(items) => items.iter().cloned().map(Val::Str).collect(),
            Domain::Set(items) => (0u64..1 << items.len())
                .map(|mask| {
                    Val::Set(
                        items
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask & (1 << i) != 0)
                            .map(|(_, e)| e.clone())
                            .collect(),
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    pub expr: String,
}

/// One conjunct of a precondition. `protects` names the invariant the
/// guard exists for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guard {
    pub expr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protects: Option<String>,
}

/// Effect primitive. Expressions are evaluated in the state where the
/// operation was issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// Counter increment (negative values decrement).
    Add {
        var: String,
        expr: String,
    },
    /// Add-wins set insertion.
    Insert {
        var: String,
        expr: String,
    },
    Remove {
        var: String,
        expr: String,
    },
    /// Register write. Without `timestamped` concurrent writes are applied
    /// in arrival order, which generally does not converge.
    Assign {
        var: String,
        expr: String,
        #[serde(default)]
        timestamped: bool,
    },
}

impl Effect {
    pub fn var(&self) -> &str {
        match self {
            Effect::Add { var, .. }
            | Effect::Insert { var, .. }
            | Effect::Remove { var, .. }
            | Effect::Assign { var, .. } => var,
        }
    }

    pub fn expr(&self) -> &str {
        match self {
            Effect::Add { expr, .. }
            | Effect::Insert { expr, .. }
            | Effect::Remove { expr, .. }
            | Effect::Assign { expr, .. } => expr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, Domain>,
    #[serde(default)]
    pub pre: Vec<Guard>,
    #[serde(default)]
    pub effects: Vec<Effect>,
}

/// Declarative application model checked by enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppModel {
    #[serde(default)]
    pub name: String,
    pub vars: BTreeMap<String, Domain>,
    #[serde(default)]
    pub invariants: Vec<Invariant>,
    pub operations: Vec<OpSpec>,
    /// Unordered pairs of operations that never run concurrently.
    #[serde(default)]
    pub sync_pairs: Vec<[String; 2]>,
    /// `[a, b]`: every `b` is causally after some `a`, so the two are never
    /// concurrent. `*` matches any operation.
    #[serde(default)]
    pub precedes: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("cannot parse model: {0}")]
    Parse(String),
    #[error("{context}: {source}")]
    Expr {
        context: String,
        #[source]
        source: ExprError,
    },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) struct CompiledOp {
    pub def: OpSpec,
    pub guards: Vec<Expr>,
    pub effects: Vec<Expr>,
}

pub(crate) struct Compiled {
    pub invariants: Vec<(String, Expr)>,
    pub ops: Vec<CompiledOp>,
}

impl AppModel {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: AppModel =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        model.compile()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn op(&self, name: &str) -> Option<&OpSpec> {
        self.operations.iter().find(|o| o.name == name)
    }

    pub fn with_sync_pair(mut self, a: &str, b: &str) -> Self {
        self.sync_pairs.push([a.to_string(), b.to_string()]);
        self
    }

    /// Drops the invariant and every guard that exists only to protect it.
    pub fn without_invariant(mut self, name: &str) -> Result<Self, ModelError> {
        let before = self.invariants.len();
        self.invariants.retain(|i| i.name != name);
        if self.invariants.len() == before {
            return Err(ModelError::Invalid(format!("no invariant named `{name}`")));
        }
        for op in &mut self.operations {
            op.pre.retain(|g| g.protects.as_deref() != Some(name));
        }
        Ok(self)
    }

    pub fn is_sync_pair(&self, a: &str, b: &str) -> bool {
        self.sync_pairs
            .iter()
            .any(|[x, y]| (x == a && y == b) || (x == b && y == a))
    }

    /// Whether the declared precedence rules out `a` and `b` running
    /// concurrently.
    pub fn ordered(&self, a: &str, b: &str) -> bool {
        let m = |pat: &str, name: &str| pat == "*" || pat == name;
        self.precedes
            .iter()
            .any(|[x, y]| (m(x, a) && m(y, b)) || (m(x, b) && m(y, a)))
    }

    /// Number of states in the enumeration.
    pub fn state_count(&self) -> u128 {
        self.vars
            .values()
            .map(Domain::size)
            .fold(1u128, |a, b| a.saturating_mul(b))
    }

    /// Number of operation instances (operation plus argument values).
    pub fn instance_count(&self) -> u128 {
        self.operations
            .iter()
            .map(|o| {
                o.params
                    .values()
                    .map(Domain::size)
                    .fold(1u128, |a, b| a.saturating_mul(b))
            })
            .fold(0u128, |a, b| a.saturating_add(b))
    }

    pub(crate) fn compile(&self) -> Result<Compiled, ModelError> {
        let bad = |m: String| Err(ModelError::Invalid(m));
        for (name, d) in self
            .vars
            .iter()
            .chain(self.operations.iter().flat_map(|o| &o.params))
        {
            if let Domain::Int([lo, hi]) = d {
                if lo > hi {
                    return bad(format!("`{name}` has an empty range"));
                }
            }
            if let Domain::Set(items) = d {
                if items.len() > 16 {
                    return bad(format!("`{name}` has too many set elements"));
                }
            }
        }
        let parse = |context: String, src: &str, scope: &dyn Fn(&str) -> bool| {
            let e = Expr::parse(src).map_err(|source| ModelError::Expr {
                context: context.clone(),
                source,
            })?;
            let mut names = BTreeSet::new();
            e.vars(&mut names);
            if let Some(n) = names.iter().find(|n| !scope(n)) {
                return Err(ModelError::Expr {
                    context,
                    source: ExprError::Unknown(n.clone()),
                });
            }
            Ok(e)
        };

        let mut names = BTreeSet::new();
        let mut invariants = Vec::new();
        for inv in &self.invariants {
            if !names.insert(inv.name.clone()) {
                return bad(format!("duplicate invariant `{}`", inv.name));
            }
            let e = parse(format!("invariant `{}`", inv.name), &inv.expr, &|n| {
                self.vars.contains_key(n)
            })?;
            invariants.push((inv.name.clone(), e));
        }

        let mut op_names = BTreeSet::new();
        let mut ops = Vec::new();
        for op in &self.operations {
            if !op_names.insert(op.name.as_str()) {
                return bad(format!("duplicate operation `{}`", op.name));
            }
            if let Some(p) = op.params.keys().find(|p| self.vars.contains_key(*p)) {
                return bad(format!(
                    "{}: parameter `{p}` shadows a state variable",
                    op.name
                ));
            }
            let scope = |n: &str| self.vars.contains_key(n) || op.params.contains_key(n);
            let mut guards = Vec::new();
            for g in &op.pre {
                if let Some(p) = &g.protects {
                    if !names.contains(p) {
                        return bad(format!(
                            "{}: guard protects unknown invariant `{p}`",
                            op.name
                        ));
                    }
                }
                guards.push(parse(format!("{} precondition", op.name), &g.expr, &scope)?);
            }
            let mut effects = Vec::new();
            for eff in &op.effects {
                let domain = match self.vars.get(eff.var()) {
                    Some(d) => d,
                    None => {
                        return bad(format!(
                            "{}: effect on unknown variable `{}`",
                            op.name,
                            eff.var()
                        ))
                    }
                };
                let fits = match eff {
                    Effect::Add { .. } => matches!(domain, Domain::Int(_)),
                    Effect::Insert { .. } | Effect::Remove { .. } => {
                        matches!(domain, Domain::Set(_))
                    }
                    Effect::Assign { .. } => true,
                };
                if !fits {
                    return bad(format!(
                        "{}: effect does not fit the type of `{}`",
                        op.name,
                        eff.var()
                    ));
                }
                effects.push(parse(format!("{} effect", op.name), eff.expr(), &scope)?);
            }
            ops.push(CompiledOp {
                def: op.clone(),
                guards,
                effects,
            });
        }
        for [a, b] in self.sync_pairs.iter().chain(&self.precedes) {
            for n in [a, b] {
                if n != "*" && !op_names.contains(n.as_str()) {
                    return bad(format!("unknown operation `{n}` in a pair"));
                }
            }
        }
        Ok(Compiled { invariants, ops })
    }
}

/// Every assignment of values to `vars`, in canonical order: names sorted,
/// first name varying slowest.
pub fn enumerate(vars: &BTreeMap<String, Domain>) -> Vec<BTreeMap<String, Val>> {
    let mut out = vec![BTreeMap::new()];
    for (name, domain) in vars {
        let values = domain.values();
        out = out
            .into_iter()
            .flat_map(|partial| {
                values.iter().map(move |v| {
                    let mut next = partial.clone();
                    next.insert(name.clone(), v.clone());
                    next
                })
            })
            .collect();
    }
    out
}
