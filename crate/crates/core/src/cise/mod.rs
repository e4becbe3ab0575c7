//! Bounded exhaustive checker for application models.
//!
//! A model is safe to run without synchronisation when its operations are
//! individually correct, pairwise commute and their preconditions are
//! stable under each other's effects. Every verdict holds for the declared
//! finite domains only.

mod expr;
mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{BinOp, Expr, ExprError, Val};
pub use model::{enumerate, AppModel, Domain, Effect, Guard, Invariant, ModelError, OpSpec};

use model::{Compiled, CompiledOp};

/// Largest number of (state, instance, instance) combinations a check will
/// enumerate before refusing.
pub const DEFAULT_CAP: u128 = 10_000_000;

/// Counter-examples listed per check; the total is always reported.
const LISTED: usize = 100;

pub type State = BTreeMap<String, Val>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Individual,
    Convergence,
    Stability,
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckKind::Individual => "individual correctness",
            CheckKind::Convergence => "convergence",
            CheckKind::Stability => "precondition stability",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpInstance {
    pub op: String,
    pub args: BTreeMap<String, Val>,
}

impl fmt::Display for OpInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}({})", self.op, args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub check: CheckKind,
    pub state: State,
    pub op1: OpInstance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op2: Option<OpInstance>,
    /// Invariant name, precondition text, or `order`.
    pub violated: String,
    pub detail: String,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state: Vec<String> = self.state.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "state {{{}}} {}", state.join(", "), self.op1)?;
        if let Some(op2) = &self.op2 {
            write!(f, " || {op2}")?;
        }
        write!(f, ": violates {} ({})", self.violated, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: CheckKind,
    pub verdict: Verdict,
    /// Combinations examined.
    pub examined: u64,
    pub total_counterexamples: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    pub states: u128,
    pub instances: u128,
    pub domains: BTreeMap<String, Domain>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub model: String,
    pub scope: Scope,
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn result(&self, kind: CheckKind) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.check == kind)
    }

    pub fn counterexamples(&self) -> impl Iterator<Item = &Counterexample> {
        self.checks.iter().flat_map(|c| &c.counterexamples)
    }

    /// Human-readable report.
    pub fn render(&self) -> String {
        let mut out = format!(
            "model {}: {} states, {} operation instances\n",
            if self.model.is_empty() {
                "<unnamed>"
            } else {
                &self.model
            },
            self.scope.states,
            self.scope.instances
        );
        for (name, d) in &self.scope.domains {
            out.push_str(&format!(
                "  {name}: {}\n",
                serde_json::to_string(d).unwrap()
            ));
        }
        for c in &self.checks {
            let verdict = match c.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
            };
            out.push_str(&format!(
                "{verdict} {} within scope ({} cases)\n",
                c.check, c.examined
            ));
            for cex in &c.counterexamples {
                out.push_str(&format!("  counter-example: {cex}\n"));
            }
            if c.total_counterexamples > c.counterexamples.len() {
                out.push_str(&format!(
                    "  ... {} more\n",
                    c.total_counterexamples - c.counterexamples.len()
                ));
            }
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out.push_str(if self.passed() {
            "overall: PASS within scope\n"
        } else {
            "overall: FAIL\n"
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{context}: {source}")]
    Eval {
        context: String,
        #[source]
        source: ExprError,
    },
    #[error("state space too large: about {estimate} cases, cap is {cap}")]
    SizeCap { estimate: u128, cap: u128 },
}

/// Effect primitive with its argument already evaluated at the origin.
#[derive(Debug, Clone, PartialEq)]
enum Prim {
    Add(String, i64),
    Insert(String, String),
    Remove(String, String),
    Assign {
        var: String,
        value: Val,
        timestamped: bool,
    },
}

struct Instance<'a> {
    op: &'a CompiledOp,
    inst: OpInstance,
}

struct Checker<'a> {
    model: &'a AppModel,
    invariants: &'a [(String, Expr)],
    states: Vec<State>,
    instances: Vec<Instance<'a>>,
}

fn eval_err(context: impl Into<String>) -> impl FnOnce(ExprError) -> CheckError {
    move |source| CheckError::Eval {
        context: context.into(),
        source,
    }
}

impl<'a> Checker<'a> {
    fn new(
        model: &'a AppModel,
        compiled: &'a Compiled,
        cap: u128,
        pairs: bool,
    ) -> Result<Self, CheckError> {
        let states = model.state_count();
        let inst = model.instance_count();
        let estimate = if pairs {
            states.saturating_mul(inst).saturating_mul(inst)
        } else {
            states.saturating_mul(inst)
        };
        if estimate > cap {
            return Err(CheckError::SizeCap { estimate, cap });
        }
        let mut instances: Vec<Instance<'a>> = compiled
            .ops
            .iter()
            .flat_map(|op| {
                enumerate(&op.def.params)
                    .into_iter()
                    .map(move |args| Instance {
                        op,
                        inst: OpInstance {
                            op: op.def.name.clone(),
                            args,
                        },
                    })
            })
            .collect();
        instances.sort_by(|a, b| a.inst.cmp(&b.inst));
        Ok(Self {
            model,
            invariants: &compiled.invariants,
            states: enumerate(&model.vars),
            instances,
        })
    }

    fn invariants_hold(&self, s: &State) -> Result<Option<String>, CheckError> {
        for (name, e) in self.invariants {
            if !e
                .eval_bool(&[s])
                .map_err(eval_err(format!("invariant `{name}`")))?
            {
                return Ok(Some(name.clone()));
            }
        }
        Ok(None)
    }

    /// First guard of `i` that is false in `s`.
    fn failing_guard(&self, i: &Instance, s: &State) -> Result<Option<String>, CheckError> {
        for (g, e) in i.op.def.pre.iter().zip(&i.op.guards) {
            let ok = e
                .eval_bool(&[s, &i.inst.args])
                .map_err(eval_err(format!("{} precondition", i.inst)))?;
            if !ok {
                return Ok(Some(g.expr.clone()));
            }
        }
        Ok(None)
    }

    fn prepare(&self, i: &Instance, s: &State) -> Result<Vec<Prim>, CheckError> {
        let mut prims = Vec::new();
        for (eff, e) in i.op.def.effects.iter().zip(&i.op.effects) {
            let v = e
                .eval(&[s, &i.inst.args])
                .map_err(eval_err(format!("{} effect", i.inst)))?;
            let type_err = |what: &str| {
                eval_err(format!("{} effect", i.inst))(ExprError::Type(format!(
                    "{what} expected, got {v}"
                )))
            };
            let var = eff.var().to_string();
            prims.push(match (eff, &v) {
                (Effect::Add { .. }, Val::Int(n)) => Prim::Add(var, *n),
                (Effect::Add { .. }, _) => return Err(type_err("an integer")),
                (Effect::Insert { .. }, Val::Str(x)) => Prim::Insert(var, x.clone()),
                (Effect::Remove { .. }, Val::Str(x)) => Prim::Remove(var, x.clone()),
                (Effect::Insert { .. } | Effect::Remove { .. }, _) => {
                    return Err(type_err("a string"))
                }
                (Effect::Assign { timestamped, .. }, _) => Prim::Assign {
                    var,
                    value: v.clone(),
                    timestamped: *timestamped,
                },
            });
        }
        Ok(prims)
    }

    /// Applies concurrently issued effects in the given order. Timestamped
    /// assignments are won by the highest rank whatever the order, and a
    /// removal never cancels a concurrent insertion.
    fn compose(&self, s: &State, effects: &[(usize, &[Prim])]) -> Result<State, CheckError> {
        let mut out = s.clone();
        let mut winner: BTreeMap<&str, usize> = BTreeMap::new();
        for (pos, (rank, prims)) in effects.iter().enumerate() {
            let concurrent_inserts: BTreeSet<(&str, &str)> = effects
                .iter()
                .enumerate()
                .filter(|(p, _)| *p != pos)
                .flat_map(|(_, (_, ps))| ps.iter())
                .filter_map(|p| match p {
                    Prim::Insert(v, x) => Some((v.as_str(), x.as_str())),
                    _ => None,
                })
                .collect();
            for p in prims.iter() {
                match p {
                    Prim::Add(var, n) => {
                        let cur = match out.get(var) {
                            Some(Val::Int(c)) => *c,
                            _ => {
                                return Err(eval_err(format!("add to `{var}`"))(ExprError::Type(
                                    "integer variable expected".into(),
                                )))
                            }
                        };
                        let next = cur.checked_add(*n).ok_or_else(|| {
                            eval_err(format!("add to `{var}`"))(ExprError::Overflow)
                        })?;
                        out.insert(var.clone(), Val::Int(next));
                    }
                    Prim::Insert(var, x) => {
                        if let Some(Val::Set(set)) = out.get_mut(var) {
                            set.insert(x.clone());
                        }
                    }
                    Prim::Remove(var, x) => {
                        if concurrent_inserts.contains(&(var.as_str(), x.as_str())) {
                            continue;
                        }
                        if let Some(Val::Set(set)) = out.get_mut(var) {
                            set.remove(x);
                        }
                    }
                    Prim::Assign {
                        var,
                        value,
                        timestamped,
                    } => {
                        if *timestamped {
                            if winner.get(var.as_str()).is_some_and(|w| w > rank) {
                                continue;
                            }
                            winner.insert(var, *rank);
                        }
                        out.insert(var.clone(), value.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    fn individual(&self) -> Result<CheckResult, CheckError> {
        let mut result = Collector::new(CheckKind::Individual);
        for s in &self.states {
            if self.invariants_hold(s)?.is_some() {
                continue;
            }
            for i in &self.instances {
                if self.failing_guard(i, s)?.is_some() {
                    continue;
                }
                result.examined += 1;
                let prims = self.prepare(i, s)?;
                let after = self.compose(s, &[(0, &prims)])?;
                if let Some(inv) = self.invariants_hold(&after)? {
                    result.push(Counterexample {
                        check: CheckKind::Individual,
                        state: s.clone(),
                        op1: i.inst.clone(),
                        op2: None,
                        violated: inv,
                        detail: format!("leads to {}", show(&after)),
                    });
                }
            }
        }
        Ok(result.finish())
    }

    /// Calls `f` for every invariant state and pair of instances that may
    /// run concurrently with both preconditions true.
    fn for_pairs(
        &self,
        kind: CheckKind,
        skip: impl Fn(&str, &str) -> bool,
        mut f: impl FnMut(
            &State,
            (usize, &Instance),
            (usize, &Instance),
            &mut Collector,
        ) -> Result<(), CheckError>,
    ) -> Result<CheckResult, CheckError> {
        let mut result = Collector::new(kind);
        for s in &self.states {
            if self.invariants_hold(s)?.is_some() {
                continue;
            }
            let enabled: Vec<usize> = (0..self.instances.len())
                .filter_map(|k| match self.failing_guard(&self.instances[k], s) {
                    Ok(None) => Some(Ok(k)),
                    Ok(Some(_)) => None,
                    Err(e) => Some(Err(e)),
                })
                .collect::<Result<_, _>>()?;
            for &a in &enabled {
                for &b in &enabled {
                    let (ia, ib) = (&self.instances[a], &self.instances[b]);
                    if self.model.ordered(&ia.inst.op, &ib.inst.op)
                        || skip(&ia.inst.op, &ib.inst.op)
                    {
                        continue;
                    }
                    result.examined += 1;
                    f(s, (a, ia), (b, ib), &mut result)?;
                }
            }
        }
        Ok(result.finish())
    }

    fn convergence(&self) -> Result<CheckResult, CheckError> {
        self.for_pairs(
            CheckKind::Convergence,
            |_, _| false,
            |s, (ra, a), (rb, b), out| {
                if ra > rb {
                    return Ok(());
                }
                let (pa, pb) = (self.prepare(a, s)?, self.prepare(b, s)?);
                let ab = self.compose(s, &[(ra, &pa), (rb, &pb)])?;
                let ba = self.compose(s, &[(rb, &pb), (ra, &pa)])?;
                if ab != ba {
                    out.push(Counterexample {
                        check: CheckKind::Convergence,
                        state: s.clone(),
                        op1: a.inst.clone(),
                        op2: Some(b.inst.clone()),
                        violated: "order".into(),
                        detail: format!("{} one way, {} the other", show(&ab), show(&ba)),
                    });
                }
                Ok(())
            },
        )
    }

    fn stability(&self) -> Result<CheckResult, CheckError> {
        let model = self.model;
        self.for_pairs(
            CheckKind::Stability,
            |a, b| model.is_sync_pair(a, b),
            |s, (_, a), (rb, b), out| {
                let pb = self.prepare(b, s)?;
                let after = self.compose(s, &[(rb, &pb)])?;
                if let Some(guard) = self.failing_guard(a, &after)? {
                    out.push(Counterexample {
                        check: CheckKind::Stability,
                        state: s.clone(),
                        op1: a.inst.clone(),
                        op2: Some(b.inst.clone()),
                        violated: guard,
                        detail: format!("{} leads to {}", b.inst, show(&after)),
                    });
                }
                Ok(())
            },
        )
    }
}

struct Collector {
    kind: CheckKind,
    examined: u64,
    total: usize,
    listed: Vec<Counterexample>,
}

impl Collector {
    fn new(kind: CheckKind) -> Self {
        Self {
            kind,
            examined: 0,
            total: 0,
            listed: Vec::new(),
        }
    }

    fn push(&mut self, cex: Counterexample) {
        self.total += 1;
        if self.listed.len() < LISTED {
            self.listed.push(cex);
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            check: self.kind,
            verdict: if self.total == 0 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            examined: self.examined,
            total_counterexamples: self.total,
            counterexamples: self.listed,
        }
    }
}

fn show(s: &State) -> String {
    let parts: Vec<String> = s.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{{{}}}", parts.join(", "))
}

fn report(model: &AppModel, checks: Vec<CheckResult>) -> CheckReport {
    let mut domains = model.vars.clone();
    for op in &model.operations {
        for (p, d) in &op.params {
            domains.insert(format!("{}.{p}", op.name), d.clone());
        }
    }
    CheckReport {
        model: model.name.clone(),
        scope: Scope {
            states: model.state_count(),
            instances: model.instance_count(),
            domains,
        },
        checks,
        notes: vec![
            "verdicts are exhaustive over the listed finite domains only".into(),
            "every parameter value in its domain is treated as legal".into(),
        ],
    }
}

fn run(model: &AppModel, kinds: &[CheckKind], cap: u128) -> Result<CheckReport, CheckError> {
    let compiled = model.compile()?;
    let pairs = kinds.iter().any(|k| *k != CheckKind::Individual);
    let checker = Checker::new(model, &compiled, cap, pairs)?;
    let mut results = Vec::new();
    for kind in kinds {
        results.push(match kind {
            CheckKind::Individual => checker.individual()?,
            CheckKind::Convergence => checker.convergence()?,
            CheckKind::Stability => checker.stability()?,
        });
    }
    Ok(report(model, results))
}

/// Each operation preserves every invariant when run alone from an
/// invariant state with its precondition true.
pub fn check_individual(model: &AppModel) -> Result<CheckReport, CheckError> {
    run(model, &[CheckKind::Individual], DEFAULT_CAP)
}

/// Concurrent operations yield the same state in either order.
pub fn check_convergence(model: &AppModel) -> Result<CheckReport, CheckError> {
    run(model, &[CheckKind::Convergence], DEFAULT_CAP)
}

/// No operation's effect falsifies a concurrent operation's precondition,
/// except for declared synchronised pairs.
pub fn check_stability(model: &AppModel) -> Result<CheckReport, CheckError> {
    run(model, &[CheckKind::Stability], DEFAULT_CAP)
}

/// All three checks, every counter-example reported.
pub fn check_all(model: &AppModel) -> Result<CheckReport, CheckError> {
    check_all_capped(model, DEFAULT_CAP)
}

pub fn check_all_capped(model: &AppModel, cap: u128) -> Result<CheckReport, CheckError> {
    run(
        model,
        &[
            CheckKind::Individual,
            CheckKind::Convergence,
            CheckKind::Stability,
        ],
        cap,
    )
}

#[cfg(test)]
mod tests;
