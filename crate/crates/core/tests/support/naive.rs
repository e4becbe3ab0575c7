//! Deliberately plain re-implementation of the three checks, working on the
//! raw JSON of a model with its own expression parser. Used only to
//! cross-check verdicts and counter-example counts.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value as Json;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum V {
    B(bool),
    I(i64),
    S(String),
    Set(BTreeSet<String>),
}

type Env = BTreeMap<String, V>;

#[derive(Debug, Clone)]
enum Node {
    Lit(V),
    Var(String),
    Un(&'static str, Box<Node>),
    Bin(&'static str, Box<Node>, Box<Node>),
}

fn tokens(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let cs: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' {
            let j = (i + 1..cs.len())
                .find(|&j| cs[j] == '\'')
                .expect("closed string");
            out.push(cs[i..=j].iter().collect());
            i = j + 1;
        } else if c.is_alphanumeric() || c == '_' {
            let j = (i..cs.len())
                .find(|&j| !(cs[j].is_alphanumeric() || cs[j] == '_'))
                .unwrap_or(cs.len());
            out.push(cs[i..j].iter().collect());
            i = j;
        } else {
            let two: String = cs[i..(i + 2).min(cs.len())].iter().collect();
            if ["=>", "||", "&&", "==", "!=", "<=", ">="].contains(&two.as_str()) {
                out.push(two);
                i += 2;
            } else {
                out.push(c.to_string());
                i += 1;
            }
        }
    }
    out
}

/// Binding power of an infix operator: (left, right, name).
fn infix(tok: &str) -> Option<(u8, u8, &'static str)> {
    Some(match tok {
        "=>" => (2, 1, "=>"),
        "||" => (3, 4, "||"),
        "&&" => (5, 6, "&&"),
        "==" => (9, 10, "=="),
        "!=" => (9, 10, "!="),
        "<" => (9, 10, "<"),
        "<=" => (9, 10, "<="),
        ">" => (9, 10, ">"),
        ">=" => (9, 10, ">="),
        "in" => (9, 10, "in"),
        "+" => (11, 12, "+"),
        "-" => (11, 12, "-"),
        "*" => (13, 14, "*"),
        _ => return None,
    })
}

struct P {
    toks: Vec<String>,
    at: usize,
}

impl P {
    fn next(&mut self) -> String {
        self.at += 1;
        self.toks[self.at - 1].clone()
    }

    fn peek(&self) -> Option<&str> {
        self.toks.get(self.at).map(String::as_str)
    }

    fn expr(&mut self, min: u8) -> Node {
        let t = self.next();
        let mut lhs = match t.as_str() {
            "(" => {
                let e = self.expr(0);
                assert_eq!(self.next(), ")");
                e
            }
            // `!` binds looser than comparisons but tighter than `&&`.
            "!" => Node::Un("!", Box::new(self.expr(7))),
            "-" => Node::Un("-", Box::new(self.expr(15))),
            "true" => Node::Lit(V::B(true)),
            "false" => Node::Lit(V::B(false)),
            s if s.starts_with('\'') => Node::Lit(V::S(s[1..s.len() - 1].to_string())),
            s if s.chars().all(|c| c.is_ascii_digit()) => Node::Lit(V::I(s.parse().unwrap())),
            s => Node::Var(s.to_string()),
        };
        while let Some((l, r, name)) = self.peek().and_then(infix) {
            if l < min {
                break;
            }
            self.next();
            let rhs = self.expr(r);
            lhs = Node::Bin(name, Box::new(lhs), Box::new(rhs));
        }
        lhs
    }
}

fn parse(src: &str) -> Node {
    let mut p = P {
        toks: tokens(src),
        at: 0,
    };
    let e = p.expr(0);
    assert_eq!(p.at, p.toks.len(), "trailing input in {src}");
    e
}

fn eval(n: &Node, env: &Env) -> V {
    match n {
        Node::Lit(v) => v.clone(),
        Node::Var(x) => env.get(x).cloned().unwrap_or_else(|| panic!("unbound {x}")),
        Node::Un("!", e) => V::B(!truth(&eval(e, env))),
        Node::Un(_, e) => V::I(-int(&eval(e, env))),
        Node::Bin(op, a, b) => {
            let (x, y) = (eval(a, env), eval(b, env));
            match *op {
                "=>" => V::B(!truth(&x) || truth(&y)),
                "||" => V::B(truth(&x) || truth(&y)),
                "&&" => V::B(truth(&x) && truth(&y)),
                "==" => V::B(x == y),
                "!=" => V::B(x != y),
                "<" => V::B(int(&x) < int(&y)),
                "<=" => V::B(int(&x) <= int(&y)),
                ">" => V::B(int(&x) > int(&y)),
                ">=" => V::B(int(&x) >= int(&y)),
                "in" => match (x, y) {
                    (V::S(e), V::Set(s)) => V::B(s.contains(&e)),
                    other => panic!("bad in: {other:?}"),
                },
                "+" => V::I(int(&x) + int(&y)),
                "-" => V::I(int(&x) - int(&y)),
                "*" => V::I(int(&x) * int(&y)),
                _ => unreachable!(),
            }
        }
    }
}

fn truth(v: &V) -> bool {
    match v {
        V::B(b) => *b,
        other => panic!("not a boolean: {other:?}"),
    }
}

fn int(v: &V) -> i64 {
    match v {
        V::I(i) => *i,
        other => panic!("not an integer: {other:?}"),
    }
}

fn domain(d: &Json) -> Vec<V> {
    if d == "bool" {
        return vec![V::B(false), V::B(true)];
    }
    if let Some(r) = d.get("int") {
        let (lo, hi) = (r[0].as_i64().unwrap(), r[1].as_i64().unwrap());
        return (lo..=hi).map(V::I).collect();
    }
    if let Some(items) = d.get("enum") {
        return items
            .as_array()
            .unwrap()
            .iter()
            .map(|s| V::S(s.as_str().unwrap().to_string()))
            .collect();
    }
    let items: Vec<String> = d["set"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect();
    let mut subsets = vec![BTreeSet::new()];
    for it in items {
        let more: Vec<_> = subsets
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.insert(it.clone());
                s
            })
            .collect();
        subsets.extend(more);
    }
    subsets.into_iter().map(V::Set).collect()
}

fn product(vars: &BTreeMap<String, Vec<V>>) -> Vec<Env> {
    let mut out = vec![Env::new()];
    for (name, values) in vars {
        out = out
            .into_iter()
            .flat_map(|e| {
                values.iter().map(move |v| {
                    let mut e = e.clone();
                    e.insert(name.clone(), v.clone());
                    e
                })
            })
            .collect();
    }
    out
}

fn domains(obj: Option<&Json>) -> BTreeMap<String, Vec<V>> {
    obj.and_then(Json::as_object)
        .map(|m| m.iter().map(|(k, d)| (k.clone(), domain(d))).collect())
        .unwrap_or_default()
}

#[derive(Debug, Clone)]
enum Eff {
    Add(String, i64),
    Ins(String, String),
    Rem(String, String),
    Set(String, V, bool),
}

struct Inst {
    op: String,
    args: Env,
    pre: Vec<Node>,
    effects: Vec<(String, String, Node, bool)>,
}

impl Inst {
    fn env(&self, s: &Env) -> Env {
        let mut e = s.clone();
        e.extend(self.args.clone());
        e
    }

    fn enabled(&self, s: &Env) -> bool {
        let env = self.env(s);
        self.pre.iter().all(|g| truth(&eval(g, &env)))
    }

    fn effects(&self, s: &Env) -> Vec<Eff> {
        let env = self.env(s);
        self.effects
            .iter()
            .map(|(kind, var, e, ts)| match (kind.as_str(), eval(e, &env)) {
                ("add", V::I(n)) => Eff::Add(var.clone(), n),
                ("insert", V::S(x)) => Eff::Ins(var.clone(), x),
                ("remove", V::S(x)) => Eff::Rem(var.clone(), x),
                ("assign", v) => Eff::Set(var.clone(), v, *ts),
                other => panic!("bad effect {other:?}"),
            })
            .collect()
    }
}

/// Applies `first` then `second`, both issued concurrently at `s`. The
/// instance with the larger index wins timestamped writes; removals skip
/// elements the other side inserts.
fn apply_pair(s: &Env, first: (usize, &[Eff]), second: Option<(usize, &[Eff])>) -> Env {
    let mut out = s.clone();
    let sides: Vec<(usize, &[Eff], &[Eff])> = match second {
        None => vec![(first.0, first.1, &[][..])],
        Some(sec) => vec![(first.0, first.1, sec.1), (sec.0, sec.1, first.1)],
    };
    for (rank, effs, other) in &sides {
        let other_rank = sides.iter().map(|s| s.0).find(|r| r != rank);
        for e in effs.iter() {
            match e {
                Eff::Add(v, n) => {
                    let cur = int(&out[v]);
                    out.insert(v.clone(), V::I(cur + n));
                }
                Eff::Ins(v, x) => {
                    if let Some(V::Set(set)) = out.get_mut(v) {
                        set.insert(x.clone());
                    }
                }
                Eff::Rem(v, x) => {
                    let reinserted = other
                        .iter()
                        .any(|o| matches!(o, Eff::Ins(w, y) if w == v && y == x));
                    if !reinserted {
                        if let Some(V::Set(set)) = out.get_mut(v) {
                            set.remove(x);
                        }
                    }
                }
                Eff::Set(v, val, ts) => {
                    let beaten = *ts
                        && other_rank.is_some_and(|r| r > *rank)
                        && other
                            .iter()
                            .any(|o| matches!(o, Eff::Set(w, _, true) if w == v));
                    if !beaten {
                        out.insert(v.clone(), val.clone());
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdicts {
    pub individual: usize,
    pub convergence: usize,
    pub stability: usize,
}

impl Verdicts {
    pub fn passes(&self) -> [bool; 3] {
        [
            self.individual == 0,
            self.convergence == 0,
            self.stability == 0,
        ]
    }
}

fn pairs_of(model: &Json, key: &str) -> Vec<(String, String)> {
    model
        .get(key)
        .and_then(Json::as_array)
        .map(|a| {
            a.iter()
                .map(|p| {
                    (
                        p[0].as_str().unwrap().to_string(),
                        p[1].as_str().unwrap().to_string(),
                    )
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Number of counter-examples each check finds in the model.
pub fn check(model_json: &str) -> Verdicts {
    let model: Json = serde_json::from_str(model_json).unwrap();
    let states = product(&domains(model.get("vars")));
    let invariants: Vec<Node> = model["invariants"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|i| parse(i["expr"].as_str().unwrap()))
                .collect()
        })
        .unwrap_or_default();
    let mut insts = Vec::new();
    for op in model["operations"].as_array().unwrap() {
        let name = op["name"].as_str().unwrap().to_string();
        let pre: Vec<Node> = op
            .get("pre")
            .and_then(Json::as_array)
            .map(|a| {
                a.iter()
                    .map(|g| parse(g["expr"].as_str().unwrap()))
                    .collect()
            })
            .unwrap_or_default();
        let effects: Vec<(String, String, Node, bool)> = op
            .get("effects")
            .and_then(Json::as_array)
            .map(|a| {
                a.iter()
                    .map(|e| {
                        let (kind, body) = e.as_object().unwrap().iter().next().unwrap();
                        (
                            kind.clone(),
                            body["var"].as_str().unwrap().to_string(),
                            parse(body["expr"].as_str().unwrap()),
                            body.get("timestamped")
                                .and_then(Json::as_bool)
                                .unwrap_or(false),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default();
        for args in product(&domains(op.get("params"))) {
            insts.push(Inst {
                op: name.clone(),
                args,
                pre: pre.clone(),
                effects: effects.clone(),
            });
        }
    }
    let sync = pairs_of(&model, "sync_pairs");
    let precedes = pairs_of(&model, "precedes");
    let matches = |pat: &str, op: &str| pat == "*" || pat == op;
    let concurrent = |a: &str, b: &str| {
        !precedes
            .iter()
            .any(|(x, y)| (matches(x, a) && matches(y, b)) || (matches(x, b) && matches(y, a)))
    };
    let synced = |a: &str, b: &str| {
        sync.iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    };
    let ok = |s: &Env| invariants.iter().all(|i| truth(&eval(i, s)));

    let mut v = Verdicts {
        individual: 0,
        convergence: 0,
        stability: 0,
    };
    for s in states.iter().filter(|s| ok(s)) {
        let enabled: Vec<usize> = (0..insts.len()).filter(|&i| insts[i].enabled(s)).collect();
        for &i in &enabled {
            let e = insts[i].effects(s);
            if !ok(&apply_pair(s, (i, &e), None)) {
                v.individual += 1;
            }
        }
        for (x, &i) in enabled.iter().enumerate() {
            for &j in &enabled[x..] {
                if !concurrent(&insts[i].op, &insts[j].op) {
                    continue;
                }
                let (ei, ej) = (insts[i].effects(s), insts[j].effects(s));
                if apply_pair(s, (i, &ei), Some((j, &ej)))
                    != apply_pair(s, (j, &ej), Some((i, &ei)))
                {
                    v.convergence += 1;
                }
            }
        }
        for &a in &enabled {
            for &b in &enabled {
                let (na, nb) = (&insts[a].op, &insts[b].op);
                if !concurrent(na, nb) || synced(na, nb) {
                    continue;
                }
                let after = apply_pair(s, (b, &insts[b].effects(s)), None);
                if !insts[a].enabled(&after) {
                    v.stability += 1;
                }
            }
        }
    }
    v
}
