//! Expressions over model variables: integers, booleans, strings and finite
//! sets.
//!
//! ```text
//! expr := or ("=>" expr)?
//! or   := and ("||" and)*
//! and  := not ("&&" not)*
//! not  := "!" not | cmp
//! cmp  := sum (("==" | "!=" | "<" | "<=" | ">" | ">=" | "in") sum)?
//! sum  := prod (("+" | "-") prod)*
//! prod := unary ("*" unary)*
//! unary:= "-" unary | atom
//! atom := INT | "true" | "false" | 'STR' | IDENT | "(" expr ")"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Val {
    Bool(bool),
    Int(i64),
    Str(String),
    Set(BTreeSet<String>),
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Bool(b) => write!(f, "{b}"),
            Val::Int(i) => write!(f, "{i}"),
            Val::Str(s) => write!(f, "'{s}'"),
            Val::Set(s) => {
                let items: Vec<String> = s.iter().map(|e| format!("'{e}'")).collect();
                write!(f, "{{{}}}", items.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown name `{0}`")]
    Unknown(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("integer overflow")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Implies,
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Val),
    Var(String),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(i64),
    Str(String),
    Ident(String),
    Sym(&'static str),
}

const SYMBOLS: [&str; 15] = [
    "=>", "||", "&&", "==", "!=", "<=", ">=", "<", ">", "!", "+", "-", "*", "(", ")",
];

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n = src[start..i].parse().map_err(|_| ExprError::Overflow)?;
            out.push((start, Tok::Int(n)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if c == '\'' {
            let start = i;
            let end = src[i + 1..].find('\'').ok_or(ExprError::Syntax {
                pos: start,
                msg: "unterminated string".into(),
            })?;
            out.push((start, Tok::Str(src[i + 1..i + 1 + end].to_string())));
            i += end + 2;
        } else if let Some(sym) = SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) {
            out.push((i, Tok::Sym(sym)));
            i += sym.len();
        } else {
            return Err(ExprError::Syntax {
                pos: i,
                msg: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |t| t.0)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym)
            || matches!(self.peek(), Some(Tok::Ident(s)) if s == sym)
        {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.or()?;
        if self.eat("=>") {
            let rhs = self.expr()?;
            return Ok(Expr::Bin(BinOp::Implies, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while self.eat("||") {
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.not()?;
        while self.eat("&&") {
            lhs = Expr::Bin(BinOp::And, Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, ExprError> {
        if self.eat("!") {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.sum()?;
        let ops = [
            ("==", BinOp::Eq),
            ("!=", BinOp::Ne),
            ("<=", BinOp::Le),
            (">=", BinOp::Ge),
            ("<", BinOp::Lt),
            (">", BinOp::Gt),
            ("in", BinOp::In),
        ];
        for (sym, op) in ops {
            if self.eat(sym) {
                return Ok(Expr::Bin(op, Box::new(lhs), Box::new(self.sum()?)));
            }
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.prod()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.prod()?));
        }
    }

    fn prod(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while self.eat("*") {
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = match self.peek() {
            Some(t) => t.clone(),
            None => return self.err("unexpected end of expression"),
        };
        self.pos += 1;
        match tok {
            Tok::Int(n) => Ok(Expr::Lit(Val::Int(n))),
            Tok::Str(s) => Ok(Expr::Lit(Val::Str(s))),
            Tok::Ident(id) if id == "true" => Ok(Expr::Lit(Val::Bool(true))),
            Tok::Ident(id) if id == "false" => Ok(Expr::Lit(Val::Bool(false))),
            Tok::Ident(id) if id == "in" => {
                self.pos -= 1;
                self.err("unexpected `in`")
            }
            Tok::Ident(id) => Ok(Expr::Var(id)),
            Tok::Sym("(") => {
                let e = self.expr()?;
                if !self.eat(")") {
                    return self.err("expected `)`");
                }
                Ok(e)
            }
            Tok::Sym(s) => {
                self.pos -= 1;
                self.err(format!("unexpected `{s}`"))
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
            len: src.len(),
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return p.err("trailing input");
        }
        Ok(e)
    }

    /// Names of all variables mentioned.
    pub fn vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Not(e) | Expr::Neg(e) => e.vars(out),
            Expr::Bin(_, a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }

    /// Evaluates against `env`, looked up in order until a name is found.
    pub fn eval(&self, env: &[&BTreeMap<String, Val>]) -> Result<Val, ExprError> {
        match self {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Var(name) => env
                .iter()
                .find_map(|m| m.get(name))
                .cloned()
                .ok_or_else(|| ExprError::Unknown(name.clone())),
            Expr::Not(e) => Ok(Val::Bool(!as_bool(e.eval(env)?)?)),
            Expr::Neg(e) => as_int(e.eval(env)?)?
                .checked_neg()
                .map(Val::Int)
                .ok_or(ExprError::Overflow),
            Expr::Bin(op, a, b) => {
                match op {
                    BinOp::And => {
                        return Ok(Val::Bool(as_bool(a.eval(env)?)? && as_bool(b.eval(env)?)?))
                    }
                    BinOp::Or => {
                        return Ok(Val::Bool(as_bool(a.eval(env)?)? || as_bool(b.eval(env)?)?))
                    }
                    BinOp::Implies => {
                        return Ok(Val::Bool(!as_bool(a.eval(env)?)? || as_bool(b.eval(env)?)?))
                    }
                    _ => {}
                }
                let (x, y) = (a.eval(env)?, b.eval(env)?);
                binary(*op, x, y)
            }
        }
    }

    pub fn eval_bool(&self, env: &[&BTreeMap<String, Val>]) -> Result<bool, ExprError> {
        as_bool(self.eval(env)?)
    }
}

fn binary(op: BinOp, x: Val, y: Val) -> Result<Val, ExprError> {
    match op {
        BinOp::Eq => same_type(&x, &y).map(|_| Val::Bool(x == y)),
        BinOp::Ne => same_type(&x, &y).map(|_| Val::Bool(x != y)),
        BinOp::Lt => Ok(Val::Bool(as_int(x)? < as_int(y)?)),
        BinOp::Le => Ok(Val::Bool(as_int(x)? <= as_int(y)?)),
        BinOp::Gt => Ok(Val::Bool(as_int(x)? > as_int(y)?)),
        BinOp::Ge => Ok(Val::Bool(as_int(x)? >= as_int(y)?)),
        BinOp::In => match (x, y) {
            (Val::Str(e), Val::Set(s)) => Ok(Val::Bool(s.contains(&e))),
            (x, y) => Err(ExprError::Type(format!("{x} in {y}"))),
        },
        BinOp::Add => as_int(x)?
            .checked_add(as_int(y)?)
            .map(Val::Int)
            .ok_or(ExprError::Overflow),
        BinOp::Sub => as_int(x)?
            .checked_sub(as_int(y)?)
            .map(Val::Int)
            .ok_or(ExprError::Overflow),
        BinOp::Mul => as_int(x)?
            .checked_mul(as_int(y)?)
            .map(Val::Int)
            .ok_or(ExprError::Overflow),
        BinOp::And | BinOp::Or | BinOp::Implies => unreachable!("short-circuit operators"),
    }
}

fn same_type(x: &Val, y: &Val) -> Result<(), ExprError> {
    if std::mem::discriminant(x) == std::mem::discriminant(y) {
        Ok(())
    } else {
        Err(ExprError::Type(format!("cannot compare {x} with {y}")))
    }
}

fn as_bool(v: Val) -> Result<bool, ExprError> {
    match v {
        Val::Bool(b) => Ok(b),
        other => Err(ExprError::Type(format!("expected a boolean, got {other}"))),
    }
}

fn as_int(v: Val) -> Result<i64, ExprError> {
    match v {
        Val::Int(i) => Ok(i),
        other => Err(ExprError::Type(format!("expected an integer, got {other}"))),
    }
}
