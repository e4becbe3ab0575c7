use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crdt::ReplicaId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Begin,
    Commit,
    Abort,
    Receive,
    Apply,
    Token,
    Transfer,
    Blocked,
    Outcome,
    Net,
    Violation,
    Assert,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Begin => "begin",
            Category::Commit => "commit",
            Category::Abort => "abort",
            Category::Receive => "receive",
            Category::Apply => "apply",
            Category::Token => "token",
            Category::Transfer => "transfer",
            Category::Blocked => "blocked",
            Category::Outcome => "outcome",
            Category::Net => "net",
            Category::Violation => "violation",
            Category::Assert => "assert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: u64,
    pub replica: Option<ReplicaId>,
    pub category: Category,
    pub payload: serde_json::Value,
}

impl fmt::Display for TraceEvent {
    /// `time<TAB>replica<TAB>category<TAB>payload`, `-` for events not tied
    /// to a replica.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.replica {
            Some(r) => write!(f, "{}\t{}\t", self.time, r)?,
            None => write!(f, "{}\t-\t", self.time)?,
        }
        write!(f, "{}\t{}", self.category.as_str(), self.payload)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(
        &mut self,
        time: u64,
        replica: Option<ReplicaId>,
        category: Category,
        payload: serde_json::Value,
    ) {
        self.events.push(TraceEvent {
            time,
            replica,
            category,
            payload,
        });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of(&self, category: Category) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.category == category)
    }

    /// Line-delimited text form, one event per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}
