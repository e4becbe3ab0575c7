use std::collections::BTreeMap;

use serde_json::Value;

use super::{Category, RunReport, Trace};

/// Coordinator-side grants and releases must alternate per object: no grant
/// while the token is out, no release by anyone but the holder.
pub fn mutual_exclusion_violations(trace: &Trace) -> Vec<String> {
    let mut holder: BTreeMap<String, (Value, Value)> = BTreeMap::new();
    let mut problems = Vec::new();
    for e in trace.of(Category::Token) {
        let p = &e.payload;
        let object = p["object"].as_str().unwrap_or_default().to_string();
        let who = (p["holder"].clone(), p["req"].clone());
        match p["event"].as_str() {
            Some("grant") => {
                if let Some(prev) = holder.insert(object.clone(), who) {
                    problems.push(format!(
                        "t={}: {object} granted while held by {}",
                        e.time, prev.0
                    ));
                }
            }
            Some("release") if holder.remove(&object) != Some(who) => {
                problems.push(format!("t={}: {object} released by a non-holder", e.time));
            }
            _ => {}
        }
    }
    problems
}

/// Operations that needed neither tokens nor a rights transfer must finish
/// in the tick they started and never report a wait. Time spent queued
/// behind the same client's earlier operations does not count.
pub fn availability_violations(report: &RunReport) -> Vec<String> {
    let mut problems = Vec::new();
    for e in report.trace.of(Category::Blocked) {
        let reason = e.payload["reason"].as_str().unwrap_or_default();
        if !matches!(reason, "token" | "fence" | "sync_transfer") {
            problems.push(format!(
                "t={}: {} blocked on {reason}",
                e.time, e.payload["client"]
            ));
        }
    }
    for o in &report.outcomes {
        if !o.protected && !o.synced && (o.blocked || o.completed != o.started) {
            problems.push(format!(
                "{} op {} ({}) started at t={} completed at t={}",
                o.client, o.id, o.action, o.started, o.completed
            ));
        }
    }
    problems
}
