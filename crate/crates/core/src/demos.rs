//! Built-in scenarios with annotated output.

use std::fmt::Write as _;

use serde_json::Value;
use thiserror::Error;

use crate::sim::{run_with, Category, RunReport, Scenario, TraceEvent};
use crate::store::Ablations;

pub const PASSWORD: &str = include_str!("../scenarios/password.json");
pub const BUGGYDB2: &str = include_str!("../scenarios/buggydb2.json");
pub const BUGGYDB3: &str = include_str!("../scenarios/buggydb3.json");
pub const DUPLICATE_DELIVERY: &str = include_str!("../scenarios/duplicate-delivery.json");
pub const DUPLICATE_DELIVERY_CP: &str = include_str!("../scenarios/duplicate-delivery-cp.json");
pub const BUDGET_ESCROW: &str = include_str!("../scenarios/budget-escrow.json");
pub const AP_PARTITION: &str = include_str!("../scenarios/ap-partition.json");

pub const NAMES: [&str; 5] = [
    "password",
    "buggydb2",
    "buggydb3",
    "duplicate-delivery",
    "budget-escrow",
];

/// Every bundled scenario, by file stem.
pub fn corpus() -> Vec<(&'static str, Scenario)> {
    [
        ("password", PASSWORD),
        ("buggydb2", BUGGYDB2),
        ("buggydb3", BUGGYDB3),
        ("duplicate-delivery", DUPLICATE_DELIVERY),
        ("duplicate-delivery-cp", DUPLICATE_DELIVERY_CP),
        ("budget-escrow", BUDGET_ESCROW),
        ("ap-partition", AP_PARTITION),
    ]
    .into_iter()
    .map(|(n, s)| {
        (
            n,
            Scenario::from_json(s).expect("bundled scenario is valid"),
        )
    })
    .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown demo `{0}` (expected one of: {names})", names = NAMES.join(", "))]
pub struct UnknownDemo(pub String);

#[derive(Debug, Clone)]
pub struct DemoOutput {
    pub name: String,
    pub text: String,
    /// The demo showed what it is meant to show.
    pub passed: bool,
}

/// Seeds tried when looking for an ablated run that goes wrong.
pub const ABLATION_SEEDS: u64 = 100;

pub fn run_demo(name: &str) -> Result<DemoOutput, UnknownDemo> {
    let load = |s: &str| Scenario::from_json(s).expect("bundled scenario is valid");
    let mut text = String::new();
    let passed = match name {
        "password" => contrast(&mut text, &load(PASSWORD), "no-causal-deps"),
        "buggydb2" => contrast(&mut text, &load(BUGGYDB2), "no-atomic-writes"),
        "buggydb3" => contrast(&mut text, &load(BUGGYDB3), "no-snapshots"),
        "duplicate-delivery" => {
            let a = plain(&mut text, &load(DUPLICATE_DELIVERY));
            text.push('\n');
            let b = plain(&mut text, &load(DUPLICATE_DELIVERY_CP));
            a && b
        }
        "budget-escrow" => plain(&mut text, &load(BUDGET_ESCROW)),
        other => return Err(UnknownDemo(other.to_string())),
    };
    let _ = writeln!(
        text,
        "\ndemo {name}: {}",
        if passed { "ok" } else { "UNEXPECTED" }
    );
    Ok(DemoOutput {
        name: name.to_string(),
        text,
        passed,
    })
}

fn plain(out: &mut String, s: &Scenario) -> bool {
    let report = run_with(s, None, Ablations::default(), None);
    let _ = writeln!(out, "== {} (seed {}, {})", s.name, s.seed, s.process_mode);
    annotate(out, &report);
    report.passed()
}

/// Runs under full causal consistency, then searches seeds for a failing
/// run with `flag` set.
fn contrast(out: &mut String, s: &Scenario, flag: &str) -> bool {
    let healthy = plain(out, s);
    let ablation: Ablations = flag.parse().expect("known ablation");
    let broken = (0..ABLATION_SEEDS)
        .map(|seed| run_with(s, Some(seed), ablation, None))
        .find(|r| {
            r.failures
                .iter()
                .any(|f| !matches!(f.check.as_str(), "converged" | "no_violations"))
        });
    let _ = writeln!(out, "\n== {} with --ablate {flag}", s.name);
    match &broken {
        Some(r) => {
            let _ = writeln!(out, "seed {} goes wrong:", r.seed);
            for f in &r.failures {
                let _ = writeln!(out, "  step {} {}: {}", f.step, f.check, f.message);
            }
        }
        None => {
            let _ = writeln!(out, "no failing seed in 0..{ABLATION_SEEDS}");
        }
    }
    healthy && broken.is_some()
}

fn annotate(out: &mut String, report: &RunReport) {
    for e in &report.trace.events {
        if let Some(note) = note(e) {
            let at = e.replica.map_or("--".to_string(), |r| r.to_string());
            let _ = writeln!(out, "{:>5} {at:<3} {note}", e.time);
        }
    }
    let _ = writeln!(
        out,
        "ended t={} quiescent={} converged={}",
        report.end_time,
        report.quiescent,
        report.converged.map_or("n/a".into(), |c| c.to_string())
    );
}

fn s(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn note(e: &TraceEvent) -> Option<String> {
    let p = &e.payload;
    Some(match e.category {
        Category::Outcome => format!(
            "{} {} -> {} {}",
            s(&p["client"]),
            s(&p["action"]),
            s(&p["result"]),
            if p["detail"].is_null() {
                String::new()
            } else {
                p["detail"].to_string()
            }
        ),
        Category::Blocked => format!(
            "{} waits ({}) on {}",
            s(&p["client"]),
            s(&p["reason"]),
            s(&p["action"])
        ),
        Category::Token => match p["event"].as_str() {
            Some("request") => format!(
                "requests token {} from home r{}",
                s(&p["object"]),
                p["home"]
            ),
            Some("return") => format!("returns token {}", s(&p["object"])),
            Some(ev) => format!("home: token {} {ev} r{}", s(&p["object"]), p["holder"]),
            None => format!("token {p}"),
        },
        Category::Transfer => match p["event"].as_str() {
            Some("request") => format!("asks r{} for {} of {}", p["to"], p["amount"], s(&p["key"])),
            Some("serve") => format!(
                "gives r{} {} of {} requested",
                p["to"], p["granted"], p["requested"]
            ),
            Some("reply") => format!("r{} replied with {}", p["from"], p["granted"]),
            _ => format!("rights {p}"),
        },
        Category::Net if p.get("duplicate").is_some() => return None,
        Category::Net => format!("network {p}"),
        Category::Assert => match p["pass"].as_bool() {
            Some(true) => format!("assert {} holds", s(&p["check"])),
            _ => format!("assert {} FAILS: {}", s(&p["check"]), s(&p["message"])),
        },
        Category::Violation => format!("store invariant broken: {}", s(p)),
        _ => return None,
    })
}
