use super::*;

fn fmke() -> AppModel {
    AppModel::from_json(include_str!("../../models/fmke.json")).unwrap()
}

#[test]
fn fmke_fails_only_stability() {
    let report = check_all(&fmke()).unwrap();
    assert!(report.result(CheckKind::Individual).unwrap().passed());
    assert!(report.result(CheckKind::Convergence).unwrap().passed());
    let st = report.result(CheckKind::Stability).unwrap();
    assert!(!st.passed());
    let first = &st.counterexamples[0];
    assert_eq!(first.state["count"], Val::Int(1));
    assert_eq!(first.op1.op, "process_prescription");
    assert_eq!(first.op2.as_ref().unwrap().op, "process_prescription");
    assert!(st
        .counterexamples
        .iter()
        .all(|c| c.op1.op == "process_prescription"
            && c.op2.as_ref().unwrap().op == "process_prescription"));
    assert!(!report.passed());
}

#[test]
fn sync_pair_or_dropped_invariant_pass() {
    let synced = fmke().with_sync_pair("process_prescription", "process_prescription");
    assert!(check_all(&synced).unwrap().passed());
    let relaxed = fmke().without_invariant("no-duplicates").unwrap();
    assert!(check_all(&relaxed).unwrap().passed());
    assert!(fmke().without_invariant("nope").is_err());
}

#[test]
fn unguarded_decrement_breaks_individual_correctness() {
    let m = AppModel::from_json(include_str!("../../models/fmke-unguarded.json")).unwrap();
    let r = check_individual(&m).unwrap();
    let cex = &r.checks[0].counterexamples[0];
    assert_eq!(cex.state["count"], Val::Int(0));
    assert_eq!(cex.violated, "no-duplicates");
}

#[test]
fn raw_assign_does_not_converge_but_lww_does() {
    let raw = AppModel::from_json(include_str!("../../models/raw-assign.json")).unwrap();
    let r = check_convergence(&raw).unwrap();
    assert!(!r.passed());
    assert_eq!(r.checks[0].counterexamples[0].violated, "order");
    let lww = AppModel::from_json(include_str!("../../models/lww-assign.json")).unwrap();
    assert!(check_convergence(&lww).unwrap().passed());
}

#[test]
fn add_wins_set_commutes() {
    let m = AppModel::from_json(include_str!("../../models/enrolment.json")).unwrap();
    let r = check_all(&m).unwrap();
    assert!(r.result(CheckKind::Individual).unwrap().passed());
    assert!(r.result(CheckKind::Convergence).unwrap().passed());
    assert!(!r.result(CheckKind::Stability).unwrap().passed());
}

#[test]
fn queries_commute_and_are_stable() {
    let report = check_all(&fmke()).unwrap();
    for c in report.counterexamples() {
        assert!(!c.op1.op.starts_with("get_"));
        assert!(!c.op2.as_ref().unwrap().op.starts_with("get_"));
    }
}

#[test]
fn size_cap_refuses() {
    let err = check_all_capped(&fmke(), 10).unwrap_err();
    assert!(matches!(err, CheckError::SizeCap { cap: 10, .. }));
}

#[test]
fn report_mentions_scope_and_is_deterministic() {
    let a = check_all(&fmke()).unwrap();
    let b = check_all(&fmke()).unwrap();
    assert_eq!(a, b);
    let text = a.render();
    assert!(text.contains("within scope"));
    assert!(text.contains("FAIL precondition stability"));
    assert!(text.contains("count=1"));
}
