//! Runs the bundled partition scenario and prints its trace.

use causalkv::demos;
use causalkv::sim::{self, availability_violations};

fn main() {
    let (_, scenario) = demos::corpus()
        .into_iter()
        .find(|(n, _)| *n == "ap-partition")
        .unwrap();
    let report = sim::run(&scenario);
    print!("{}", report.trace.render());
    println!(
        "passed={} converged={:?} availability problems={}",
        report.passed(),
        report.converged,
        availability_violations(&report).len()
    );
}
