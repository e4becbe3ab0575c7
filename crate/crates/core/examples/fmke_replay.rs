//! Turns the stability counter-example into a simulated run, with and
//! without token protection for processing.

use causalkv::cise;
use causalkv::fmke::{counterexample_scenario, fmke_model, ProcessMode};
use causalkv::sim;

fn main() {
    let report = cise::check_stability(&fmke_model()).unwrap();
    let cex = report
        .counterexamples()
        .next()
        .expect("the model is unstable");
    println!("counter-example: {cex}");
    for mode in [ProcessMode::BestEffort, ProcessMode::Cp] {
        let run = sim::run(&counterexample_scenario(cex, mode).unwrap());
        let results: Vec<String> = run
            .outcomes_of("process_prescription")
            .map(|o| {
                format!(
                    "{}{}",
                    o.result.as_str(),
                    if o.blocked { " after waiting" } else { "" }
                )
            })
            .collect();
        println!("{mode}: {results:?}, assertions pass={}", run.passed());
    }
}
