//! How often each anomaly scenario goes wrong once its guarantee is removed.

use causalkv::demos;
use causalkv::sim;
use causalkv::store::Ablations;

fn main() {
    let corpus = demos::corpus();
    for (name, flag) in [
        ("password", "no-causal-deps"),
        ("buggydb2", "no-atomic-writes"),
        ("buggydb3", "no-snapshots"),
    ] {
        let scenario = &corpus.iter().find(|(n, _)| *n == name).unwrap().1;
        let ablation: Ablations = flag.parse().unwrap();
        let count = |ab| {
            (0..100)
                .filter(|s| !sim::run_with(scenario, Some(*s), ab, None).passed())
                .count()
        };
        println!(
            "{name:<9} failing seeds of 100: {:>3} intact, {:>3} with {flag}",
            count(Ablations::default()),
            count(ablation)
        );
    }
}
