//! Random workloads with partitions; every run should converge.
//!
//! `cargo run --example random_convergence -- 200` to try more seeds.

use causalkv::sim;
use causalkv::sim::random::{random_scenario, WorkloadShape};

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(50);
    let shape = WorkloadShape::default();
    let mut ops = 0;
    for seed in 0..seeds {
        let report = sim::run(&random_scenario(seed, &shape));
        ops += report.outcomes.len();
        assert_eq!(report.converged, Some(true), "seed {seed}");
    }
    println!("{seeds} runs, {ops} operations, all converged");
}
