//! Runs one preset scenario and prints the summary.
//!
//! `cargo run --release --example scenario -- <n> <g> <p> <reps> [cauchy]`

use gqnet_core::simulation::{aggregate, run_scenario, ErrorLaw, SimulationScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (n, g, p, reps) = (num(0, 50), num(1, 5), num(2, 2), num(3, 50));
    let mut scenario = SimulationScenario::preset(n, g, p, reps, 20240601)?;
    if args.get(4).map(String::as_str) == Some("cauchy") {
        scenario.error_law = ErrorLaw::Cauchy;
    }
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let metrics = run_scenario(&scenario, jobs)?;
    let summary = aggregate(&metrics, &scenario.true_beta)?;
    println!("{summary:#?}");
    Ok(())
}
