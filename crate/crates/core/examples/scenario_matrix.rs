//! Runs a scenario file (centralized, standalone and swarm arms over every
//! seed) and prints the cross-seed comparison.
//!
//! `cargo run --release --example scenario_matrix -- scenarios/downsample_n2_25.json`

use std::path::PathBuf;

use swarmlearn::harness::{
    compare_report, render_csv, render_text, run_scenario, ScenarioSpec, SwarmTransport,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/unbalanced_10_30_30_30.json")
        });
    let spec = ScenarioSpec::load(&path)?;
    let results = run_scenario(&spec, None, SwarmTransport::Sim)?;
    print!("{}", render_text(&compare_report(&results)?));
    println!();
    print!("{}", render_csv(&results));
    Ok(())
}
