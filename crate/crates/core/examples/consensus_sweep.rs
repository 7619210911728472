//! Weight iteration from random starts; every run should reach consensus.
//!
//! cargo run --release --example consensus_sweep -- [trials] [seed]

use sphere_consensus::experiments::{consensus_sweep, Command, ExperimentConfig};

fn main() -> sphere_consensus::Result<()> {
    let mut args = std::env::args().skip(1);
    let trials = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig { trials, seed: Some(seed), ..ExperimentConfig::defaults(Command::Sweep) };
    let out = consensus_sweep(&cfg)?;
    let r = &out.report;
    println!("{} / {} trials reached consensus", r.consensus, r.trials);
    println!("symmetric trials: {}, largest potential drop: {:.2e}", r.symmetric_trials, r.max_potential_drop);
    let slowest = out.records.iter().max_by_key(|rec| rec.iters).expect("at least one trial");
    println!("slowest: trial {} (n = {}, d = {}) took {} iterations", slowest.trial, slowest.n, slowest.d, slowest.iters);
    Ok(())
}
