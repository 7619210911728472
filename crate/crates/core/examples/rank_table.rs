//! Rank distribution of descent limits under symmetric weights.
//!
//! cargo run --release --example rank_table -- [trials] [seed]

use sphere_consensus::experiments::{rank_table, Command, ExperimentConfig};

fn main() -> sphere_consensus::Result<()> {
    let mut args = std::env::args().skip(1);
    let trials = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = ExperimentConfig { trials, seed: Some(seed), ..ExperimentConfig::defaults(Command::RankTable) };
    let out = rank_table(&cfg)?;
    println!("{:>3} {:>3} {:>9}  fractions by rank", "n", "d", "converged");
    for cell in &out.report.cells {
        let fr: Vec<String> = cell.fractions.iter().map(|f| format!("{f:.4}")).collect();
        println!("{:>3} {:>3} {:>9}  {}", cell.n, cell.d, cell.converged, fr.join("  "));
    }
    Ok(())
}
