//! Descent with non-symmetric weights: converged limits have rank one, many
//! runs end on rotating orbits instead.

use sphere_consensus::dynamics::{find_nonconsensus_fixed_point, Termination, FP_TOL, SLACK};
use sphere_consensus::experiments::{theorem2_probe, Command, ExperimentConfig};
use sphere_consensus::graph::DirectedGraph;
use sphere_consensus::sphere::Configuration;
use sphere_consensus::weights::WeightMatrix;

fn main() -> sphere_consensus::Result<()> {
    // one run on a complete graph in R³
    let a = WeightMatrix::sample_sdd(&DirectedGraph::complete(4)?, 0.1, false, 17)?;
    let c0 = Configuration::random(4, 3, 18)?;
    let out = find_nonconsensus_fixed_point(&a, &c0, SLACK, FP_TOL, 200_000)?;
    let t = &out.trajectory;
    println!("single run: {:?} after {} iterations, residual {:.2e}", t.termination, t.iterations, t.residual);
    if t.termination == Termination::Converged {
        println!("limit class: {}", out.class.label());
    }

    let cfg = ExperimentConfig { trials: 400, seed: Some(2), ..ExperimentConfig::defaults(Command::Theorem2) };
    let r = theorem2_probe(&cfg)?.report;
    println!(
        "{} trials: {} converged, {} rotating, {} hit the iteration cap, {} limits of rank >= 2",
        r.trials, r.converged, r.rotating, r.no_limit, r.high_rank_limits
    );
    for case in &r.perturbations {
        println!("  perturbed rank-2 case (seed {}): {:?}, rank {}", case.seed, case.perturbed_termination, case.perturbed_rank);
    }
    Ok(())
}
