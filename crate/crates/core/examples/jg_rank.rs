//! Rank of the residual Jacobian `J_g` at descent fixed points on a complete graph.

use sphere_consensus::dynamics::{find_nonconsensus_fixed_point, FP_TOL, SLACK};
use sphere_consensus::graph::DirectedGraph;
use sphere_consensus::parametric::{full_rank_check, symmetric_rank_deficiency_check, FixedPointSystem};
use sphere_consensus::sphere::Configuration;
use sphere_consensus::weights::WeightMatrix;

fn main() -> sphere_consensus::Result<()> {
    let g = DirectedGraph::complete(5)?;
    for seed in 0..6 {
        let a = WeightMatrix::sample_sdd(&g, 0.1, true, seed)?;
        let out = find_nonconsensus_fixed_point(&a, &Configuration::random(5, 4, seed + 100)?, SLACK, FP_TOL, 1_000_000)?;
        if !out.trajectory.converged {
            continue;
        }
        let sys = FixedPointSystem::pinned(&a, &out.trajectory.final_config)?;
        let sym = symmetric_rank_deficiency_check(&sys)?;
        let full = full_rank_check(&sys)?;
        println!(
            "seed {seed}: m = {}, symmetric rank {} <= {} ({}), unrestricted rank {} of {}, skew residual {:.1e}",
            sym.m,
            sym.rank,
            sym.bound,
            sym.satisfied,
            full.rank,
            full.bound,
            sym.skew_null_residual.unwrap_or(0.0)
        );
    }
    Ok(())
}
