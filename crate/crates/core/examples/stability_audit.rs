//! Descent finds a non-consensus fixed point; the certificate matrix shows it is unstable.

use sphere_consensus::dynamics::{find_nonconsensus_fixed_point, run, IterationMatrix, RunOptions, FP_TOL, SLACK};
use sphere_consensus::graph::DirectedGraph;
use sphere_consensus::sphere::Configuration;
use sphere_consensus::stability::{instability_certificate, trace_formula_check};
use sphere_consensus::weights::WeightMatrix;

fn main() -> sphere_consensus::Result<()> {
    let g = DirectedGraph::random_connected_symmetric(5, 0.4, 3)?;
    let a = WeightMatrix::sample_sdd(&g, 0.1, true, 4)?;
    let out = find_nonconsensus_fixed_point(&a, &Configuration::random(5, 3, 5)?, SLACK, FP_TOL, 1_000_000)?;
    let x = &out.trajectory.final_config;
    println!("descent limit ({}, {} iterations):\n{}", out.class.label(), out.trajectory.iterations, x.matrix());

    let cert = instability_certificate(&a, x, 1e-9)?;
    println!("class {:?}", cert.class);
    println!("λ_max(H) = {:.6}", cert.h_max_eigenvalue.unwrap_or(f64::NAN));
    println!("ρ(M)     = {:.6}", cert.spectral_radius);
    let tr = trace_formula_check(&a, x)?;
    println!("trace formula: {:.12} vs {:.12}", tr.lhs, tr.rhs);

    let kicked = x.perturb_tangent(1e-6, 6)?;
    let after = run(&IterationMatrix::weight(&a)?, &kicked, RunOptions::default())?;
    println!("after a 1e-6 kick: {} in {} iterations", after.final_config.classify(1e-9).label(), after.iterations);
    Ok(())
}
