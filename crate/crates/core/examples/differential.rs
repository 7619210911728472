//! Differential of the iteration at a random point: reduced matrix, spectrum, determinant.
//!
//! Writes the spectrum as CSV to stdout.

use sphere_consensus::dynamics::IterationMatrix;
use sphere_consensus::graph::DirectedGraph;
use sphere_consensus::sphere::Configuration;
use sphere_consensus::stability::{determinant_nonzero_check, DifferentialReport};
use sphere_consensus::weights::WeightMatrix;

fn main() -> sphere_consensus::Result<()> {
    let g = DirectedGraph::random_strongly_connected(4, 0.4, 1)?;
    // margin above √2 − 1, so the differential is nonsingular everywhere
    let a = WeightMatrix::sample_sdd(&g, 0.5, false, 2)?;
    let c = Configuration::random(4, 3, 3)?;
    let report = DifferentialReport::compute(&IterationMatrix::weight(&a)?, &c)?;
    eprintln!("reduced matrix M ({}×{}):{}", report.reduced.nrows(), report.reduced.ncols(), report.reduced);
    eprintln!("‖J − R_y M R_xᵀ‖ = {:.2e}", report.factorization_error());
    let det = determinant_nonzero_check(&a, &c)?;
    eprintln!("det M = {:.6e} (relative {:.4e}), √2 condition: {}", det.det, det.relative(), det.bound_satisfied);
    report.write_spectrum_csv(std::io::stdout())
}
