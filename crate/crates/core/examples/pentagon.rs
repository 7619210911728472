//! Five agents on a ring at the vertices of a regular pentagon.

use sphere_consensus::dynamics::{residual, IterationMatrix};
use sphere_consensus::experiments::pentagon_weights;
use sphere_consensus::sphere::Configuration;
use sphere_consensus::stability::{classify_fixed_point, DifferentialReport};

fn main() -> sphere_consensus::Result<()> {
    let a = pentagon_weights();
    let c = Configuration::regular_polygon(5);
    let m = IterationMatrix::weight(&a)?;
    println!("A =\n{}", a.entries());
    println!("residual ‖f(x) − x‖ = {:.3e}", residual(&m, &c)?);

    let report = DifferentialReport::compute(&m, &c)?;
    println!("spectral radius = {:.15}", report.spectral_radius);
    for z in &report.eigenvalues {
        println!("  {:+.6} {:+.6}i", z.re, z.im);
    }
    let class = classify_fixed_point(&a, &c, 1e-12)?;
    println!("class: {:?}", class.class);
    Ok(())
}
