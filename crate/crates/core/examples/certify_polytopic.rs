//! Largest certified monotonicity constant over a Jacobian polytope.

use robust_oag::certify::{self, CertifyOptions, JacobianSet, PolytopicMode};
use robust_oag::numlin::{self, Mat};
use robust_oag::plants::academic;

pub fn run_example() -> robust_oag::Result<()> {
    let set = academic::academic_polytope();
    let cert = certify::certify_polytopic(
        &set,
        &academic::academic_set(),
        PolytopicMode::Maximize,
        &CertifyOptions::polytopic(),
    )?;
    println!("rho = {:.8}, L = {:.4}, tau* = {:.3e}", cert.rho, cert.lipschitz, cert.tau_star);
    println!("P = {}", cert.p);

    // the weight P = I also passes at ρ = 1
    let identity_margin = certify::polytopic_margin(&set, &Mat::identity(2, 2), 1.0)?;
    println!("margin with P = I at rho = 1: {identity_margin:.3e}");
    for (i, v) in set.vertices.iter().enumerate() {
        let s = (v + v.transpose()) * 0.5;
        println!("vertex {i}: λ_min(sym) = {:.6}", numlin::sym_eig(&s)?.eigenvalues.min());
    }
    let report = certify::validate_certificate(&cert, JacobianSet::Polytope(&set), 1000, 3)?;
    println!("validated on {} samples, worst margin {:.3e}", report.samples, report.min_margin);
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
