//! The same academic Jacobian family written as a linear fractional
//! transformation and certified with a multiplier cone.

use robust_oag::certify::{self, CertifyOptions, JacobianSet};
use robust_oag::plants::academic;

pub fn run_example() -> robust_oag::Result<()> {
    let (set, cone) = academic::academic_lft();
    let partition = academic::academic_set();
    let opts = CertifyOptions::lft();
    let cert = certify::maximize_lft(&set, &cone, &partition, &opts)?;
    println!(
        "rho = {:.5} (L ≈ {:.3}, sampled: {})",
        cert.rho, cert.lipschitz, cert.lipschitz_empirical
    );
    let report = certify::validate_certificate(&cert, JacobianSet::Lft(&set), 1000, 11)?;
    println!("1000 structured Δ draws: worst margin {:.3e}", report.min_margin);

    match certify::certify_lft(&set, &cone, &partition, 1.5, &opts) {
        Ok(_) => println!("rho = 1.5 unexpectedly certified"),
        Err(e) => println!("rho = 1.5: {e}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
