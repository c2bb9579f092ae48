//! Power flow on the shipped 8-bus feeder and an empirical bound on how far
//! the true sensitivity strays from the no-load linearization.

use robust_oag::numlin::Vector;
use robust_oag::plants::feeder::{self, Feeder, UniformSampler};

pub fn run_example() -> robust_oag::Result<()> {
    let f = Feeder::default_8bus();
    let pi = f.linearize_nominal()?;
    println!("Π_nom is {}×{}", pi.nrows(), pi.ncols());

    let u = f.u_ref(&f.available_power(1.0));
    let w = Vector::from_element(f.model.w_dim(), 0.02);
    let op = f.power_flow(&u, &w)?;
    println!(
        "full PV output, light load: max |v| = {:.4} after {} iterations (residual {:.1e})",
        op.y.max(),
        op.iterations,
        op.residual
    );

    let report = feeder::sample_gamma(&f, &UniformSampler::default(), 2000, feeder::DEFAULT_SAFETY, 7)?;
    println!(
        "gamma = {:.4} (max error {:.4}, {} failures)",
        report.gamma, report.max_error, report.failures
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
