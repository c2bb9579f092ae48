//! Projected fixed-point iteration on a strongly monotone affine VI over a box.

use robust_oag::numlin::{Mat, Vector};
use robust_oag::problem::FeasibleSet;
use robust_oag::vi::{self, ViProblem};

pub fn run_example() -> robust_oag::Result<()> {
    // F(x) = Mx + q with sym(M) = 2I plus a skew part
    let m = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.0, -1.0, 2.0, 0.5, 0.0, -0.5, 2.0]);
    let q = Vector::from_vec(vec![-4.0, 1.0, 3.0]);
    let set = FeasibleSet::boxed(Vector::from_element(3, -1.0), Vector::from_element(3, 1.0))?;
    let rho = 2.0;
    let l = robust_oag::numlin::spectral_norm(&m);
    let rule = vi::recommend_step(rho, l)?;

    let problem = ViProblem::new(|x: &Vector| Ok(&m * x + &q), &set);
    let report = problem.solve(&Vector::zeros(3), rule.tau_star, 1e-12, 10_000)?.into_result()?;
    println!("tau* = {:.4}, tau_max = {:.4}", rule.tau_star, rule.tau_max);
    println!(
        "solution {:?} after {} iterations",
        report.solution.as_slice(),
        report.iterations
    );
    println!(
        "observed rate {:.4}, bound {:.4}",
        report.contraction_estimate,
        vi::distance_contraction(rule.tau_star, rho, l)
    );
    assert!(report.contraction_estimate <= vi::distance_contraction(rule.tau_star, rho, l) + 1e-9);
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
