//! Lyapunov inequality `AᵀP + PA ≺ 0` written as a strict LMI feasibility
//! problem, solved and independently verified.

use robust_oag::lmi::{self, LmiOptions, LmiProgram, VarKind};
use robust_oag::numlin::{self, Mat};

pub fn run_example() -> robust_oag::Result<()> {
    let a = Mat::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
    let mut prog = LmiProgram::new();
    let p = prog.add_var("P", VarKind::PsdBlock(2));
    prog.add_constraint("decay", |v| -(a.transpose() * v.block(p) + v.block(p) * &a))?;
    prog.add_trace_equality(&[p], 2.0);

    let sol = lmi::solve_feasibility(&prog, &LmiOptions::default())?;
    let report = lmi::verify_solution(&prog, &sol);
    let pm = sol.block(&prog, p);
    println!("status {:?}, margin {:.4e}", sol.status, sol.margin);
    println!("P = {pm}");
    println!("λ_min(P) = {:.4}", numlin::psd_margin(&pm)?);
    assert!(sol.is_feasible() && report.ok);
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
