//! Projection algorithm for variational inequalities `VI(U, F)`.
//!
//! For `P` in the structured weight set (full block on the free coordinates,
//! diagonal on the box, identity on general blocks) the `P`-weighted and the
//! Euclidean projections onto `U` coincide, so every step here uses the
//! Euclidean projection and `P` only enters through the reported norms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numlin::{self, Mat, Vector};
use crate::problem::FeasibleSet;

pub type OperatorFn<'a> = dyn Fn(&Vector) -> Result<Vector> + Sync + 'a;

pub struct ViProblem<'a> {
    operator: Box<OperatorFn<'a>>,
    set: &'a FeasibleSet,
    weight: Mat,
}

impl<'a> ViProblem<'a> {
    pub fn new<F>(operator: F, set: &'a FeasibleSet) -> Self
    where
        F: Fn(&Vector) -> Result<Vector> + Sync + 'a,
    {
        let n = set.dim();
        ViProblem {
            operator: Box::new(operator),
            set,
            weight: Mat::identity(n, n),
        }
    }

    /// Replaces the default identity weight; `weight` must lie in the
    /// structured set for this partition.
    pub fn with_weight(mut self, weight: Mat) -> Result<Self> {
        check_structured_weight(self.set, &weight)?;
        self.weight = weight;
        Ok(self)
    }

    pub fn set(&self) -> &FeasibleSet {
        self.set
    }

    pub fn weight(&self) -> &Mat {
        &self.weight
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        let fx = (self.operator)(x)?;
        if fx.len() != x.len() {
            return Err(dim_err("operator output length differs from input"));
        }
        Ok(fx)
    }

    /// `Proj_U(x − τF(x))`.
    pub fn projection_step(&self, x: &Vector, tau: f64) -> Result<Vector> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {tau}")));
        }
        let fx = self.eval(x)?;
        self.set.project(&(x - fx * tau))
    }

    /// `‖x − Proj_U(x − τF(x))‖_P`; zero exactly at solutions of the VI.
    pub fn fixed_point_residual(&self, x: &Vector, tau: f64) -> Result<f64> {
        let next = self.projection_step(x, tau)?;
        Ok(numlin::p_norm(&(x - next), &self.weight))
    }

    pub fn solve(&self, x0: &Vector, tau: f64, tol: f64, max_iter: usize) -> Result<SolveReport> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {tau}")));
        }
        if x0.len() != self.set.dim() {
            return Err(dim_err("solve: start point dimension"));
        }
        let mut x = self.set.project(x0)?;
        let mut residuals = Vec::new();
        let mut iterates = vec![x.clone()];
        let mut status = SolveStatus::MaxIterations;
        for _ in 0..max_iter {
            let next = self.projection_step(&x, tau)?;
            let r = numlin::p_norm(&(&x - &next), &self.weight);
            residuals.push(r);
            if !r.is_finite() || !next.iter().all(|v| v.is_finite()) {
                status = SolveStatus::Diverged;
                break;
            }
            if r <= tol {
                status = SolveStatus::Converged;
                break;
            }
            x = next;
            iterates.push(x.clone());
        }
        Ok(SolveReport {
            contraction_estimate: contraction_estimate(&residuals),
            iterations: residuals.len(),
            solution: x,
            residual_history: residuals,
            iterates,
            status,
        })
    }
}

/// Checks `P ≻ 0` with full/diagonal/identity blocks aligned to the partition.
pub fn check_structured_weight(set: &FeasibleSet, p: &Mat) -> Result<()> {
    let n = set.dim();
    if p.nrows() != n || p.ncols() != n {
        return Err(dim_err(format!("weight must be {n}×{n}")));
    }
    let (n1, n2) = (set.n1, set.n2());
    let tol = 1e-12 * (1.0 + p.amax());
    for i in 0..n {
        for j in 0..n {
            if (p[(i, j)] - p[(j, i)]).abs() > tol {
                return Err(Error::InvalidArgument("weight must be symmetric".into()));
            }
            let both_free = i < n1 && j < n1;
            let expected_zero = !both_free && i != j;
            if expected_zero && p[(i, j)].abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "weight entry ({i},{j}) breaks the block structure"
                )));
            }
            if i == j && i >= n1 + n2 && (p[(i, i)] - 1.0).abs() > tol {
                return Err(Error::InvalidArgument(
                    "weight must be identity on general convex blocks".into(),
                ));
            }
        }
    }
    if n > 0 && numlin::psd_margin(p)? <= 0.0 {
        return Err(Error::InvalidArgument("weight must be positive definite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vector,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// `iterates[k]` is the point whose residual is `residual_history[k]`.
    pub iterates: Vec<Vector>,
    pub contraction_estimate: f64,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.converged() {
            Ok(self)
        } else {
            Err(Error::NoConvergence(format!(
                "{:?} after {} iterations, last residual {:e}",
                self.status,
                self.iterations,
                self.final_residual()
            )))
        }
    }

    /// `iteration,residual,u0,u1,...`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.solution.len();
        let mut header = String::from("iteration,residual");
        for i in 0..n {
            header.push_str(&format!(",u{i}"));
        }
        writeln!(out, "{header}")?;
        for (k, (r, x)) in self.residual_history.iter().zip(&self.iterates).enumerate() {
            let mut line = format!("{k},{r}");
            for v in x.iter() {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Geometric mean of the last `max(10, 10%)` successive residual ratios.
pub fn contraction_estimate(residuals: &[f64]) -> f64 {
    let ratios: Vec<f64> = residuals
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0 && w[0].is_finite() && w[1].is_finite())
        .map(|w| w[1] / w[0])
        .collect();
    if ratios.is_empty() {
        return f64::NAN;
    }
    let window = (ratios.len() / 10).max(10).min(ratios.len());
    let tail = &ratios[ratios.len() - window..];
    (tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub tau_star: f64,
    pub tau_max: f64,
    pub rate: f64,
}

/// Step sizes from a monotonicity constant `ρ` and Lipschitz constant `L`:
/// `τ* = ρ/L²`, `τ_max = 2ρ/L²` and the nominal rate `1 − (ρ/L)²`.
pub fn recommend_step(rho: f64, lipschitz: f64) -> Result<StepRule> {
    if !(rho > 0.0) || !(lipschitz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "monotonicity and Lipschitz constants must be positive (got {rho}, {lipschitz})"
        )));
    }
    if rho > lipschitz * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "monotonicity constant {rho} exceeds Lipschitz constant {lipschitz}"
        )));
    }
    let l2 = lipschitz * lipschitz;
    Ok(StepRule {
        tau_star: rho / l2,
        tau_max: 2.0 * rho / l2,
        rate: 1.0 - (rho / lipschitz).powi(2),
    })
}

/// Per-step distance contraction factor `sqrt(1 − 2τρ + τ²L²)`.
pub fn distance_contraction(tau: f64, rho: f64, lipschitz: f64) -> f64 {
    (1.0 - 2.0 * tau * rho + tau * tau * lipschitz * lipschitz)
        .max(0.0)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn identity_operator_fixed_at_origin() {
        let set = FeasibleSet::unconstrained(2);
        let vi = ViProblem::new(|x: &Vector| Ok(x.clone()), &set);
        assert_eq!(vi.projection_step(&v(&[0.0, 0.0]), 0.3).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(vi.fixed_point_residual(&v(&[0.0, 0.0]), 0.3).unwrap(), 0.0);
        assert_relative_eq!(vi.fixed_point_residual(&v(&[1.0, 0.0]), 0.1).unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn shifted_operator_on_orthant() {
        let inf = f64::INFINITY;
        let set = FeasibleSet::boxed(v(&[0.0, 0.0]), v(&[inf, inf])).unwrap();
        let vi = ViProblem::new(|x: &Vector| Ok(x - v(&[1.0, 1.0])), &set);
        assert_eq!(vi.projection_step(&v(&[0.0, 0.0]), 0.5).unwrap(), v(&[0.5, 0.5]));
    }

    #[test]
    fn nonpositive_step_rejected() {
        let set = FeasibleSet::unconstrained(1);
        let vi = ViProblem::new(|x: &Vector| Ok(x.clone()), &set);
        assert!(vi.projection_step(&v(&[1.0]), 0.0).is_err());
        assert!(vi.solve(&v(&[1.0]), -1.0, 1e-9, 10).is_err());
    }

    #[test]
    fn identity_operator_contracts_at_one_minus_tau() {
        let set = FeasibleSet::unconstrained(2);
        let vi = ViProblem::new(|x: &Vector| Ok(x.clone()), &set);
        let rep = vi.solve(&v(&[3.0, -4.0]), 0.2, 1e-12, 1000).unwrap();
        assert!(rep.converged());
        assert!(rep.solution.norm() < 1e-10);
        assert_relative_eq!(rep.contraction_estimate, 0.8, epsilon = 1e-9);
    }

    #[test]
    fn diagonal_affine_contraction_bound() {
        let set = FeasibleSet::unconstrained(2);
        let m = Mat::from_diagonal(&v(&[1.0, 2.0]));
        let b = v(&[0.5, -1.0]);
        let vi = ViProblem::new(|x: &Vector| Ok(&m * x + &b), &set);
        let rep = vi.solve(&v(&[5.0, 5.0]), 0.25, 1e-12, 1000).unwrap();
        assert!(rep.converged());
        let bound = distance_contraction(0.25, 1.0, 2.0);
        assert_relative_eq!(bound, 0.75f64.sqrt(), epsilon = 1e-15);
        assert!(rep.contraction_estimate <= bound + 1e-9);
        assert!((rep.solution - v(&[-0.5, 0.5])).norm() < 1e-10);
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let set = FeasibleSet::unconstrained(1);
        let vi = ViProblem::new(|x: &Vector| Ok(x * 10.0), &set);
        let rep = vi.solve(&v(&[1.0]), 0.5, 1e-12, 50).unwrap();
        assert!(!rep.converged());
        assert_eq!(rep.residual_history.len(), rep.iterations);
        assert!(rep.into_result().is_err());
    }

    #[test]
    fn kkt_point_of_smooth_problem_has_zero_residual() {
        // min ½xᵀQx + cᵀx + ¼Σx⁴ on ℝ²; Newton on the stationarity system is
        // the independent oracle
        let q = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = v(&[1.0, -2.0]);
        let grad = |x: &Vector| &q * x + &c + x.map(|t| t.powi(3));
        let mut x = v(&[0.0, 0.0]);
        for _ in 0..50 {
            let hess = &q + Mat::from_diagonal(&x.map(|t| 3.0 * t * t));
            x -= numlin::solve(&hess, &grad(&x)).unwrap();
        }
        let set = FeasibleSet::unconstrained(2);
        let vi = ViProblem::new(|z: &Vector| Ok(grad(z)), &set);
        assert!(vi.fixed_point_residual(&x, 0.1).unwrap() < 1e-9);
    }

    #[test]
    fn step_rule_examples() {
        let r = recommend_step(1.0, 2.0).unwrap();
        assert_eq!((r.tau_star, r.tau_max, r.rate), (0.25, 0.5, 0.75));
        let r = recommend_step(1.0, 1.0).unwrap();
        assert_eq!((r.tau_star, r.tau_max, r.rate), (1.0, 2.0, 0.0));
        assert!(recommend_step(2.0, 1.0).is_err());
        assert!(recommend_step(0.0, 1.0).is_err());
        assert!(recommend_step(1.0, -1.0).is_err());
    }

    #[test]
    fn structured_weight_checks() {
        let set = FeasibleSet::new(
            1,
            v(&[-1.0]),
            v(&[1.0]),
            vec![crate::problem::ConvexBlock::InverterDisk {
                p_max: 1.0,
                s_rated: 1.0,
            }],
        )
        .unwrap();
        let ok = Mat::from_diagonal(&v(&[3.0, 0.5, 1.0, 1.0]));
        assert!(check_structured_weight(&set, &ok).is_ok());
        let mut bad = ok.clone();
        bad[(0, 1)] = 0.1;
        bad[(1, 0)] = 0.1;
        assert!(check_structured_weight(&set, &bad).is_err());
        let mut bad = ok.clone();
        bad[(3, 3)] = 2.0;
        assert!(check_structured_weight(&set, &bad).is_err());
    }

    #[test]
    fn weighted_projection_equals_euclidean_for_structured_weights() {
        // oracle: minimize ‖x − y‖²_P over U by projected gradient, which
        // converges to the P-projection regardless of the projection used
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let set = FeasibleSet::new(
            0,
            v(&[-1.0, 0.0]),
            v(&[1.0, 2.0]),
            vec![crate::problem::ConvexBlock::InverterDisk {
                p_max: 0.6,
                s_rated: 1.0,
            }],
        )
        .unwrap();
        for _ in 0..50 {
            let p = Mat::from_diagonal(&v(&[
                rng.random_range(0.1..5.0),
                rng.random_range(0.1..5.0),
                1.0,
                1.0,
            ]));
            let y = Vector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let euclid = set.project(&y).unwrap();
            let step = 1.0 / 5.0;
            let mut x = set.project(&Vector::zeros(4)).unwrap();
            for _ in 0..5000 {
                let g = &p * (&x - &y) * 2.0;
                x = set.project(&(&x - g * (step / 2.0))).unwrap();
            }
            assert!((x - euclid).amax() < 1e-8);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let set = FeasibleSet::unconstrained(2);
        let vi = ViProblem::new(|x: &Vector| Ok(x.clone()), &set);
        let rep = vi.solve(&v(&[1.0, 1.0]), 0.5, 1e-6, 100).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,residual,u0,u1");
        assert_eq!(lines.count(), rep.iterations);
    }
}
