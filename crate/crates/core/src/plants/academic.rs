//! Two-input nonlinear test plant and the matching problem data.

use super::{JacobianPlant, Plant};
use crate::error::{dim_err, Result};
use crate::numlin::{Mat, Vector};
use crate::problem::{ApproxModel, FeasibleSet, ObjectiveSpec, ProblemSpec};
use crate::uncertainty::{self, DeltaBlock, LftSet, MultiplierCone, PolytopeSet};

/// `π(u, w) = (u₁ + u₂, w₁ sin u₁ − u₁ + w₂ cos u₂ + u₂)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcademicPlant;

fn check(u: &Vector, w: &Vector) -> Result<()> {
    if u.len() != 2 || w.len() != 2 {
        return Err(dim_err("academic plant takes u, w ∈ ℝ²"));
    }
    Ok(())
}

pub fn academic_eval(u: &Vector, w: &Vector) -> Result<Vector> {
    check(u, w)?;
    Ok(Vector::from_vec(vec![
        u[0] + u[1],
        w[0] * u[0].sin() - u[0] + w[1] * u[1].cos() + u[1],
    ]))
}

pub fn academic_jacobian(u: &Vector, w: &Vector) -> Result<Mat> {
    check(u, w)?;
    Ok(Mat::from_row_slice(
        2,
        2,
        &[1.0, 1.0, w[0] * u[0].cos() - 1.0, 1.0 - w[1] * u[1].sin()],
    ))
}

impl Plant for AcademicPlant {
    fn n_inputs(&self) -> usize {
        2
    }

    fn n_outputs(&self) -> usize {
        2
    }

    fn eval(&self, u: &Vector, w: &Vector) -> Result<Vector> {
        academic_eval(u, w)
    }
}

impl JacobianPlant for AcademicPlant {
    fn jacobian(&self, u: &Vector, w: &Vector) -> Result<Mat> {
        academic_jacobian(u, w)
    }
}

pub fn academic_pi() -> Mat {
    Mat::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0])
}

/// Vertices of the hull containing `∂π` for `w ∈ [0, 1]²`.
pub fn academic_pi_tildes() -> Vec<Mat> {
    vec![
        Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
        Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]),
        Mat::from_row_slice(2, 2, &[1.0, 1.0, -2.0, 2.0]),
        Mat::from_row_slice(2, 2, &[1.0, 1.0, -2.0, 0.0]),
    ]
}

pub const Q2_WEIGHT: f64 = 10.0;

/// `min ½uᵀu + c₁ᵀu + ½yᵀ(10I)y + c₂ᵀy` over `[−5, 5]²`, no output limits.
pub fn academic_problem() -> ProblemSpec {
    let inf = Vector::from_element(2, f64::INFINITY);
    let objective = ObjectiveSpec {
        h_mat: Mat::identity(2, 2),
        h: Vector::from_vec(vec![0.0, -9.0]),
        y_lower: -&inf,
        y_upper: inf,
        eta: 1.0,
        q2: Some(Mat::identity(2, 2) * Q2_WEIGHT),
        c2: Some(Vector::from_vec(vec![-10.0, 9.0])),
    };
    let model = ApproxModel {
        pi: academic_pi(),
        pi_w: None,
    };
    let set = academic_set();
    ProblemSpec::new(objective, model, set).expect("static data is consistent")
}

pub fn academic_set() -> FeasibleSet {
    FeasibleSet::boxed(Vector::from_element(2, -5.0), Vector::from_element(2, 5.0))
        .expect("static box")
}

/// `{I + 10ΠᵀΠ̃_i}`.
pub fn academic_polytope() -> PolytopeSet {
    uncertainty::build_direct_polytope(&Mat::identity(2, 2), &academic_pi(), Q2_WEIGHT, &academic_pi_tildes())
        .expect("static data is consistent")
}

/// The same Jacobian family as an LFT: `Π̃ = Π + e₂δᵀ`, `‖δ‖ ≤ √2` covers
/// the vertex box, giving `J = (I + 10ΠᵀΠ) + 10Πᵀe₂ δᵀ`.
pub fn academic_lft() -> (LftSet, MultiplierCone) {
    let pi = academic_pi();
    let a = Mat::identity(2, 2) + pi.transpose() * &pi * Q2_WEIGHT;
    let e2 = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let b = pi.transpose() * e2 * Q2_WEIGHT;
    let structure = vec![DeltaBlock::UnstructuredNormBounded {
        gamma: 2f64.sqrt(),
        rows: 1,
        cols: 2,
    }];
    let set = LftSet::new(a, b, Mat::identity(2, 2), Mat::zeros(2, 1), structure)
        .expect("static data is consistent");
    let cone = uncertainty::cone_for_structure(&set.structure).expect("static structure");
    (set, cone)
}
