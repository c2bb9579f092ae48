//! Physical systems `y = π(u, w)`.
//!
//! [`Plant`] is all a feedback controller may touch. [`JacobianPlant`] adds the
//! true Jacobian, which only the exact-gradient baseline is allowed to use.

pub mod academic;
pub mod feeder;

use crate::error::{dim_err, Result};
use crate::numlin::{Mat, Vector};

pub trait Plant: Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn eval(&self, u: &Vector, w: &Vector) -> Result<Vector>;
}

pub trait JacobianPlant: Plant {
    /// `∂π/∂u` at `(u, w)`.
    fn jacobian(&self, u: &Vector, w: &Vector) -> Result<Mat>;
}

/// `y = Π u + Π_w w + y0`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub pi: Mat,
    pub pi_w: Option<Mat>,
    pub offset: Vector,
}

impl LinearPlant {
    pub fn new(pi: Mat) -> Self {
        let m = pi.nrows();
        LinearPlant {
            pi,
            pi_w: None,
            offset: Vector::zeros(m),
        }
    }
}

impl Plant for LinearPlant {
    fn n_inputs(&self) -> usize {
        self.pi.ncols()
    }

    fn n_outputs(&self) -> usize {
        self.pi.nrows()
    }

    fn eval(&self, u: &Vector, w: &Vector) -> Result<Vector> {
        if u.len() != self.pi.ncols() {
            return Err(dim_err("linear plant: input length"));
        }
        let mut y = &self.pi * u + &self.offset;
        if let Some(pw) = &self.pi_w {
            if w.len() != pw.ncols() {
                return Err(dim_err("linear plant: disturbance length"));
            }
            y += pw * w;
        }
        Ok(y)
    }
}

impl JacobianPlant for LinearPlant {
    fn jacobian(&self, _u: &Vector, _w: &Vector) -> Result<Mat> {
        Ok(self.pi.clone())
    }
}

/// Central finite-difference Jacobian of `f` at `u`.
pub fn finite_difference_jacobian<F>(f: F, u: &Vector, step: f64) -> Result<Mat>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let mut cols = Vec::with_capacity(u.len());
    for j in 0..u.len() {
        let mut up = u.clone();
        let mut dn = u.clone();
        up[j] += step;
        dn[j] -= step;
        cols.push((f(&up)? - f(&dn)?) / (2.0 * step));
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok(Mat::from_fn(m, u.len(), |i, j| cols[j][i]))
}
