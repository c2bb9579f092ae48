//! Problem data for soft-output-constrained feedback optimization.
//!
//! Conventions (fixed crate-wide):
//!
//! * input cost `f(u) = ½ uᵀHu + hᵀu`, so `∇f(u) = Hu + h`;
//! * output penalty `g(y) = (η/2) Σ s_i(y)² + ½ yᵀQ₂y + c₂ᵀy`, so
//!   `∇g(y) = η s(y) + Q₂y + c₂`, where `s` is the unit-slope deadzone;
//! * the approximate gradient is `F_w(u) = ∇f(u) + Πᵀ ∇g(y)`, with `y` the
//!   measured plant output at `u`.
//!
//! With these conventions the generalized Jacobian of `F_w` is
//! `H + Πᵀ(η Q + Q₂)∂π` for diagonal `Q` with entries in `[0,1]`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numlin::{Mat, Vector};
use crate::serde_ext;

/// Exact Euclidean projection onto a closed convex set.
pub trait ProjectionOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn project(&self, x: &Vector) -> Result<Vector>;
}

/// One block of the general convex part of the feasible set.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexBlock {
    /// Euclidean ball `‖x − center‖ ≤ radius`.
    Ball {
        #[serde(with = "serde_ext::vector")]
        center: Vector,
        radius: f64,
    },
    /// Inverter capability set `{(p, q) : 0 ≤ p ≤ p_max, p² + q² ≤ s_rated²}`.
    InverterDisk { p_max: f64, s_rated: f64 },
    #[serde(skip)]
    Custom(Arc<dyn ProjectionOracle>),
}

impl fmt::Debug for ConvexBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvexBlock::Ball { center, radius } => f
                .debug_struct("Ball")
                .field("center", &center.as_slice())
                .field("radius", radius)
                .finish(),
            ConvexBlock::InverterDisk { p_max, s_rated } => f
                .debug_struct("InverterDisk")
                .field("p_max", p_max)
                .field("s_rated", s_rated)
                .finish(),
            ConvexBlock::Custom(o) => write!(f, "Custom(dim={})", o.dim()),
        }
    }
}

impl ConvexBlock {
    pub fn dim(&self) -> usize {
        match self {
            ConvexBlock::Ball { center, .. } => center.len(),
            ConvexBlock::InverterDisk { .. } => 2,
            ConvexBlock::Custom(o) => o.dim(),
        }
    }

    pub fn project(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(dim_err(format!(
                "block projection: expected {} coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        match self {
            ConvexBlock::Ball { center, radius } => {
                let d = x - center;
                let r = d.norm();
                if r <= *radius {
                    Ok(x.clone())
                } else {
                    Ok(center + d * (*radius / r))
                }
            }
            ConvexBlock::InverterDisk { p_max, s_rated } => {
                let (p, q) = project_inverter_disk(x[0], x[1], *p_max, *s_rated);
                Ok(Vector::from_vec(vec![p, q]))
            }
            ConvexBlock::Custom(o) => {
                let y = o.project(x)?;
                if y.len() != x.len() || !y.iter().all(|v| v.is_finite()) {
                    return Err(Error::Projection("custom oracle returned a bad point".into()));
                }
                Ok(y)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ConvexBlock::Ball { radius, .. } if !(*radius >= 0.0) => {
                Err(Error::InvalidArgument("ball radius must be nonnegative".into()))
            }
            ConvexBlock::InverterDisk { p_max, s_rated } if !(*p_max >= 0.0 && *s_rated >= 0.0) => {
                Err(Error::InvalidArgument(
                    "inverter p_max and s_rated must be nonnegative".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Projection onto `{0 ≤ p ≤ p_max} ∩ {p² + q² ≤ s²}`.
///
/// Dualizes the disk constraint: for multiplier `λ ≥ 0` the slab-restricted
/// minimizer is `q = q₀/(1+λ)`, `p = clamp(p₀/(1+λ), 0, p_max)`, and its norm
/// is nonincreasing in `λ`, so the active multiplier is found by bisection.
pub fn project_inverter_disk(p0: f64, q0: f64, p_max: f64, s: f64) -> (f64, f64) {
    let at = |lam: f64| {
        let scale = 1.0 / (1.0 + lam);
        ((p0 * scale).clamp(0.0, p_max), q0 * scale)
    };
    let (p, q) = at(0.0);
    if p * p + q * q <= s * s {
        return (p, q);
    }
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    let mut lo = 0.0;
    let mut hi = (p0.hypot(q0) / s - 1.0).max(0.0);
    // at `hi` the unclamped point already lies on the circle, clamping only shrinks it
    while hi - lo > 1e-12 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        let (p, q) = at(mid);
        if p * p + q * q > s * s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (p, q) = at(hi);
    let r = p.hypot(q);
    if r > s {
        (p * s / r, q * s / r)
    } else {
        (p, q)
    }
}

/// `U = ℝ^{n1} × box × (general blocks)`, in that coordinate order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub n1: usize,
    #[serde(with = "serde_ext::ext_vector")]
    pub box_lower: Vector,
    #[serde(with = "serde_ext::ext_vector")]
    pub box_upper: Vector,
    #[serde(default)]
    pub general_blocks: Vec<ConvexBlock>,
}

impl FeasibleSet {
    pub fn new(
        n1: usize,
        box_lower: Vector,
        box_upper: Vector,
        general_blocks: Vec<ConvexBlock>,
    ) -> Result<Self> {
        let set = FeasibleSet {
            n1,
            box_lower,
            box_upper,
            general_blocks,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn unconstrained(n: usize) -> Self {
        FeasibleSet {
            n1: n,
            box_lower: Vector::zeros(0),
            box_upper: Vector::zeros(0),
            general_blocks: vec![],
        }
    }

    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        Self::new(0, lower, upper, vec![])
    }

    pub fn blocks(blocks: Vec<ConvexBlock>) -> Result<Self> {
        Self::new(0, Vector::zeros(0), Vector::zeros(0), blocks)
    }

    pub fn validate(&self) -> Result<()> {
        if self.box_lower.len() != self.box_upper.len() {
            return Err(dim_err("box lower/upper lengths differ"));
        }
        for (i, (lo, hi)) in self.box_lower.iter().zip(self.box_upper.iter()).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "box coordinate {i}: lower {lo} above upper {hi}"
                )));
            }
        }
        for b in &self.general_blocks {
            b.validate()?;
        }
        Ok(())
    }

    pub fn n2(&self) -> usize {
        self.box_lower.len()
    }

    pub fn n3(&self) -> usize {
        self.general_blocks.iter().map(|b| b.dim()).sum()
    }

    pub fn dim(&self) -> usize {
        self.n1 + self.n2() + self.n3()
    }

    pub fn project(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(dim_err(format!(
                "project: set has dimension {}, point has {}",
                self.dim(),
                x.len()
            )));
        }
        let mut out = x.clone();
        let n1 = self.n1;
        for i in 0..self.n2() {
            out[n1 + i] = x[n1 + i].clamp(self.box_lower[i], self.box_upper[i]);
        }
        let mut off = n1 + self.n2();
        for b in &self.general_blocks {
            let d = b.dim();
            let part = b.project(&x.rows(off, d).into_owned())?;
            out.rows_mut(off, d).copy_from(&part);
            off += d;
        }
        Ok(out)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self.project(x) {
            Ok(p) => (p - x).amax() <= tol,
            Err(_) => false,
        }
    }
}

/// Cost data. See the module docs for the scaling conventions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(with = "serde_ext::mat")]
    pub h_mat: Mat,
    #[serde(with = "serde_ext::vector")]
    pub h: Vector,
    #[serde(with = "serde_ext::ext_vector")]
    pub y_lower: Vector,
    #[serde(with = "serde_ext::ext_vector")]
    pub y_upper: Vector,
    pub eta: f64,
    #[serde(default, with = "serde_ext::opt_mat", skip_serializing_if = "Option::is_none")]
    pub q2: Option<Mat>,
    #[serde(default, with = "serde_ext::opt_vector", skip_serializing_if = "Option::is_none")]
    pub c2: Option<Vector>,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.h.len();
        if self.h_mat.nrows() != n || self.h_mat.ncols() != n {
            return Err(dim_err("H must be n×n with n = len(h)"));
        }
        if (&self.h_mat - self.h_mat.transpose()).amax() > 1e-12 * (1.0 + self.h_mat.amax()) {
            return Err(Error::InvalidArgument("H must be symmetric".into()));
        }
        if crate::numlin::psd_margin(&self.h_mat)? < -1e-12 {
            return Err(Error::InvalidArgument("H must be positive semidefinite".into()));
        }
        let m = self.y_lower.len();
        if self.y_upper.len() != m {
            return Err(dim_err("y_lower/y_upper lengths differ"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidArgument("eta must be positive".into()));
        }
        check_bounds(&self.y_lower, &self.y_upper)?;
        if let Some(q2) = &self.q2 {
            if q2.nrows() != m || q2.ncols() != m {
                return Err(dim_err("Q2 must be m×m"));
            }
        }
        if let Some(c2) = &self.c2 {
            if c2.len() != m {
                return Err(dim_err("c2 must have length m"));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn m(&self) -> usize {
        self.y_lower.len()
    }

    pub fn grad_f(&self, u: &Vector) -> Result<Vector> {
        if u.len() != self.n() {
            return Err(dim_err("grad_f: u length"));
        }
        Ok(&self.h_mat * u + &self.h)
    }

    pub fn grad_g(&self, y: &Vector) -> Result<Vector> {
        if y.len() != self.m() {
            return Err(dim_err("grad_g: y length"));
        }
        let mut g = soft_threshold(y, &self.y_lower, &self.y_upper)? * self.eta;
        if let Some(q2) = &self.q2 {
            g += q2 * y;
        }
        if let Some(c2) = &self.c2 {
            g += c2;
        }
        Ok(g)
    }

    pub fn f_value(&self, u: &Vector) -> f64 {
        0.5 * u.dot(&(&self.h_mat * u)) + self.h.dot(u)
    }

    pub fn g_value(&self, y: &Vector) -> f64 {
        let s = soft_threshold(y, &self.y_lower, &self.y_upper).unwrap_or_else(|_| y * 0.0);
        let mut v = 0.5 * self.eta * s.norm_squared();
        if let Some(q2) = &self.q2 {
            v += 0.5 * y.dot(&(q2 * y));
        }
        if let Some(c2) = &self.c2 {
            v += c2.dot(y);
        }
        v
    }

    /// `Σ_i s_i(y)²`.
    pub fn violation(&self, y: &Vector) -> f64 {
        soft_threshold(y, &self.y_lower, &self.y_upper)
            .map(|s| s.norm_squared())
            .unwrap_or(f64::NAN)
    }
}

fn check_bounds(lo: &Vector, hi: &Vector) -> Result<()> {
    for (i, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
        if l.is_nan() || h.is_nan() || l > h {
            return Err(Error::InvalidArgument(format!(
                "output limits crossed at coordinate {i}: {l} > {h}"
            )));
        }
    }
    Ok(())
}

/// Unit-slope deadzone: `y − ȳ` above the band, `y − y̲` below, zero inside.
pub fn soft_threshold(y: &Vector, lower: &Vector, upper: &Vector) -> Result<Vector> {
    if y.len() != lower.len() || y.len() != upper.len() {
        return Err(dim_err("soft_threshold: lengths"));
    }
    check_bounds(lower, upper)?;
    Ok(Vector::from_fn(y.len(), |i, _| {
        if y[i] > upper[i] {
            y[i] - upper[i]
        } else if y[i] < lower[i] {
            y[i] - lower[i]
        } else {
            0.0
        }
    }))
}

/// Linear model of the plant used by the controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxModel {
    #[serde(with = "serde_ext::mat")]
    pub pi: Mat,
    #[serde(default, with = "serde_ext::opt_mat", skip_serializing_if = "Option::is_none")]
    pub pi_w: Option<Mat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub objective: ObjectiveSpec,
    pub model: ApproxModel,
    pub set: FeasibleSet,
}

impl ProblemSpec {
    pub fn new(objective: ObjectiveSpec, model: ApproxModel, set: FeasibleSet) -> Result<Self> {
        let spec = ProblemSpec {
            objective,
            model,
            set,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.set.validate()?;
        let (n, m) = (self.objective.n(), self.objective.m());
        if self.model.pi.nrows() != m || self.model.pi.ncols() != n {
            return Err(dim_err(format!(
                "Π must be {m}×{n}, got {}×{}",
                self.model.pi.nrows(),
                self.model.pi.ncols()
            )));
        }
        if let Some(pw) = &self.model.pi_w {
            if pw.nrows() != m {
                return Err(dim_err("Π_w must have m rows"));
            }
        }
        if self.set.dim() != n {
            return Err(dim_err(format!(
                "feasible set has dimension {}, problem has n = {n}",
                self.set.dim()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.objective.n()
    }

    pub fn m(&self) -> usize {
        self.objective.m()
    }

    /// `∇f(u) + Πᵀ∇g(y_measured)`; never touches a true Jacobian.
    pub fn approx_gradient(&self, u: &Vector, y_measured: &Vector) -> Result<Vector> {
        let gf = self.objective.grad_f(u)?;
        let gg = self.objective.grad_g(y_measured)?;
        Ok(gf + self.model.pi.transpose() * gg)
    }

    /// `∇f(u) + Jᵀ∇g(y)` for a supplied Jacobian `J`.
    pub fn exact_gradient(&self, u: &Vector, y: &Vector, jacobian: &Mat) -> Result<Vector> {
        if jacobian.nrows() != self.m() || jacobian.ncols() != self.n() {
            return Err(dim_err("exact_gradient: Jacobian shape"));
        }
        let gf = self.objective.grad_f(u)?;
        let gg = self.objective.grad_g(y)?;
        Ok(gf + jacobian.transpose() * gg)
    }

    pub fn cost(&self, u: &Vector, y: &Vector) -> f64 {
        self.objective.f_value(u) + self.objective.g_value(y)
    }

    pub fn project(&self, x: &Vector) -> Result<Vector> {
        self.set.project(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn spec_with(h_mat: Mat, h: Vector, lo: Vector, hi: Vector, eta: f64) -> ObjectiveSpec {
        ObjectiveSpec {
            h_mat,
            h,
            y_lower: lo,
            y_upper: hi,
            eta,
            q2: None,
            c2: None,
        }
    }

    #[test]
    fn grad_f_examples() {
        let inf = f64::INFINITY;
        let s = spec_with(Mat::identity(2, 2), v(&[0.0, 0.0]), v(&[-inf]), v(&[inf]), 1.0);
        assert_eq!(s.grad_f(&v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));
        let s = spec_with(Mat::identity(2, 2) * 2.0, v(&[1.0, 0.0]), v(&[-inf]), v(&[inf]), 1.0);
        assert_eq!(s.grad_f(&v(&[0.0, 0.0])).unwrap(), v(&[1.0, 0.0]));
        let s = spec_with(Mat::identity(2, 2), v(&[0.0, -9.0]), v(&[-inf]), v(&[inf]), 1.0);
        assert_eq!(s.grad_f(&v(&[3.0, 0.0])).unwrap(), v(&[3.0, -9.0]));
        assert!(s.grad_f(&v(&[1.0])).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        let lo = v(&[0.95]);
        let hi = v(&[1.05]);
        assert_relative_eq!(soft_threshold(&v(&[1.10]), &lo, &hi).unwrap()[0], 0.05, epsilon = 1e-12);
        assert_eq!(soft_threshold(&v(&[1.00]), &lo, &hi).unwrap()[0], 0.0);
        assert_relative_eq!(soft_threshold(&v(&[0.90]), &lo, &hi).unwrap()[0], -0.05, epsilon = 1e-12);
        assert!(matches!(
            soft_threshold(&v(&[1.0]), &hi, &lo),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn grad_g_examples() {
        let lo = v(&[0.95]);
        let hi = v(&[1.05]);
        let s = spec_with(Mat::identity(1, 1), v(&[0.0]), lo.clone(), hi.clone(), 1.0);
        assert_eq!(s.grad_g(&v(&[1.0])).unwrap()[0], 0.0);
        let s = spec_with(Mat::identity(1, 1), v(&[0.0]), lo, hi, 2.0);
        assert_relative_eq!(s.grad_g(&v(&[1.10])).unwrap()[0], 0.10, epsilon = 1e-12);

        let inf = f64::INFINITY;
        let mut s = spec_with(Mat::identity(2, 2), v(&[0.0, 0.0]), v(&[-inf, -inf]), v(&[inf, inf]), 1.0);
        s.q2 = Some(Mat::identity(2, 2) * 10.0);
        s.c2 = Some(v(&[-10.0, 9.0]));
        assert_eq!(s.grad_g(&v(&[1.0, 0.0])).unwrap(), v(&[0.0, 9.0]));
    }

    #[test]
    fn approx_gradient_examples() {
        let inf = f64::INFINITY;
        let obj = spec_with(Mat::identity(2, 2), v(&[0.0, 0.0]), v(&[-inf, -inf]), v(&[1.0, inf]), 1.0);
        let spec = ProblemSpec::new(
            obj,
            ApproxModel {
                pi: Mat::identity(2, 2),
                pi_w: None,
            },
            FeasibleSet::unconstrained(2),
        )
        .unwrap();
        assert_eq!(
            spec.approx_gradient(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap(),
            v(&[0.0, 0.0])
        );
        assert_eq!(
            spec.approx_gradient(&v(&[1.0, 0.0]), &v(&[2.0, 0.0])).unwrap(),
            v(&[2.0, 0.0])
        );
    }

    #[test]
    fn approx_gradient_linear_in_measurement_inside_band() {
        let obj = spec_with(
            Mat::identity(2, 2),
            v(&[0.3, -0.1]),
            v(&[-10.0, -10.0]),
            v(&[10.0, 10.0]),
            3.0,
        );
        let mut obj = obj;
        obj.q2 = Some(Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let spec = ProblemSpec::new(
            obj,
            ApproxModel {
                pi: Mat::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]),
                pi_w: None,
            },
            FeasibleSet::unconstrained(2),
        )
        .unwrap();
        let u = v(&[0.2, 0.4]);
        let (ya, yb) = (v(&[1.0, -2.0]), v(&[0.5, 3.0]));
        let base = spec.approx_gradient(&u, &Vector::zeros(2)).unwrap();
        let ga = spec.approx_gradient(&u, &ya).unwrap() - &base;
        let gb = spec.approx_gradient(&u, &yb).unwrap() - &base;
        let gab = spec.approx_gradient(&u, &(&ya * 2.0 + &yb * 0.5)).unwrap() - &base;
        assert!((gab - (ga * 2.0 + gb * 0.5)).norm() < 1e-12);
    }

    #[test]
    fn project_examples() {
        let set = FeasibleSet::boxed(v(&[-5.0, -5.0]), v(&[5.0, 5.0])).unwrap();
        assert_eq!(set.project(&v(&[7.0, -9.0])).unwrap(), v(&[5.0, -5.0]));
        assert_eq!(set.project(&v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));

        let disk = FeasibleSet::new(
            1,
            Vector::zeros(0),
            Vector::zeros(0),
            vec![ConvexBlock::Ball {
                center: Vector::zeros(2),
                radius: 1.0,
            }],
        )
        .unwrap();
        let p = disk.project(&v(&[0.0, 3.0, 4.0])).unwrap();
        assert_relative_eq!(p[1], 0.6, epsilon = 1e-14);
        assert_relative_eq!(p[2], 0.8, epsilon = 1e-14);
    }

    #[test]
    fn infinite_box_bounds_clamp_nothing() {
        let inf = f64::INFINITY;
        let set = FeasibleSet::boxed(v(&[-inf, 0.0]), v(&[inf, inf])).unwrap();
        assert_eq!(set.project(&v(&[-1e300, 5.0])).unwrap(), v(&[-1e300, 5.0]));
        assert_eq!(set.project(&v(&[3.0, -2.0])).unwrap(), v(&[3.0, 0.0]));
    }

    #[test]
    fn crossed_box_rejected() {
        assert!(FeasibleSet::boxed(v(&[1.0]), v(&[0.0])).is_err());
    }

    #[test]
    fn inverter_disk_matches_brute_force() {
        // projection onto the slab ∩ disk compared against a dense polar grid
        // over the set, refined locally
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p_max = rng.random_range(0.0..1.5);
            let s = rng.random_range(0.1..1.2);
            let p0 = rng.random_range(-2.0..2.5);
            let q0 = rng.random_range(-2.0..2.0);
            let (p, q) = project_inverter_disk(p0, q0, p_max, s);
            assert!(p >= -1e-15 && p <= p_max + 1e-15);
            assert!(p * p + q * q <= s * s * (1.0 + 1e-12));
            let dist = (p - p0).hypot(q - q0);
            let mut best = f64::INFINITY;
            let steps = 400;
            for i in 0..=steps {
                let pp = p_max.min(s) * i as f64 / steps as f64;
                let qmax = (s * s - pp * pp).max(0.0).sqrt();
                let qq = q0.clamp(-qmax, qmax);
                best = best.min((pp - p0).hypot(qq - q0));
            }
            assert!(dist <= best + 1e-9, "p0={p0} q0={q0} dist={dist} best={best}");
        }
    }

    #[test]
    fn inverter_disk_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let p_max = rng.random_range(0.0..1.5);
            let s = rng.random_range(0.0..1.2);
            let (p, q) = project_inverter_disk(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                p_max,
                s,
            );
            let (p2, q2) = project_inverter_disk(p, q, p_max, s);
            assert!((p - p2).abs() <= 1e-12 && (q - q2).abs() <= 1e-12);
        }
    }

    #[test]
    fn set_dimension_must_match_problem() {
        let inf = f64::INFINITY;
        let obj = spec_with(Mat::identity(2, 2), v(&[0.0, -9.0]), v(&[-inf, -inf]), v(&[inf, inf]), 1.0);
        let set = FeasibleSet::new(
            0,
            v(&[-5.0]),
            v(&[5.0]),
            vec![ConvexBlock::InverterDisk {
                p_max: 1.0,
                s_rated: 1.0,
            }],
        )
        .unwrap();
        let spec = ProblemSpec::new(
            obj,
            ApproxModel {
                pi: Mat::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]),
                pi_w: None,
            },
            set,
        );
        assert!(matches!(spec, Err(Error::Dimension(_))));
    }

    #[test]
    fn feasible_set_json_round_trip() {
        let set = FeasibleSet::new(
            1,
            v(&[-f64::INFINITY]),
            v(&[5.0]),
            vec![ConvexBlock::InverterDisk {
                p_max: 0.8,
                s_rated: 1.0,
            }],
        )
        .unwrap();
        let text = serde_json::to_string(&set).unwrap();
        let back: FeasibleSet = serde_json::from_str(&text).unwrap();
        let x = v(&[3.0, -7.0, 2.0, 2.0]);
        assert_eq!(set.project(&x).unwrap(), back.project(&x).unwrap());
    }

    proptest! {
        #[test]
        fn soft_threshold_slopes_in_unit_interval(y in -3.0f64..3.0, d in 1e-4f64..0.5,
                                                  lo in -1.0f64..0.0, w in 0.0f64..1.0) {
            let lower = v(&[lo]);
            let upper = v(&[lo + w]);
            let a = soft_threshold(&v(&[y]), &lower, &upper).unwrap()[0];
            let b = soft_threshold(&v(&[y + d]), &lower, &upper).unwrap()[0];
            let slope = (b - a) / d;
            prop_assert!(slope >= -1e-9 && slope <= 1.0 + 1e-9);
        }

        #[test]
        fn projection_is_nonexpansive(xs in proptest::collection::vec(-4.0f64..4.0, 6),
                                      zs in proptest::collection::vec(-4.0f64..4.0, 6)) {
            let set = FeasibleSet::new(
                1,
                v(&[-1.0]),
                v(&[0.5]),
                vec![
                    ConvexBlock::InverterDisk { p_max: 0.7, s_rated: 1.0 },
                    ConvexBlock::Ball { center: Vector::zeros(2), radius: 1.3 },
                ],
            ).unwrap();
            let x = Vector::from_vec(xs);
            let z = Vector::from_vec(zs);
            let px = set.project(&x).unwrap();
            let pz = set.project(&z).unwrap();
            prop_assert!((&px - &pz).norm() <= (&x - &z).norm() + 1e-12);
            let ppx = set.project(&px).unwrap();
            prop_assert!((ppx - px).amax() <= 1e-12);
        }
    }
}
