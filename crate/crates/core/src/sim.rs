//! Closed-loop runners and trace metrics.
//!
//! Under a constant disturbance a run stops once `‖u_{k+1} − u_k‖ ≤ tol`. A
//! series run takes exactly one step per sample, with `h` and `U` optionally
//! changing per sample; the next input is projected onto the next sample's set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numlin::{self, Mat, Vector};
use crate::plants::feeder::{Feeder, Series};
use crate::plants::{JacobianPlant, Plant};
use crate::problem::{FeasibleSet, ProblemSpec};
use crate::vi::ViProblem;

/// Residuals above this count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;
pub const CLUSTER_THRESHOLD: f64 = 0.1;
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SeriesStep {
    pub w: Vector,
    /// Replaces the linear cost term for this sample.
    pub h: Option<Vector>,
    /// Replaces the feasible set for this sample.
    pub set: Option<FeasibleSet>,
}

#[derive(Debug, Clone)]
pub enum WSource {
    Constant(Vector),
    Series(Vec<SeriesStep>),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub problem: ProblemSpec,
    pub w: WSource,
    pub tau: f64,
    pub u0: Vector,
    /// Step cap; series runs use `min(horizon, len)`.
    pub horizon: usize,
    pub tol: f64,
}

impl Scenario {
    pub fn constant(problem: ProblemSpec, w: Vector, tau: f64, u0: Vector, horizon: usize, tol: f64) -> Self {
        Scenario {
            problem,
            w: WSource::Constant(w),
            tau,
            u0,
            horizon,
            tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.tau)));
        }
        if self.u0.len() != self.problem.n() {
            return Err(dim_err("initial input length"));
        }
        if let WSource::Series(steps) = &self.w {
            if steps.is_empty() {
                return Err(Error::InvalidArgument("empty disturbance series".into()));
            }
            for s in steps {
                if s.h.as_ref().is_some_and(|h| h.len() != self.problem.n())
                    || s.set.as_ref().is_some_and(|u| u.dim() != self.problem.n())
                {
                    return Err(dim_err("series step overrides have the wrong dimension"));
                }
            }
        }
        if !self.set_at(0).contains(&self.u0, 1e-9) {
            return Err(Error::InvalidArgument("initial input is not feasible".into()));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        match &self.w {
            WSource::Constant(_) => self.horizon,
            WSource::Series(s) => s.len().min(self.horizon),
        }
    }

    fn w_at(&self, k: usize) -> &Vector {
        match &self.w {
            WSource::Constant(w) => w,
            WSource::Series(s) => &s[k.min(s.len() - 1)].w,
        }
    }

    fn set_at(&self, k: usize) -> &FeasibleSet {
        match &self.w {
            WSource::Series(s) => s[k.min(s.len() - 1)].set.as_ref().unwrap_or(&self.problem.set),
            WSource::Constant(_) => &self.problem.set,
        }
    }

    fn h_at(&self, k: usize) -> &Vector {
        match &self.w {
            WSource::Series(s) => s[k.min(s.len() - 1)].h.as_ref().unwrap_or(&self.problem.objective.h),
            WSource::Constant(_) => &self.problem.objective.h,
        }
    }

    fn is_series(&self) -> bool {
        matches!(self.w, WSource::Series(_))
    }

    /// `∇f(u) + Jᵀ∇g(y)` with this sample's `h`.
    fn gradient(&self, k: usize, u: &Vector, y: &Vector, jt: &Mat) -> Result<Vector> {
        let obj = &self.problem.objective;
        let gg = obj.grad_g(y)?;
        Ok(&obj.h_mat * u + self.h_at(k) + jt * gg)
    }

    fn cost(&self, k: usize, u: &Vector, y: &Vector) -> f64 {
        let obj = &self.problem.objective;
        0.5 * u.dot(&(&obj.h_mat * u)) + self.h_at(k).dot(u) + obj.g_value(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Oag,
    GdTrue,
    Uncontrolled,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Oag => "oag",
            Algorithm::GdTrue => "gd_true",
            Algorithm::Uncontrolled => "uncontrolled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Converged,
    HorizonReached,
    Diverged,
    PlantFailure,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub u: Vector,
    pub y: Vector,
    /// `‖u_{k+1} − u_k‖`.
    pub residual: f64,
    pub objective: f64,
    /// `Σ_i s_i(y_k)²`.
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub algorithm: Algorithm,
    pub records: Vec<StepRecord>,
    pub status: TraceStatus,
    pub message: Option<String>,
}

impl SimTrace {
    /// Input at the last recorded step.
    pub fn endpoint(&self) -> Option<&Vector> {
        self.records.last().map(|r| &r.u)
    }

    pub fn violation_integral(&self) -> f64 {
        self.records.iter().map(|r| r.violation).sum()
    }

    pub fn max_violation(&self) -> f64 {
        self.records.iter().map(|r| r.violation).fold(0.0, f64::max)
    }

    pub fn max_output(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.y.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `k,residual,objective,violation,u0..,y0..`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let (n, m) = self
            .records
            .first()
            .map_or((0, 0), |r| (r.u.len(), r.y.len()));
        let mut header: Vec<String> = ["k", "residual", "objective", "violation"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..n).map(|i| format!("u{i}")));
        header.extend((0..m).map(|i| format!("y{i}")));
        wr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.k.to_string(),
                r.residual.to_string(),
                r.objective.to_string(),
                r.violation.to_string(),
            ];
            row.extend(r.u.iter().map(|v| v.to_string()));
            row.extend(r.y.iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn run_loop<G>(sc: &Scenario, algorithm: Algorithm, plant: &dyn Plant, mut gradient_jt: G) -> Result<SimTrace>
where
    G: FnMut(&Vector, &Vector) -> Result<Mat>,
{
    sc.validate()?;
    if plant.n_inputs() != sc.problem.n() || plant.n_outputs() != sc.problem.m() {
        return Err(dim_err("plant and problem dimensions differ"));
    }
    let mut trace = SimTrace {
        algorithm,
        records: Vec::new(),
        status: TraceStatus::HorizonReached,
        message: None,
    };
    let steps = sc.steps();
    let mut u = sc.u0.clone();
    for k in 0..steps {
        let w = sc.w_at(k);
        let y = match plant.eval(&u, w) {
            Ok(y) => y,
            Err(e) => {
                trace.status = TraceStatus::PlantFailure;
                trace.message = Some(format!("step {k}: {e}"));
                return Ok(trace);
            }
        };
        let jt = match gradient_jt(&u, w) {
            Ok(j) => j,
            Err(e) => {
                trace.status = TraceStatus::PlantFailure;
                trace.message = Some(format!("step {k}: {e}"));
                return Ok(trace);
            }
        };
        let d = sc.gradient(k, &u, &y, &jt)?;
        let next_set = if sc.is_series() { sc.set_at(k + 1) } else { sc.set_at(k) };
        let next = next_set.project(&(&u - d * sc.tau))?;
        let residual = (&next - &u).norm();
        trace.records.push(StepRecord {
            k,
            objective: sc.cost(k, &u, &y),
            violation: sc.problem.objective.violation(&y),
            u: u.clone(),
            y,
            residual,
        });
        if !residual.is_finite() || residual > DIVERGENCE_LIMIT || !next.iter().all(|v| v.is_finite()) {
            trace.status = TraceStatus::Diverged;
            trace.message = Some(format!("step {k}: residual {residual:e}"));
            return Ok(trace);
        }
        if !sc.is_series() && residual <= sc.tol {
            trace.status = TraceStatus::Converged;
            return Ok(trace);
        }
        u = next;
    }
    Ok(trace)
}

/// Measure, approximate gradient with the fixed `Π`, project. The plant is
/// only ever evaluated.
pub fn run_oag(plant: &dyn Plant, sc: &Scenario) -> Result<SimTrace> {
    let pit = sc.problem.model.pi.transpose();
    run_loop(sc, Algorithm::Oag, plant, |_, _| Ok(pit.clone()))
}

/// Projected gradient with the true Jacobian `∂π(u_k, w)`.
pub fn run_gd_true(plant: &dyn JacobianPlant, sc: &Scenario) -> Result<SimTrace> {
    run_loop(sc, Algorithm::GdTrue, plant, |u, w| Ok(plant.jacobian(u, w)?.transpose()))
}

/// Holds `u_k = Proj_{U_k}(−H⁻¹h_k)`, i.e. the unpenalized optimum of the
/// input cost. For `H = I` and `h = −u_ref` this is `u_ref`.
pub fn run_uncontrolled(plant: &dyn Plant, sc: &Scenario) -> Result<SimTrace> {
    sc.validate()?;
    let obj = &sc.problem.objective;
    let steps = if sc.is_series() { sc.steps() } else { 1 };
    let mut trace = SimTrace {
        algorithm: Algorithm::Uncontrolled,
        records: Vec::new(),
        status: if sc.is_series() {
            TraceStatus::HorizonReached
        } else {
            TraceStatus::Converged
        },
        message: None,
    };
    for k in 0..steps {
        let target = numlin::solve(&obj.h_mat, &(-sc.h_at(k)))?;
        let u = sc.set_at(k).project(&target)?;
        let y = match plant.eval(&u, sc.w_at(k)) {
            Ok(y) => y,
            Err(e) => {
                trace.status = TraceStatus::PlantFailure;
                trace.message = Some(format!("step {k}: {e}"));
                return Ok(trace);
            }
        };
        trace.records.push(StepRecord {
            k,
            objective: sc.cost(k, &u, &y),
            violation: obj.violation(&y),
            u,
            y,
            residual: 0.0,
        });
    }
    Ok(trace)
}

/// Runs scenarios in parallel; results keep the input order.
pub fn run_batch<F>(scenarios: &[Scenario], run: F) -> Vec<Result<SimTrace>>
where
    F: Fn(&Scenario) -> Result<SimTrace> + Sync + Send,
{
    scenarios.par_iter().map(run).collect()
}

/// Solution of the surrogate problem with `y = Πu + Π_w ŵ`, by the projection
/// algorithm with `τ = 1/L` to residual `1e-9`.
pub fn feedforward_baseline(spec: &ProblemSpec, w_hat: &Vector) -> Result<Vector> {
    spec.validate()?;
    let obj = &spec.objective;
    let pi = &spec.model.pi;
    let offset = match &spec.model.pi_w {
        Some(pw) => {
            if pw.ncols() != w_hat.len() {
                return Err(dim_err("ŵ length differs from Π_w columns"));
            }
            pw * w_hat
        }
        None => Vector::zeros(spec.m()),
    };
    let q2 = obj.q2.as_ref().map_or(0.0, |q| numlin::spectral_norm(q));
    let pn = numlin::spectral_norm(pi);
    let lipschitz = numlin::spectral_norm(&obj.h_mat) + pn * pn * (obj.eta + q2);
    if !(lipschitz > 0.0) {
        return Err(Error::InvalidArgument("surrogate operator is zero".into()));
    }
    let op = |u: &Vector| -> Result<Vector> {
        let y = pi * u + &offset;
        spec.approx_gradient(u, &y)
    };
    let vi = ViProblem::new(op, &spec.set);
    let start = spec.set.project(&Vector::zeros(spec.n()))?;
    Ok(vi.solve(&start, 1.0 / lipschitz, 1e-9, 1_000_000)?.into_result()?.solution)
}

/// Single-linkage clusters of `points` at `threshold`, as index lists in
/// order of first member.
pub fn endpoint_clusters(points: &[Vector], threshold: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (&points[i] - &points[j]).norm() <= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// `max_k ‖u_a,k − u_b,k‖` over common steps, plus any length mismatch as ∞.
pub fn trace_difference(a: &SimTrace, b: &SimTrace) -> f64 {
    if a.records.len() != b.records.len() {
        return f64::INFINITY;
    }
    a.records
        .iter()
        .zip(&b.records)
        .map(|(x, y)| (&x.u - &y.u).norm().max((&x.y - &y.y).norm()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub algorithm: Algorithm,
    pub status: TraceStatus,
    pub steps: usize,
    pub max_violation: f64,
    pub violation_integral: f64,
    pub max_output: f64,
    pub final_residual: f64,
    pub distance_to_feedforward: Option<f64>,
    pub endpoint: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub algorithm: Algorithm,
    pub count: usize,
    pub sizes: Vec<usize>,
    /// Mean endpoint of each cluster.
    pub centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub traces: Vec<TraceMetrics>,
    pub clusters: Vec<ClusterSummary>,
    pub feedforward: Option<Vec<f64>>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn compare(traces: &[SimTrace], feedforward: Option<&Vector>) -> ComparisonReport {
    let metrics = traces
        .iter()
        .map(|t| TraceMetrics {
            algorithm: t.algorithm,
            status: t.status,
            steps: t.records.len(),
            max_violation: t.max_violation(),
            violation_integral: t.violation_integral(),
            max_output: t.max_output(),
            final_residual: t.records.last().map_or(f64::NAN, |r| r.residual),
            distance_to_feedforward: match (feedforward, t.endpoint()) {
                (Some(f), Some(e)) => Some((e - f).norm()),
                _ => None,
            },
            endpoint: t.endpoint().map(|e| e.iter().copied().collect()).unwrap_or_default(),
        })
        .collect();
    let mut by_alg: BTreeMap<&'static str, (Algorithm, Vec<Vector>)> = BTreeMap::new();
    for t in traces {
        if let Some(e) = t.endpoint() {
            by_alg
                .entry(t.algorithm.label())
                .or_insert_with(|| (t.algorithm, Vec::new()))
                .1
                .push(e.clone());
        }
    }
    let clusters = by_alg
        .into_values()
        .map(|(algorithm, pts)| {
            let groups = endpoint_clusters(&pts, CLUSTER_THRESHOLD);
            let centers = groups
                .iter()
                .map(|g| {
                    let mut c = Vector::zeros(pts[0].len());
                    for &i in g {
                        c += &pts[i];
                    }
                    (c / g.len() as f64).iter().copied().collect()
                })
                .collect();
            ClusterSummary {
                algorithm,
                count: groups.len(),
                sizes: groups.iter().map(|g| g.len()).collect(),
                centers,
            }
        })
        .collect();
    ComparisonReport {
        traces: metrics,
        clusters,
        feedforward: feedforward.map(|f| f.iter().copied().collect()),
    }
}

/// OAG scenario replaying `series` on `feeder`: per-sample `h = −u_ref` and
/// PV capability sets follow the irradiance column.
pub fn feeder_scenario(feeder: &Feeder, series: &Series, pi: &Mat, eta: f64, tau: f64) -> Result<Scenario> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let avail0 = feeder.available_power(series.irradiance_at(0));
    let problem = feeder.problem(pi, eta, &avail0)?;
    let steps = (0..series.len())
        .map(|k| {
            let avail = feeder.available_power(series.irradiance_at(k));
            SeriesStep {
                w: series.w[k].clone(),
                h: Some(-feeder.u_ref(&avail)),
                set: Some(feeder.feasible_set(&avail)),
            }
        })
        .collect();
    Ok(Scenario {
        u0: feeder.u_ref(&avail0),
        problem,
        w: WSource::Series(steps),
        tau,
        horizon: series.len(),
        tol: 0.0,
    })
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

fn color(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Oag => PALETTE[0],
        Algorithm::GdTrue => PALETTE[1],
        Algorithm::Uncontrolled => PALETTE[2],
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (SVG_H - 2.0 * MARGIN)
    }

    fn open(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            SVG_W - 2.0 * MARGIN,
            SVG_H - 2.0 * MARGIN
        );
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-size="13">{title}</text>"#);
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{}" font-size="10">{:.3}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{:.3}</text>"#,
            SVG_H - MARGIN + 14.0,
            self.x.0,
            SVG_W - MARGIN,
            SVG_H - MARGIN + 14.0,
            self.x.1
        );
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-size="10">{:.3}</text><text x="4" y="{}" font-size="10">{:.3}</text>"#,
            SVG_H - MARGIN,
            self.y.0,
            MARGIN + 8.0,
            self.y.1
        );
        s
    }

    fn polyline(&self, pts: impl Iterator<Item = (f64, f64)>, stroke: &str, extra: &str) -> String {
        let coords: Vec<String> = pts
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1\" {extra}/>\n",
            coords.join(" ")
        )
    }
}

/// `u₀` against `u₁` for every trace, endpoints marked; an optional
/// feedforward point is drawn as a cross.
pub fn svg_trajectories(traces: &[SimTrace], bounds: [(f64, f64); 2], feedforward: Option<&Vector>) -> String {
    let fr = Frame {
        x: bounds[0],
        y: bounds[1],
    };
    let mut s = fr.open("input trajectories");
    for t in traces {
        if t.records.first().is_none_or(|r| r.u.len() < 2) {
            continue;
        }
        let c = color(t.algorithm);
        s.push_str(&fr.polyline(t.records.iter().map(|r| (r.u[0], r.u[1])), c, r#"opacity="0.5""#));
        if let Some(e) = t.endpoint() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                fr.px(e[0]),
                fr.py(e[1])
            );
        }
    }
    if let Some(f) = feedforward.filter(|f| f.len() >= 2) {
        let (x, y) = (fr.px(f[0]), fr.py(f[1]));
        let _ = writeln!(
            s,
            r##"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="#e6b800" stroke-width="3"/>"##,
            x - 6.0,
            y - 6.0,
            x + 6.0,
            y + 6.0,
            x - 6.0,
            y + 6.0,
            x + 6.0,
            y - 6.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-step max and min output of each trace, with the output band drawn.
pub fn svg_voltage_envelope(traces: &[SimTrace], band: (f64, f64)) -> String {
    let steps = traces.iter().map(|t| t.records.len()).max().unwrap_or(1).max(2);
    let mut lo = band.0;
    let mut hi = band.1;
    for t in traces {
        for r in &t.records {
            lo = lo.min(r.y.min());
            hi = hi.max(r.y.max());
        }
    }
    let pad = 0.05 * (hi - lo).max(1e-6);
    let fr = Frame {
        x: (0.0, (steps - 1) as f64),
        y: (lo - pad, hi + pad),
    };
    let mut s = fr.open("output envelope");
    for b in [band.0, band.1] {
        s.push_str(&fr.polyline(
            [(0.0, b), ((steps - 1) as f64, b)].into_iter(),
            "black",
            r#"stroke-dasharray="4 3""#,
        ));
    }
    for t in traces {
        let c = color(t.algorithm);
        s.push_str(&fr.polyline(t.records.iter().map(|r| (r.k as f64, r.y.max())), c, ""));
        s.push_str(&fr.polyline(t.records.iter().map(|r| (r.k as f64, r.y.min())), c, r#"opacity="0.5""#));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::academic::{academic_problem, AcademicPlant};
    use crate::plants::LinearPlant;
    use crate::problem::{ApproxModel, ObjectiveSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: LinearPlant,
        jac_calls: AtomicUsize,
    }

    impl Plant for Counting {
        fn n_inputs(&self) -> usize {
            self.inner.n_inputs()
        }
        fn n_outputs(&self) -> usize {
            self.inner.n_outputs()
        }
        fn eval(&self, u: &Vector, w: &Vector) -> Result<Vector> {
            self.inner.eval(u, w)
        }
    }

    impl JacobianPlant for Counting {
        fn jacobian(&self, u: &Vector, w: &Vector) -> Result<Mat> {
            self.jac_calls.fetch_add(1, Ordering::SeqCst);
            self.inner.jacobian(u, w)
        }
    }

    fn w11() -> Vector {
        Vector::from_vec(vec![1.0, 1.0])
    }

    fn linear_problem() -> (ProblemSpec, LinearPlant) {
        let pi = Mat::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4]);
        let obj = ObjectiveSpec {
            h_mat: Mat::identity(2, 2),
            h: Vector::from_vec(vec![-1.0, 2.0]),
            y_lower: Vector::from_element(2, -0.2),
            y_upper: Vector::from_element(2, 0.2),
            eta: 5.0,
            q2: None,
            c2: None,
        };
        let set = FeasibleSet::boxed(Vector::from_element(2, -1.0), Vector::from_element(2, 1.0)).unwrap();
        let spec = ProblemSpec::new(obj, ApproxModel { pi: pi.clone(), pi_w: None }, set).unwrap();
        (spec, LinearPlant::new(pi))
    }

    #[test]
    fn oag_never_touches_the_jacobian() {
        let (spec, plant) = linear_problem();
        let stub = Counting {
            inner: plant,
            jac_calls: AtomicUsize::new(0),
        };
        let sc = Scenario::constant(spec, Vector::zeros(0), 0.1, Vector::zeros(2), 500, 1e-12);
        let t = run_oag(&stub, &sc).unwrap();
        assert_eq!(t.status, TraceStatus::Converged);
        assert_eq!(stub.jac_calls.load(Ordering::SeqCst), 0);
        run_gd_true(&stub, &sc).unwrap();
        assert!(stub.jac_calls.load(Ordering::SeqCst) > 0);
    }

    #[test]
    fn linear_plant_gd_and_oag_coincide() {
        let (spec, plant) = linear_problem();
        let sc = Scenario::constant(spec, Vector::zeros(0), 0.1, Vector::from_vec(vec![0.3, -0.9]), 300, 0.0);
        let a = run_oag(&plant, &sc).unwrap();
        let b = run_gd_true(&plant, &sc).unwrap();
        assert_eq!(trace_difference(&a, &b), 0.0);
        let c = compare(&[a.clone(), b.clone()], None);
        assert_eq!(c.traces[0].violation_integral, c.traces[1].violation_integral);
    }

    #[test]
    fn large_step_diverges() {
        let problem = academic_problem();
        let unbounded = FeasibleSet::unconstrained(2);
        let spec = ProblemSpec::new(problem.objective, problem.model, unbounded).unwrap();
        let sc = Scenario::constant(spec, w11(), 1.0, Vector::from_vec(vec![0.1, 0.1]), 1000, 1e-10);
        let t = run_gd_true(&AcademicPlant, &sc).unwrap();
        assert_eq!(t.status, TraceStatus::Diverged);
    }

    #[test]
    fn academic_oag_converges_from_random_starts() {
        let spec = academic_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scs: Vec<Scenario> = (0..10)
            .map(|_| {
                let u0 = Vector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
                Scenario::constant(spec.clone(), w11(), 0.01, u0, 200_000, 1e-11)
            })
            .collect();
        let traces: Vec<SimTrace> = run_batch(&scs, |s| run_oag(&AcademicPlant, s))
            .into_iter()
            .map(|t| t.unwrap())
            .collect();
        let ends: Vec<Vector> = traces.iter().map(|t| t.endpoint().unwrap().clone()).collect();
        for (t, e) in traces.iter().zip(&ends) {
            assert_eq!(t.status, TraceStatus::Converged);
            assert!((e - &ends[0]).norm() < 1e-5);
            for r in &t.records {
                assert!((spec.project(&r.u).unwrap() - &r.u).amax() <= FEASIBILITY_TOL);
            }
        }
        assert_eq!(endpoint_clusters(&ends, CLUSTER_THRESHOLD).len(), 1);
    }

    #[test]
    fn feedforward_closed_form() {
        let (mut spec, _) = linear_problem();
        spec.set = FeasibleSet::unconstrained(2);
        spec.objective.y_lower = Vector::from_element(2, f64::NEG_INFINITY);
        spec.objective.y_upper = Vector::from_element(2, f64::INFINITY);
        let q2 = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c2 = Vector::from_vec(vec![0.3, -0.7]);
        spec.objective.q2 = Some(q2.clone());
        spec.objective.c2 = Some(c2.clone());
        let pi = spec.model.pi.clone();
        let u = feedforward_baseline(&spec, &Vector::zeros(0)).unwrap();
        let lhs = Mat::identity(2, 2) + pi.transpose() * &q2 * &pi;
        let rhs = -(&spec.objective.h + pi.transpose() * c2);
        let exact = numlin::solve(&lhs, &rhs).unwrap();
        assert!((u - exact).norm() < 1e-8);
    }

    #[test]
    fn feedforward_ignores_w_without_pi_w() {
        let spec = academic_problem();
        let a = feedforward_baseline(&spec, &Vector::zeros(2)).unwrap();
        let b = feedforward_baseline(&spec, &Vector::from_vec(vec![3.0, -1.0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clustering() {
        let pts: Vec<Vector> = [0.0, 0.05, 0.12, 1.0, 3.0]
            .iter()
            .map(|&x| Vector::from_vec(vec![x, 0.0]))
            .collect();
        assert_eq!(endpoint_clusters(&pts, 0.1), vec![vec![0, 1, 2], vec![3], vec![4]]);
        assert!(endpoint_clusters(&[], 0.1).is_empty());
    }

    #[test]
    fn uncontrolled_on_no_load_series_is_flat() {
        let f = Feeder::default_8bus();
        let pi = f.linearize_nominal().unwrap();
        let series = Series {
            timestamps: vec!["a".into(), "b".into()],
            w: vec![Vector::zeros(f.model.w_dim()); 2],
            irradiance: Some(vec![0.0, 0.0]),
        };
        let sc = feeder_scenario(&f, &series, &pi, 10.0, 0.1).unwrap();
        let t = run_uncontrolled(&f, &sc).unwrap();
        assert_eq!(t.records.len(), 2);
        for r in &t.records {
            assert!(r.y.iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn feeder_replay_reduces_overvoltage() {
        let f = Feeder::default_8bus();
        let pi = f.linearize_nominal().unwrap();
        let series = crate::plants::feeder::synthetic_overvoltage_series(&f, 200, 1);
        let sc = feeder_scenario(&f, &series, &pi, 10.0, 0.1).unwrap();
        let oag = run_oag(&f, &sc).unwrap();
        let unc = run_uncontrolled(&f, &sc).unwrap();
        assert_eq!(oag.status, TraceStatus::HorizonReached);
        assert!(unc.violation_integral() > 0.0);
        assert!(oag.violation_integral() < unc.violation_integral());
        let WSource::Series(steps) = &sc.w else { unreachable!() };
        for (r, s) in oag.records.iter().zip(steps) {
            assert!(s.set.as_ref().unwrap().contains(&r.u, FEASIBILITY_TOL));
        }
        let svg = svg_voltage_envelope(&[oag, unc], (0.95, 1.05));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let spec = academic_problem();
        let bad_tau = Scenario::constant(spec.clone(), w11(), 0.0, Vector::zeros(2), 10, 1e-9);
        assert!(run_oag(&AcademicPlant, &bad_tau).is_err());
        let outside = Scenario::constant(spec, w11(), 0.01, Vector::from_vec(vec![6.0, 0.0]), 10, 1e-9);
        assert!(run_oag(&AcademicPlant, &outside).is_err());
    }

    #[test]
    fn csv_is_deterministic() {
        let spec = academic_problem();
        let sc = Scenario::constant(spec, w11(), 0.01, Vector::from_vec(vec![1.0, -2.0]), 50, 0.0);
        let mut a = Vec::new();
        let mut b = Vec::new();
        run_oag(&AcademicPlant, &sc).unwrap().write_csv(&mut a).unwrap();
        run_oag(&AcademicPlant, &sc).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 51);
    }
}
