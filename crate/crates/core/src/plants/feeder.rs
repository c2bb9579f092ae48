//! Single-phase radial distribution feeder with fixed-point AC power flow.
//!
//! Bus 0 is the slack (point of common coupling). All quantities are per unit.
//! Controllable inputs are PV injections `u = [p₁, q₁, p₂, q₂, …]` (positive
//! means generation); disturbances `w` are load consumptions, bus `k` drawing
//! `w[i] + j·w[i+1]` for each load entry `{node: k, w_index: i}`. Outputs are
//! the voltage magnitudes of buses `1..N` in bus order.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finite_difference_jacobian, JacobianPlant, Plant};
use crate::error::{dim_err, Error, Result};
use crate::numlin::{self, Mat, Vector};
use crate::problem::{ApproxModel, ConvexBlock, FeasibleSet, ObjectiveSpec, ProblemSpec};
use crate::seed;

pub const FD_STEP: f64 = 1e-6;
pub const PF_TOL: f64 = 1e-10;
pub const PF_MAX_ITER: usize = 100;
pub const DEFAULT_SAFETY: f64 = 1.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PvUnit {
    pub node: usize,
    pub p_max: f64,
    pub s_rated: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadMap {
    pub node: usize,
    pub w_index: usize,
}

fn default_cap() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederModel {
    #[serde(default)]
    pub name: String,
    /// Bus count including the slack bus.
    pub buses: usize,
    /// `[re, im]`.
    pub slack_voltage: [f64; 2],
    pub lines: Vec<Line>,
    pub pv: Vec<PvUnit>,
    pub loads: Vec<LoadMap>,
    /// Largest accepted injection magnitude at any bus.
    #[serde(default = "default_cap")]
    pub max_injection: f64,
}

impl FeederModel {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The shipped 8-bus test feeder:
    ///
    /// ```text
    /// 0 ─ 1 ─ 2 ─ 3 ─ 4
    ///         │   └── 7
    ///         └ 5 ─ 6
    /// ```
    /// PV at buses 3, 4, 6 and 7; a load at every non-slack bus.
    pub fn default_8bus() -> Self {
        let line = |from, to, r, x| Line { from, to, r, x };
        let pv = |node, p_max, s_rated| PvUnit { node, p_max, s_rated };
        FeederModel {
            name: "synthetic-8bus".into(),
            buses: 8,
            slack_voltage: [1.0, 0.0],
            lines: vec![
                line(0, 1, 0.010, 0.020),
                line(1, 2, 0.015, 0.020),
                line(2, 3, 0.020, 0.020),
                line(3, 4, 0.025, 0.020),
                line(2, 5, 0.020, 0.015),
                line(5, 6, 0.025, 0.020),
                line(3, 7, 0.030, 0.020),
            ],
            pv: vec![
                pv(3, 0.40, 0.44),
                pv(4, 0.50, 0.55),
                pv(6, 0.50, 0.55),
                pv(7, 0.40, 0.44),
            ],
            loads: (1..8).map(|k| LoadMap {
                node: k,
                w_index: 2 * (k - 1),
            })
            .collect(),
            max_injection: default_cap(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        2 * self.pv.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.buses.saturating_sub(1)
    }

    pub fn w_dim(&self) -> usize {
        self.loads.iter().map(|l| l.w_index + 2).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buses;
        if n < 2 {
            return Err(Error::InvalidArgument("feeder needs a slack bus and at least one more".into()));
        }
        if self.lines.len() != n - 1 {
            return Err(Error::InvalidArgument(format!(
                "radial feeder with {n} buses needs {} lines, got {}",
                n - 1,
                self.lines.len()
            )));
        }
        let mut parent = vec![usize::MAX; n];
        for (k, l) in self.lines.iter().enumerate() {
            if l.from >= n || l.to >= n || l.to == 0 || l.from == l.to {
                return Err(Error::InvalidArgument(format!("line {k} has bad endpoints")));
            }
            if !(l.r > 0.0) || !l.x.is_finite() {
                return Err(Error::InvalidArgument(format!("line {k} needs positive resistance")));
            }
            if parent[l.to] != usize::MAX {
                return Err(Error::InvalidArgument(format!("bus {} has two parent lines", l.to)));
            }
            parent[l.to] = k;
        }
        for b in 1..n {
            let mut cur = b;
            let mut hops = 0;
            while cur != 0 {
                let k = parent[cur];
                if k == usize::MAX || hops > n {
                    return Err(Error::InvalidArgument(format!("bus {b} is not connected to the slack")));
                }
                cur = self.lines[k].from;
                hops += 1;
            }
        }
        for p in &self.pv {
            if p.node == 0 || p.node >= n {
                return Err(Error::InvalidArgument(format!("PV at invalid bus {}", p.node)));
            }
            if !(p.s_rated >= 0.0 && p.p_max >= 0.0) {
                return Err(Error::InvalidArgument("PV ratings must be nonnegative".into()));
            }
        }
        for l in &self.loads {
            if l.node == 0 || l.node >= n {
                return Err(Error::InvalidArgument(format!("load at invalid bus {}", l.node)));
            }
        }
        let [re, im] = self.slack_voltage;
        if !(re.hypot(im) > 0.0) {
            return Err(Error::InvalidArgument("slack voltage must be nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub u: Vector,
    pub w: Vector,
    /// Voltages of buses `1..N`.
    pub v: Vec<Complex64>,
    pub y: Vector,
    pub iterations: usize,
    /// `‖v − v₀1 − Z conj(s/v)‖_∞` at the returned point.
    pub residual: f64,
}

/// A validated feeder with its bus impedance matrix.
#[derive(Debug, Clone)]
pub struct Feeder {
    pub model: FeederModel,
    z: Vec<Complex64>,
    v0: Complex64,
}

impl Feeder {
    pub fn new(model: FeederModel) -> Result<Self> {
        model.validate()?;
        let n = model.buses;
        let m = n - 1;
        let mut parent = vec![usize::MAX; n];
        for (k, l) in model.lines.iter().enumerate() {
            parent[l.to] = k;
        }
        // root path of each bus as a set of line indices
        let paths: Vec<Vec<usize>> = (1..n)
            .map(|b| {
                let mut p = Vec::new();
                let mut cur = b;
                while cur != 0 {
                    let k = parent[cur];
                    p.push(k);
                    cur = model.lines[k].from;
                }
                p
            })
            .collect();
        let mut z = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..m {
            for j in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for &k in &paths[i] {
                    if paths[j].contains(&k) {
                        acc += Complex64::new(model.lines[k].r, model.lines[k].x);
                    }
                }
                z[i * m + j] = acc;
            }
        }
        let v0 = Complex64::new(model.slack_voltage[0], model.slack_voltage[1]);
        Ok(Feeder { model, z, v0 })
    }

    pub fn default_8bus() -> Self {
        Feeder::new(FeederModel::default_8bus()).expect("shipped feeder is valid")
    }

    pub fn m(&self) -> usize {
        self.model.n_outputs()
    }

    pub fn n(&self) -> usize {
        self.model.n_inputs()
    }

    /// Bus impedance entry for non-slack buses `i, j` (1-based bus numbers).
    pub fn z_entry(&self, i: usize, j: usize) -> Complex64 {
        self.z[(i - 1) * self.m() + (j - 1)]
    }

    /// Net complex injections at buses `1..N`.
    pub fn injections(&self, u: &Vector, w: &Vector) -> Result<Vec<Complex64>> {
        if u.len() != self.n() {
            return Err(dim_err(format!("feeder expects {} inputs, got {}", self.n(), u.len())));
        }
        if w.len() < self.model.w_dim() {
            return Err(dim_err(format!(
                "feeder expects {} disturbances, got {}",
                self.model.w_dim(),
                w.len()
            )));
        }
        let mut s = vec![Complex64::new(0.0, 0.0); self.m()];
        for (k, pv) in self.model.pv.iter().enumerate() {
            s[pv.node - 1] += Complex64::new(u[2 * k], u[2 * k + 1]);
        }
        for l in &self.model.loads {
            s[l.node - 1] -= Complex64::new(w[l.w_index], w[l.w_index + 1]);
        }
        if let Some(big) = s.iter().find(|x| !(x.norm() <= self.model.max_injection)) {
            return Err(Error::PowerFlow(format!(
                "injection {big} exceeds the cap {}",
                self.model.max_injection
            )));
        }
        Ok(s)
    }

    fn map(&self, s: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
        let m = self.m();
        let current: Vec<Complex64> = s.iter().zip(v).map(|(s, v)| (s / v).conj()).collect();
        (0..m)
            .map(|i| {
                let mut acc = self.v0;
                for j in 0..m {
                    acc += self.z[i * m + j] * current[j];
                }
                acc
            })
            .collect()
    }

    /// Z-bus fixed-point iteration `v ← v₀1 + Z conj(s/v)` from flat start.
    pub fn power_flow(&self, u: &Vector, w: &Vector) -> Result<OperatingPoint> {
        let s = self.injections(u, w)?;
        let mut v = vec![self.v0; self.m()];
        let mut best = f64::INFINITY;
        let mut stall = 0;
        let mut iterations = 0;
        loop {
            if iterations >= PF_MAX_ITER {
                if best <= PF_TOL {
                    break;
                }
                return Err(Error::PowerFlow(format!(
                    "no convergence in {PF_MAX_ITER} iterations (step {best:e})"
                )));
            }
            let next = self.map(&s, &v);
            let step = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            v = next;
            iterations += 1;
            if !step.is_finite() || v.iter().any(|x| !(x.norm() > 1e-3)) {
                return Err(Error::PowerFlow("voltage collapse".into()));
            }
            if step < best {
                best = step;
                stall = 0;
            } else {
                stall += 1;
            }
            if step <= 1e-14 {
                break;
            }
            if stall >= 20 {
                if best <= PF_TOL {
                    break;
                }
                return Err(Error::PowerFlow(format!(
                    "iteration stopped decreasing at step {best:e}"
                )));
            }
        }
        let residual = self
            .map(&s, &v)
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if residual > PF_TOL {
            return Err(Error::PowerFlow(format!("residual {residual:e} above tolerance")));
        }
        let y = Vector::from_iterator(v.len(), v.iter().map(|x| x.norm()));
        Ok(OperatingPoint {
            u: u.clone(),
            w: w.clone(),
            v,
            y,
            iterations,
            residual,
        })
    }

    /// Finite-difference `∂|v|/∂u` at `(u, w)`.
    pub fn jacobian_at(&self, u: &Vector, w: &Vector) -> Result<Mat> {
        finite_difference_jacobian(|x| Ok(self.power_flow(x, w)?.y), u, FD_STEP)
    }

    /// Sensitivity at zero injections and flat voltage.
    pub fn linearize_nominal(&self) -> Result<Mat> {
        self.jacobian_at(&Vector::zeros(self.n()), &Vector::zeros(self.model.w_dim()))
    }

    /// Available PV power for an irradiance level in `[0, 1]`.
    pub fn available_power(&self, irradiance: f64) -> Vec<f64> {
        let g = irradiance.clamp(0.0, 1.0);
        self.model.pv.iter().map(|p| p.p_max * g).collect()
    }

    pub fn feasible_set(&self, p_avail: &[f64]) -> FeasibleSet {
        let blocks = self
            .model
            .pv
            .iter()
            .zip(p_avail)
            .map(|(pv, &p)| ConvexBlock::InverterDisk {
                p_max: p.min(pv.s_rated),
                s_rated: pv.s_rated,
            })
            .collect();
        FeasibleSet::blocks(blocks).expect("nonnegative ratings")
    }

    /// `[p_avail₁, 0, p_avail₂, 0, …]`: full active power, no reactive power.
    pub fn u_ref(&self, p_avail: &[f64]) -> Vector {
        let mut u = Vector::zeros(self.n());
        for (k, pv) in self.model.pv.iter().enumerate() {
            u[2 * k] = p_avail[k].min(pv.s_rated);
        }
        u
    }

    /// `min ½‖u − u_ref‖² + (η/2)Σ s_i(y)²` with band `[0.95, 1.05]` and `Π = Π_nom`.
    pub fn problem(&self, pi: &Mat, eta: f64, p_avail: &[f64]) -> Result<ProblemSpec> {
        let m = self.m();
        let objective = ObjectiveSpec {
            h_mat: Mat::identity(self.n(), self.n()),
            h: -self.u_ref(p_avail),
            y_lower: Vector::from_element(m, 0.95),
            y_upper: Vector::from_element(m, 1.05),
            eta,
            q2: None,
            c2: None,
        };
        let model = ApproxModel {
            pi: pi.clone(),
            pi_w: None,
        };
        ProblemSpec::new(objective, model, self.feasible_set(p_avail))
    }
}

impl Plant for Feeder {
    fn n_inputs(&self) -> usize {
        self.n()
    }

    fn n_outputs(&self) -> usize {
        self.m()
    }

    fn eval(&self, u: &Vector, w: &Vector) -> Result<Vector> {
        Ok(self.power_flow(u, w)?.y)
    }
}

impl JacobianPlant for Feeder {
    fn jacobian(&self, u: &Vector, w: &Vector) -> Result<Mat> {
        self.jacobian_at(u, w)
    }
}

/// Draws operating points `(u, w)` for γ estimation.
pub trait OperatingSampler: Sync {
    fn sample(&self, feeder: &Feeder, rng: &mut ChaCha8Rng) -> (Vector, Vector);
}

/// Every sample at no load.
#[derive(Debug, Clone, Copy)]
pub struct NoLoadSampler;

impl OperatingSampler for NoLoadSampler {
    fn sample(&self, feeder: &Feeder, _rng: &mut ChaCha8Rng) -> (Vector, Vector) {
        (Vector::zeros(feeder.n()), Vector::zeros(feeder.model.w_dim()))
    }
}

fn sample_inverter<R: Rng + ?Sized>(rng: &mut R, p_max: f64, s: f64) -> (f64, f64) {
    let p = rng.random_range(0.0..=p_max.min(s));
    let q_lim = (s * s - p * p).max(0.0).sqrt();
    (p, rng.random_range(-q_lim..=q_lim))
}

/// PV points uniform over the capability sets at a random irradiance; loads
/// uniform in the given ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniformSampler {
    pub load_p: (f64, f64),
    pub load_q: (f64, f64),
    pub irradiance: (f64, f64),
}

impl Default for UniformSampler {
    fn default() -> Self {
        UniformSampler {
            load_p: (0.0, 0.12),
            load_q: (0.0, 0.04),
            irradiance: (0.0, 1.0),
        }
    }
}

fn range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl OperatingSampler for UniformSampler {
    fn sample(&self, feeder: &Feeder, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
        let g = range(rng, self.irradiance);
        let avail = feeder.available_power(g);
        let mut u = Vector::zeros(feeder.n());
        for (k, pv) in feeder.model.pv.iter().enumerate() {
            let (p, q) = sample_inverter(rng, avail[k], pv.s_rated);
            u[2 * k] = p;
            u[2 * k + 1] = q;
        }
        let mut w = Vector::zeros(feeder.model.w_dim());
        for l in &feeder.model.loads {
            w[l.w_index] = range(rng, self.load_p);
            w[l.w_index + 1] = range(rng, self.load_q);
        }
        (u, w)
    }
}

/// Disturbances drawn from rows of a series, PV points uniform over the
/// capability set at that row's irradiance.
#[derive(Debug, Clone)]
pub struct SeriesSampler {
    pub series: Series,
}

impl OperatingSampler for SeriesSampler {
    fn sample(&self, feeder: &Feeder, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
        let k = rng.random_range(0..self.series.len());
        let g = self.series.irradiance_at(k);
        let avail = feeder.available_power(g);
        let mut u = Vector::zeros(feeder.n());
        for (i, pv) in feeder.model.pv.iter().enumerate() {
            let (p, q) = sample_inverter(rng, avail[i], pv.s_rated);
            u[2 * i] = p;
            u[2 * i + 1] = q;
        }
        (u, self.series.w[k].clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaReport {
    pub gamma: f64,
    pub safety: f64,
    pub max_error: f64,
    /// `‖∂π(u_k, w_k) − Π_nom‖₂` per successful sample, in sample order.
    pub errors: Vec<f64>,
    pub failures: usize,
}

impl GammaReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["sample", "error"])?;
        for (i, e) in self.errors.iter().enumerate() {
            wr.write_record([i.to_string(), e.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `γ = safety · max_k ‖jacobian_at(u_k, w_k) − Π_nom‖₂`.
pub fn sample_gamma(
    feeder: &Feeder,
    sampler: &dyn OperatingSampler,
    count: usize,
    safety: f64,
    seed_value: u64,
) -> Result<GammaReport> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample_gamma needs at least one sample".into()));
    }
    if !(safety >= 1.0) {
        return Err(Error::InvalidArgument(format!("safety factor must be ≥ 1, got {safety}")));
    }
    let pi_nom = feeder.linearize_nominal()?;
    let results: Vec<Option<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::trial_rng(seed_value, i);
            let (u, w) = sampler.sample(feeder, &mut rng);
            feeder
                .jacobian_at(&u, &w)
                .ok()
                .map(|j| numlin::spectral_norm(&(j - &pi_nom)))
        })
        .collect();
    let errors: Vec<f64> = results.iter().flatten().copied().collect();
    let failures = count - errors.len();
    if errors.is_empty() {
        return Err(Error::PowerFlow("every sampled operating point failed".into()));
    }
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GammaReport {
        gamma: safety * max_error,
        safety,
        max_error,
        errors,
        failures,
    })
}

/// Disturbance time series: one row per algorithm step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Series {
    pub timestamps: Vec<String>,
    #[serde(with = "crate::serde_ext::vector_list")]
    pub w: Vec<Vector>,
    /// Per-row irradiance in `[0, 1]`, scaling PV availability.
    pub irradiance: Option<Vec<f64>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn irradiance_at(&self, k: usize) -> f64 {
        self.irradiance.as_ref().map_or(1.0, |g| g[k])
    }

    /// CSV with a `timestamp` column, `w_dim` disturbance columns in order and
    /// an optional `irradiance` column.
    pub fn from_csv<R: Read>(input: R, w_dim: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers()?.clone();
        let ts_col = headers
            .iter()
            .position(|h| h.trim() == "timestamp")
            .ok_or_else(|| Error::Config("series CSV needs a timestamp column".into()))?;
        let irr_col = headers.iter().position(|h| h.trim() == "irradiance");
        let w_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| c != ts_col && Some(c) != irr_col)
            .collect();
        if w_cols.len() != w_dim {
            return Err(Error::Config(format!(
                "series CSV has {} disturbance columns, feeder needs {w_dim}",
                w_cols.len()
            )));
        }
        let mut series = Series {
            timestamps: vec![],
            w: vec![],
            irradiance: irr_col.map(|_| vec![]),
        };
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("series row {row}, column {c}: not a number")))
            };
            series.timestamps.push(rec.get(ts_col).unwrap_or("").to_string());
            let w: Result<Vec<f64>> = w_cols.iter().map(|&c| num(c)).collect();
            series.w.push(Vector::from_vec(w?));
            if let (Some(c), Some(g)) = (irr_col, series.irradiance.as_mut()) {
                g.push(num(c)?);
            }
        }
        if series.is_empty() {
            return Err(Error::Config("series CSV has no rows".into()));
        }
        Ok(series)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let dim = self.w.first().map_or(0, |w| w.len());
        let mut header = vec!["timestamp".to_string()];
        header.extend((0..dim).map(|i| format!("w{i}")));
        if self.irradiance.is_some() {
            header.push("irradiance".into());
        }
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.timestamps[k].clone()];
            row.extend(self.w[k].iter().map(|v| v.to_string()));
            if let Some(g) = &self.irradiance {
                row.push(g[k].to_string());
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Clear-sky day with passing clouds over light loads: midday PV output far
/// exceeds consumption and pushes remote buses above the upper band.
pub fn synthetic_overvoltage_series(feeder: &Feeder, steps: usize, seed_value: u64) -> Series {
    let mut rng = seed::trial_rng(seed_value, 0);
    let w_dim = feeder.model.w_dim();
    let base: Vec<f64> = (0..feeder.model.loads.len())
        .map(|_| rng.random_range(0.03..0.06))
        .collect();
    let mut cloud = 0.0f64;
    let mut series = Series {
        timestamps: vec![],
        w: vec![],
        irradiance: Some(vec![]),
    };
    for k in 0..steps {
        let t = if steps > 1 { k as f64 / (steps - 1) as f64 } else { 0.5 };
        let clear = (std::f64::consts::PI * t).sin().max(0.0).powf(1.2);
        cloud = 0.9 * cloud + 0.1 * if rng.random::<f64>() < 0.05 { 0.5 } else { 0.0 };
        let g = (clear * (1.0 - cloud)).clamp(0.0, 1.0);
        let mut w = Vector::zeros(w_dim);
        let demand = 1.0 - 0.3 * (std::f64::consts::PI * t).sin();
        for (l, b) in feeder.model.loads.iter().zip(&base) {
            let noise = 1.0 + 0.05 * (rng.random::<f64>() - 0.5);
            w[l.w_index] = b * demand * noise;
            w[l.w_index + 1] = 0.3 * b * demand * noise;
        }
        series.timestamps.push(format!("t{k:05}"));
        series.w.push(w);
        series.irradiance.as_mut().expect("set above").push(g);
    }
    series
}
