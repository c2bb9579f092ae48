//! Robust monotonicity certificates for polytopic and LFT Jacobian sets.
//!
//! A certificate `(P, ρ)` asserts `½(JᵀP + PJ) ⪰ ρP` for every Jacobian `J` in
//! the set, with `P` block-structured according to the feasible-set partition
//! (full on the unconstrained part, diagonal on the box part, identity on the
//! general convex blocks). Every certificate leaving this module has passed
//! [`lmi::verify_solution`]; [`validate_certificate`] adds an independent
//! sampling check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::lmi::{self, LmiOptions, LmiProgram, LmiSolution, VarId, VarKind, VarValues};
use crate::numlin::{self, Mat};
use crate::problem::FeasibleSet;
use crate::seed;
use crate::serde_ext;
use crate::uncertainty::{self, LftSet, MultiplierCone, ParamKind, PolytopeSet};
use crate::vi;

/// Tolerance used when sampling realized Jacobians against a certificate.
pub const VALIDATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Polytopic,
    Lft,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the final LMI program JSON.
    pub program_sha256: String,
    pub seeds: Vec<u64>,
    /// `(ρ, margin)` pairs visited while maximizing ρ.
    pub rho_trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    #[serde(rename = "P", with = "serde_ext::mat")]
    pub p: Mat,
    pub rho: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    /// `L` came from sampling rather than an exact vertex maximum.
    pub lipschitz_empirical: bool,
    pub tau_star: f64,
    pub tau_max: f64,
    pub margin: f64,
    pub theta_params: Option<Vec<f64>>,
    #[serde(with = "serde_ext::opt_mat", default)]
    pub theta: Option<Mat>,
    /// `(n1, n2, n3)` of the partition `P` is structured for.
    pub partition: (usize, usize, usize),
    pub provenance: Provenance,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PolytopicMode {
    Check(f64),
    Maximize,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub lmi: LmiOptions,
    /// Bisection width at which ρ maximization stops.
    pub rho_tol: f64,
    /// Δ samples for the empirical Lipschitz bound of LFT sets.
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl CertifyOptions {
    /// Tight settings for polytopic ρ maximization.
    pub fn polytopic() -> Self {
        CertifyOptions {
            lmi: LmiOptions {
                eps: 1e-7,
                ..Default::default()
            },
            rho_tol: 1e-7,
            lipschitz_samples: 0,
            seed: 0,
        }
    }

    pub fn lft() -> Self {
        CertifyOptions {
            lmi: LmiOptions::default(),
            rho_tol: 1e-4,
            lipschitz_samples: 2000,
            seed: 0,
        }
    }
}

/// LMI variables for a structured weight `P`.
struct WeightVars {
    full: Option<VarId>,
    diag: Vec<VarId>,
    n1: usize,
    n3: usize,
}

impl WeightVars {
    fn add(prog: &mut LmiProgram, set: &FeasibleSet) -> Self {
        let n1 = set.n1;
        let full = (n1 > 0).then(|| prog.add_var("P1", VarKind::PsdBlock(n1)));
        let diag = (0..set.n2())
            .map(|i| prog.add_var(format!("P2[{i}]"), VarKind::Nonneg))
            .collect::<Vec<_>>();
        let w = WeightVars {
            full,
            diag,
            n1,
            n3: set.n3(),
        };
        let free: Vec<VarId> = w.full.iter().copied().chain(w.diag.iter().copied()).collect();
        if w.n3 == 0 && !free.is_empty() {
            prog.add_trace_equality(&free, (n1 + w.diag.len()) as f64);
        }
        w
    }

    fn dim(&self) -> usize {
        self.n1 + self.diag.len() + self.n3
    }

    fn matrix(&self, v: &VarValues) -> Mat {
        let n = self.dim();
        let mut p = Mat::zeros(n, n);
        if let Some(id) = self.full {
            p.view_mut((0, 0), (self.n1, self.n1)).copy_from(&v.block(id));
        }
        for (i, &id) in self.diag.iter().enumerate() {
            p[(self.n1 + i, self.n1 + i)] = v.scalar(id);
        }
        for i in self.n1 + self.diag.len()..n {
            p[(i, i)] = 1.0;
        }
        p
    }
}

/// LMI variables for the free parameters of a multiplier cone.
struct ConeVars {
    groups: Vec<(ParamKind, Vec<VarId>)>,
}

impl ConeVars {
    fn add(prog: &mut LmiProgram, cone: &MultiplierCone) -> Self {
        let groups = cone
            .params
            .iter()
            .map(|p| {
                let ids = match p.kind {
                    ParamKind::Nonneg => vec![prog.add_var(&p.name, VarKind::Nonneg)],
                    ParamKind::Psd(d) => vec![prog.add_var(&p.name, VarKind::PsdBlock(d))],
                    ParamKind::Skew(_) => (0..p.kind.scalar_count())
                        .map(|k| prog.add_var(format!("{}[{k}]", p.name), VarKind::Free))
                        .collect(),
                };
                (p.kind, ids)
            })
            .collect();
        ConeVars { groups }
    }

    fn scalars(&self, v: &VarValues) -> Vec<f64> {
        let mut out = Vec::new();
        for (kind, ids) in &self.groups {
            match *kind {
                ParamKind::Psd(d) => {
                    let m = v.block(ids[0]);
                    for i in 0..d {
                        for j in i..d {
                            out.push(m[(i, j)]);
                        }
                    }
                }
                _ => out.extend(ids.iter().map(|&id| v.scalar(id))),
            }
        }
        out
    }
}

fn sym_part(m: &Mat) -> Mat {
    numlin::symmetrize(m)
}

/// `½(JᵀP + PJ) − ρP`.
pub fn monotonicity_matrix(j: &Mat, p: &Mat, rho: f64) -> Mat {
    sym_part(&(j.transpose() * p + p * j)) * 0.5 - p * rho
}

/// Smallest `psd_margin` of the polytopic inequality over all vertices.
pub fn polytopic_margin(set: &PolytopeSet, p: &Mat, rho: f64) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for v in &set.vertices {
        worst = worst.min(numlin::psd_margin(&monotonicity_matrix(v, p, rho))?);
    }
    Ok(worst)
}

fn program_hash(prog: &LmiProgram, rho: f64) -> Result<String> {
    let mut h = Sha256::new();
    h.update(prog.to_json()?.as_bytes());
    h.update(rho.to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

struct Solved {
    prog: LmiProgram,
    sol: LmiSolution,
    p: Mat,
    theta_params: Option<Vec<f64>>,
    theta: Option<Mat>,
}

fn check_solution(solved: &Solved) -> Result<()> {
    let report = lmi::verify_solution(&solved.prog, &solved.sol);
    if !report.ok {
        return Err(Error::CertificateRejected(format!(
            "LMI solution failed verification: {}",
            report.failures.join("; ")
        )));
    }
    if numlin::psd_margin(&solved.p)? <= 0.0 {
        return Err(Error::CertificateRejected("weight P is not positive definite".into()));
    }
    Ok(())
}

fn solve_polytopic(set: &PolytopeSet, partition: &FeasibleSet, rho: f64, opts: &LmiOptions) -> Result<Solved> {
    let mut prog = LmiProgram::new();
    let w = WeightVars::add(&mut prog, partition);
    for (i, j) in set.vertices.iter().enumerate() {
        prog.add_constraint(format!("vertex {i}"), |v| monotonicity_matrix(j, &w.matrix(v), rho))?;
    }
    let sol = lmi::solve_feasibility(&prog, opts)?;
    let p = w.matrix(&prog.values(&sol.values));
    Ok(Solved {
        prog,
        sol,
        p,
        theta_params: None,
        theta: None,
    })
}

fn solve_lft(
    set: &LftSet,
    cone: &MultiplierCone,
    partition: &FeasibleSet,
    rho: f64,
    opts: &LmiOptions,
) -> Result<Solved> {
    let (n, s) = (set.n(), set.s());
    let mut outer = Mat::zeros(set.z() + s, n + s);
    outer.view_mut((0, 0), (set.z(), n)).copy_from(&set.c);
    outer.view_mut((0, n), (set.z(), s)).copy_from(&set.d);
    outer.view_mut((set.z(), n), (s, s)).copy_from(&Mat::identity(s, s));
    let a_rho = &set.a - Mat::identity(n, n) * rho;

    let mut prog = LmiProgram::new();
    let w = WeightVars::add(&mut prog, partition);
    let cv = ConeVars::add(&mut prog, cone);
    let expr = |v: &VarValues| -> Mat {
        let p = w.matrix(v);
        let theta = cone.assemble(&cv.scalars(v)).expect("cone sized by construction");
        let mut m = Mat::zeros(n + s, n + s);
        m.view_mut((0, 0), (n, n))
            .copy_from(&(a_rho.transpose() * &p + &p * &a_rho));
        let pb = &p * &set.b;
        m.view_mut((0, n), (n, s)).copy_from(&pb);
        m.view_mut((n, 0), (s, n)).copy_from(&pb.transpose());
        m - outer.transpose() * theta * &outer
    };
    prog.add_constraint("lft test", expr)?;
    let sol = lmi::solve_feasibility(&prog, opts)?;
    let values = prog.values(&sol.values);
    let p = w.matrix(&values);
    let params = cv.scalars(&values);
    let theta = cone.assemble(&params)?;
    Ok(Solved {
        prog,
        sol,
        p,
        theta_params: Some(params),
        theta: Some(theta),
    })
}

fn check_partition(dim: usize, partition: &FeasibleSet) -> Result<()> {
    if partition.dim() != dim {
        return Err(dim_err(format!(
            "Jacobians are {dim}×{dim} but the feasible set has dimension {}",
            partition.dim()
        )));
    }
    Ok(())
}

/// Bisection on ρ; `solve(ρ)` must be monotone (feasible at ρ ⇒ feasible below).
fn maximize_rho<F>(hi: f64, tol: f64, eps: f64, mut solve: F) -> Result<(Solved, Vec<(f64, f64)>)>
where
    F: FnMut(f64) -> Result<Solved>,
{
    let mut trace = Vec::new();
    let base = solve(0.0)?;
    trace.push((0.0, base.sol.margin));
    if base.sol.margin < eps {
        return Err(Error::NotMonotone(format!(
            "LMI margin {:e} at rho = 0 (sufficient test only)",
            base.sol.margin
        )));
    }
    let top = solve(hi)?;
    trace.push((hi, top.sol.margin));
    if top.sol.margin >= eps {
        return Ok((top, trace));
    }
    let (mut lo, mut hi) = (0.0, hi);
    let mut best = base;
    let mut best_margin = trace[0].1;
    let mut fail_margin = trace[1].1;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let cand = solve(mid)?;
        let m = cand.sol.margin;
        trace.push((mid, m));
        // margin is nonincreasing in ρ; tolerate solver-level noise only
        let slack = 1e-7 * (1.0 + m.abs());
        if m > best_margin + slack || m < fail_margin - slack {
            return Err(Error::NoConvergence(format!(
                "LMI margin not monotone in rho: margin {m:e} at rho {mid} outside [{fail_margin:e}, {best_margin:e}]"
            )));
        }
        if m >= eps {
            lo = mid;
            best = cand;
            best_margin = m;
        } else {
            hi = mid;
            fail_margin = m;
        }
    }
    Ok((best, trace))
}

fn finish(
    kind: CertificateKind,
    solved: Solved,
    rho: f64,
    lipschitz: f64,
    empirical: bool,
    partition: &FeasibleSet,
    seeds: Vec<u64>,
    rho_trace: Vec<(f64, f64)>,
) -> Result<Certificate> {
    check_solution(&solved)?;
    let (tau_star, tau_max) = if rho > 0.0 {
        let rule = vi::recommend_step(rho, lipschitz)?;
        (rule.tau_star, rule.tau_max)
    } else {
        (0.0, 0.0)
    };
    Ok(Certificate {
        kind,
        rho,
        lipschitz,
        lipschitz_empirical: empirical,
        tau_star,
        tau_max,
        margin: solved.sol.margin,
        theta_params: solved.theta_params.clone(),
        theta: solved.theta.clone(),
        partition: (partition.n1, partition.n2(), partition.n3()),
        provenance: Provenance {
            program_sha256: program_hash(&solved.prog, rho)?,
            seeds,
            rho_trace,
        },
        p: solved.p,
    })
}

/// Polytopic test: `½(J_iᵀP + PJ_i) ⪰ ρP` at every vertex with structured `P`.
pub fn certify_polytopic(
    set: &PolytopeSet,
    partition: &FeasibleSet,
    mode: PolytopicMode,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    set.validate()?;
    check_partition(set.dim(), partition)?;
    let (solved, rho, trace) = match mode {
        PolytopicMode::Check(rho) => {
            let solved = solve_polytopic(set, partition, rho, &opts.lmi)?;
            if !solved.sol.is_feasible() {
                return Err(Error::Infeasible {
                    rho,
                    margin: solved.sol.margin,
                    note: "polytopic test failed for this rho".into(),
                });
            }
            let m = solved.sol.margin;
            (solved, rho, vec![(rho, m)])
        }
        PolytopicMode::Maximize => {
            let mut hi = f64::INFINITY;
            for v in &set.vertices {
                hi = hi.min(numlin::max_eigenvalue(&sym_part(v))?);
            }
            if !(hi > 0.0) {
                return Err(Error::NotMonotone(
                    "some vertex has no positive symmetric-part eigenvalue".into(),
                ));
            }
            let (solved, trace) = maximize_rho(hi, opts.rho_tol, opts.lmi.eps, |rho| {
                solve_polytopic(set, partition, rho, &opts.lmi)
            })?;
            let rho = trace
                .iter()
                .filter(|(_, m)| *m >= opts.lmi.eps)
                .map(|(r, _)| *r)
                .fold(0.0, f64::max);
            (solved, rho, trace)
        }
    };
    let lipschitz = lipschitz_bound(&set.vertices, &solved.p)?;
    finish(
        CertificateKind::Polytopic,
        solved,
        rho,
        lipschitz,
        false,
        partition,
        vec![],
        trace,
    )
}

fn lft_samples(set: &LftSet, count: usize, seed_value: u64) -> Result<Vec<Mat>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::trial_rng(seed_value, i);
            let delta = set.sample_delta(&mut rng);
            uncertainty::lft_jacobian(set, &delta)
        })
        .collect()
}

fn lft_certificate(
    set: &LftSet,
    solved: Solved,
    rho: f64,
    partition: &FeasibleSet,
    opts: &CertifyOptions,
    trace: Vec<(f64, f64)>,
) -> Result<Certificate> {
    let samples = lft_samples(set, opts.lipschitz_samples.max(1), opts.seed)?;
    let lipschitz = (lipschitz_bound(&samples, &solved.p)? * 1.05).max(rho);
    finish(
        CertificateKind::Lft,
        solved,
        rho,
        lipschitz,
        true,
        partition,
        vec![opts.seed],
        trace,
    )
}

/// LFT test at a fixed ρ. Infeasibility proves nothing: the test is only
/// sufficient.
pub fn certify_lft(
    set: &LftSet,
    cone: &MultiplierCone,
    partition: &FeasibleSet,
    rho: f64,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    set.validate()?;
    cone.validate()?;
    check_partition(set.n(), partition)?;
    if cone.q_dim != set.z() || cone.p_dim != set.s() {
        return Err(dim_err("cone dimensions do not match the LFT"));
    }
    let solved = solve_lft(set, cone, partition, rho, &opts.lmi)?;
    if !solved.sol.is_feasible() {
        return Err(Error::Infeasible {
            rho,
            margin: solved.sol.margin,
            note: "the LFT test is sufficient only; infeasibility does not prove non-monotonicity".into(),
        });
    }
    let m = solved.sol.margin;
    lft_certificate(set, solved, rho, partition, opts, vec![(rho, m)])
}

/// Largest ρ (to `opts.rho_tol`) passing the LFT test.
pub fn maximize_lft(
    set: &LftSet,
    cone: &MultiplierCone,
    partition: &FeasibleSet,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    set.validate()?;
    cone.validate()?;
    check_partition(set.n(), partition)?;
    // any realized J bounds ρ from above by λ_max of its symmetric part
    let mut hi = f64::INFINITY;
    for j in lft_samples(set, 16, opts.seed ^ 0xA5A5)? {
        hi = hi.min(numlin::max_eigenvalue(&sym_part(&j))?);
    }
    if !(hi > 0.0) {
        return Err(Error::NotMonotone("a realized Jacobian has a nonpositive symmetric part".into()));
    }
    let (solved, trace) = maximize_rho(hi, opts.rho_tol, opts.lmi.eps, |rho| {
        solve_lft(set, cone, partition, rho, &opts.lmi)
    })?;
    let rho = trace
        .iter()
        .filter(|(_, m)| *m >= opts.lmi.eps)
        .map(|(r, _)| *r)
        .fold(0.0, f64::max);
    lft_certificate(set, solved, rho, partition, opts, trace)
}

/// `max ‖P^{1/2} J P^{-1/2}‖₂` over the given Jacobians (exact over a polytope
/// when the vertices are passed).
pub fn lipschitz_bound(jacobians: &[Mat], p: &Mat) -> Result<f64> {
    let (s, si) = numlin::spd_sqrt_pair(p)?;
    let mut l: f64 = 0.0;
    for j in jacobians {
        if j.shape() != p.shape() {
            return Err(dim_err("lipschitz_bound: Jacobian and weight sizes differ"));
        }
        l = l.max(numlin::spectral_norm(&(&s * j * &si)));
    }
    Ok(l)
}

/// `min_J λ_min(P^{-1/2} · ½(JᵀP + PJ) · P^{-1/2})`, the largest ρ with
/// `½(JᵀP + PJ) ⪰ ρP` for every sample.
pub fn sampled_monotonicity(jacobians: &[Mat], p: &Mat) -> Result<f64> {
    if jacobians.is_empty() {
        return Err(Error::InvalidArgument("sampled_monotonicity needs samples".into()));
    }
    let (_, si) = numlin::spd_sqrt_pair(p)?;
    let mut rho = f64::INFINITY;
    for j in jacobians {
        let m = &si * monotonicity_matrix(j, p, 0.0) * &si;
        rho = rho.min(numlin::psd_margin(&m)?);
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy)]
pub enum JacobianSet<'a> {
    Polytope(&'a PolytopeSet),
    Lft(&'a LftSet),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub min_margin: f64,
}

/// Samples realized Jacobians (hull points or Δ draws) and checks the
/// certified inequality on each. Vertices are always included for polytopes.
pub fn validate_certificate(
    cert: &Certificate,
    set: JacobianSet,
    trials: usize,
    seed_value: u64,
) -> Result<ValidationReport> {
    let n = cert.p.nrows();
    let eval = |j: &Mat| -> Result<f64> {
        if j.nrows() != n {
            return Err(dim_err("certificate and set dimensions differ"));
        }
        numlin::psd_margin(&monotonicity_matrix(j, &cert.p, cert.rho))
    };
    let sampled: Vec<Result<(f64, usize, Mat)>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::trial_rng(seed_value, i as u64);
            let j = match set {
                JacobianSet::Polytope(p) => p.sample_hull(&mut rng),
                JacobianSet::Lft(l) => {
                    let d = l.sample_delta(&mut rng);
                    uncertainty::lft_jacobian(l, &d)?
                }
            };
            Ok((eval(&j)?, i, j))
        })
        .collect();
    let mut all = Vec::with_capacity(trials + 8);
    if let JacobianSet::Polytope(p) = set {
        for (i, v) in p.vertices.iter().enumerate() {
            all.push((eval(v)?, usize::MAX - i, v.clone()));
        }
    }
    for r in sampled {
        all.push(r?);
    }
    let worst = all
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    if worst.0 < -VALIDATION_TOL {
        let rows: Vec<Vec<f64>> = (0..n).map(|r| worst.2.row(r).iter().copied().collect()).collect();
        return Err(Error::CertificateRejected(format!(
            "sample violates the certified inequality by {:e}; J = {}",
            worst.0,
            serde_json::to_string(&rows)?
        )));
    }
    Ok(ValidationReport {
        samples: all.len(),
        min_margin: worst.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::Vector;
    use approx::assert_relative_eq;

    fn academic_polytope() -> PolytopeSet {
        let pi = Mat::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]);
        let tildes = [
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]),
            Mat::from_row_slice(2, 2, &[1.0, 1.0, -2.0, 2.0]),
            Mat::from_row_slice(2, 2, &[1.0, 1.0, -2.0, 0.0]),
        ];
        uncertainty::build_direct_polytope(&Mat::identity(2, 2), &pi, 10.0, &tildes).unwrap()
    }

    fn academic_set() -> FeasibleSet {
        FeasibleSet::boxed(Vector::from_element(2, -5.0), Vector::from_element(2, 5.0)).unwrap()
    }

    #[test]
    fn single_identity_vertex() {
        let set = PolytopeSet::new(vec![Mat::identity(2, 2)]).unwrap();
        let cert = certify_polytopic(
            &set,
            &FeasibleSet::unconstrained(2),
            PolytopicMode::Maximize,
            &CertifyOptions::polytopic(),
        )
        .unwrap();
        assert!(cert.rho >= 1.0 - 1e-6);
        assert!((&cert.p - Mat::identity(2, 2)).amax() < 1e-3);
    }

    #[test]
    fn academic_polytope_certifies_rho_one() {
        let set = academic_polytope();
        let cert = certify_polytopic(
            &set,
            &academic_set(),
            PolytopicMode::Maximize,
            &CertifyOptions::polytopic(),
        )
        .unwrap();
        assert!(cert.rho >= 1.0 - 1e-6 && cert.rho <= 1.0 + 1e-9, "rho {}", cert.rho);
        // box partition: P diagonal
        assert_eq!(cert.p[(0, 1)], 0.0);
        assert!(polytopic_margin(&set, &Mat::identity(2, 2), 1.0).unwrap() >= -1e-12);
        let rep = validate_certificate(&cert, JacobianSet::Polytope(&set), 1000, 3).unwrap();
        assert!(rep.min_margin >= -1e-8);
        assert_eq!(cert.tau_star, cert.rho / cert.lipschitz.powi(2));
    }

    #[test]
    fn negative_definite_vertex_is_not_monotone() {
        let set = PolytopeSet::new(vec![Mat::identity(2, 2), -Mat::identity(2, 2)]).unwrap();
        let r = certify_polytopic(
            &set,
            &FeasibleSet::unconstrained(2),
            PolytopicMode::Maximize,
            &CertifyOptions::polytopic(),
        );
        assert!(matches!(r, Err(Error::NotMonotone(_))));
        let r = certify_polytopic(
            &set,
            &FeasibleSet::unconstrained(2),
            PolytopicMode::Check(0.0),
            &CertifyOptions::polytopic(),
        );
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn identity_block_on_general_sets() {
        use crate::problem::ConvexBlock;
        let set = FeasibleSet::new(
            1,
            Vector::zeros(0),
            Vector::zeros(0),
            vec![ConvexBlock::Ball {
                center: Vector::zeros(2),
                radius: 1.0,
            }],
        )
        .unwrap();
        let j = Mat::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 1.0, 0.3, 0.0, -0.3, 1.0]);
        let poly = PolytopeSet::new(vec![j]).unwrap();
        let cert = certify_polytopic(&poly, &set, PolytopicMode::Check(0.5), &CertifyOptions::polytopic()).unwrap();
        assert_eq!(cert.p[(1, 1)], 1.0);
        assert_eq!(cert.p[(2, 2)], 1.0);
        assert_eq!(cert.p[(1, 2)], 0.0);
        vi::check_structured_weight(&set, &cert.p).unwrap();
    }

    #[test]
    fn lipschitz_examples() {
        let j = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        assert_relative_eq!(lipschitz_bound(&[j], &Mat::identity(2, 2)).unwrap(), 2.0, epsilon = 1e-12);
        let p = Mat::from_diagonal(&Vector::from_vec(vec![4.0, 1.0]));
        let n = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_relative_eq!(lipschitz_bound(&[n], &p).unwrap(), 2.0, epsilon = 1e-12);
        let set = academic_polytope();
        let expect = set
            .vertices
            .iter()
            .map(numlin::spectral_norm)
            .fold(0.0, f64::max);
        assert_relative_eq!(lipschitz_bound(&set.vertices, &Mat::identity(2, 2)).unwrap(), expect);
        assert!(lipschitz_bound(&set.vertices, &Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn sampled_monotonicity_examples() {
        let i = Mat::identity(2, 2);
        assert_relative_eq!(sampled_monotonicity(&[i.clone(), i.clone()], &i).unwrap(), 1.0);
        let set = academic_polytope();
        assert_relative_eq!(sampled_monotonicity(&set.vertices, &i).unwrap(), 1.0, epsilon = 1e-9);
        assert!(sampled_monotonicity(&[], &i).is_err());
    }

    #[test]
    fn inflated_certificate_is_rejected() {
        let set = academic_polytope();
        let mut cert = certify_polytopic(
            &set,
            &academic_set(),
            PolytopicMode::Check(0.9),
            &CertifyOptions::polytopic(),
        )
        .unwrap();
        cert.rho *= 2.0;
        let r = validate_certificate(&cert, JacobianSet::Polytope(&set), 200, 1);
        assert!(matches!(r, Err(Error::CertificateRejected(_))));
    }

    #[test]
    fn decoupled_lyapunov_lft() {
        // A = −I with ρ = −2: A_ρ = I
        let set = LftSet::new(
            -Mat::identity(2, 2),
            Mat::zeros(2, 1),
            Mat::zeros(1, 2),
            Mat::zeros(1, 1),
            vec![uncertainty::DeltaBlock::UnstructuredNormBounded {
                gamma: 1.0,
                rows: 1,
                cols: 1,
            }],
        )
        .unwrap();
        let cone = uncertainty::cone_for_structure(&set.structure).unwrap();
        let opts = CertifyOptions {
            lipschitz_samples: 10,
            ..CertifyOptions::lft()
        };
        let cert = certify_lft(&set, &cone, &FeasibleSet::unconstrained(2), -2.0, &opts).unwrap();
        assert!(cert.margin > 0.0);
    }

    fn academic_lft() -> (LftSet, MultiplierCone) {
        let pi = Mat::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]);
        let a = Mat::identity(2, 2) + pi.transpose() * &pi * 10.0;
        let e2 = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let b = pi.transpose() * e2 * 10.0;
        let structure = vec![uncertainty::DeltaBlock::UnstructuredNormBounded {
            gamma: 2f64.sqrt(),
            rows: 1,
            cols: 2,
        }];
        let set = LftSet::new(a, b, Mat::identity(2, 2), Mat::zeros(2, 1), structure).unwrap();
        let cone = uncertainty::cone_for_structure(&set.structure).unwrap();
        (set, cone)
    }

    #[test]
    fn academic_lft_matches_polytopic() {
        let (set, cone) = academic_lft();
        let opts = CertifyOptions {
            lipschitz_samples: 200,
            ..CertifyOptions::lft()
        };
        let cert = certify_lft(&set, &cone, &academic_set(), 0.98, &opts).unwrap();
        validate_certificate(&cert, JacobianSet::Lft(&set), 1000, 9).unwrap();
        let best = maximize_lft(&set, &cone, &academic_set(), &opts).unwrap();
        assert!(best.rho > 1.0 - 1e-3 && best.rho <= 1.0 + 1e-6, "rho {}", best.rho);
        assert!(certify_lft(&set, &cone, &academic_set(), 1.05, &opts).is_err());
        // soundness ordering
        let samples: Vec<Mat> = (0..300)
            .map(|k| {
                let d = uncertainty::sample_delta(&set.structure, k);
                uncertainty::lft_jacobian(&set, &d).unwrap()
            })
            .collect();
        assert!(best.rho <= sampled_monotonicity(&samples, &best.p).unwrap() + 1e-9);
    }

    #[test]
    fn certificate_json_round_trip() {
        let set = academic_polytope();
        let cert = certify_polytopic(
            &set,
            &academic_set(),
            PolytopicMode::Check(0.5),
            &CertifyOptions::polytopic(),
        )
        .unwrap();
        let text = cert.to_json().unwrap();
        assert!(text.contains("\"P\"") && text.contains("\"L\"") && text.contains("program_sha256"));
        let back = Certificate::from_json(&text).unwrap();
        assert_eq!(back.p, cert.p);
        assert_eq!(back.provenance.program_sha256.len(), 64);
    }
}
