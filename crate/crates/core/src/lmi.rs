//! Small dense LMI feasibility engine.
//!
//! A program has scalar decision variables (grouped into named variables:
//! nonnegative or free scalars, symmetric PSD or free blocks), affine
//! symmetric constraints `C + Σ x_k G_k ⪰ 0`, and optional linear
//! equalities. The solver maximizes the common margin `t` in
//! `C_i + Σ x_k G_ik ⪰ t I` with a log-det barrier path-following method,
//! keeping the variable sign/PSD side constraints strictly feasible and every
//! scalar inside a large box `|x_k| ≤ R`.
//!
//! Nothing returned by [`solve_feasibility`] should be trusted without
//! [`verify_solution`], which recomputes every eigenvalue from scratch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{self, Mat, Vector};
use crate::serde_ext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim", rename_all = "snake_case")]
pub enum VarKind {
    Nonneg,
    Free,
    PsdBlock(usize),
    SymBlock(usize),
}

impl VarKind {
    fn scalar_count(&self) -> usize {
        match *self {
            VarKind::Nonneg | VarKind::Free => 1,
            VarKind::PsdBlock(d) | VarKind::SymBlock(d) => d * (d + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// `constant + Σ x_k G_k ⪰ t I`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmiConstraint {
    pub name: String,
    #[serde(with = "serde_ext::mat")]
    pub constant: Mat,
    pub generators: Vec<Generator>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub scalar: usize,
    #[serde(with = "serde_ext::mat")]
    pub matrix: Mat,
}

impl LmiConstraint {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> Mat {
        let mut m = self.constant.clone();
        for g in &self.generators {
            m += &g.matrix * x[g.scalar];
        }
        numlin::symmetrize(&m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearEquality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LmiProgram {
    pub vars: Vec<VarSpec>,
    pub n_scalars: usize,
    pub constraints: Vec<LmiConstraint>,
    pub equalities: Vec<LinearEquality>,
}

/// View of a scalar vector through the program's variable layout.
pub struct VarValues<'a> {
    prog: &'a LmiProgram,
    x: &'a [f64],
}

impl VarValues<'_> {
    pub fn scalar(&self, id: VarId) -> f64 {
        let v = &self.prog.vars[id.0];
        self.x[v.offset]
    }

    pub fn block(&self, id: VarId) -> Mat {
        let v = &self.prog.vars[id.0];
        match v.kind {
            VarKind::Nonneg | VarKind::Free => Mat::from_element(1, 1, self.x[v.offset]),
            VarKind::PsdBlock(d) | VarKind::SymBlock(d) => {
                sym_from_scalars(d, &self.x[v.offset..v.offset + v.kind.scalar_count()])
            }
        }
    }
}

fn sym_from_scalars(d: usize, xs: &[f64]) -> Mat {
    let mut m = Mat::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = xs[k];
            m[(j, i)] = xs[k];
            k += 1;
        }
    }
    m
}

fn sym_to_scalars(m: &Mat) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    out
}

impl LmiProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(VarSpec {
            name: name.into(),
            kind,
            offset: self.n_scalars,
        });
        self.n_scalars += kind.scalar_count();
        id
    }

    pub fn var(&self, id: VarId) -> &VarSpec {
        &self.vars[id.0]
    }

    pub fn values<'a>(&'a self, x: &'a [f64]) -> VarValues<'a> {
        VarValues { prog: self, x }
    }

    /// Adds `expr(x) ⪰ t I`, where `expr` must be affine in the variables.
    /// Generators are extracted by probing `expr` at the origin and at each
    /// unit vector, then affinity is spot-checked at a pseudo-random point.
    pub fn add_constraint<F>(&mut self, name: impl Into<String>, expr: F) -> Result<()>
    where
        F: Fn(&VarValues) -> Mat,
    {
        let name = name.into();
        let n = self.n_scalars;
        let mut x = vec![0.0; n];
        let constant = expr(&self.values(&x));
        let d = constant.nrows();
        if constant.ncols() != d {
            return Err(Error::IllPosed(format!("constraint {name}: not square")));
        }
        let scale = 1.0 + constant.amax();
        let mut generators = Vec::new();
        for k in 0..n {
            x[k] = 1.0;
            let g = expr(&self.values(&x)) - &constant;
            x[k] = 0.0;
            if g.nrows() != d || g.ncols() != d {
                return Err(Error::IllPosed(format!("constraint {name}: inconsistent size")));
            }
            if g.amax() == 0.0 {
                continue;
            }
            if (&g - g.transpose()).amax() > 1e-10 * (scale + g.amax()) {
                return Err(Error::IllPosed(format!("constraint {name}: not symmetric")));
            }
            generators.push(Generator {
                scalar: k,
                matrix: numlin::symmetrize(&g),
            });
        }
        if (&constant - constant.transpose()).amax() > 1e-10 * scale {
            return Err(Error::IllPosed(format!("constraint {name}: not symmetric")));
        }
        let c = LmiConstraint {
            name: name.clone(),
            constant: numlin::symmetrize(&constant),
            generators,
        };
        let probe: Vec<f64> = (0..n).map(|k| ((k as f64 + 1.0) * 0.754_877_666).fract() - 0.5).collect();
        let direct = expr(&self.values(&probe));
        let affine = c.evaluate(&probe);
        if (numlin::symmetrize(&direct) - affine).amax() > 1e-8 * (scale + direct.amax()) {
            return Err(Error::IllPosed(format!("constraint {name}: expression is not affine")));
        }
        self.constraints.push(c);
        Ok(())
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearEquality { coeffs, rhs });
    }

    /// `Σ trace(X_v) = rhs` over the given block variables.
    pub fn add_trace_equality(&mut self, vars: &[VarId], rhs: f64) {
        let mut coeffs = Vec::new();
        for &id in vars {
            let v = &self.vars[id.0];
            match v.kind {
                VarKind::Nonneg | VarKind::Free => coeffs.push((v.offset, 1.0)),
                VarKind::PsdBlock(d) | VarKind::SymBlock(d) => {
                    let mut k = v.offset;
                    for i in 0..d {
                        for j in i..d {
                            if i == j {
                                coeffs.push((k, 1.0));
                            }
                            k += 1;
                        }
                    }
                }
            }
        }
        self.add_equality(coeffs, rhs);
    }

    pub fn is_homogeneous(&self) -> bool {
        self.equalities.is_empty() && self.constraints.iter().all(|c| c.constant.amax() == 0.0)
    }

    /// Scalar vector for given per-variable values (blocks as matrices).
    pub fn pack(&self, values: &[(VarId, Mat)]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_scalars];
        for (id, m) in values {
            let v = &self.vars[id.0];
            match v.kind {
                VarKind::Nonneg | VarKind::Free => x[v.offset] = m[(0, 0)],
                _ => {
                    for (k, s) in sym_to_scalars(m).into_iter().enumerate() {
                        x[v.offset + k] = s;
                    }
                }
            }
        }
        x
    }

    fn side_constraints(&self) -> Vec<LmiConstraint> {
        let mut out = Vec::new();
        for v in &self.vars {
            match v.kind {
                VarKind::Nonneg => out.push(LmiConstraint {
                    name: format!("{} >= 0", v.name),
                    constant: Mat::zeros(1, 1),
                    generators: vec![Generator {
                        scalar: v.offset,
                        matrix: Mat::identity(1, 1),
                    }],
                }),
                VarKind::PsdBlock(d) => {
                    let mut gens = Vec::new();
                    let mut k = v.offset;
                    for i in 0..d {
                        for j in i..d {
                            let mut e = Mat::zeros(d, d);
                            e[(i, j)] = 1.0;
                            e[(j, i)] = 1.0;
                            gens.push(Generator {
                                scalar: k,
                                matrix: e,
                            });
                            k += 1;
                        }
                    }
                    out.push(LmiConstraint {
                        name: format!("{} psd", v.name),
                        constant: Mat::zeros(d, d),
                        generators: gens,
                    });
                }
                _ => {}
            }
        }
        out
    }

    fn default_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_scalars];
        for v in &self.vars {
            match v.kind {
                VarKind::Nonneg => x[v.offset] = 1.0,
                VarKind::PsdBlock(d) => {
                    for (k, s) in sym_to_scalars(&Mat::identity(d, d)).into_iter().enumerate() {
                        x[v.offset + k] = s;
                    }
                }
                _ => {}
            }
        }
        x
    }

    fn auto_normalize(&mut self) -> Result<()> {
        let blocks: Vec<VarId> = (0..self.vars.len())
            .map(VarId)
            .filter(|id| matches!(self.vars[id.0].kind, VarKind::PsdBlock(_) | VarKind::SymBlock(_)))
            .collect();
        if !blocks.is_empty() {
            let total: usize = blocks
                .iter()
                .map(|id| match self.vars[id.0].kind {
                    VarKind::PsdBlock(d) | VarKind::SymBlock(d) => d,
                    _ => 0,
                })
                .sum();
            self.add_trace_equality(&blocks, total as f64);
            return Ok(());
        }
        let nonneg: Vec<VarId> = (0..self.vars.len())
            .map(VarId)
            .filter(|id| self.vars[id.0].kind == VarKind::Nonneg)
            .collect();
        if nonneg.is_empty() {
            return Err(Error::IllPosed(
                "homogeneous program with only free scalars has no normalization".into(),
            ));
        }
        let count = nonneg.len() as f64;
        self.add_trace_equality(&nonneg, count);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LmiOptions {
    /// Minimum margin for the `feasible` status.
    pub eps: f64,
    /// Box `|x_k| ≤ var_bound` on every scalar.
    pub var_bound: f64,
    /// Relative duality-gap bound for stopping the path-following loop.
    pub gap_tol: f64,
    pub max_newton: usize,
    /// Return as soon as the margin reaches this value.
    pub stop_at_margin: Option<f64>,
}

impl Default for LmiOptions {
    fn default() -> Self {
        LmiOptions {
            eps: 1e-6,
            var_bound: 1e4,
            gap_tol: 1e-10,
            max_newton: 4000,
            stop_at_margin: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmiStatus {
    Feasible,
    Marginal,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmiSolution {
    pub values: Vec<f64>,
    pub margin: f64,
    pub constraint_margins: Vec<f64>,
    pub status: LmiStatus,
    pub newton_steps: usize,
    /// Equalities actually enforced, including an automatic normalization.
    pub equalities: Vec<LinearEquality>,
}

impl LmiSolution {
    pub fn block(&self, prog: &LmiProgram, id: VarId) -> Mat {
        prog.values(&self.values).block(id)
    }

    pub fn scalar(&self, prog: &LmiProgram, id: VarId) -> f64 {
        prog.values(&self.values).scalar(id)
    }

    pub fn is_feasible(&self) -> bool {
        self.status == LmiStatus::Feasible
    }
}

fn status_for(margin: f64, eps: f64) -> LmiStatus {
    if margin >= eps {
        LmiStatus::Feasible
    } else if margin > -eps {
        LmiStatus::Marginal
    } else {
        LmiStatus::Infeasible
    }
}

/// Reduced barrier block `c + Σ_j z_j a_j − [shifted] t I ≻ 0`.
struct Block {
    c: Mat,
    a: Vec<Mat>,
    shifted: bool,
}

impl Block {
    fn at(&self, z: &[f64], t: f64) -> Mat {
        let mut g = self.c.clone();
        for (zj, aj) in z.iter().zip(&self.a) {
            if *zj != 0.0 {
                g += aj * *zj;
            }
        }
        if self.shifted {
            for i in 0..g.nrows() {
                g[(i, i)] -= t;
            }
        }
        g
    }
}

fn reduce(con: &LmiConstraint, x0: &[f64], basis: &Mat, shifted: bool) -> Block {
    let d = con.dim();
    let r = basis.ncols();
    let mut c = con.constant.clone();
    for g in &con.generators {
        c += &g.matrix * x0[g.scalar];
    }
    let mut a = vec![Mat::zeros(d, d); r];
    for g in &con.generators {
        for (j, aj) in a.iter_mut().enumerate() {
            let w = basis[(g.scalar, j)];
            if w != 0.0 {
                *aj += &g.matrix * w;
            }
        }
    }
    Block { c, a, shifted }
}

struct Barrier {
    blocks: Vec<Block>,
    r: usize,
}

impl Barrier {
    fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.c.nrows()).sum()
    }

    /// `−Σ log det` or `None` outside the domain.
    fn value(&self, z: &[f64], t: f64) -> Option<f64> {
        let mut v = 0.0;
        for b in &self.blocks {
            let chol = b.at(z, t).cholesky()?;
            let l = chol.l();
            for i in 0..l.nrows() {
                v -= 2.0 * l[(i, i)].ln();
            }
        }
        Some(v)
    }

    /// Gradient and Hessian of the barrier in `(z, t)`.
    fn derivatives(&self, z: &[f64], t: f64) -> Option<(Vector, Mat)> {
        let n = self.r + 1;
        let mut grad = Vector::zeros(n);
        let mut hess = Mat::zeros(n, n);
        for b in &self.blocks {
            let g = b.at(z, t);
            let inv = g.cholesky()?.inverse();
            let d = inv.nrows();
            let mut ws: Vec<(usize, Mat)> = Vec::with_capacity(n);
            for (j, aj) in b.a.iter().enumerate() {
                if aj.amax() == 0.0 {
                    continue;
                }
                ws.push((j, &inv * aj));
            }
            if b.shifted {
                ws.push((self.r, -inv.clone()));
            }
            for (ia, (a, wa)) in ws.iter().enumerate() {
                grad[*a] -= wa.trace();
                for (b_idx, wb) in ws.iter().skip(ia) {
                    let mut s = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            s += wa[(i, j)] * wb[(j, i)];
                        }
                    }
                    hess[(*a, *b_idx)] += s;
                    if a != b_idx {
                        hess[(*b_idx, *a)] += s;
                    }
                }
            }
        }
        Some((grad, hess))
    }
}

struct PathResult {
    z: Vec<f64>,
    t: f64,
    steps: usize,
}

/// Maximizes `t` over the barrier domain by path following.
fn maximize_shift(
    barrier: &Barrier,
    z0: Vec<f64>,
    t0: f64,
    opts: &LmiOptions,
    stop_at: Option<f64>,
) -> PathResult {
    let r = barrier.r;
    let mut z = z0;
    let mut t = t0;
    let mut kappa = 1.0;
    let m_total = barrier.total_dim() as f64;
    let mut steps = 0;
    let objective = |z: &[f64], t: f64, kappa: f64| barrier.value(z, t).map(|v| -kappa * t + v);
    'outer: loop {
        // centering
        for _ in 0..200 {
            if steps >= opts.max_newton {
                break 'outer;
            }
            if let Some(target) = stop_at {
                if t >= target {
                    break 'outer;
                }
            }
            let Some((mut grad, hess)) = barrier.derivatives(&z, t) else {
                break 'outer;
            };
            grad[r] -= kappa;
            let mut h = hess;
            let reg = 1e-14 * (1.0 + h.diagonal().amax());
            for i in 0..h.nrows() {
                h[(i, i)] += reg;
            }
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => match h.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => break 'outer,
                },
            };
            steps += 1;
            let decrement = -grad.dot(&step);
            if !decrement.is_finite() {
                break 'outer;
            }
            if decrement * 0.5 <= 1e-11 {
                break;
            }
            let f0 = objective(&z, t, kappa).unwrap_or(f64::INFINITY);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let zt: Vec<f64> = (0..r).map(|j| z[j] + alpha * step[j]).collect();
                let tt = t + alpha * step[r];
                if let Some(f1) = objective(&zt, tt, kappa) {
                    if f1 <= f0 - 0.25 * alpha * decrement {
                        z = zt;
                        t = tt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if m_total / kappa <= opts.gap_tol * t.abs().max(1.0) {
            break;
        }
        kappa *= 8.0;
    }
    PathResult { z, t, steps }
}

fn min_margin(blocks: &[Block], z: &[f64]) -> f64 {
    blocks
        .iter()
        .filter(|b| b.shifted)
        .map(|b| numlin::psd_margin(&b.at(z, 0.0)).unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min)
}

/// Maximizes the common margin of all constraints.
pub fn solve_feasibility(prog: &LmiProgram, opts: &LmiOptions) -> Result<LmiSolution> {
    if prog.constraints.is_empty() {
        return Err(Error::IllPosed("program has no constraints".into()));
    }
    let mut work = prog.clone();
    if work.is_homogeneous() {
        work.auto_normalize()?;
    }
    let n = work.n_scalars;

    // affine parameterization x = x0 + Z z of the equality-constrained space
    let q = work.equalities.len();
    let mut e = Mat::zeros(q, n);
    let mut b = Vector::zeros(q);
    for (i, eq) in work.equalities.iter().enumerate() {
        for &(k, c) in &eq.coeffs {
            if k >= n {
                return Err(Error::IllPosed(format!("equality refers to scalar {k}")));
            }
            e[(i, k)] += c;
        }
        b[i] = eq.rhs;
    }
    let start = Vector::from_vec(work.default_start());
    let (x0, basis) = if q == 0 {
        (start, Mat::identity(n, n))
    } else {
        let pinv = e
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|m| Error::IllPosed(m.to_string()))?;
        let x0 = &start - &pinv * (&e * &start - &b);
        if (&e * &x0 - &b).amax() > 1e-9 * (1.0 + b.amax()) {
            return Err(Error::IllPosed("inconsistent equality constraints".into()));
        }
        let eig = numlin::sym_eig(&(e.transpose() * &e))?;
        let top = eig.eigenvalues.amax().max(1e-300);
        let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-10 * top).collect();
        let mut z = Mat::zeros(n, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            z.set_column(j, &eig.eigenvectors.column(i));
        }
        (x0, z)
    };
    let r = basis.ncols();
    let x0s: Vec<f64> = x0.iter().copied().collect();
    if x0.amax() >= opts.var_bound {
        return Err(Error::IllPosed("start point outside the variable box".into()));
    }

    let box_blocks = |shifted: bool| -> Vec<Block> {
        let mut out = Vec::with_capacity(2 * n);
        for k in 0..n {
            let row: Vec<Mat> = (0..r).map(|j| Mat::from_element(1, 1, basis[(k, j)])).collect();
            for sign in [1.0, -1.0] {
                out.push(Block {
                    c: Mat::from_element(1, 1, opts.var_bound - sign * x0s[k]),
                    a: row.iter().map(|m| m * (-sign)).collect(),
                    shifted,
                });
            }
        }
        out
    };
    let sides = work.side_constraints();
    let margins: Vec<Block> = work
        .constraints
        .iter()
        .map(|c| reduce(c, &x0s, &basis, true))
        .collect();

    let mut z = vec![0.0; r];
    let mut steps = 0;
    let side_ok = sides.iter().all(|c| {
        let blk = reduce(c, &x0s, &basis, false);
        blk.at(&z, 0.0).cholesky().is_some()
    });
    if !side_ok {
        let mut blocks: Vec<Block> = sides.iter().map(|c| reduce(c, &x0s, &basis, true)).collect();
        blocks.extend(box_blocks(false));
        let s0 = min_margin(&blocks, &z);
        let barrier = Barrier { blocks, r };
        let res = maximize_shift(&barrier, z, s0 - 1.0, opts, Some(1e-3));
        if res.t <= 0.0 {
            return Err(Error::IllPosed(
                "variable sign/PSD constraints have no strictly feasible point".into(),
            ));
        }
        z = res.z;
        steps += res.steps;
    }

    let t_start = min_margin(&margins, &z);
    let mut blocks = margins;
    blocks.extend(sides.iter().map(|c| reduce(c, &x0s, &basis, false)));
    blocks.extend(box_blocks(false));
    let barrier = Barrier { blocks, r };
    let t0 = t_start - 1.0 - 0.1 * t_start.abs();
    let res = maximize_shift(&barrier, z, t0, opts, opts.stop_at_margin);
    steps += res.steps;

    let x = &x0 + &basis * Vector::from_vec(res.z.clone());
    let values: Vec<f64> = x.iter().copied().collect();
    let constraint_margins: Vec<f64> = prog
        .constraints
        .iter()
        .map(|c| numlin::psd_margin(&c.evaluate(&values)))
        .collect::<Result<_>>()?;
    let margin = constraint_margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LmiSolution {
        status: status_for(margin, opts.eps),
        values,
        margin,
        constraint_margins,
        newton_steps: steps,
        equalities: work.equalities.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub constraint_margins: Vec<f64>,
    pub side_margins: Vec<f64>,
    pub equality_residual: f64,
    pub failures: Vec<String>,
}

/// Recomputes every constraint eigenvalue at the returned values.
pub fn verify_solution(prog: &LmiProgram, sol: &LmiSolution) -> VerifyReport {
    let mut failures = Vec::new();
    if sol.values.len() != prog.n_scalars || sol.values.iter().any(|v| !v.is_finite()) {
        return VerifyReport {
            ok: false,
            constraint_margins: vec![],
            side_margins: vec![],
            equality_residual: f64::NAN,
            failures: vec!["solution vector has wrong length or non-finite entries".into()],
        };
    }
    let constraint_margins: Vec<f64> = prog
        .constraints
        .iter()
        .map(|c| numlin::psd_margin(&c.evaluate(&sol.values)).unwrap_or(f64::NEG_INFINITY))
        .collect();
    for (c, (&m, &claimed)) in prog
        .constraints
        .iter()
        .zip(constraint_margins.iter().zip(&sol.constraint_margins))
    {
        if m < sol.margin - 1e-8 {
            failures.push(format!("{}: λ_min {m:e} below claimed margin {:e}", c.name, sol.margin));
        }
        if (m - claimed).abs() > 1e-8 * (1.0 + m.abs()) {
            failures.push(format!("{}: λ_min {m:e} disagrees with reported {claimed:e}", c.name));
        }
    }
    let side_margins: Vec<f64> = prog
        .side_constraints()
        .iter()
        .map(|c| {
            let m = numlin::psd_margin(&c.evaluate(&sol.values)).unwrap_or(f64::NEG_INFINITY);
            if m < -1e-12 {
                failures.push(format!("{} violated: {m:e}", c.name));
            }
            m
        })
        .collect();
    let mut equality_residual: f64 = 0.0;
    for eq in prog.equalities.iter().chain(&sol.equalities) {
        let lhs: f64 = eq.coeffs.iter().map(|&(k, c)| c * sol.values[k]).sum();
        equality_residual = equality_residual.max((lhs - eq.rhs).abs());
    }
    if equality_residual > 1e-8 {
        failures.push(format!("equality residual {equality_residual:e}"));
    }
    if sol.status == LmiStatus::Feasible && !(sol.margin > 0.0) {
        failures.push("status feasible with nonpositive margin".into());
    }
    VerifyReport {
        ok: failures.is_empty(),
        constraint_margins,
        side_margins,
        equality_residual,
        failures,
    }
}
