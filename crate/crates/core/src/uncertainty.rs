//! Jacobian uncertainty sets and multiplier cones.
//!
//! Coordinates are fixed once for the whole crate: `q ∈ ℝ^z` is the input of
//! the uncertainty, `p = Δ q ∈ ℝ^s` its output, and every multiplier `Θ` is a
//! `(z+s)×(z+s)` matrix acting on the stacked vector `[q; p]` (q first).
//! Structured blocks partition `q` and `p` consecutively: block `i` reads
//! `q` rows `z_0+…+z_{i-1} ..` and writes the matching slice of `p`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numlin::{self, Mat, Vector};
use crate::seed;
use crate::serde_ext;

/// Default cap on the number of enumerated polytope vertices.
pub const DEFAULT_VERTEX_CAP: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeSet {
    #[serde(with = "serde_ext::mat_list")]
    pub vertices: Vec<Mat>,
}

impl PolytopeSet {
    pub fn new(vertices: Vec<Mat>) -> Result<Self> {
        let set = PolytopeSet { vertices };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.vertices.first() else {
            return Err(Error::InvalidArgument("polytope needs at least one vertex".into()));
        };
        let n = first.nrows();
        for (i, v) in self.vertices.iter().enumerate() {
            if v.nrows() != n || v.ncols() != n {
                return Err(dim_err(format!(
                    "vertex {i} is {}x{}, expected {n}x{n}",
                    v.nrows(),
                    v.ncols()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Random convex combination with flat Dirichlet weights.
    pub fn sample_hull<R: Rng + ?Sized>(&self, rng: &mut R) -> Mat {
        let w: Vec<f64> = (0..self.len())
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = w.iter().sum();
        let mut j = Mat::zeros(self.dim(), self.dim());
        for (wi, v) in w.iter().zip(&self.vertices) {
            j += v * (wi / total);
        }
        j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaBlock {
    /// Any `rows×cols` matrix with `‖Δ‖₂ ≤ γ`.
    UnstructuredNormBounded { gamma: f64, rows: usize, cols: usize },
    /// `Δ = δ I_dim`, `|δ| ≤ γ`.
    RepeatedScalarNormBounded { gamma: f64, dim: usize },
    /// Symmetric `Δ` with `ρ I ⪯ Δ ⪯ L I`.
    UnstructuredSector { rho: f64, l: f64, dim: usize },
    /// `Δ = δ I_dim`, `ρ ≤ δ ≤ L`.
    RepeatedScalarSector { rho: f64, l: f64, dim: usize },
}

impl DeltaBlock {
    /// Rows of Δ, i.e. the length of this block's slice of `p`.
    pub fn rows(&self) -> usize {
        match *self {
            DeltaBlock::UnstructuredNormBounded { rows, .. } => rows,
            DeltaBlock::RepeatedScalarNormBounded { dim, .. }
            | DeltaBlock::UnstructuredSector { dim, .. }
            | DeltaBlock::RepeatedScalarSector { dim, .. } => dim,
        }
    }

    /// Columns of Δ, i.e. the length of this block's slice of `q`.
    pub fn cols(&self) -> usize {
        match *self {
            DeltaBlock::UnstructuredNormBounded { cols, .. } => cols,
            _ => self.rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DeltaBlock::UnstructuredNormBounded { gamma, .. }
            | DeltaBlock::RepeatedScalarNormBounded { gamma, .. } => check_gamma(gamma),
            DeltaBlock::UnstructuredSector { rho, l, .. }
            | DeltaBlock::RepeatedScalarSector { rho, l, .. } => check_sector(rho, l),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Mat {
        match *self {
            DeltaBlock::UnstructuredNormBounded { gamma, rows, cols } => {
                if rows == 0 || cols == 0 {
                    return Mat::zeros(rows, cols);
                }
                let g = gaussian_mat(rng, rows, cols);
                let norm = numlin::spectral_norm(&g).max(1e-300);
                let radius = gamma * rng.random::<f64>().powf(1.0 / (rows * cols) as f64);
                g * (radius / norm)
            }
            DeltaBlock::RepeatedScalarNormBounded { gamma, dim } => {
                Mat::identity(dim, dim) * rng.random_range(-gamma..=gamma)
            }
            DeltaBlock::UnstructuredSector { rho, l, dim } => {
                let q = gaussian_mat(rng, dim, dim).qr().q();
                let spec = Vector::from_fn(dim, |_, _| rng.random_range(rho..=l));
                numlin::symmetrize(&(&q * Mat::from_diagonal(&spec) * q.transpose()))
            }
            DeltaBlock::RepeatedScalarSector { rho, l, dim } => {
                Mat::identity(dim, dim) * rng.random_range(rho..=l)
            }
        }
    }

    pub fn admissible(&self, delta: &Mat, tol: f64) -> bool {
        if delta.nrows() != self.rows() || delta.ncols() != self.cols() {
            return false;
        }
        let scalar_multiple = |d: &Mat| -> Option<f64> {
            let n = d.nrows();
            if n == 0 {
                return Some(0.0);
            }
            let c = d[(0, 0)];
            ((d - Mat::identity(n, n) * c).amax() <= tol).then_some(c)
        };
        match *self {
            DeltaBlock::UnstructuredNormBounded { gamma, .. } => {
                numlin::spectral_norm(delta) <= gamma + tol
            }
            DeltaBlock::RepeatedScalarNormBounded { gamma, .. } => {
                scalar_multiple(delta).is_some_and(|c| c.abs() <= gamma + tol)
            }
            DeltaBlock::UnstructuredSector { rho, l, .. } => {
                if (delta - delta.transpose()).amax() > tol {
                    return false;
                }
                match numlin::sym_eig(delta) {
                    Ok(e) if e.eigenvalues.is_empty() => true,
                    Ok(e) => {
                        e.eigenvalues[0] >= rho - tol && e.eigenvalues[e.eigenvalues.len() - 1] <= l + tol
                    }
                    Err(_) => false,
                }
            }
            DeltaBlock::RepeatedScalarSector { rho, l, .. } => {
                scalar_multiple(delta).is_some_and(|c| c >= rho - tol && c <= l + tol)
            }
        }
    }

    /// The shipped cone recipe for this block type.
    pub fn default_cone(&self) -> Result<MultiplierCone> {
        match *self {
            DeltaBlock::UnstructuredNormBounded { gamma, rows, cols } => {
                cone_unstructured_norm_bounded(gamma, rows, cols)
            }
            DeltaBlock::RepeatedScalarNormBounded { gamma, dim } => {
                cone_repeated_scalar_norm_bounded(gamma, dim)
            }
            DeltaBlock::UnstructuredSector { rho, l, dim } => cone_sector_unstructured(rho, l, dim),
            DeltaBlock::RepeatedScalarSector { rho, l, dim } => cone_sector_repeated(rho, l, dim),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("norm bound must be positive, got {gamma}")));
    }
    Ok(())
}

fn check_sector(rho: f64, l: f64) -> Result<()> {
    if !(rho.is_finite() && l.is_finite()) || rho > l {
        return Err(Error::InvalidArgument(format!("sector needs finite ρ ≤ L, got [{rho}, {l}]")));
    }
    Ok(())
}

fn gaussian_mat<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn structure_dims(structure: &[DeltaBlock]) -> (usize, usize) {
    let s = structure.iter().map(DeltaBlock::rows).sum();
    let z = structure.iter().map(DeltaBlock::cols).sum();
    (s, z)
}

/// `{A + BΔ(I − DΔ)⁻¹C : Δ ∈ structure}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LftSet {
    #[serde(with = "serde_ext::mat")]
    pub a: Mat,
    #[serde(with = "serde_ext::mat")]
    pub b: Mat,
    #[serde(with = "serde_ext::mat")]
    pub c: Mat,
    #[serde(with = "serde_ext::mat")]
    pub d: Mat,
    pub structure: Vec<DeltaBlock>,
}

impl LftSet {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, structure: Vec<DeltaBlock>) -> Result<Self> {
        let set = LftSet { a, b, c, d, structure };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(dim_err("A must be square"));
        }
        let (s, z) = structure_dims(&self.structure);
        let shape = |m: &Mat, r: usize, c: usize, what: &str| -> Result<()> {
            if m.nrows() != r || m.ncols() != c {
                return Err(dim_err(format!(
                    "{what} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        shape(&self.b, n, s, "B")?;
        shape(&self.c, z, n, "C")?;
        shape(&self.d, z, s, "D")?;
        for b in &self.structure {
            b.validate()?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Rows of Δ.
    pub fn s(&self) -> usize {
        self.b.ncols()
    }

    /// Columns of Δ.
    pub fn z(&self) -> usize {
        self.c.nrows()
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> Mat {
        sample_delta_with(&self.structure, rng)
    }

    /// Largest condition number of `I − DΔ` over sampled Δ; errors if any
    /// sample is singular.
    pub fn check_well_posed(&self, trials: usize, seed_value: u64) -> Result<f64> {
        let conds: Vec<Result<f64>> = (0..trials as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::trial_rng(seed_value, i);
                let delta = self.sample_delta(&mut rng);
                lft_jacobian_cond(self, &delta).map(|(_, c)| c)
            })
            .collect();
        let mut worst: f64 = 1.0;
        for c in conds {
            worst = worst.max(c?);
        }
        Ok(worst)
    }
}

pub fn sample_delta_with<R: Rng + ?Sized>(structure: &[DeltaBlock], rng: &mut R) -> Mat {
    let blocks: Vec<Mat> = structure.iter().map(|b| b.sample(rng)).collect();
    numlin::block_diag(&blocks)
}

/// Admissible random Δ for `structure`, deterministic in `seed`.
pub fn sample_delta(structure: &[DeltaBlock], seed_value: u64) -> Mat {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed_value);
    sample_delta_with(structure, &mut rng)
}

/// Block-diagonal Δ with every block admissible and zeros elsewhere.
pub fn delta_admissible(structure: &[DeltaBlock], delta: &Mat, tol: f64) -> bool {
    let (s, z) = structure_dims(structure);
    if delta.nrows() != s || delta.ncols() != z {
        return false;
    }
    let mut mask = Mat::from_element(s, z, 1.0);
    let (mut r, mut c) = (0, 0);
    for b in structure {
        let blk = delta.view((r, c), (b.rows(), b.cols())).into_owned();
        if !b.admissible(&blk, tol) {
            return false;
        }
        mask.view_mut((r, c), (b.rows(), b.cols())).fill(0.0);
        r += b.rows();
        c += b.cols();
    }
    delta.component_mul(&mask).amax() <= tol
}

/// Realized Jacobian and the condition number of `I − DΔ`.
pub fn lft_jacobian_cond(set: &LftSet, delta: &Mat) -> Result<(Mat, f64)> {
    let (s, z) = (set.s(), set.z());
    if delta.nrows() != s || delta.ncols() != z {
        return Err(dim_err(format!(
            "Δ is {}x{}, expected {s}x{z}",
            delta.nrows(),
            delta.ncols()
        )));
    }
    if z == 0 || s == 0 {
        return Ok((set.a.clone(), 1.0));
    }
    let m = Mat::identity(z, z) - &set.d * delta;
    let sv = m.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if smin <= 1e-10 {
        return Err(Error::Singular(format!("I - DΔ singular (σ_min = {smin:e})")));
    }
    // push-through: Δ(I − DΔ)⁻¹ = (I − ΔD)⁻¹Δ
    let left = Mat::identity(s, s) - delta * &set.d;
    let rhs = delta * &set.c;
    let x = left
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("I - ΔD".into()))?;
    Ok((&set.a + &set.b * x, smax / smin))
}

pub fn lft_jacobian(set: &LftSet, delta: &Mat) -> Result<Mat> {
    lft_jacobian_cond(set, delta).map(|(j, _)| j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim", rename_all = "snake_case")]
pub enum ParamKind {
    /// One scalar `≥ 0`.
    Nonneg,
    /// Symmetric PSD block, scalars in upper-triangular row order.
    Psd(usize),
    /// Skew-symmetric block, free scalars for `i < j`.
    Skew(usize),
}

impl ParamKind {
    pub fn scalar_count(&self) -> usize {
        match *self {
            ParamKind::Nonneg => 1,
            ParamKind::Psd(d) => d * (d + 1) / 2,
            ParamKind::Skew(d) => d * d.saturating_sub(1) / 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeParam {
    pub name: String,
    pub kind: ParamKind,
    /// One `(z+s)×(z+s)` generator per scalar of the parameter.
    #[serde(with = "serde_ext::mat_list")]
    pub generators: Vec<Mat>,
}

/// `Θ = Σ_k x_k G_k` with `x` restricted per parameter group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplierCone {
    pub q_dim: usize,
    pub p_dim: usize,
    pub params: Vec<ConeParam>,
}

fn sym_basis(d: usize) -> Vec<Mat> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut e = Mat::zeros(d, d);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

fn skew_basis(d: usize) -> Vec<Mat> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let mut e = Mat::zeros(d, d);
            e[(i, j)] = 1.0;
            e[(j, i)] = -1.0;
            out.push(e);
        }
    }
    out
}

/// `[qq qp; pq pp]` in the local `(q, p)` ordering.
fn qp_block(qq: &Mat, qp: &Mat, pp: &Mat) -> Mat {
    let (z, s) = (qq.nrows(), pp.nrows());
    let mut t = Mat::zeros(z + s, z + s);
    t.view_mut((0, 0), (z, z)).copy_from(qq);
    t.view_mut((0, z), (z, s)).copy_from(qp);
    t.view_mut((z, 0), (s, z)).copy_from(&qp.transpose());
    t.view_mut((z, z), (s, s)).copy_from(pp);
    t
}

impl MultiplierCone {
    pub fn dim(&self) -> usize {
        self.q_dim + self.p_dim
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.kind.scalar_count()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for p in &self.params {
            if p.generators.len() != p.kind.scalar_count() {
                return Err(dim_err(format!("cone parameter {} has wrong generator count", p.name)));
            }
            for g in &p.generators {
                if g.nrows() != d || g.ncols() != d {
                    return Err(dim_err(format!("cone parameter {} generator size", p.name)));
                }
            }
        }
        Ok(())
    }

    /// Θ for a flat parameter vector (parameter groups in order).
    pub fn assemble(&self, values: &[f64]) -> Result<Mat> {
        if values.len() != self.scalar_count() {
            return Err(dim_err(format!(
                "cone has {} scalars, got {}",
                self.scalar_count(),
                values.len()
            )));
        }
        let mut theta = Mat::zeros(self.dim(), self.dim());
        let mut k = 0;
        for p in &self.params {
            for g in &p.generators {
                theta += g * values[k];
                k += 1;
            }
        }
        Ok(theta)
    }

    /// Random admissible parameter vector.
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for p in &self.params {
            match p.kind {
                ParamKind::Nonneg => out.push(rng.random_range(0.0..2.0)),
                ParamKind::Psd(d) => {
                    let g = gaussian_mat(rng, d, d);
                    let m = &g * g.transpose() / d.max(1) as f64;
                    for i in 0..d {
                        for j in i..d {
                            out.push(m[(i, j)]);
                        }
                    }
                }
                ParamKind::Skew(_) => {
                    for _ in 0..p.kind.scalar_count() {
                        out.push(rng.sample::<f64, _>(StandardNormal));
                    }
                }
            }
        }
        out
    }

    /// `[q; p]ᵀ Θ [q; p]`.
    pub fn quadratic_form(theta: &Mat, q: &Vector, p: &Vector) -> f64 {
        let mut v = Vector::zeros(q.len() + p.len());
        v.rows_mut(0, q.len()).copy_from(q);
        v.rows_mut(q.len(), p.len()).copy_from(p);
        (v.transpose() * theta * &v)[(0, 0)]
    }
}

/// `θ · diag(I_z, −γ⁻² I_s)`, θ ≥ 0, for Δ ∈ ℝ^{s×z} with `‖Δ‖ ≤ γ`.
pub fn cone_unstructured_norm_bounded(gamma: f64, s: usize, z: usize) -> Result<MultiplierCone> {
    check_gamma(gamma)?;
    let g = qp_block(
        &Mat::identity(z, z),
        &Mat::zeros(z, s),
        &(-Mat::identity(s, s) / (gamma * gamma)),
    );
    Ok(MultiplierCone {
        q_dim: z,
        p_dim: s,
        params: vec![ConeParam {
            name: "theta".into(),
            kind: ParamKind::Nonneg,
            generators: vec![g],
        }],
    })
}

/// `[Φ Ψ; Ψᵀ −γ⁻²Φ]`, Φ ⪰ 0, Ψ skew.
pub fn cone_repeated_scalar_norm_bounded(gamma: f64, dim: usize) -> Result<MultiplierCone> {
    check_gamma(gamma)?;
    let zero = Mat::zeros(dim, dim);
    let phi = sym_basis(dim)
        .into_iter()
        .map(|e| qp_block(&e, &zero, &(-&e / (gamma * gamma))))
        .collect();
    let psi = skew_basis(dim)
        .into_iter()
        .map(|k| qp_block(&zero, &k, &zero))
        .collect();
    Ok(MultiplierCone {
        q_dim: dim,
        p_dim: dim,
        params: vec![
            ConeParam {
                name: "Phi".into(),
                kind: ParamKind::Psd(dim),
                generators: phi,
            },
            ConeParam {
                name: "Psi".into(),
                kind: ParamKind::Skew(dim),
                generators: psi,
            },
        ],
    })
}

/// `φ [−2ρL, ρ+L; ρ+L, −2] ⊗ I`, φ ≥ 0.
pub fn cone_sector_unstructured(rho: f64, l: f64, dim: usize) -> Result<MultiplierCone> {
    check_sector(rho, l)?;
    let i = Mat::identity(dim, dim);
    let g = qp_block(&(&i * (-2.0 * rho * l)), &(&i * (rho + l)), &(&i * -2.0));
    Ok(MultiplierCone {
        q_dim: dim,
        p_dim: dim,
        params: vec![ConeParam {
            name: "phi".into(),
            kind: ParamKind::Nonneg,
            generators: vec![g],
        }],
    })
}

/// `[−2ρLΦ, (ρ+L)Φ; (ρ+L)Φ, −2Φ]`, Φ ⪰ 0.
pub fn cone_sector_repeated(rho: f64, l: f64, dim: usize) -> Result<MultiplierCone> {
    check_sector(rho, l)?;
    let gens = sym_basis(dim)
        .into_iter()
        .map(|e| qp_block(&(&e * (-2.0 * rho * l)), &(&e * (rho + l)), &(&e * -2.0)))
        .collect();
    Ok(MultiplierCone {
        q_dim: dim,
        p_dim: dim,
        params: vec![ConeParam {
            name: "Phi".into(),
            kind: ParamKind::Psd(dim),
            generators: gens,
        }],
    })
}

/// Direct sum of per-block cones, embedded into the global `(q, p)` layout.
pub fn cone_block(cones: &[MultiplierCone], structure: &[DeltaBlock]) -> Result<MultiplierCone> {
    if cones.len() != structure.len() {
        return Err(dim_err(format!(
            "{} cones for {} uncertainty blocks",
            cones.len(),
            structure.len()
        )));
    }
    let (s, z) = structure_dims(structure);
    let total = z + s;
    let mut params = Vec::new();
    let (mut q_off, mut p_off) = (0, z);
    for (bi, (cone, blk)) in cones.iter().zip(structure).enumerate() {
        cone.validate()?;
        if cone.q_dim != blk.cols() || cone.p_dim != blk.rows() {
            return Err(dim_err(format!(
                "block {bi}: cone is for {}x{} Δ, structure has {}x{}",
                cone.p_dim,
                cone.q_dim,
                blk.rows(),
                blk.cols()
            )));
        }
        let local_to_global: Vec<usize> = (0..cone.q_dim)
            .map(|i| q_off + i)
            .chain((0..cone.p_dim).map(|i| p_off + i))
            .collect();
        for p in &cone.params {
            let generators = p
                .generators
                .iter()
                .map(|g| {
                    let mut big = Mat::zeros(total, total);
                    for (li, &gi) in local_to_global.iter().enumerate() {
                        for (lj, &gj) in local_to_global.iter().enumerate() {
                            big[(gi, gj)] = g[(li, lj)];
                        }
                    }
                    big
                })
                .collect();
            params.push(ConeParam {
                name: format!("block{bi}.{}", p.name),
                kind: p.kind,
                generators,
            });
        }
        q_off += blk.cols();
        p_off += blk.rows();
    }
    Ok(MultiplierCone {
        q_dim: z,
        p_dim: s,
        params,
    })
}

/// Default recipe for every block, combined with [`cone_block`].
pub fn cone_for_structure(structure: &[DeltaBlock]) -> Result<MultiplierCone> {
    let cones: Vec<MultiplierCone> = structure
        .iter()
        .map(DeltaBlock::default_cone)
        .collect::<Result<_>>()?;
    cone_block(&cones, structure)
}

/// Δ structure of the OAG loop: `m` independent scalars in `[0, 1]` followed by
/// one `m×n` block with `‖Δ_π‖ ≤ γ`.
pub fn oag_structure(m: usize, n: usize, gamma: f64) -> Vec<DeltaBlock> {
    let mut s: Vec<DeltaBlock> = (0..m)
        .map(|_| DeltaBlock::RepeatedScalarSector {
            rho: 0.0,
            l: 1.0,
            dim: 1,
        })
        .collect();
    s.push(DeltaBlock::UnstructuredNormBounded {
        gamma,
        rows: m,
        cols: n,
    });
    s
}

/// The OAG multiplier set `{Σ_j Θ_j : φ_j ≥ 0, θ ≥ 0}` written out directly:
/// each `Θ_j` carries `φ_j` on the `(q1_j, p1_j)` entries and `θ/m` on the
/// identity blocks, so the θ generator is `Σ_j` of those shares.
pub fn oag_cone(m: usize, n: usize, gamma: f64) -> Result<MultiplierCone> {
    check_gamma(gamma)?;
    let z = m + n;
    let total = z + 2 * m;
    let (q1, q2, p1, p2) = (0, m, m + n, m + n + m);
    let mut params = Vec::with_capacity(m + 1);
    for j in 0..m {
        let mut g = Mat::zeros(total, total);
        g[(q1 + j, p1 + j)] = 1.0;
        g[(p1 + j, q1 + j)] = 1.0;
        g[(p1 + j, p1 + j)] = -2.0;
        params.push(ConeParam {
            name: format!("phi{j}"),
            kind: ParamKind::Nonneg,
            generators: vec![g],
        });
    }
    let mut theta = Mat::zeros(total, total);
    for _ in 0..m {
        for i in 0..n {
            theta[(q2 + i, q2 + i)] += 1.0 / m as f64;
        }
        for i in 0..m {
            theta[(p2 + i, p2 + i)] -= 1.0 / (m as f64 * gamma * gamma);
        }
    }
    params.push(ConeParam {
        name: "theta".into(),
        kind: ParamKind::Nonneg,
        generators: vec![theta],
    });
    Ok(MultiplierCone {
        q_dim: z,
        p_dim: 2 * m,
        params,
    })
}

/// LFT form of the OAG Jacobian set `H + ηΠᵀΔ_q(Π_nom + Δ_π)` and its cone.
pub fn build_oag_lft(
    h: &Mat,
    pi: &Mat,
    pi_nom: &Mat,
    eta: f64,
    gamma: f64,
) -> Result<(LftSet, MultiplierCone)> {
    let n = h.nrows();
    let m = pi.nrows();
    if h.ncols() != n || pi.ncols() != n || pi_nom.nrows() != m || pi_nom.ncols() != n {
        return Err(dim_err("build_oag_lft: H n×n, Π and Π_nom m×n"));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("η must be positive, got {eta}")));
    }
    let mut b = Mat::zeros(n, 2 * m);
    b.view_mut((0, 0), (n, m)).copy_from(&(pi.transpose() * eta));
    let mut c = Mat::zeros(m + n, n);
    c.view_mut((0, 0), (m, n)).copy_from(pi_nom);
    c.view_mut((m, 0), (n, n)).copy_from(&Mat::identity(n, n));
    let mut d = Mat::zeros(m + n, 2 * m);
    d.view_mut((0, m), (m, m)).copy_from(&Mat::identity(m, m));
    let set = LftSet::new(h.clone(), b, c, d, oag_structure(m, n, gamma))?;
    Ok((set, oag_cone(m, n, gamma)?))
}

/// Vertices `H + ηΠᵀQ_jΠ̃_i` over every `Q_j = diag({0,1}^m)` and every `Π̃_i`.
pub fn build_oag_polytope(
    h: &Mat,
    pi: &Mat,
    eta: f64,
    pi_tildes: &[Mat],
    cap: usize,
) -> Result<PolytopeSet> {
    let n = h.nrows();
    let m = pi.nrows();
    if h.ncols() != n || pi.ncols() != n {
        return Err(dim_err("build_oag_polytope: H n×n, Π m×n"));
    }
    if pi_tildes.iter().any(|t| t.nrows() != m || t.ncols() != n) {
        return Err(dim_err("build_oag_polytope: every Π̃ must be m×n"));
    }
    let combos = if m >= usize::BITS as usize - 1 {
        None
    } else {
        (1usize << m).checked_mul(pi_tildes.len())
    };
    match combos {
        Some(count) if count <= cap => {}
        other => {
            return Err(Error::VertexCap {
                count: other.unwrap_or(usize::MAX),
                cap,
            })
        }
    }
    let pit = pi.transpose() * eta;
    let mut vertices = Vec::new();
    for t in pi_tildes {
        for mask in 0..(1usize << m) {
            let q = Vector::from_fn(m, |i, _| if mask >> i & 1 == 1 { 1.0 } else { 0.0 });
            vertices.push(h + &pit * Mat::from_diagonal(&q) * t);
        }
    }
    PolytopeSet::new(vertices)
}

/// Vertices `H + w ΠᵀΠ̃_i` for a user-supplied list (penalty curvature folded
/// into `w`, no `Q_j` enumeration).
pub fn build_direct_polytope(h: &Mat, pi: &Mat, weight: f64, pi_tildes: &[Mat]) -> Result<PolytopeSet> {
    let n = h.nrows();
    if h.ncols() != n || pi.ncols() != n || pi_tildes.iter().any(|t| t.shape() != pi.shape()) {
        return Err(dim_err("build_direct_polytope: H n×n, Π and Π̃ m×n"));
    }
    let pit = pi.transpose() * weight;
    PolytopeSet::new(pi_tildes.iter().map(|t| h + &pit * t).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IqcReport {
    pub trials: usize,
    pub min_value: f64,
    pub worst_trial: usize,
    pub pass: bool,
}

/// Monte-Carlo check of `[q; Δq]ᵀ Θ [q; Δq] ≥ 0` for random admissible Δ, unit
/// `q` and random cone parameters. Passes iff the minimum is `≥ −1e-10`.
pub fn iqc_validate(
    cone: &MultiplierCone,
    structure: &[DeltaBlock],
    trials: usize,
    seed_value: u64,
) -> Result<IqcReport> {
    cone.validate()?;
    let (s, z) = structure_dims(structure);
    if cone.q_dim != z || cone.p_dim != s {
        return Err(dim_err("iqc_validate: cone and structure dimensions differ"));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("iqc_validate needs at least one trial".into()));
    }
    let (min_value, worst_trial) = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::trial_rng(seed_value, i as u64);
            let delta = sample_delta_with(structure, &mut rng);
            let q = Vector::from_fn(z, |_, _| rng.sample(StandardNormal));
            let q = &q / q.norm().max(1e-300);
            let p = &delta * &q;
            let params = cone.sample_params(&mut rng);
            let theta = cone.assemble(&params).expect("sized by construction");
            (MultiplierCone::quadratic_form(&theta, &q, &p), i)
        })
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    Ok(IqcReport {
        trials,
        min_value,
        worst_trial,
        pass: min_value >= -1e-10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn only_theta(cone: &MultiplierCone, values: &[f64]) -> Mat {
        cone.assemble(values).unwrap()
    }

    #[test]
    fn unstructured_scalar_examples() {
        let cone = cone_unstructured_norm_bounded(1.0, 1, 1).unwrap();
        let t = only_theta(&cone, &[1.0]);
        assert_relative_eq!(MultiplierCone::quadratic_form(&t, &v(&[2.0]), &v(&[1.0])), 3.0);
        let cone = cone_unstructured_norm_bounded(2.0, 1, 1).unwrap();
        let t = only_theta(&cone, &[1.0]);
        assert_relative_eq!(MultiplierCone::quadratic_form(&t, &v(&[1.0]), &v(&[2.0])), 0.0);
        assert!(cone_unstructured_norm_bounded(0.0, 1, 1).is_err());
        assert!(cone_repeated_scalar_norm_bounded(-1.0, 2).is_err());
    }

    #[test]
    fn repeated_scalar_contains_unstructured() {
        let rs = cone_repeated_scalar_norm_bounded(1.5, 3).unwrap();
        let un = cone_unstructured_norm_bounded(1.5, 3, 3).unwrap();
        // Φ = θI, Ψ = 0
        let mut vals = vec![0.0; rs.scalar_count()];
        let mut k = 0;
        for i in 0..3 {
            for j in i..3 {
                if i == j {
                    vals[k] = 0.7;
                }
                k += 1;
            }
        }
        let a = rs.assemble(&vals).unwrap();
        let b = un.assemble(&[0.7]).unwrap();
        assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn repeated_scalar_boundary_is_tight() {
        let gamma = 1.3;
        let cone = cone_repeated_scalar_norm_bounded(gamma, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let params = cone.sample_params(&mut rng);
            let t = cone.assemble(&params).unwrap();
            let q = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let p = &q * gamma;
            assert!(MultiplierCone::quadratic_form(&t, &q, &p).abs() < 1e-12);
        }
    }

    #[test]
    fn sector_examples() {
        let cone = cone_sector_unstructured(0.0, 1.0, 1).unwrap();
        let t = cone.assemble(&[1.0]).unwrap();
        assert_relative_eq!(MultiplierCone::quadratic_form(&t, &v(&[1.0]), &v(&[0.5])), 0.5);
        let c = 0.8;
        let cone = cone_sector_unstructured(c, c, 2).unwrap();
        let t = cone.assemble(&[1.3]).unwrap();
        let q = v(&[0.3, -1.1]);
        assert!(MultiplierCone::quadratic_form(&t, &q, &(&q * c)).abs() < 1e-14);
        assert!(cone_sector_unstructured(2.0, 1.0, 1).is_err());
        // repeated: δ at either sector end is tight
        let cone = cone_sector_repeated(-0.5, 2.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = cone.assemble(&cone.sample_params(&mut rng)).unwrap();
        for d in [-0.5, 2.0] {
            assert!(MultiplierCone::quadratic_form(&t, &q, &(&q * d)).abs() < 1e-12);
        }
        assert!(cone_sector_repeated(1.0, 0.0, 2).is_err());
    }

    #[test]
    fn every_recipe_passes_iqc_validation() {
        let structures = [
            DeltaBlock::UnstructuredNormBounded {
                gamma: 1.7,
                rows: 2,
                cols: 3,
            },
            DeltaBlock::RepeatedScalarNormBounded { gamma: 0.6, dim: 3 },
            DeltaBlock::UnstructuredSector {
                rho: -0.4,
                l: 1.5,
                dim: 3,
            },
            DeltaBlock::RepeatedScalarSector {
                rho: 0.2,
                l: 3.0,
                dim: 2,
            },
        ];
        for b in structures {
            let cone = b.default_cone().unwrap();
            let rep = iqc_validate(&cone, &[b], 2000, 17).unwrap();
            assert!(rep.pass, "{b:?}: {}", rep.min_value);
        }
        let cone = cone_for_structure(&structures).unwrap();
        assert!(iqc_validate(&cone, &structures, 2000, 18).unwrap().pass);
    }

    #[test]
    fn corrupted_cone_is_caught() {
        let b = DeltaBlock::UnstructuredNormBounded {
            gamma: 1.0,
            rows: 2,
            cols: 2,
        };
        let mut cone = b.default_cone().unwrap();
        cone.params[0].generators[0] *= -1.0;
        let rep = iqc_validate(&cone, &[b], 500, 1).unwrap();
        assert!(!rep.pass);
        assert!(rep.min_value < -1e-3);
    }

    #[test]
    fn single_block_embedding_is_identity() {
        let b = DeltaBlock::RepeatedScalarNormBounded { gamma: 2.0, dim: 2 };
        let base = b.default_cone().unwrap();
        let emb = cone_block(std::slice::from_ref(&base), &[b]).unwrap();
        for (p, q) in base.params.iter().zip(&emb.params) {
            for (g, h) in p.generators.iter().zip(&q.generators) {
                assert_eq!(g, h);
            }
        }
    }

    #[test]
    fn two_scalar_blocks_interleave() {
        let s = [
            DeltaBlock::UnstructuredNormBounded {
                gamma: 1.0,
                rows: 1,
                cols: 1,
            },
            DeltaBlock::UnstructuredNormBounded {
                gamma: 2.0,
                rows: 1,
                cols: 1,
            },
        ];
        let cone = cone_for_structure(&s).unwrap();
        // global order (q0, q1, p0, p1)
        let a = cone.assemble(&[1.0, 0.0]).unwrap();
        let b = cone.assemble(&[0.0, 1.0]).unwrap();
        let ea = Mat::from_diagonal(&v(&[1.0, 0.0, -1.0, 0.0]));
        let eb = Mat::from_diagonal(&v(&[0.0, 1.0, 0.0, -0.25]));
        assert_eq!(a, ea);
        assert_eq!(b, eb);
        let r = cone_block(&[s[0].default_cone().unwrap()], &s);
        assert!(r.is_err());
    }

    #[test]
    fn oag_cone_equals_block_construction() {
        let (m, n, gamma) = (3, 4, 1.2);
        let direct = oag_cone(m, n, gamma).unwrap();
        let s = oag_structure(m, n, gamma);
        let blocks = cone_for_structure(&s).unwrap();
        assert_eq!(direct.scalar_count(), blocks.scalar_count());
        for (a, b) in direct.params.iter().zip(&blocks.params) {
            assert_eq!(a.generators.len(), 1);
            assert!((&a.generators[0] - &b.generators[0]).amax() < 1e-15, "{}", a.name);
        }
        assert!(iqc_validate(&direct, &s, 2000, 4).unwrap().pass);
    }

    fn academic_pi() -> Mat {
        Mat::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0])
    }

    #[test]
    fn oag_lft_shapes_and_special_cases() {
        let h = Mat::identity(2, 2);
        let pi = academic_pi();
        let (set, cone) = build_oag_lft(&h, &pi, &pi, 10.0, 1.0).unwrap();
        assert_eq!(set.a.shape(), (2, 2));
        assert_eq!(set.b.shape(), (2, 4));
        assert_eq!(set.c.shape(), (4, 2));
        assert_eq!(set.d.shape(), (4, 4));
        assert_eq!(cone.dim(), 8);
        let zero = Mat::zeros(4, 4);
        assert_eq!(lft_jacobian(&set, &zero).unwrap(), h);
        let mut delta = Mat::zeros(4, 4);
        delta[(0, 0)] = 1.0;
        delta[(1, 1)] = 1.0;
        let j = lft_jacobian(&set, &delta).unwrap();
        let expect = &h + pi.transpose() * &pi * 10.0;
        assert!((j - expect).amax() < 1e-12);
    }

    #[test]
    fn oag_lft_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (m, n) = (3, 4);
        let h = numlin::symmetrize(&gaussian_mat(&mut rng, n, n)) + Mat::identity(n, n) * 3.0;
        let pi = gaussian_mat(&mut rng, m, n);
        let pi_nom = gaussian_mat(&mut rng, m, n);
        let (eta, gamma) = (2.5, 0.7);
        let (set, _) = build_oag_lft(&h, &pi, &pi_nom, eta, gamma).unwrap();
        for _ in 0..200 {
            let delta = set.sample_delta(&mut rng);
            assert!(delta_admissible(&set.structure, &delta, 1e-12));
            let dq = delta.view((0, 0), (m, m)).into_owned();
            let dpi = delta.view((m, m), (m, n)).into_owned();
            let direct = &h + pi.transpose() * eta * &dq * (&pi_nom + &dpi);
            let (j, cond) = lft_jacobian_cond(&set, &delta).unwrap();
            assert!((j - direct).amax() < 1e-10);
            assert!(cond.is_finite());
        }
    }

    #[test]
    fn push_through_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let structure = vec![
            DeltaBlock::UnstructuredNormBounded {
                gamma: 0.3,
                rows: 2,
                cols: 3,
            },
            DeltaBlock::RepeatedScalarSector {
                rho: -0.2,
                l: 0.4,
                dim: 2,
            },
        ];
        let (s, z) = structure_dims(&structure);
        let n = 3;
        let set = LftSet::new(
            gaussian_mat(&mut rng, n, n),
            gaussian_mat(&mut rng, n, s),
            gaussian_mat(&mut rng, z, n),
            gaussian_mat(&mut rng, z, s) * 0.5,
            structure,
        )
        .unwrap();
        for _ in 0..1000 {
            let delta = set.sample_delta(&mut rng);
            let j = lft_jacobian(&set, &delta).unwrap();
            let inner = (Mat::identity(z, z) - &set.d * &delta).try_inverse().unwrap();
            let direct = &set.a + &set.b * &delta * inner * &set.c;
            assert!((j - direct).amax() <= 1e-10);
        }
        let zero = Mat::zeros(s, z);
        assert_eq!(lft_jacobian(&set, &zero).unwrap(), set.a);
    }

    #[test]
    fn singular_lft_rejected() {
        let set = LftSet::new(
            Mat::zeros(1, 1),
            Mat::identity(1, 1),
            Mat::identity(1, 1),
            Mat::identity(1, 1),
            vec![DeltaBlock::RepeatedScalarSector {
                rho: 0.0,
                l: 1.0,
                dim: 1,
            }],
        )
        .unwrap();
        let delta = Mat::identity(1, 1);
        assert!(matches!(lft_jacobian(&set, &delta), Err(Error::Singular(_))));
        assert!(lft_jacobian(&set, &Mat::zeros(2, 1)).is_err());
    }

    #[test]
    fn samples_are_reproducible_and_admissible() {
        let s = [
            DeltaBlock::UnstructuredNormBounded {
                gamma: 1.1,
                rows: 3,
                cols: 2,
            },
            DeltaBlock::UnstructuredSector {
                rho: 0.5,
                l: 2.0,
                dim: 3,
            },
        ];
        assert_eq!(sample_delta(&s, 42), sample_delta(&s, 42));
        assert_ne!(sample_delta(&s, 42), sample_delta(&s, 43));
        for k in 0..200 {
            let d = sample_delta(&s, k);
            assert!(numlin::spectral_norm(&d.view((0, 0), (3, 2)).into_owned()) <= 1.1 + 1e-12);
            let sec = d.view((3, 2), (3, 3)).into_owned();
            let e = numlin::sym_eig(&sec).unwrap();
            assert!(e.eigenvalues[0] >= 0.5 - 1e-10 && e.eigenvalues[2] <= 2.0 + 1e-10);
            assert!(delta_admissible(&s, &d, 1e-10));
        }
    }

    #[test]
    fn oag_polytope_counts() {
        let one = Mat::identity(1, 1);
        let p = build_oag_polytope(&one, &one, 1.0, &[one.clone()], DEFAULT_VERTEX_CAP).unwrap();
        let vals: Vec<f64> = p.vertices.iter().map(|v| v[(0, 0)]).collect();
        assert_eq!(vals, vec![1.0, 2.0]);
        let h = Mat::identity(3, 3);
        let pi = Mat::from_element(2, 3, 0.5);
        let p = build_oag_polytope(&h, &pi, 1.0, &[pi.clone(), pi.clone() * 2.0], 4096).unwrap();
        assert_eq!(p.len(), 8);
        let big = Mat::from_element(13, 3, 1.0);
        let r = build_oag_polytope(&h, &big, 1.0, &[big.clone()], 4096);
        assert!(matches!(r, Err(Error::VertexCap { count: 8192, cap: 4096 })));
    }

    #[test]
    fn academic_direct_polytope() {
        let pi = academic_pi();
        let tildes = [
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]),
            Mat::from_row_slice(2, 2, &[1.0, 1.0, -2.0, 2.0]),
            Mat::from_row_slice(2, 2, &[1.0, 1.0, -2.0, 0.0]),
        ];
        let p = build_direct_polytope(&Mat::identity(2, 2), &pi, 10.0, &tildes).unwrap();
        assert_eq!(p.vertices[0], Mat::from_row_slice(2, 2, &[11.0, 10.0, 10.0, 11.0]));
        let e = numlin::sym_eig(&p.vertices[0]).unwrap();
        assert_relative_eq!(e.eigenvalues[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn polytope_json_round_trip() {
        let p = PolytopeSet::new(vec![Mat::identity(2, 2), Mat::from_element(2, 2, 3.0)]).unwrap();
        let back: PolytopeSet = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back.vertices, p.vertices);
        let (set, _) = build_oag_lft(&Mat::identity(2, 2), &academic_pi(), &academic_pi(), 1.0, 2.0).unwrap();
        let text = serde_json::to_string(&set).unwrap();
        let back: LftSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back.structure, set.structure);
        assert_eq!(back.d, set.d);
        assert!(PolytopeSet::new(vec![]).is_err());
        assert!(PolytopeSet::new(vec![Mat::identity(2, 2), Mat::identity(3, 3)]).is_err());
    }

    #[test]
    fn oag_lft_is_well_posed() {
        let (set, _) =
            build_oag_lft(&Mat::identity(2, 2), &academic_pi(), &academic_pi(), 10.0, 3.0).unwrap();
        let cond = set.check_well_posed(500, 3).unwrap();
        assert!(cond.is_finite());
    }
}
