//! Dense real linear algebra used throughout the crate.
//!
//! Everything here is a thin layer over `nalgebra`. Symmetric inputs are
//! always symmetrized as `(S + Sᵀ)/2` before an eigensolve; assembled LMI
//! matrices carry round-off asymmetry and we never want that to leak into a
//! margin.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vector,
    /// Columns are the orthonormal eigenvectors, in eigenvalue order.
    pub eigenvectors: Mat,
}

impl SymEig {
    pub fn reconstruct(&self) -> Mat {
        let v = &self.eigenvectors;
        v * Mat::from_diagonal(&self.eigenvalues) * v.transpose()
    }
}

fn require_square(s: &Mat, what: &str) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(dim_err(format!(
            "{what} needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(())
}

pub fn symmetrize(s: &Mat) -> Mat {
    (s + s.transpose()) * 0.5
}

pub fn sym_eig(s: &Mat) -> Result<SymEig> {
    require_square(s, "sym_eig")?;
    let n = s.nrows();
    if n == 0 {
        return Ok(SymEig {
            eigenvalues: Vector::zeros(0),
            eigenvectors: Mat::zeros(0, 0),
        });
    }
    let eig = symmetrize(s).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Smallest eigenvalue of the symmetric part; `S ⪰ 0` iff the result is `≥ 0`.
pub fn psd_margin(s: &Mat) -> Result<f64> {
    require_square(s, "psd_margin")?;
    if s.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sym_eig(s)?.eigenvalues[0])
}

pub fn max_eigenvalue(s: &Mat) -> Result<f64> {
    require_square(s, "max_eigenvalue")?;
    if s.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let e = sym_eig(s)?;
    Ok(e.eigenvalues[e.eigenvalues.len() - 1])
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// `S^{1/2}` and `S^{-1/2}` of a symmetric positive definite matrix.
pub fn spd_sqrt_pair(s: &Mat) -> Result<(Mat, Mat)> {
    let e = sym_eig(s)?;
    let n = s.nrows();
    if n > 0 && e.eigenvalues[0] <= 0.0 {
        return Err(Error::Singular(format!(
            "expected positive definite, smallest eigenvalue {}",
            e.eigenvalues[0]
        )));
    }
    let sqrt = Vector::from_iterator(n, e.eigenvalues.iter().map(|l| l.sqrt()));
    let inv_sqrt = Vector::from_iterator(n, e.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let v = &e.eigenvectors;
    Ok((
        v * Mat::from_diagonal(&sqrt) * v.transpose(),
        v * Mat::from_diagonal(&inv_sqrt) * v.transpose(),
    ))
}

/// Weighted norm `sqrt(xᵀ P x)`.
pub fn p_norm(x: &Vector, p: &Mat) -> f64 {
    let v = (x.transpose() * p * x)[(0, 0)];
    v.max(0.0).sqrt()
}

pub fn solve(a: &Mat, b: &Vector) -> Result<Vector> {
    require_square(a, "solve")?;
    if a.nrows() != b.len() {
        return Err(dim_err("solve: rhs length"));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("linear solve".into()))
}

/// Block-diagonal assembly of square or rectangular blocks.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}
