//! Dense linear algebra kernel: numerical rank, pseudoinverse, orthogonal
//! projectors, seminorms and the generalized maximal eigenvalue.
//!
//! Everything is backed by nalgebra's SVD and symmetric eigensolver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative singular-value cutoff.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Relative slack allowed on negative eigenvalues in PSD checks.
pub const PSD_TOL: f64 = 1e-8;

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid(format!("{what} has non-finite entries"))
    }
}

pub fn ensure_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        invalid(format!("{what} has non-finite entries"))
    }
}

/// Build a matrix from row-major entries, rejecting NaN/Inf.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if entries.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} entries for a {rows}x{cols} matrix",
            entries.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, entries);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        invalid(format!("tolerance must be positive, got {tol}"))
    }
}

/// Thin SVD pieces with the cutoff already resolved.
struct Svd {
    u: Matrix,
    s: Vec<f64>,
    v_t: Matrix,
    cutoff: f64,
}

impl Svd {
    fn rank(&self) -> usize {
        self.s.iter().filter(|&&s| s > self.cutoff).count()
    }
}

fn svd(a: &Matrix, tol: f64) -> Result<Svd> {
    check_tol(tol)?;
    ensure_finite(a, "matrix")?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Svd {
            u: Matrix::zeros(a.nrows(), 0),
            s: vec![],
            v_t: Matrix::zeros(0, a.ncols()),
            cutoff: tol,
        });
    }
    // nalgebra's bidiagonal SVD can return factors that do not reconstruct
    // rank-deficient inputs; faer's is used for this kernel only.
    let (m, n) = (a.nrows(), a.ncols());
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let dec = fa
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let k = m.min(n);
    let (fu, fv, fs) = (dec.U(), dec.V(), dec.S().column_vector());
    let s: Vec<f64> = (0..k).map(|i| fs[i]).collect();
    let u = Matrix::from_fn(m, k, |i, j| fu[(i, j)]);
    let v_t = Matrix::from_fn(k, n, |i, j| fv[(j, i)]);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = if smax > 0.0 { tol * smax } else { tol };
    Ok(Svd { u, s, v_t, cutoff })
}

/// Number of singular values above `tol * sigma_max` (or above `tol` for the
/// zero matrix).
pub fn rank_tol(a: &Matrix, tol: f64) -> Result<usize> {
    Ok(svd(a, tol)?.rank())
}

pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(a, "matrix")?;
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Moore-Penrose pseudoinverse with a relative cutoff.
pub fn pinv(a: &Matrix, tol: f64) -> Result<Matrix> {
    let d = svd(a, tol)?;
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in d.s.iter().enumerate() {
        if s > d.cutoff {
            let v = d.v_t.row(k).transpose();
            let u = d.u.column(k);
            out += (v / s) * u.transpose();
        }
    }
    Ok(out)
}

/// Orthonormal basis (as columns) of the column space of `a`.
pub fn column_space_basis(a: &Matrix, tol: f64) -> Result<Matrix> {
    let d = svd(a, tol)?;
    let idx: Vec<usize> = (0..d.s.len()).filter(|&k| d.s[k] > d.cutoff).collect();
    Ok(select_columns(&d.u, &idx))
}

/// Orthonormal basis (as columns) of the row space of `a`.
pub fn row_space_basis(a: &Matrix, tol: f64) -> Result<Matrix> {
    let d = svd(a, tol)?;
    let idx: Vec<usize> = (0..d.s.len()).filter(|&k| d.s[k] > d.cutoff).collect();
    Ok(select_columns(&d.v_t.transpose(), &idx))
}

/// Orthonormal basis (as columns) of Null(a), a `ncols x (ncols - rank)` matrix.
pub fn null_space_basis(a: &Matrix, tol: f64) -> Result<Matrix> {
    let n = a.ncols();
    // Pad wide matrices with zero rows so the SVD returns a full V.
    let padded;
    let a = if a.nrows() < n {
        padded = {
            let mut p = Matrix::zeros(n, n);
            p.rows_mut(0, a.nrows()).copy_from(a);
            p
        };
        &padded
    } else {
        a
    };
    let d = svd(a, tol)?;
    let idx: Vec<usize> = (0..d.s.len()).filter(|&k| d.s[k] <= d.cutoff).collect();
    Ok(select_columns(&d.v_t.transpose(), &idx))
}

fn select_columns(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), idx.len());
    for (j, &k) in idx.iter().enumerate() {
        out.set_column(j, &m.column(k));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    RowSpace,
    NullSpace,
    ColumnSpace,
}

/// Symmetric idempotent matrix together with its rank.
#[derive(Debug, Clone)]
pub struct Projector {
    pub p: Matrix,
    pub rank: usize,
    /// Absolute singular-value cutoff that produced the projector.
    pub tol: f64,
}

impl Projector {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.p * v
    }

    /// Complementary projector I - P.
    pub fn complement(&self) -> Projector {
        let n = self.dim();
        Projector {
            p: Matrix::identity(n, n) - &self.p,
            rank: n - self.rank,
            tol: self.tol,
        }
    }

    pub fn from_basis(q: &Matrix, tol: f64) -> Projector {
        let mut p = q * q.transpose();
        symmetrize(&mut p);
        Projector {
            p,
            rank: q.ncols(),
            tol,
        }
    }
}

/// Orthogonal projector onto a fundamental subspace of `a`.
pub fn proj(a: &Matrix, which: Subspace, tol: f64) -> Result<Projector> {
    let d = svd(a, tol)?;
    let r = d.rank();
    let basis = match which {
        Subspace::ColumnSpace => select_columns(&d.u, &(0..d.s.len()).filter(|&k| d.s[k] > d.cutoff).collect::<Vec<_>>()),
        Subspace::RowSpace | Subspace::NullSpace => select_columns(
            &d.v_t.transpose(),
            &(0..d.s.len()).filter(|&k| d.s[k] > d.cutoff).collect::<Vec<_>>(),
        ),
    };
    let pr = Projector::from_basis(&basis, d.cutoff);
    debug_assert_eq!(pr.rank, r);
    Ok(match which {
        Subspace::NullSpace => pr.complement(),
        _ => pr,
    })
}

pub fn symmetrize(m: &mut Matrix) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn check_symmetric(sigma: &Matrix, what: &str) -> Result<()> {
    if !sigma.is_square() {
        return Err(Error::DimensionMismatch(format!("{what} must be square")));
    }
    let scale = sigma.amax().max(1.0);
    let asym = (sigma - sigma.transpose()).amax();
    if asym > 1e-8 * scale {
        return invalid(format!("{what} is not symmetric (max asymmetry {asym:e})"));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix after a PSD check.
fn psd_eigen(sigma: &Matrix, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    ensure_finite(sigma, what)?;
    check_symmetric(sigma, what)?;
    let mut s = sigma.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * norm {
        return Err(Error::NotPsd { min_eig: min });
    }
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Matrix) -> f64 {
    let mut s = a.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(a: &Matrix) -> f64 {
    let mut s = a.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `u' sigma u` for a symmetric PSD `sigma`.
pub fn seminorm_sq(u: &Vector, sigma: &Matrix) -> Result<f64> {
    if sigma.nrows() != u.len() || sigma.ncols() != u.len() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} against {}x{} matrix",
            u.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    ensure_finite_vec(u, "vector")?;
    psd_eigen(sigma, "sigma")?;
    let v = (u.transpose() * sigma * u)[(0, 0)];
    Ok(if v < -1e-12 { 0.0 } else { v.max(0.0) })
}

/// Smallest `c` with `a <= c b` in the Loewner order.
pub fn min_dominating_scalar(a: &Matrix, b: &Matrix, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    psd_eigen(a, "a")?;
    let eb = psd_eigen(b, "b")?;
    let bmax = eb.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let anorm = a.norm();
    let keep: Vec<usize> = (0..eb.eigenvalues.len())
        .filter(|&k| bmax > 0.0 && eb.eigenvalues[k] > tol * bmax)
        .collect();
    let v = select_columns(&eb.eigenvectors, &keep);

    // Range(a) must sit inside Range(b).
    let n = a.nrows();
    let perp = Matrix::identity(n, n) - &v * v.transpose();
    let residual = (&perp * a).norm();
    if residual > tol.max(1e-10) * anorm {
        return Err(Error::RangeContainment { residual });
    }
    if keep.is_empty() {
        return Ok(0.0);
    }
    let mut w = v.clone();
    for (j, &k) in keep.iter().enumerate() {
        w.column_mut(j).scale_mut(1.0 / eb.eigenvalues[k].sqrt());
    }
    let c = w.transpose() * a * &w;
    Ok(max_eigenvalue(&c).max(0.0))
}

/// Symmetric PSD square root and pseudo-inverse square root.
pub fn psd_sqrt_pair(sigma: &Matrix, tol: f64) -> Result<(Matrix, Matrix)> {
    let e = psd_eigen(sigma, "sigma")?;
    let top = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let n = sigma.nrows();
    let mut half = Matrix::zeros(n, n);
    let mut inv_half = Matrix::zeros(n, n);
    for k in 0..n {
        let l = e.eigenvalues[k];
        let v = e.eigenvectors.column(k);
        let vv = v * v.transpose();
        if l > 0.0 {
            half += &vv * l.sqrt();
        }
        if top > 0.0 && l > tol * top {
            inv_half += &vv / l.sqrt();
        }
    }
    Ok((half, inv_half))
}

/// Serde helper storing a matrix as a list of rows.
pub mod rows_serde {
    use super::Matrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err("ragged matrix rows".into());
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err("non-finite matrix entry".into());
        }
        Ok(Matrix::from_row_slice(r, c, &flat))
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(to_rows(m))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(ms.len()))?;
            for m in ms {
                seq.serialize_element(&to_rows(m))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
            let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
            all.iter()
                .map(|rows| from_rows(rows).map_err(D::Error::custom))
                .collect()
        }
    }
}
