//! Dense linear algebra used throughout the crate: Kronecker products,
//! column-stacking vectorization, weighted (D-orthogonal) projections and
//! the partitioned-matrix inverse.
//!
//! Every matrix here is small (at most a few hundred rows), so everything is
//! dense `nalgebra` storage. Inverses of Gram-type matrices go through a
//! Cholesky factorization; general square inverses go through LU after a
//! rank check.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Default absolute tolerance on matrix entries.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Condition numbers above this are logged as a warning.
pub const CONDITION_WARNING: f64 = 1e12;

/// Kronecker product `A ⊗ B`: the block matrix whose `(i, j)` block is `a_ij·B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    let mut out = DMatrix::zeros(m * p, n * q);
    for j in 0..n {
        for i in 0..m {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for bj in 0..q {
                for bi in 0..p {
                    out[(i * p + bi, j * q + bj)] = aij * b[(bi, bj)];
                }
            }
        }
    }
    out
}

/// Stacks the columns of `a` one after another.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major already
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`]: reshapes a vector of length `rows·cols` column by column.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Numerical rank: number of singular values above `max(m, n)·ε·σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = (m.max(n) as f64) * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Diagonal of `D = diag{μ}`; every entry strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn new(d: DVector<f64>) -> Result<Self> {
        if let Some((i, x)) = d.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::Domain(format!(
                "weight {i} is {x}; all weights must be finite and strictly positive"
            )));
        }
        Ok(WeightVector(d))
    }

    pub fn from_slice(d: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(d))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    /// `D` as a dense matrix.
    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.0)
    }

    /// `D⁻¹` as a dense matrix.
    pub fn inv_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.0.map(|x| 1.0 / x))
    }
}

/// A D-orthogonal projection onto the column span of `basis`.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    matrix: DMatrix<f64>,
    basis: DMatrix<f64>,
    weights: WeightVector,
}

impl ProjectionMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `I − P`, the D-orthogonal projection onto the D-orthogonal complement.
    pub fn complement(&self) -> DMatrix<f64> {
        let n = self.matrix.nrows();
        DMatrix::identity(n, n) - &self.matrix
    }
}

/// `P = X(XᵀDX)⁻¹XᵀD` for a full-column-rank basis `X`.
///
/// A basis with zero columns yields the zero projection.
pub fn d_projection(basis: &DMatrix<f64>, weights: &WeightVector) -> Result<ProjectionMatrix> {
    let (rows, m) = basis.shape();
    if rows != weights.len() {
        return Err(Error::Dimension(format!(
            "basis has {rows} rows but there are {} weights",
            weights.len()
        )));
    }
    if m == 0 {
        return Ok(ProjectionMatrix {
            matrix: DMatrix::zeros(rows, rows),
            basis: basis.clone(),
            weights: weights.clone(),
        });
    }
    let rank = numerical_rank(basis);
    if rank < m {
        return Err(Error::SingularBasis { rank, expected: m });
    }
    // XᵀD: scale column i of Xᵀ by d_i
    let mut xt_d = basis.transpose();
    for (i, mut col) in xt_d.column_iter_mut().enumerate() {
        col *= weights.0[i];
    }
    let gram = &xt_d * basis;
    let chol = Cholesky::new(gram).ok_or(Error::SingularBasis { rank, expected: m })?;
    let matrix = basis * chol.solve(&xt_d);
    Ok(ProjectionMatrix {
        matrix,
        basis: basis.clone(),
        weights: weights.clone(),
    })
}

/// Largest-to-smallest eigenvalue ratio of a symmetric matrix.
pub fn condition_number_sym(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = eig.iter().map(|x| x.abs()).fold(0.0_f64, f64::max);
    let min = eig.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{what} is not square")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::singular(what));
    }
    let cond = condition_number_sym(a);
    if cond > CONDITION_WARNING {
        log::warn!("{what} is ill-conditioned (condition number {cond:.3e})");
    }
    Cholesky::new(symmetrize(a)).ok_or_else(|| Error::singular(what))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(symmetrize(&cholesky(a, what)?.inverse()))
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    Ok(cholesky(a, what)?.solve(b))
}

/// Inverse of a general square matrix; rank-checked before LU.
pub fn invert(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{what} is not square")));
    }
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if numerical_rank(a) < a.nrows() {
        return Err(Error::singular(what));
    }
    a.clone().lu().try_inverse().ok_or_else(|| Error::singular(what))
}

/// Left inverse `(AᵀA)⁻¹Aᵀ` of a full-column-rank matrix.
pub fn left_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rank = numerical_rank(a);
    if rank < a.ncols() {
        return Err(Error::SingularBasis {
            rank,
            expected: a.ncols(),
        });
    }
    spd_solve(&a.tr_mul(a), &a.transpose(), "AᵀA")
}

/// The four blocks of the inverse of `[[L, M], [G, H]]`.
#[derive(Debug, Clone)]
pub struct PartitionedInverse {
    pub top_left: DMatrix<f64>,
    pub top_right: DMatrix<f64>,
    pub bottom_left: DMatrix<f64>,
    pub bottom_right: DMatrix<f64>,
}

impl PartitionedInverse {
    /// Reassembles the full inverse.
    pub fn assemble(&self) -> DMatrix<f64> {
        assemble_blocks(&self.top_left, &self.top_right, &self.bottom_left, &self.bottom_right)
    }
}

/// Stacks four conforming blocks into one matrix.
pub fn assemble_blocks(tl: &DMatrix<f64>, tr: &DMatrix<f64>, bl: &DMatrix<f64>, br: &DMatrix<f64>) -> DMatrix<f64> {
    let a = tl.nrows();
    let b = br.nrows();
    let mut out = DMatrix::zeros(a + b, a + b);
    out.view_mut((0, 0), (a, a)).copy_from(tl);
    out.view_mut((0, a), (a, b)).copy_from(tr);
    out.view_mut((a, 0), (b, a)).copy_from(bl);
    out.view_mut((a, a), (b, b)).copy_from(br);
    out
}

/// Blockwise inverse with Schur complement `N = H − G·L⁻¹·M`:
/// `(L⁻¹ + L⁻¹MN⁻¹GL⁻¹, −L⁻¹MN⁻¹, −N⁻¹GL⁻¹, N⁻¹)`.
pub fn partitioned_inverse(
    l: &DMatrix<f64>,
    m: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> Result<PartitionedInverse> {
    let a = l.nrows();
    let b = h.nrows();
    if !l.is_square() || !h.is_square() || m.shape() != (a, b) || g.shape() != (b, a) {
        return Err(Error::Dimension(format!(
            "blocks do not conform: L {:?}, M {:?}, G {:?}, H {:?}",
            l.shape(),
            m.shape(),
            g.shape(),
            h.shape()
        )));
    }
    let l_inv = invert(l, "L").map_err(|_| Error::SingularLeadingBlock)?;
    let lu = l.clone().lu();
    let l_inv_m = lu.solve(m).ok_or(Error::SingularLeadingBlock)?;
    let g_l_inv = l
        .transpose()
        .lu()
        .solve(&g.transpose())
        .ok_or(Error::SingularLeadingBlock)?
        .transpose();
    let schur = h - g * &l_inv_m;
    let n_inv = invert(&schur, "N").map_err(|_| Error::SingularSchurComplement)?;
    let top_right = -(&l_inv_m * &n_inv);
    let bottom_left = -(&n_inv * &g_l_inv);
    let top_left = &l_inv + &l_inv_m * &n_inv * &g_l_inv;
    Ok(PartitionedInverse {
        top_left,
        top_right,
        bottom_left,
        bottom_right: n_inv,
    })
}

/// Largest absolute entrywise difference; infinite if shapes differ.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
