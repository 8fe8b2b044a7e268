//! Dense complex linear-algebra kernels shared by every other module.
//!
//! Matrices are `nalgebra` dense matrices, which store entries column-major.
//! All propagation math uses the column-major flattening, under which
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
pub use crate::lapack::SvdScalar;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Element order used by [`flatten`] and [`unflatten`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlattenConvention {
    #[default]
    ColumnMajor,
    RowMajor,
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Largest entrywise deviation `max |m - m†|`.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// `‖m†m − I‖_F`.
pub fn unitarity_defect(m: &CMat) -> f64 {
    let n = m.ncols();
    (m.adjoint() * m - identity(n)).norm()
}

pub(crate) fn ensure_hermitian(m: &CMat, tol: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::validation(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let defect = hermiticity_defect(m);
    if defect > tol * max_abs(m).max(1.0) {
        return Err(Error::validation(format!(
            "{what} is not Hermitian (max |A - A†| = {defect:.3e})"
        )));
    }
    Ok(())
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
pub fn hermitian_eigen(h: &CMat) -> Result<(RVec, CMat)> {
    ensure_hermitian(h, 1e-12, "matrix")?;
    let eig = SymmetricEigen::try_new(symmetrize(h), f64::EPSILON, 0)
        .ok_or_else(|| Error::numerical("Hermitian eigensolver did not converge"))?;
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = RVec::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Eigenvalues of a Hermitian matrix, descending.
pub fn hermitian_eigenvalues(h: &CMat) -> Result<RVec> {
    hermitian_eigen(h).map(|(values, _)| values)
}

fn symmetrize(h: &CMat) -> CMat {
    (h + h.adjoint()) * C64::new(0.5, 0.0)
}

/// `exp(scale · h)` for Hermitian `h`, via `h = V Λ V†`.
pub fn matexp_hermitian(h: &CMat, scale: C64) -> Result<CMat> {
    let (values, vectors) = hermitian_eigen(h)?;
    let n = h.nrows();
    let mut scaled = vectors.clone();
    for j in 0..n {
        let f = (scale * values[j]).exp();
        for i in 0..n {
            scaled[(i, j)] *= f;
        }
    }
    Ok(scaled * vectors.adjoint())
}

/// The one-step unitary `exp(−i h Δt)`.
pub fn step_unitary(h: &CMat, dt: f64) -> Result<CMat> {
    matexp_hermitian(h, C64::new(0.0, -dt))
}

/// Thin singular value decomposition `m = U Σ V†`, singular values descending.
///
/// Singular vectors are phase-normalized: the first entry of each left
/// singular vector whose modulus exceeds 1e-12 is made real and positive.
#[derive(Clone, Debug)]
pub struct Svd<T: ComplexField<RealField = f64>> {
    pub u: DMatrix<T>,
    pub singular_values: RVec,
    pub v_t: DMatrix<T>,
}

pub fn svd<T>(m: &DMatrix<T>) -> Result<Svd<T>>
where
    T: SvdScalar,
{
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::validation("SVD of an empty matrix"));
    }
    if m.iter().any(|z| !z.is_finite()) {
        return Err(Error::numerical("SVD input contains non-finite entries"));
    }
    let (u, sigma, v_t) = T::svd_thin(m).ok_or_else(|| Error::numerical("SVD did not converge"))?;
    let r = sigma.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let mut su = DMatrix::<T>::zeros(u.nrows(), r);
    let mut sv = DMatrix::<T>::zeros(r, v_t.ncols());
    let mut s = RVec::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = sigma[src];
        let mut col = u.column(src).into_owned();
        let mut row = v_t.row(src).into_owned();
        if let Some(pivot) = col.iter().find(|z| z.modulus() > 1e-12) {
            // phase = conj(pivot)/|pivot|; U ← U·phase, V† ← conj(phase)·V†
            let phase = pivot.conjugate().unscale(pivot.modulus());
            col *= phase;
            row *= phase.conjugate();
        }
        su.set_column(dst, &col);
        sv.set_row(dst, &row);
    }
    Ok(Svd {
        u: su,
        singular_values: s,
        v_t: sv,
    })
}

/// Spectral summary of a thresholded solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankInfo {
    /// Number of singular values above `r_tol · σ_max`.
    pub effective_rank: usize,
    /// `σ_max / σ_min-retained`; infinite when nothing is retained.
    pub condition_number: f64,
    pub sigma_max: f64,
}

fn retained(s: &RVec, r_tol: f64) -> RankInfo {
    let sigma_max = s.iter().copied().fold(0.0f64, f64::max);
    let cut = r_tol * sigma_max;
    let kept: Vec<f64> = s.iter().copied().filter(|&x| x > cut && x > 0.0).collect();
    let condition_number = match kept.last() {
        Some(&min) => sigma_max / min,
        None => f64::INFINITY,
    };
    RankInfo {
        effective_rank: kept.len(),
        condition_number,
        sigma_max,
    }
}

fn check_tol(r_tol: f64) -> Result<()> {
    if !(r_tol >= 0.0) || !r_tol.is_finite() {
        return Err(Error::validation(format!(
            "relative tolerance must be a finite nonnegative number, got {r_tol}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Pinv<T: ComplexField<RealField = f64>> {
    pub matrix: DMatrix<T>,
    pub rank: RankInfo,
    pub singular_values: RVec,
}

/// Moore–Penrose pseudoinverse with singular values `σ_j ≤ r_tol·σ_1` zeroed.
pub fn pinv_thresholded<T>(m: &DMatrix<T>, r_tol: f64) -> Result<Pinv<T>>
where
    T: SvdScalar,
{
    check_tol(r_tol)?;
    let dec = svd(m)?;
    let rank = retained(&dec.singular_values, r_tol);
    let (rows, cols) = m.shape();
    let mut out = DMatrix::<T>::zeros(cols, rows);
    for k in 0..rank.effective_rank {
        let inv = T::from_real(1.0 / dec.singular_values[k]);
        let v = dec.v_t.row(k).adjoint();
        let u_h = dec.u.column(k).adjoint();
        out += (v * inv) * u_h;
    }
    Ok(Pinv {
        matrix: out,
        rank,
        singular_values: dec.singular_values,
    })
}

#[derive(Clone, Debug)]
pub struct LstsqSolution<T: ComplexField<RealField = f64>> {
    pub x: DVector<T>,
    pub rank: RankInfo,
    /// `‖m x − b‖₂`
    pub residual: f64,
}

/// `x = m⁺ b` with the thresholded pseudoinverse, without forming `m⁺`.
pub fn solve_thresholded<T>(m: &DMatrix<T>, b: &DVector<T>, r_tol: f64) -> Result<LstsqSolution<T>>
where
    T: SvdScalar,
{
    check_tol(r_tol)?;
    if m.nrows() != b.len() {
        return Err(Error::validation(format!(
            "right-hand side length {} does not match {} rows",
            b.len(),
            m.nrows()
        )));
    }
    let dec = svd(m)?;
    let rank = retained(&dec.singular_values, r_tol);
    let mut x = DVector::<T>::zeros(m.ncols());
    for k in 0..rank.effective_rank {
        let coeff = dec.u.column(k).dotc(b).unscale(dec.singular_values[k]);
        x += dec.v_t.row(k).adjoint() * coeff;
    }
    let residual = (m * &x - b).norm();
    Ok(LstsqSolution { x, rank, residual })
}

/// Numerical rank with relative tolerance `r_tol`.
pub fn rank<T>(m: &DMatrix<T>, r_tol: f64) -> Result<usize>
where
    T: SvdScalar,
{
    let dec = svd(m)?;
    Ok(retained(&dec.singular_values, r_tol).effective_rank)
}

pub fn flatten(p: &CMat, conv: FlattenConvention) -> CVec {
    match conv {
        FlattenConvention::ColumnMajor => CVec::from_column_slice(p.as_slice()),
        FlattenConvention::RowMajor => CVec::from_iterator(
            p.len(),
            (0..p.nrows()).flat_map(|i| (0..p.ncols()).map(move |j| p[(i, j)])),
        ),
    }
}

pub fn unflatten(v: &CVec, rows: usize, cols: usize, conv: FlattenConvention) -> Result<CMat> {
    if v.len() != rows * cols {
        return Err(Error::validation(format!(
            "cannot reshape a vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(match conv {
        FlattenConvention::ColumnMajor => CMat::from_column_slice(rows, cols, v.as_slice()),
        FlattenConvention::RowMajor => CMat::from_row_slice(rows, cols, v.as_slice()),
    })
}

/// Column-major flatten, the convention used throughout propagation.
pub fn vec(p: &CMat) -> CVec {
    flatten(p, FlattenConvention::ColumnMajor)
}

/// Inverse of [`vec`] for a square `n × n` matrix.
pub fn unvec(v: &CVec, n: usize) -> CMat {
    CMat::from_column_slice(n, n, v.as_slice())
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().copied().sum()
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}
