//! Delay propagation of the one-electron reduced density `Q(t)`.
//!
//! With `q_ℓ(t) = (vec Q(t), vec Q(t−k), …, vec Q(t−ℓk))` and the stacked
//! operator `M(t)` whose blocks are `B̃ (C_mᵀ ⊗ A_m)`, `m = jk`, where
//! `C_m = U_{t−1}⋯U_{t−m}` and `A_m = C_m†`, the full density satisfies
//! `M(t) vec P(t) = q_ℓ(t)`. The constrained scheme solves for `P(t)` in real
//! Hermitian coordinates with the trace pinned and known zeros removed, then
//! advances `Q(t+Δt) = B̃ vec(U_t P̂ U_t†)`.
//!
//! Because every block of `M(t)` maps Hermitian matrices to Hermitian `K × K`
//! matrices, the complex system restricted to real coordinates is solved as
//! an equivalent real least-squares problem: each `K × K` block contributes
//! its diagonal and `√2`-scaled real and imaginary upper entries, which keeps
//! the residual norm identical to the complex one.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;

use crate::ci_model::BTensor;
use crate::delay_core::DelayConfig;
use crate::error::{Error, Result};
use crate::numkit::{self, CMat, CVec, RMat, RVec, C64};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Real coordinates of `N × N` Hermitian matrices: `N` diagonal indicators,
/// then symmetric pairs `E_ij + E_ji`, then antisymmetric pairs
/// `i E_ij − i E_ji`, with `i < j` enumerated row-wise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HermitianBasis {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl HermitianBasis {
    pub fn new(n: usize) -> Self {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        HermitianBasis { n, pairs }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn diagonal_index(&self, i: usize) -> usize {
        i
    }

    pub fn symmetric_index(&self, pair: usize) -> usize {
        self.n + pair
    }

    pub fn antisymmetric_index(&self, pair: usize) -> usize {
        self.n + self.pairs.len() + pair
    }

    /// The basis matrix `S^j` (0-based `j`).
    pub fn element(&self, j: usize) -> CMat {
        let mut x = RVec::zeros(self.len());
        x[j] = 1.0;
        self.matrix(&x)
    }

    /// `Σ_j x_j S^j`.
    pub fn matrix(&self, x: &RVec) -> CMat {
        let n = self.n;
        let mut z = CMat::zeros(n, n);
        for i in 0..n {
            z[(i, i)] = C64::new(x[i], 0.0);
        }
        let np = self.pairs.len();
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let v = C64::new(x[n + p], x[n + np + p]);
            z[(i, j)] = v;
            z[(j, i)] = v.conj();
        }
        z
    }

    /// Coordinates of a Hermitian matrix (reads the diagonal and upper triangle).
    pub fn coords(&self, z: &CMat) -> RVec {
        let n = self.n;
        let np = self.pairs.len();
        let mut x = RVec::zeros(self.len());
        for i in 0..n {
            x[i] = z[(i, i)].re;
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            x[n + p] = z[(i, j)].re;
            x[n + np + p] = z[(i, j)].im;
        }
        x
    }

    /// `S̃` with column `j` equal to `vec(S^j)`.
    pub fn s_tilde(&self) -> CMat {
        let mut s = CMat::zeros(self.len(), self.len());
        for j in 0..self.len() {
            s.set_column(j, &numkit::vec(&self.element(j)));
        }
        s
    }

    /// `X S̃` for any `X` with `N²` columns, using the sparsity of `S̃`.
    pub fn right_apply(&self, x: &CMat) -> CMat {
        let n = self.n;
        let np = self.pairs.len();
        let i_unit = C64::new(0.0, 1.0);
        let mut out = CMat::zeros(x.nrows(), self.len());
        for i in 0..n {
            out.set_column(i, &x.column(i + i * n));
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let ij = x.column(i + j * n);
            let ji = x.column(j + i * n);
            out.set_column(n + p, &(ij + ji));
            out.set_column(n + np + p, &((ij - ji) * i_unit));
        }
        out
    }
}

pub fn build_hermitian_basis(n_c: usize) -> HermitianBasis {
    HermitianBasis::new(n_c)
}

/// Known structure of the full density: fixed trace and identically zero entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    n: usize,
    trace_value: f64,
    zero_pairs: BTreeSet<(usize, usize)>,
    pivot: usize,
    deleted: Vec<usize>,
    kept: Vec<usize>,
}

impl ConstraintSpec {
    /// `zero_pairs` are 0-based `(i, j)`; order within a pair is irrelevant.
    pub fn new(n_c: usize, trace_value: f64, zero_pairs: &[(usize, usize)]) -> Result<Self> {
        if n_c == 0 {
            return Err(Error::validation("dimension must be positive"));
        }
        if !trace_value.is_finite() {
            return Err(Error::validation("trace value must be finite"));
        }
        let basis = HermitianBasis::new(n_c);
        let mut set = BTreeSet::new();
        for &(a, b) in zero_pairs {
            if a >= n_c || b >= n_c {
                return Err(Error::validation(format!(
                    "zero pair ({}, {}) outside {n_c}x{n_c}",
                    a + 1,
                    b + 1
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut deleted = BTreeSet::new();
        for &(i, j) in &set {
            if i == j {
                deleted.insert(basis.diagonal_index(i));
            } else {
                let p = basis
                    .pairs()
                    .iter()
                    .position(|&q| q == (i, j))
                    .expect("pair enumerated");
                deleted.insert(basis.symmetric_index(p));
                deleted.insert(basis.antisymmetric_index(p));
            }
        }
        let pivot = (0..n_c)
            .rev()
            .find(|&i| !deleted.contains(&i))
            .ok_or_else(|| Error::validation("every diagonal entry is declared zero; the trace cannot be fixed"))?;
        let kept = (0..n_c * n_c)
            .filter(|j| *j != pivot && !deleted.contains(j))
            .collect();
        Ok(ConstraintSpec {
            n: n_c,
            trace_value,
            zero_pairs: set,
            pivot,
            deleted: deleted.into_iter().collect(),
            kept,
        })
    }

    /// Trace one and no zeros.
    pub fn trace_only(n_c: usize) -> Self {
        Self::new(n_c, 1.0, &[]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn trace_value(&self) -> f64 {
        self.trace_value
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn deleted(&self) -> &[usize] {
        &self.deleted
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn zero_pairs(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.zero_pairs.iter()
    }

    /// Number of unknowns after elimination, `N² − 1 − D`.
    pub fn free_count(&self) -> usize {
        self.kept.len()
    }

    /// Full coordinates from the reduced unknowns: zeros reinserted and the
    /// pivot set so the diagonal sums to the trace value.
    pub fn reconstruct(&self, x_minus: &RVec) -> RVec {
        let mut x = RVec::zeros(self.n * self.n);
        for (v, &j) in x_minus.iter().zip(&self.kept) {
            x[j] = *v;
        }
        let others: f64 = (0..self.n).filter(|&i| i != self.pivot).map(|i| x[i]).sum();
        x[self.pivot] = self.trace_value - others;
        x
    }

    /// Drop the pivot and zero coordinates.
    pub fn reduce(&self, x: &RVec) -> RVec {
        RVec::from_iterator(self.kept.len(), self.kept.iter().map(|&j| x[j]))
    }
}

/// Eliminate the trace pivot and zero columns from `M S̃`.
///
/// Returns `M''` and `b_ℓ = q_hist − trace_value · (M S̃)[:, pivot]`.
pub fn assemble_constrained_system(
    m: &CMat,
    basis: &HermitianBasis,
    spec: &ConstraintSpec,
    q_hist: &CVec,
) -> Result<(CMat, CVec)> {
    if basis.dim() != spec.dim() || m.ncols() != basis.len() {
        return Err(Error::validation(format!(
            "operator has {} columns but the basis has {} and the spec {}",
            m.ncols(),
            basis.len(),
            spec.dim() * spec.dim()
        )));
    }
    if q_hist.len() != m.nrows() {
        return Err(Error::validation("history length does not match operator rows"));
    }
    let ms = basis.right_apply(m);
    Ok(eliminate(&ms, spec, q_hist))
}

fn eliminate<T>(ms: &nalgebra::DMatrix<T>, spec: &ConstraintSpec, rhs: &nalgebra::DVector<T>) -> (nalgebra::DMatrix<T>, nalgebra::DVector<T>)
where
    T: nalgebra::ComplexField<RealField = f64> + Copy,
{
    let pivot_col = ms.column(spec.pivot()).into_owned();
    let mut out = nalgebra::DMatrix::<T>::zeros(ms.nrows(), spec.free_count());
    for (dst, &j) in spec.kept().iter().enumerate() {
        if j < spec.dim() {
            out.set_column(dst, &(ms.column(j) - &pivot_col));
        } else {
            out.set_column(dst, &ms.column(j));
        }
    }
    let b = rhs - pivot_col * T::from_real(spec.trace_value());
    (out, b)
}

/// Real rows of a stack of `K²`-row blocks acting on Hermitian data:
/// per block, `Re` of diagonal rows then `√2 Re` and `√2 Im` of each
/// upper-triangular row.
pub fn hermitian_rows(m: &CMat, k: usize) -> RMat {
    let kk = k * k;
    let blocks = m.nrows() / kk;
    let per_block = kk;
    let mut out = RMat::zeros(blocks * per_block, m.ncols());
    for blk in 0..blocks {
        let base = blk * kk;
        let dst = blk * per_block;
        let mut r = 0;
        for b in 0..k {
            let row = m.row(base + b + b * k);
            out.set_row(dst + r, &row.map(|z| z.re));
            r += 1;
        }
        for b in 0..k {
            for c in b + 1..k {
                let row = m.row(base + b + c * k);
                out.set_row(dst + r, &row.map(|z| z.re * SQRT2));
                out.set_row(dst + r + 1, &row.map(|z| z.im * SQRT2));
                r += 2;
            }
        }
    }
    out
}

/// Solve in Hermitian coordinates or directly for `vec P`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    #[default]
    Constrained,
    Raw,
}

impl std::str::FromStr for PropagationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(PropagationMode::Constrained),
            "raw" => Ok(PropagationMode::Raw),
            other => Err(Error::validation(format!("unknown mode '{other}'"))),
        }
    }
}

/// What one step reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// Time of the reconstructed `P̂`, i.e. the step's left endpoint.
    pub t: f64,
    pub residual: f64,
    pub effective_rank: usize,
    pub columns: usize,
    pub condition_number: f64,
    /// `tr Q(t+Δt)`.
    pub trace_q: f64,
    /// `max |P̂ − P̂†|`.
    pub hermiticity_defect: f64,
    pub trace_p: f64,
    /// Smallest eigenvalue of `P̂`; negative means `P̂` is not PSD.
    pub min_eigenvalue_p: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub q_next: CMat,
    pub p_hat: CMat,
    pub diagnostics: StepDiagnostics,
}

/// Propagator state: `B̃`, constraint data and ring buffers of past `Q` and `U`.
#[derive(Clone, Debug)]
pub struct DelayPropagator {
    b: Arc<BTensor>,
    basis: HermitianBasis,
    spec: ConstraintSpec,
    cfg: DelayConfig,
    mode: PropagationMode,
    dt: f64,
    /// Index of the latest `Q` in `history`.
    t_index: usize,
    history: VecDeque<CMat>,
    unitaries: VecDeque<Arc<CMat>>,
}

impl DelayPropagator {
    pub fn new(
        b: Arc<BTensor>,
        cfg: DelayConfig,
        spec: ConstraintSpec,
        mode: PropagationMode,
        dt: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        if spec.dim() != b.n_configs() {
            return Err(Error::validation(format!(
                "constraint spec is for {} configurations, tensor has {}",
                spec.dim(),
                b.n_configs()
            )));
        }
        Ok(DelayPropagator {
            basis: HermitianBasis::new(b.n_configs()),
            b,
            spec,
            cfg,
            mode,
            dt,
            t_index: 0,
            history: VecDeque::new(),
            unitaries: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &DelayConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    pub fn basis(&self) -> &HermitianBasis {
        &self.basis
    }

    pub fn mode(&self) -> PropagationMode {
        self.mode
    }

    /// Time index of the latest `Q`.
    pub fn t_index(&self) -> usize {
        self.t_index
    }

    pub fn current_q(&self) -> Option<&CMat> {
        self.history.front()
    }

    /// Seed with `Q(0…t₀)` and `U_0 … U_{t₀−1}`; only the last `ℓk+1` and `ℓk`
    /// are retained.
    pub fn warm_start(&mut self, qs: &[CMat], unitaries: &[Arc<CMat>]) -> Result<()> {
        if qs.is_empty() || unitaries.len() + 1 != qs.len() {
            return Err(Error::validation(format!(
                "warm start needs n+1 densities and n unitaries, got {} and {}",
                qs.len(),
                unitaries.len()
            )));
        }
        if qs.len() < self.cfg.depth() + 1 {
            return Err(Error::InsufficientHistory {
                required: self.cfg.depth(),
                available: qs.len() - 1,
            });
        }
        let depth = self.cfg.depth();
        self.history = qs.iter().rev().take(depth + 1).cloned().collect();
        self.unitaries = unitaries.iter().rev().take(depth).cloned().collect();
        self.t_index = qs.len() - 1;
        Ok(())
    }

    fn require_warm(&self) -> Result<()> {
        let need = self.cfg.depth();
        if self.history.len() < need + 1 || self.unitaries.len() < need {
            return Err(Error::InsufficientHistory {
                required: need,
                available: self.unitaries.len().min(self.history.len().saturating_sub(1)),
            });
        }
        Ok(())
    }

    /// `M(t)`, `(ℓ+1)K² × N_C²`.
    pub fn build_m_blocks(&self) -> Result<CMat> {
        self.require_warm()?;
        let bt = self.b.matricized();
        let kk = bt.nrows();
        let nc = self.b.n_configs();
        let k = self.b.n_orbitals();
        let mut out = CMat::zeros((self.cfg.ell + 1) * kk, nc * nc);
        out.view_mut((0, 0), (kk, nc * nc)).copy_from(bt);
        let mut c_m = CMat::identity(nc, nc);
        for m in 1..=self.cfg.depth() {
            c_m = &c_m * self.unitaries[m - 1].as_ref();
            if m % self.cfg.stride != 0 {
                continue;
            }
            let j = m / self.cfg.stride;
            // Row r of B̃ (C_mᵀ ⊗ A_m) is vec(A_mᵀ Y_r C_mᵀ)ᵀ with Y_r = unvec(row r of B̃).
            let a_t = c_m.conjugate();
            let c_t = c_m.transpose();
            for c in 0..k {
                for b in 0..k {
                    let r = b + c * k;
                    let y = &a_t * self.b.slice(b, c) * &c_t;
                    for (col, v) in y.iter().enumerate() {
                        out[(j * kk + r, col)] = *v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `(vec Q(t), vec Q(t−k), …, vec Q(t−ℓk))`.
    pub fn stacked_history(&self) -> Result<CVec> {
        self.require_warm()?;
        let k = self.b.n_orbitals();
        let kk = k * k;
        let mut out = CVec::zeros((self.cfg.ell + 1) * kk);
        for j in 0..=self.cfg.ell {
            out.rows_mut(j * kk, kk)
                .copy_from(&numkit::vec(&self.history[j * self.cfg.stride]));
        }
        Ok(out)
    }

    /// Solve for `P̂(t)` from the current history.
    pub fn reconstruct_p(&self) -> Result<(CMat, f64, numkit::RankInfo, usize)> {
        let m = self.build_m_blocks()?;
        let q = self.stacked_history()?;
        let nc = self.b.n_configs();
        match self.mode {
            PropagationMode::Constrained => {
                let (mc, bc) = assemble_constrained_system(&m, &self.basis, &self.spec, &q)?;
                let k = self.b.n_orbitals();
                let mr = hermitian_rows(&mc, k);
                let br = hermitian_rows(&CMat::from_column_slice(bc.len(), 1, bc.as_slice()), k);
                let br = br.column(0).into_owned();
                let sol = numkit::solve_thresholded(&mr, &br, self.cfg.r_tol)?;
                let x = self.spec.reconstruct(&sol.x);
                Ok((self.basis.matrix(&x), sol.residual, sol.rank, mr.ncols()))
            }
            PropagationMode::Raw => {
                let sol = numkit::solve_thresholded(&m, &q, self.cfg.r_tol)?;
                Ok((numkit::unvec(&sol.x, nc), sol.residual, sol.rank, m.ncols()))
            }
        }
    }

    /// Advance with the step unitary `U_t = exp(−i H(t) Δt)`.
    pub fn step_with_unitary(&mut self, u_t: Arc<CMat>) -> Result<StepOutput> {
        let (p_hat, residual, rank, columns) = self
            .reconstruct_p()
            .map_err(|e| e.at_step(self.t_index))?;
        let evolved = u_t.as_ref() * &p_hat * u_t.adjoint();
        let q_next = crate::ci_model::reduce_density(&evolved, &self.b)?;
        if q_next.iter().any(|z| !z.is_finite()) {
            return Err(Error::numerical("propagated density is not finite").at_step(self.t_index));
        }
        let min_eig = numkit::hermitian_eigenvalues(&((&p_hat + p_hat.adjoint()) * C64::new(0.5, 0.0)))
            .map(|ev| ev[ev.len() - 1])
            .unwrap_or(f64::NAN);
        let diagnostics = StepDiagnostics {
            t: self.t_index as f64 * self.dt,
            residual,
            effective_rank: rank.effective_rank,
            columns,
            condition_number: rank.condition_number,
            trace_q: numkit::trace(&q_next).re,
            hermiticity_defect: numkit::hermiticity_defect(&p_hat),
            trace_p: numkit::trace(&p_hat).re,
            min_eigenvalue_p: min_eig,
        };
        self.push(q_next.clone(), u_t);
        Ok(StepOutput {
            q_next,
            p_hat,
            diagnostics,
        })
    }

    /// Advance with the Hamiltonian `H(t)`.
    pub fn step(&mut self, h_t: &CMat, dt: f64) -> Result<StepOutput> {
        let u = numkit::step_unitary(h_t, dt)?;
        self.step_with_unitary(Arc::new(u))
    }

    fn push(&mut self, q: CMat, u: Arc<CMat>) {
        let depth = self.cfg.depth();
        self.history.push_front(q);
        self.history.truncate(depth + 1);
        self.unitaries.push_front(u);
        self.unitaries.truncate(depth);
        self.t_index += 1;
    }
}

/// Result of the `ℓ = 1` rank test on `[B̃; D₁]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchurReport {
    /// Columns `G` (0-based) with `B̃^G` invertible.
    pub selected_columns: Vec<usize>,
    pub schur_rank: usize,
    /// `rank(D₁^{−G} − D₁^G (B̃^G)⁻¹ B̃^{−G}) = K²`, which gives `rank M = 2K²`.
    pub condition_holds: bool,
    /// Rank of the stacked matrix by direct SVD.
    pub stacked_rank: usize,
}

/// Greedy column-pivoted Gram–Schmidt selection of `count` columns.
fn pivoted_columns(a: &CMat, count: usize) -> Vec<usize> {
    let mut work = a.clone();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let (best, norm) = (0..work.ncols())
            .filter(|j| !chosen.contains(j))
            .map(|j| (j, work.column(j).norm()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best == usize::MAX || norm <= 0.0 {
            break;
        }
        chosen.push(best);
        let q = work.column(best) / C64::new(norm, 0.0);
        for j in 0..work.ncols() {
            let proj = q.dotc(&work.column(j));
            let updated = work.column(j) - &q * proj;
            work.set_column(j, &updated);
        }
    }
    chosen
}

pub fn schur_rank_check(b_tilde: &CMat, d1: &CMat, r_tol: f64) -> Result<SchurReport> {
    let (kk, n2) = b_tilde.shape();
    if d1.shape() != (kk, n2) {
        return Err(Error::validation("D₁ must have the shape of B̃"));
    }
    if 2 * kk > n2 {
        return Err(Error::validation("need 2K² ≤ N_C²"));
    }
    if numkit::rank(b_tilde, r_tol)? < kk {
        return Err(Error::validation("B̃ does not have full row rank"));
    }
    let g = pivoted_columns(b_tilde, kk);
    let rest: Vec<usize> = (0..n2).filter(|j| !g.contains(j)).collect();
    let bg = b_tilde.select_columns(&g);
    let brest = b_tilde.select_columns(&rest);
    let dg = d1.select_columns(&g);
    let drest = d1.select_columns(&rest);
    let bg_inv = bg
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::numerical("selected block of B̃ is singular"))?;
    let schur = drest - dg * bg_inv * brest;
    let scale = b_tilde.norm().max(d1.norm());
    let dec = numkit::svd(&schur)?;
    let schur_rank = dec
        .singular_values
        .iter()
        .filter(|&&s| s > r_tol * scale)
        .count();
    let mut stacked = CMat::zeros(2 * kk, n2);
    stacked.view_mut((0, 0), (kk, n2)).copy_from(b_tilde);
    stacked.view_mut((kk, 0), (kk, n2)).copy_from(d1);
    Ok(SchurReport {
        selected_columns: g,
        schur_rank,
        condition_holds: schur_rank == kk,
        stacked_rank: numkit::rank(&stacked, r_tol)?,
    })
}

/// Coefficients that stay below `tol` over a reference run, and the zero
/// pattern they induce in `P = a a†`. Only a proposal; nothing is applied.
pub fn detect_zero_pattern(coefficients: &[CVec], tol: f64) -> Vec<(usize, usize)> {
    let n = coefficients.first().map_or(0, |a| a.len());
    let silent: Vec<usize> = (0..n)
        .filter(|&j| coefficients.iter().all(|a| a[j].norm() < tol))
        .collect();
    let mut pairs = BTreeSet::new();
    for &s in &silent {
        for i in 0..n {
            pairs.insert((i.min(s), i.max(s)));
        }
    }
    pairs.into_iter().collect()
}
