//! Delay embedding for partially observed linear systems.
//!
//! A full state evolves as `z(t+1) = A(t) z(t)` and only `y(t) = R z(t)` is
//! observed. Stacking `Y_ℓ(t) = (y(t), y(t−k), …, y(t−ℓk))` gives
//! `Y_ℓ(t) = M(t) z(t)`, so `y(t+1) = R A(t) M(t)⁺ Y_ℓ(t)` is a closed
//! equation in the observed variable alone. The Mori–Zwanzig form of the same
//! dynamics is provided for comparison.

use std::collections::VecDeque;
use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::numkit::{self, CMat, CVec, C64};

const UNITARY_TOL: f64 = 1e-12;
const INVERSE_COND_LIMIT: f64 = 1e12;

/// Memory depth `ℓ`, stride `k` and pseudoinverse tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayConfig {
    pub ell: usize,
    pub stride: usize,
    pub r_tol: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            ell: 0,
            stride: 1,
            r_tol: 1e-12,
        }
    }
}

impl DelayConfig {
    pub fn new(ell: usize, stride: usize, r_tol: f64) -> Result<Self> {
        let cfg = DelayConfig { ell, stride, r_tol };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::validation("stride must be at least 1"));
        }
        if !(self.r_tol >= 0.0 && self.r_tol.is_finite()) {
            return Err(Error::validation("r_tol must be a finite nonnegative number"));
        }
        Ok(())
    }

    /// Number of past steps the scheme looks back, `ℓ·k`.
    pub fn depth(&self) -> usize {
        self.ell * self.stride
    }

    /// `k·ℓ·Δt`.
    pub fn total_memory(&self, dt: f64) -> f64 {
        self.depth() as f64 * dt
    }
}

/// A sequence of invertible step propagators `A(0), A(1), …`.
///
/// The backward operator (`A†` for unitary systems, otherwise `A⁻¹`) is
/// computed once per step at construction.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    dim: usize,
    unitary: bool,
    forward: Vec<Arc<CMat>>,
    backward: Vec<Arc<CMat>>,
}

fn backward_of(a: &CMat, unitary: bool) -> Result<CMat> {
    if unitary {
        let defect = numkit::unitarity_defect(a);
        if defect > UNITARY_TOL * a.nrows() as f64 {
            return Err(Error::validation(format!(
                "propagator flagged unitary has ‖A†A − I‖_F = {defect:.3e}"
            )));
        }
        return Ok(a.adjoint());
    }
    let s = numkit::svd(a)?.singular_values;
    let cond = s[0] / s[s.len() - 1];
    if !(cond <= INVERSE_COND_LIMIT) {
        return Err(Error::numerical(format!(
            "propagator condition number {cond:.3e} exceeds {INVERSE_COND_LIMIT:.0e}"
        )));
    }
    a.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::numerical("propagator is singular"))
}

impl LinearSystem {
    pub fn new(steps: Vec<CMat>, unitary: bool) -> Result<Self> {
        let dim = steps
            .first()
            .map(|a| a.nrows())
            .ok_or_else(|| Error::validation("linear system needs at least one step"))?;
        let mut forward = Vec::with_capacity(steps.len());
        let mut backward = Vec::with_capacity(steps.len());
        for (t, a) in steps.into_iter().enumerate() {
            if a.shape() != (dim, dim) {
                return Err(Error::validation(format!("A({t}) is not {dim}x{dim}")));
            }
            backward.push(Arc::new(backward_of(&a, unitary).map_err(|e| e.at_step(t))?));
            forward.push(Arc::new(a));
        }
        Ok(LinearSystem {
            dim,
            unitary,
            forward,
            backward,
        })
    }

    /// The same propagator at every one of `steps` steps, stored once.
    pub fn constant(a: CMat, steps: usize, unitary: bool) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::validation("propagator must be square and nonempty"));
        }
        let back = Arc::new(backward_of(&a, unitary)?);
        let fwd = Arc::new(a);
        Ok(LinearSystem {
            dim: fwd.nrows(),
            unitary,
            forward: vec![fwd; steps],
            backward: vec![back; steps],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn step(&self, t: usize) -> &CMat {
        &self.forward[t]
    }

    pub fn backward(&self, t: usize) -> &Arc<CMat> {
        &self.backward[t]
    }

    /// `z(0), z(1), …, z(n)` by direct propagation.
    pub fn trajectory(&self, z0: &CVec, n: usize) -> Vec<CVec> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(z0.clone());
        for t in 0..n {
            let next = self.step(t) * &out[t];
            out.push(next);
        }
        out
    }
}

/// Observation matrix `R` of full row rank `m < n`.
#[derive(Clone, Debug)]
pub struct ReductionMap {
    r: CMat,
}

impl ReductionMap {
    pub fn new(r: CMat) -> Result<Self> {
        let (m, n) = r.shape();
        if m == 0 || m >= n {
            return Err(Error::validation(format!(
                "reduction must be m x n with 0 < m < n, got {m}x{n}"
            )));
        }
        let rank = numkit::rank(&r, 1e-12)?;
        if rank != m {
            return Err(Error::validation(format!("reduction has rank {rank}, expected {m}")));
        }
        Ok(ReductionMap { r })
    }

    /// Square observations are allowed here; used for the `m = n` limit.
    pub fn square(r: CMat) -> Result<Self> {
        if !r.is_square() || numkit::rank(&r, 1e-12)? != r.nrows() {
            return Err(Error::validation("square reduction must be invertible"));
        }
        Ok(ReductionMap { r })
    }

    pub fn matrix(&self) -> &CMat {
        &self.r
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    pub fn n(&self) -> usize {
        self.r.ncols()
    }

    pub fn apply(&self, z: &CVec) -> CVec {
        &self.r * z
    }
}

/// The last `ℓk` backward operators and the last `ℓk + 1` observations,
/// most recent first.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    depth: usize,
    backward: VecDeque<Arc<CMat>>,
    ys: VecDeque<CVec>,
}

impl HistoryBuffer {
    pub fn new(cfg: &DelayConfig, y0: CVec) -> Self {
        let depth = cfg.depth();
        let mut ys = VecDeque::with_capacity(depth + 1);
        ys.push_front(y0);
        HistoryBuffer {
            depth,
            backward: VecDeque::with_capacity(depth),
            ys,
        }
    }

    /// Record the step `t → t+1`: the backward operator of `A(t)` and `y(t+1)`.
    pub fn advance(&mut self, backward: Arc<CMat>, y_next: CVec) {
        self.backward.push_front(backward);
        self.backward.truncate(self.depth);
        self.ys.push_front(y_next);
        self.ys.truncate(self.depth + 1);
    }

    pub fn is_warm(&self) -> bool {
        self.backward.len() == self.depth && self.ys.len() == self.depth + 1
    }

    pub fn latest(&self) -> &CVec {
        &self.ys[0]
    }

    pub fn len_propagators(&self) -> usize {
        self.backward.len()
    }

    /// `(y(t), y(t−k), …, y(t−ℓk))` stacked.
    pub fn stacked(&self, cfg: &DelayConfig) -> Result<CVec> {
        self.require(cfg)?;
        let blocks: Vec<&CVec> = (0..=cfg.ell).map(|j| &self.ys[j * cfg.stride]).collect();
        let m = blocks[0].len();
        let mut out = CVec::zeros(m * blocks.len());
        for (j, y) in blocks.iter().enumerate() {
            out.rows_mut(j * m, m).copy_from(y);
        }
        Ok(out)
    }

    fn require(&self, cfg: &DelayConfig) -> Result<()> {
        let need = cfg.depth();
        if self.backward.len() < need || self.ys.len() < need + 1 {
            return Err(Error::InsufficientHistory {
                required: need,
                available: self.backward.len().min(self.ys.len().saturating_sub(1)),
            });
        }
        Ok(())
    }
}

/// Stacked observation operator with blocks `R·A(t−jk)†⋯A(t−1)†`, `j = 0…ℓ`.
pub fn build_m(history: &HistoryBuffer, r: &ReductionMap, cfg: &DelayConfig) -> Result<CMat> {
    history.require(cfg)?;
    let (m, n) = (r.m(), r.n());
    let mut out = CMat::zeros((cfg.ell + 1) * m, n);
    out.view_mut((0, 0), (m, n)).copy_from(r.matrix());
    let mut g = CMat::identity(n, n);
    for step in 1..=cfg.depth() {
        g = history.backward[step - 1].as_ref() * &g;
        if step % cfg.stride == 0 {
            let j = step / cfg.stride;
            out.view_mut((j * m, 0), (m, n)).copy_from(&(r.matrix() * &g));
        }
    }
    Ok(out)
}

/// Per-step solve diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveDiagnostics {
    pub effective_rank: usize,
    pub columns: usize,
    pub condition_number: f64,
    pub residual: f64,
}

impl SolveDiagnostics {
    pub fn full_rank(&self) -> bool {
        self.effective_rank == self.columns
    }
}

/// `y(t+1) = R A(t) M(t)⁺ Y_ℓ(t)`.
pub fn propagate_y(
    history: &HistoryBuffer,
    r: &ReductionMap,
    a_t: &CMat,
    cfg: &DelayConfig,
) -> Result<(CVec, SolveDiagnostics)> {
    let m_mat = build_m(history, r, cfg)?;
    let rhs = history.stacked(cfg)?;
    let sol = numkit::solve_thresholded(&m_mat, &rhs, cfg.r_tol)?;
    let diag = SolveDiagnostics {
        effective_rank: sol.rank.effective_rank,
        columns: r.n(),
        condition_number: sol.rank.condition_number,
        residual: sol.residual,
    };
    if !diag.full_rank() {
        warn!(
            "delay operator has effective rank {} < {}; using least-squares reconstruction",
            diag.effective_rank,
            r.n()
        );
    }
    Ok((r.matrix() * (a_t * sol.x), diag))
}

/// Result of running [`propagate_y`] over a whole system.
#[derive(Clone, Debug)]
pub struct DelayRun {
    pub ys: Vec<CVec>,
    pub diagnostics: Vec<SolveDiagnostics>,
}

/// Observe `z(0…ℓk)` directly, then advance with the delay equation to `n_steps`.
pub fn run_delay(
    system: &LinearSystem,
    r: &ReductionMap,
    z0: &CVec,
    n_steps: usize,
    cfg: &DelayConfig,
) -> Result<DelayRun> {
    cfg.validate()?;
    if system.len() < n_steps {
        return Err(Error::validation(format!(
            "system has {} propagators, {n_steps} steps requested",
            system.len()
        )));
    }
    let warm = cfg.depth().min(n_steps);
    let truth = system.trajectory(z0, warm);
    let mut history = HistoryBuffer::new(cfg, r.apply(&truth[0]));
    let mut ys = vec![r.apply(&truth[0])];
    for t in 0..warm {
        let y = r.apply(&truth[t + 1]);
        history.advance(system.backward(t).clone(), y.clone());
        ys.push(y);
    }
    let mut diagnostics = Vec::with_capacity(n_steps - warm);
    for t in warm..n_steps {
        let (y, d) = propagate_y(&history, r, system.step(t), cfg).map_err(|e| e.at_step(t))?;
        history.advance(system.backward(t).clone(), y.clone());
        ys.push(y);
        diagnostics.push(d);
    }
    Ok(DelayRun { ys, diagnostics })
}

/// Rows spanning the orthogonal complement of `R`'s row space, orthonormal.
pub fn complete_reduction_basis(r: &ReductionMap) -> Result<CMat> {
    let (m, n) = (r.m(), r.n());
    let mut padded = CMat::zeros(n, n);
    padded.view_mut((0, 0), (m, n)).copy_from(r.matrix());
    let dec = numkit::svd(&padded)?;
    let cut = 1e-12 * dec.singular_values[0];
    let rank = dec.singular_values.iter().filter(|&&s| s > cut).count();
    if rank != m {
        return Err(Error::validation(format!("reduction has rank {rank}, expected {m}")));
    }
    Ok(dec.v_t.rows(m, n - m).into_owned())
}

/// How much of the memory sum the Mori–Zwanzig propagator keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MemoryTruncation {
    #[default]
    Full,
    /// At step `t` keep only the `⌈t/2⌉` most recent memory terms.
    RecentHalf,
    /// Keep at most this many of the most recent memory terms.
    Window(usize),
}

#[derive(Clone, Debug)]
pub struct MzOptions {
    /// Rows completing `R` to an invertible matrix; orthonormal complement if `None`.
    pub completion: Option<CMat>,
    pub truncation: MemoryTruncation,
}

impl Default for MzOptions {
    fn default() -> Self {
        MzOptions {
            completion: None,
            truncation: MemoryTruncation::Full,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MzTrajectory {
    pub ys: Vec<CVec>,
    /// First step at which `‖y(t)‖ > 10³‖y(0)‖`.
    pub diverged_at: Option<usize>,
}

impl MzTrajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// `y(t+1) = B₁₁y(t) + Σ_{s<t} B₁₂B₂₂ˢB₂₁y(t−1−s) + B₁₂B₂₂ᵗỹ(0)` for a
/// constant propagator `a`, with `B = 𝐑 a 𝐑⁻¹` and `𝐑 = [R; R̃]`.
pub fn mori_zwanzig_propagate(
    a: &CMat,
    r: &ReductionMap,
    y0: &CVec,
    ytilde0: &CVec,
    steps: usize,
    opts: &MzOptions,
) -> Result<MzTrajectory> {
    let (m, n) = (r.m(), r.n());
    if a.shape() != (n, n) || y0.len() != m || ytilde0.len() != n - m {
        return Err(Error::validation("Mori–Zwanzig inputs have inconsistent shapes"));
    }
    let completion = match &opts.completion {
        Some(c) => {
            if c.shape() != (n - m, n) {
                return Err(Error::validation(format!("completion must be {}x{n}", n - m)));
            }
            c.clone()
        }
        None => complete_reduction_basis(r)?,
    };
    let mut full = CMat::zeros(n, n);
    full.view_mut((0, 0), (m, n)).copy_from(r.matrix());
    full.view_mut((m, 0), (n - m, n)).copy_from(&completion);
    let s = numkit::svd(&full)?.singular_values;
    if !(s[n - 1] > 1e-12 * s[0]) {
        return Err(Error::validation("stacked reduction and completion is not invertible"));
    }
    let inv = full
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::validation("stacked reduction and completion is singular"))?;
    let b = &full * a * inv;
    let b11 = b.view((0, 0), (m, m)).into_owned();
    let b12 = b.view((0, m), (m, n - m)).into_owned();
    let b21 = b.view((m, 0), (n - m, m)).into_owned();
    let b22 = b.view((m, m), (n - m, n - m)).into_owned();

    // kernels[s] = B₁₂ B₂₂ˢ B₂₁; forcing = B₂₂ᵗ ỹ(0)
    let mut kernels: Vec<CMat> = Vec::with_capacity(steps);
    let mut power_b21 = b21.clone();
    let mut forcing = ytilde0.clone();
    let y0_norm = y0.norm();
    let mut ys = vec![y0.clone()];
    let mut diverged_at = None;
    for t in 0..steps {
        if t > 0 {
            kernels.push(&b12 * &power_b21);
            power_b21 = &b22 * power_b21;
        }
        let keep = match opts.truncation {
            MemoryTruncation::Full => t,
            MemoryTruncation::RecentHalf => t.div_ceil(2),
            MemoryTruncation::Window(w) => w.min(t),
        };
        let mut next = &b11 * &ys[t] + &b12 * &forcing;
        for (s, kernel) in kernels.iter().enumerate().take(keep) {
            next += kernel * &ys[t - 1 - s];
        }
        forcing = &b22 * forcing;
        if diverged_at.is_none() && next.norm() > 1e3 * y0_norm {
            diverged_at = Some(t + 1);
        }
        ys.push(next);
    }
    Ok(MzTrajectory { ys, diverged_at })
}

/// Split `z` into `(R z, R̃ z)`.
pub fn split_state(r: &ReductionMap, completion: &CMat, z: &CVec) -> (CVec, CVec) {
    (r.apply(z), completion * z)
}

/// Diagonal unitary with the given phases.
pub fn diagonal_unitary(phases: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(
        phases.len(),
        phases.iter().map(|&p| C64::new(0.0, p).exp()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_complex, random_hermitian, random_unitary, rng, uniform};

    fn random_reduction(m: usize, n: usize, seed: u64) -> ReductionMap {
        ReductionMap::new(random_complex(m, n, &mut rng(seed))).unwrap()
    }

    fn random_system(n: usize, steps: usize, seed: u64) -> LinearSystem {
        let mut r = rng(seed);
        LinearSystem::new((0..steps).map(|_| random_unitary(n, &mut r)).collect(), true).unwrap()
    }

    fn history_from(system: &LinearSystem, r: &ReductionMap, z0: &CVec, upto: usize, cfg: &DelayConfig) -> HistoryBuffer {
        let traj = system.trajectory(z0, upto);
        let mut h = HistoryBuffer::new(cfg, r.apply(&traj[0]));
        for t in 0..upto {
            h.advance(system.backward(t).clone(), r.apply(&traj[t + 1]));
        }
        h
    }

    #[test]
    fn ell_zero_gives_r() {
        let r = random_reduction(2, 4, 1);
        let cfg = DelayConfig::new(0, 1, 1e-12).unwrap();
        let h = HistoryBuffer::new(&cfg, CVec::zeros(2));
        assert_eq!(build_m(&h, &r, &cfg).unwrap(), *r.matrix());
    }

    #[test]
    fn identity_dynamics_repeat_r() {
        let r = random_reduction(2, 4, 2);
        let system = LinearSystem::constant(CMat::identity(4, 4), 10, true).unwrap();
        let cfg = DelayConfig::new(3, 2, 1e-12).unwrap();
        let h = history_from(&system, &r, &CVec::zeros(4), 6, &cfg);
        let m = build_m(&h, &r, &cfg).unwrap();
        for j in 0..4 {
            assert_eq!(m.view((2 * j, 0), (2, 4)).into_owned(), *r.matrix());
        }
    }

    #[test]
    fn stacked_history_matches_back_propagation() {
        let (n, m) = (5, 2);
        let system = random_system(n, 20, 3);
        let r = random_reduction(m, n, 4);
        let z0 = random_complex(n, 1, &mut rng(5)).column(0).into_owned();
        let cfg = DelayConfig::new(3, 2, 1e-12).unwrap();
        let t = 12;
        let h = history_from(&system, &r, &z0, t, &cfg);
        let traj = system.trajectory(&z0, t);
        let lhs = build_m(&h, &r, &cfg).unwrap() * &traj[t];
        let mut want = CVec::zeros(m * 4);
        for j in 0..4 {
            want.rows_mut(j * m, m).copy_from(&r.apply(&traj[t - 2 * j]));
        }
        assert!((lhs - want).norm() < 1e-12);
    }

    #[test]
    fn insufficient_history_is_reported() {
        let r = random_reduction(2, 4, 6);
        let cfg = DelayConfig::new(2, 3, 1e-12).unwrap();
        let h = HistoryBuffer::new(&cfg, CVec::zeros(2));
        match build_m(&h, &r, &cfg) {
            Err(Error::InsufficientHistory { required, available }) => {
                assert_eq!((required, available), (6, 0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn square_reduction_without_memory() {
        let mut g = rng(7);
        let r = ReductionMap::square(random_complex(3, 3, &mut g)).unwrap();
        let a = random_unitary(3, &mut g);
        let cfg = DelayConfig::default();
        let y = random_complex(3, 1, &mut g).column(0).into_owned();
        let h = HistoryBuffer::new(&cfg, y.clone());
        let (next, _) = propagate_y(&h, &r, &a, &cfg).unwrap();
        let rinv = r.matrix().clone().try_inverse().unwrap();
        assert!((next - r.matrix() * &a * rinv * y).norm() < 1e-12);
    }

    #[test]
    fn delay_run_recovers_full_state_dynamics() {
        let (n, m) = (4, 2);
        let system = random_system(n, 60, 8);
        let r = random_reduction(m, n, 9);
        let z0 = random_complex(n, 1, &mut rng(10)).column(0).normalize();
        let cfg = DelayConfig::new(1, 1, 1e-12).unwrap();
        let run = run_delay(&system, &r, &z0, 60, &cfg).unwrap();
        let truth = system.trajectory(&z0, 60);
        for (t, y) in run.ys.iter().enumerate() {
            assert!((y - r.apply(&truth[t])).norm() < 1e-10, "step {t}");
        }
        assert!(run.diagnostics.iter().all(|d| d.full_rank()));
    }

    #[test]
    fn near_identity_steps_are_ill_conditioned_until_strided() {
        let (n, m) = (2, 1);
        let eps = 1e-8;
        let mut g = rng(11);
        let hmat = random_hermitian(n, &mut g);
        let a = numkit::matexp_hermitian(&hmat, C64::new(0.0, -eps)).unwrap();
        let r = random_reduction(m, n, 12);
        let z0 = random_complex(n, 1, &mut g).column(0).normalize();
        let solve = |stride: usize, r_tol: f64| {
            let system = LinearSystem::constant(a.clone(), stride, true).unwrap();
            let cfg = DelayConfig::new(1, stride, r_tol).unwrap();
            let mut h = HistoryBuffer::new(&cfg, r.apply(&z0));
            let mut z = z0.clone();
            for t in 0..stride {
                z = system.step(t) * z;
                h.advance(system.backward(t).clone(), r.apply(&z));
            }
            propagate_y(&h, &r, system.step(0), &cfg).unwrap().1
        };
        let short = solve(1, 1e-12);
        assert!(short.condition_number > 1e7, "{short:?}");
        let loose = solve(1, 1e-6);
        assert!(!loose.full_rank());
        let long = solve(1_000_000, 1e-12);
        assert!(long.full_rank() && long.condition_number < 1e4, "{long:?}");
    }

    #[test]
    fn completion_examples() {
        let mut r0 = CMat::zeros(2, 5);
        r0[(0, 0)] = C64::new(1.0, 0.0);
        r0[(1, 1)] = C64::new(1.0, 0.0);
        let r = ReductionMap::new(r0).unwrap();
        let c = complete_reduction_basis(&r).unwrap();
        assert!(c.columns(0, 2).norm() < 1e-14);
        assert_eq!(numkit::rank(&c.columns(2, 3).into_owned(), 1e-12).unwrap(), 3);

        let r = random_reduction(2, 5, 13);
        let c = complete_reduction_basis(&r).unwrap();
        let mut full = CMat::zeros(5, 5);
        full.view_mut((0, 0), (2, 5)).copy_from(r.matrix());
        full.view_mut((2, 0), (3, 5)).copy_from(&c);
        assert!(full.determinant().norm() > 1e-10);

        let q = random_unitary(5, &mut rng(14));
        let r = ReductionMap::new(q.rows(0, 2).into_owned()).unwrap();
        let c = complete_reduction_basis(&r).unwrap();
        full.view_mut((0, 0), (2, 5)).copy_from(r.matrix());
        full.view_mut((2, 0), (3, 5)).copy_from(&c);
        assert!(numkit::unitarity_defect(&full) < 1e-12);
    }

    #[test]
    fn rank_deficient_reduction_rejected() {
        let mut g = rng(15);
        let row = random_complex(1, 4, &mut g);
        let mut r = CMat::zeros(2, 4);
        r.set_row(0, &row.row(0));
        r.set_row(1, &(row.row(0) * C64::new(2.0, 0.0)));
        assert!(ReductionMap::new(r).is_err());
    }

    #[test]
    fn mz_identity_is_constant() {
        let r = random_reduction(2, 5, 16);
        let y0 = random_complex(2, 1, &mut rng(17)).column(0).into_owned();
        let yt = CVec::zeros(3);
        let out = mori_zwanzig_propagate(&CMat::identity(5, 5), &r, &y0, &yt, 20, &MzOptions::default()).unwrap();
        for y in &out.ys {
            assert!((y - &y0).norm() < 1e-12);
        }
    }

    fn diag_case(seed: u64) -> (CMat, ReductionMap, CMat, CVec) {
        let mut g = rng(seed);
        let phases: Vec<f64> = (0..6).map(|_| uniform(-3.0, 3.0, &mut g)).collect();
        let a = diagonal_unitary(&phases);
        let r = random_reduction(2, 6, seed + 1);
        let c = complete_reduction_basis(&r).unwrap();
        let z0 = random_complex(6, 1, &mut g).column(0).normalize();
        (a, r, c, z0)
    }

    #[test]
    fn mz_first_step_has_no_memory() {
        let (a, r, c, z0) = diag_case(18);
        let (y0, yt) = split_state(&r, &c, &z0);
        let out = mori_zwanzig_propagate(&a, &r, &y0, &yt, 1, &MzOptions::default()).unwrap();
        assert!((&out.ys[1] - r.apply(&(&a * &z0))).norm() < 1e-12);
    }

    #[test]
    fn mz_diagonal_unitary_matches_direct_propagation() {
        let (a, r, c, z0) = diag_case(19);
        let (y0, yt) = split_state(&r, &c, &z0);
        let out = mori_zwanzig_propagate(&a, &r, &y0, &yt, 200, &MzOptions::default()).unwrap();
        let mut z = z0.clone();
        for y in &out.ys {
            assert!((y - r.apply(&z)).norm() < 1e-8);
            z = &a * z;
        }
        assert!(!out.diverged());
    }

    #[test]
    fn mz_truncated_memory_drifts() {
        let (a, r, c, z0) = diag_case(20);
        let (y0, yt) = split_state(&r, &c, &z0);
        let full = mori_zwanzig_propagate(&a, &r, &y0, &yt, 200, &MzOptions::default()).unwrap();
        let half = MzOptions {
            truncation: MemoryTruncation::RecentHalf,
            ..Default::default()
        };
        let cut = mori_zwanzig_propagate(&a, &r, &y0, &yt, 200, &half).unwrap();
        let rel = full
            .ys
            .iter()
            .zip(&cut.ys)
            .map(|(f, c)| (f - c).norm() / f.norm())
            .fold(0.0, f64::max);
        assert!(rel > 1e-3, "{rel}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn exact_recovery_at_full_rank(seed in any::<u64>()) {
                let (n, m) = (6, 2);
                let system = random_system(n, 30, seed);
                let r = random_reduction(m, n, seed ^ 1);
                let z0 = random_complex(n, 1, &mut rng(seed ^ 2)).column(0).normalize();
                let cfg = DelayConfig::new(2, 1, 1e-12).unwrap();
                let run = run_delay(&system, &r, &z0, 30, &cfg).unwrap();
                let truth = system.trajectory(&z0, 30);
                for (t, y) in run.ys.iter().enumerate() {
                    prop_assert!((y - r.apply(&truth[t])).norm() < 1e-10 * z0.norm());
                }
            }

            #[test]
            fn every_block_has_rank_m(seed in any::<u64>()) {
                let (n, m) = (5, 2);
                let system = random_system(n, 12, seed);
                let r = random_reduction(m, n, seed ^ 3);
                let cfg = DelayConfig::new(3, 2, 1e-12).unwrap();
                let h = history_from(&system, &r, &CVec::zeros(n), 6, &cfg);
                let mat = build_m(&h, &r, &cfg).unwrap();
                for j in 0..=3 {
                    prop_assert_eq!(numkit::rank(&mat.rows(j * m, m).into_owned(), 1e-12).unwrap(), m);
                }
            }

            #[test]
            fn strided_rows_lie_in_unit_stride_row_space(seed in any::<u64>(), stride in 2usize..4, ell in 1usize..3) {
                let n = 6;
                let a = random_unitary(n, &mut rng(seed));
                let system = LinearSystem::constant(a, stride * ell, true).unwrap();
                let r = random_reduction(1, n, seed ^ 4);
                let strided = DelayConfig::new(ell, stride, 1e-12).unwrap();
                let dense = DelayConfig::new(stride * ell, 1, 1e-12).unwrap();
                let hs = history_from(&system, &r, &CVec::zeros(n), stride * ell, &strided);
                let hd = history_from(&system, &r, &CVec::zeros(n), stride * ell, &dense);
                let ms = build_m(&hs, &r, &strided).unwrap();
                let md = build_m(&hd, &r, &dense).unwrap();
                let proj = numkit::pinv_thresholded(&md, 1e-12).unwrap().matrix * &md;
                let outside = &ms - &ms * proj;
                prop_assert!(outside.norm() < 1e-10 * ms.norm());
            }
        }
    }
}
