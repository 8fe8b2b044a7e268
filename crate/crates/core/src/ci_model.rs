//! Configuration-interaction model: determinant index maps, the four-index
//! tensor `B` that contracts the full density `P` into the one-electron
//! reduced density `Q`, and the one-electron test systems whose dynamics can
//! be checked in closed form.
//!
//! Spin-orbital `s` (1-based) has spatial orbital `⌈s/2⌉`; odd indices are
//! spin up and even indices spin down.
//!
//! The tensor is stored as `K²` matrices of size `N_C × N_C`, one per orbital
//! pair `(b, c)`, so that `Q[b, c] = Σ_{k,l} P[k, l] · B[k, l, b, c]`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numio::{f17_vec, F17};
use crate::numkit::{self, kron, CMat, FlattenConvention, C64};
use crate::par::{self, Execution};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Sinusoidal driving field `f(t) = A sin(ωt)` switched off after `cycles` periods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldProfile {
    pub amplitude: f64,
    pub omega: f64,
    pub cycles: u32,
}

impl FieldProfile {
    pub fn new(amplitude: f64, omega: f64, cycles: u32) -> Result<Self> {
        let f = FieldProfile {
            amplitude,
            omega,
            cycles,
        };
        f.validate()?;
        Ok(f)
    }

    /// A field that is identically zero.
    pub fn off() -> Self {
        FieldProfile {
            amplitude: 0.0,
            omega: 1.0,
            cycles: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::validation("field amplitude must be finite"));
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::validation("field omega must be positive"));
        }
        if self.cycles == 0 {
            return Err(Error::validation("field cycles must be positive"));
        }
        Ok(())
    }

    pub fn cutoff(&self) -> f64 {
        2.0 * std::f64::consts::PI * f64::from(self.cycles) / self.omega
    }

    pub fn at(&self, t: f64) -> f64 {
        if (0.0..=self.cutoff()).contains(&t) {
            self.amplitude * (self.omega * t).sin()
        } else {
            0.0
        }
    }
}

/// Anything that supplies a Hermitian Hamiltonian in the CI basis.
pub trait Hamiltonian: Sync {
    fn dim(&self) -> usize;
    fn at(&self, t: f64) -> CMat;
}

/// Ordered list of Slater determinants, each an `N`-tuple of 1-based
/// spin-orbital indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeterminantIndexMap {
    n_electrons: usize,
    two_k: usize,
    combos: Vec<Vec<usize>>,
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl DeterminantIndexMap {
    pub fn new(n_electrons: usize, n_orbitals: usize, combos: Vec<Vec<usize>>) -> Result<Self> {
        if n_electrons == 0 || n_orbitals == 0 {
            return Err(Error::validation("electron and orbital counts must be positive"));
        }
        let two_k = 2 * n_orbitals;
        if n_electrons > two_k {
            return Err(Error::validation(format!(
                "{n_electrons} electrons do not fit in {two_k} spin-orbitals"
            )));
        }
        if combos.is_empty() {
            return Err(Error::validation("index map is empty"));
        }
        if combos.len() > binomial(two_k, n_electrons) {
            return Err(Error::validation(format!(
                "{} determinants exceed C({two_k}, {n_electrons})",
                combos.len()
            )));
        }
        let mut seen = HashSet::new();
        for (q, tuple) in combos.iter().enumerate() {
            if tuple.len() != n_electrons {
                return Err(Error::validation(format!(
                    "determinant {} has {} entries, expected {n_electrons}",
                    q + 1,
                    tuple.len()
                )));
            }
            if let Some(&s) = tuple.iter().find(|&&s| s == 0 || s > two_k) {
                return Err(Error::validation(format!(
                    "determinant {} uses spin-orbital {s} outside 1..={two_k}",
                    q + 1
                )));
            }
            let mut sorted = tuple.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::validation(format!(
                    "determinant {} repeats a spin-orbital",
                    q + 1
                )));
            }
            if !seen.insert(sorted) {
                return Err(Error::validation(format!(
                    "determinant {} is a reordering of an earlier one",
                    q + 1
                )));
            }
        }
        Ok(DeterminantIndexMap {
            n_electrons,
            two_k,
            combos,
        })
    }

    /// Two-electron map pairing an up electron in orbital `j` with a down
    /// electron in orbital `m`: `q = (j−1)K + m ↦ (2j−1, 2m)`.
    pub fn alpha_beta(n_orbitals: usize) -> Result<Self> {
        let combos = (1..=n_orbitals)
            .flat_map(|j| (1..=n_orbitals).map(move |m| vec![2 * j - 1, 2 * m]))
            .collect();
        Self::new(2, n_orbitals, combos)
    }

    /// Every `N`-subset of the `2K` spin-orbitals, in lexicographic order.
    pub fn all_determinants(n_electrons: usize, n_orbitals: usize) -> Result<Self> {
        let two_k = 2 * n_orbitals;
        let mut combos = Vec::new();
        let mut current = Vec::with_capacity(n_electrons);
        fn rec(start: usize, n: usize, two_k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == n {
                out.push(cur.clone());
                return;
            }
            for s in start..=two_k {
                cur.push(s);
                rec(s + 1, n, two_k, cur, out);
                cur.pop();
            }
        }
        rec(1, n_electrons, two_k, &mut current, &mut combos);
        Self::new(n_electrons, n_orbitals, combos)
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    pub fn n_orbitals(&self) -> usize {
        self.two_k / 2
    }

    pub fn n_configs(&self) -> usize {
        self.combos.len()
    }

    pub fn combos(&self) -> &[Vec<usize>] {
        &self.combos
    }

    /// Copy with determinants `a` and `b` (0-based) exchanged.
    pub fn swapped(&self, a: usize, b: usize) -> Self {
        let mut out = self.clone();
        out.combos.swap(a, b);
        out
    }
}

fn spatial(s: usize) -> usize {
    s.div_ceil(2)
}

fn same_spin(a: usize, b: usize) -> bool {
    a % 2 == b % 2
}

/// Parity (0 even, 1 odd) of the permutation taking `from` to `to`, two
/// orderings of one set.
fn permutation_parity(from: &[usize], to: &[usize]) -> usize {
    let mut perm: Vec<usize> = from
        .iter()
        .map(|x| to.iter().position(|y| y == x).expect("same set"))
        .collect();
    let mut swaps = 0;
    for i in 0..perm.len() {
        while perm[i] != i {
            let j = perm[i];
            perm.swap(i, j);
            swaps += 1;
        }
    }
    swaps % 2
}

/// One nonzero entry of the determinant-level tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
struct CoreEntry {
    q: usize,
    qp: usize,
    b: usize,
    c: usize,
    value: f64,
}

/// Determinant-level entries between `q` (ket side, index `b`) and `qp`
/// (bra side, index `c`), including the factor `N`.
fn core_pair(map: &DeterminantIndexMap, q: usize, qp: usize) -> Vec<CoreEntry> {
    let tq = &map.combos[q];
    let tp = &map.combos[qp];
    let mut out = Vec::new();
    if q == qp {
        for &s in tq {
            let o = spatial(s) - 1;
            out.push(CoreEntry { q, qp, b: o, c: o, value: 1.0 });
        }
        return out;
    }
    let only_q: Vec<usize> = tq.iter().copied().filter(|s| !tp.contains(s)).collect();
    if only_q.len() != 1 {
        return out;
    }
    let x = only_q[0];
    let y = *tp.iter().find(|s| !tq.contains(s)).expect("equal tuple lengths");
    if !same_spin(x, y) {
        return out;
    }
    assert_ne!(spatial(x), spatial(y), "same-spin spin-orbitals must differ spatially");
    let substituted: Vec<usize> = tq.iter().map(|&s| if s == x { y } else { s }).collect();
    let sign = if permutation_parity(&substituted, tp) == 0 { 1.0 } else { -1.0 };
    out.push(CoreEntry {
        q,
        qp,
        b: spatial(x) - 1,
        c: spatial(y) - 1,
        value: sign,
    });
    out
}

/// The tensor `B[k, l, b, c]` together with its `K² × N_C²` matricization.
#[derive(Clone, Debug)]
pub struct BTensor {
    n_electrons: usize,
    n_orbitals: usize,
    n_configs: usize,
    slices: Vec<CMat>,
    matricized: CMat,
}

impl BTensor {
    fn from_slices(n_electrons: usize, n_orbitals: usize, n_configs: usize, slices: Vec<CMat>) -> Self {
        let kk = n_orbitals * n_orbitals;
        let mut matricized = CMat::zeros(kk, n_configs * n_configs);
        for (row, s) in slices.iter().enumerate() {
            for (col, v) in s.iter().enumerate() {
                matricized[(row, col)] = *v;
            }
        }
        BTensor {
            n_electrons,
            n_orbitals,
            n_configs,
            slices,
            matricized,
        }
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    pub fn n_configs(&self) -> usize {
        self.n_configs
    }

    /// `B[k, l, b, c]`, 0-based.
    pub fn get(&self, k: usize, l: usize, b: usize, c: usize) -> C64 {
        self.slices[b + c * self.n_orbitals][(k, l)]
    }

    /// The `N_C × N_C` slice `B[·, ·, b, c]`.
    pub fn slice(&self, b: usize, c: usize) -> &CMat {
        &self.slices[b + c * self.n_orbitals]
    }

    /// `B̃` with `vec(Q) = B̃ vec(P)` under column-major flattening.
    pub fn matricized(&self) -> &CMat {
        &self.matricized
    }

    /// `B̃ᵀ` with rows ordered by flattening `(k, l)` under `rows`; columns
    /// stay column-major over `(b, c)`.
    ///
    /// `FlattenConvention::RowMajor` gives the layout of the classic printed
    /// `K = 2` table.
    pub fn transpose_export(&self, rows: FlattenConvention) -> CMat {
        let nc = self.n_configs;
        let kk = self.n_orbitals * self.n_orbitals;
        let mut out = CMat::zeros(nc * nc, kk);
        for k in 0..nc {
            for l in 0..nc {
                let r = match rows {
                    FlattenConvention::RowMajor => k * nc + l,
                    FlattenConvention::ColumnMajor => k + l * nc,
                };
                for j in 0..kk {
                    out[(r, j)] = self.slices[j][(k, l)];
                }
            }
        }
        out
    }

    /// Largest `|B[l,k,c,b] − conj(B[k,l,b,c])|`.
    pub fn adjoint_symmetry_defect(&self) -> f64 {
        let k = self.n_orbitals;
        let mut worst = 0.0f64;
        for b in 0..k {
            for c in 0..k {
                let d = self.slice(c, b) - self.slice(b, c).adjoint();
                worst = worst.max(numkit::max_abs(&d));
            }
        }
        worst
    }

    /// Largest `|Σ_b B[k,l,b,b] − N δ_kl|`.
    pub fn trace_contraction_defect(&self) -> f64 {
        let mut sum = CMat::zeros(self.n_configs, self.n_configs);
        for b in 0..self.n_orbitals {
            sum += self.slice(b, b);
        }
        let target = CMat::identity(self.n_configs, self.n_configs) * C64::new(self.n_electrons as f64, 0.0);
        numkit::max_abs(&(sum - target))
    }

    pub fn max_abs_diff(&self, other: &BTensor) -> f64 {
        if self.matricized.shape() != other.matricized.shape() {
            return f64::INFINITY;
        }
        numkit::max_abs(&(&self.matricized - &other.matricized))
    }
}

fn contract(map: &DeterminantIndexMap, c: &CMat, entries: &[CoreEntry]) -> Result<BTensor> {
    let nc = map.n_configs();
    if c.shape() != (nc, nc) {
        return Err(Error::validation(format!(
            "CI coefficient matrix is {}x{}, expected {nc}x{nc}",
            c.nrows(),
            c.ncols()
        )));
    }
    let k = map.n_orbitals();
    let c_adj = c.adjoint();
    let slices = par::map_range(Execution::Parallel, k * k, |idx| {
        let (b, cc) = (idx % k, idx / k);
        let mut core = CMat::zeros(nc, nc);
        for e in entries.iter().filter(|e| e.b == b && e.c == cc) {
            core[(e.q, e.qp)] += C64::new(e.value, 0.0);
        }
        c * core * &c_adj
    });
    Ok(BTensor::from_slices(map.n_electrons(), k, nc, slices))
}

/// Build `B` from the two Slater–Condon cases and contract with `C`:
/// `B[k,l,b,c] = Σ_{q,q'} C[k,q] conj(C[l,q']) core[q,q',b,c]`.
pub fn build_b(map: &DeterminantIndexMap, c: &CMat) -> Result<BTensor> {
    let nc = map.n_configs();
    let entries: Vec<CoreEntry> = par::map_range(Execution::Parallel, nc * nc, |idx| {
        core_pair(map, idx % nc, idx / nc)
    })
    .into_iter()
    .flatten()
    .collect();
    contract(map, c, &entries)
}

fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out.into_iter()
        .map(|p| {
            let inversions = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| p[i] > p[j])
                .count();
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            (p, sign)
        })
        .collect()
}

/// Brute-force `B` from the antisymmetrized-product expansion, summing over
/// all `(N!)²` permutation pairs. Limited to `N ≤ 4`.
pub fn oracle_b(map: &DeterminantIndexMap, c: &CMat) -> Result<BTensor> {
    let n = map.n_electrons();
    if n > 4 {
        return Err(Error::validation(format!(
            "brute-force tensor needs (N!)^2 terms per pair; refusing N = {n} > 4"
        )));
    }
    let perms = permutations(n);
    let norm = n as f64 / perms.len() as f64;
    let nc = map.n_configs();
    let mut entries = Vec::new();
    for q in 0..nc {
        for qp in 0..nc {
            let tq = &map.combos()[q];
            let tp = &map.combos()[qp];
            for (sigma, s_sign) in &perms {
                for (tau, t_sign) in &perms {
                    let rest_match = (1..n).all(|s| tq[sigma[s]] == tp[tau[s]]);
                    let first_q = tq[sigma[0]];
                    let first_p = tp[tau[0]];
                    if rest_match && same_spin(first_q, first_p) {
                        entries.push(CoreEntry {
                            q,
                            qp,
                            b: spatial(first_q) - 1,
                            c: spatial(first_p) - 1,
                            value: norm * s_sign * t_sign,
                        });
                    }
                }
            }
        }
    }
    contract(map, c, &entries)
}

/// `Q[b, c] = Σ_{k,l} P[k, l] · B[k, l, b, c]`.
pub fn reduce_density(p: &CMat, b: &BTensor) -> Result<CMat> {
    let nc = b.n_configs();
    if p.shape() != (nc, nc) {
        return Err(Error::validation(format!(
            "density is {}x{}, tensor expects {nc}x{nc}",
            p.nrows(),
            p.ncols()
        )));
    }
    let q = b.matricized() * numkit::vec(p);
    Ok(numkit::unvec(&q, b.n_orbitals()))
}

/// A CI system: determinants, coefficients, `H(t) = diag(H₀) + f(t) M_dip`.
#[derive(Clone, Debug)]
pub struct CiSystem {
    pub index_map: DeterminantIndexMap,
    pub c: CMat,
    pub h0_diag: Vec<f64>,
    pub m_dip: CMat,
    pub field: FieldProfile,
    /// 0-based `(i, j)` with `i ≤ j` where the full density is known to vanish.
    pub zero_pairs: Vec<(usize, usize)>,
}

impl CiSystem {
    pub fn new(
        index_map: DeterminantIndexMap,
        c: CMat,
        h0_diag: Vec<f64>,
        m_dip: CMat,
        field: FieldProfile,
    ) -> Result<Self> {
        let sys = CiSystem {
            index_map,
            c,
            h0_diag,
            m_dip,
            field,
            zero_pairs: Vec::new(),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_zero_pairs(mut self, pairs: Vec<(usize, usize)>) -> Result<Self> {
        self.zero_pairs = pairs;
        self.validate()?;
        Ok(self)
    }

    pub fn n_electrons(&self) -> usize {
        self.index_map.n_electrons()
    }

    pub fn n_orbitals(&self) -> usize {
        self.index_map.n_orbitals()
    }

    pub fn n_configs(&self) -> usize {
        self.index_map.n_configs()
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.n_configs();
        if self.c.shape() != (nc, nc) || self.m_dip.shape() != (nc, nc) || self.h0_diag.len() != nc {
            return Err(Error::validation(format!(
                "system arrays must all be sized for {nc} configurations"
            )));
        }
        let u_defect = numkit::max_abs(&(self.c.adjoint() * &self.c - CMat::identity(nc, nc)));
        if !(u_defect <= 1e-10) {
            return Err(Error::validation(format!(
                "CI coefficient matrix is not unitary (max |C†C − I| = {u_defect:.3e})"
            )));
        }
        numkit::ensure_hermitian(&self.m_dip, 1e-12, "dipole matrix")?;
        if self.h0_diag.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("H0 diagonal contains non-finite values"));
        }
        self.field.validate()?;
        for &(i, j) in &self.zero_pairs {
            if i > j || j >= nc {
                return Err(Error::validation(format!(
                    "zero pair ({}, {}) must satisfy i <= j <= {nc}",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(())
    }

    pub fn build_b(&self) -> Result<BTensor> {
        build_b(&self.index_map, &self.c)
    }

    pub fn h0(&self) -> CMat {
        CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            self.h0_diag.len(),
            self.h0_diag.iter().map(|&x| C64::new(x, 0.0)),
        ))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SystemFile = serde_json::from_str(s)?;
        file.into_system()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SystemFile::from_system(self))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

impl Hamiltonian for CiSystem {
    fn dim(&self) -> usize {
        self.n_configs()
    }

    fn at(&self, t: f64) -> CMat {
        let mut h = &self.m_dip * C64::new(self.field.at(t), 0.0);
        for (i, e) in self.h0_diag.iter().enumerate() {
            h[(i, i)] += C64::new(*e, 0.0);
        }
        h
    }
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    amplitude: F17,
    omega: F17,
    cycles: u32,
}

#[derive(Serialize, Deserialize)]
struct SystemFile {
    n_electrons: usize,
    n_orbitals: usize,
    n_configs: usize,
    c_matrix: Vec<Vec<[F17; 2]>>,
    index_map: Vec<Vec<usize>>,
    h0_diag: Vec<F17>,
    m_dip: Vec<Vec<[F17; 2]>>,
    field: FieldFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    zero_pairs: Vec<[usize; 2]>,
}

fn matrix_to_rows(m: &CMat) -> Vec<Vec<[F17; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [F17(m[(i, j)].re), F17(m[(i, j)].im)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<[F17; 2]>], n: usize, what: &str) -> Result<CMat> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::validation(format!("{what} must be {n}x{n}")));
    }
    Ok(CMat::from_fn(n, n, |i, j| C64::new(rows[i][j][0].0, rows[i][j][1].0)))
}

impl SystemFile {
    fn from_system(s: &CiSystem) -> Self {
        SystemFile {
            n_electrons: s.n_electrons(),
            n_orbitals: s.n_orbitals(),
            n_configs: s.n_configs(),
            c_matrix: matrix_to_rows(&s.c),
            index_map: s.index_map.combos().to_vec(),
            h0_diag: f17_vec(&s.h0_diag),
            m_dip: matrix_to_rows(&s.m_dip),
            field: FieldFile {
                amplitude: F17(s.field.amplitude),
                omega: F17(s.field.omega),
                cycles: s.field.cycles,
            },
            zero_pairs: s.zero_pairs.iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
        }
    }

    fn into_system(self) -> Result<CiSystem> {
        if self.index_map.len() != self.n_configs {
            return Err(Error::validation(format!(
                "n_configs = {} but index_map lists {} determinants",
                self.n_configs,
                self.index_map.len()
            )));
        }
        let map = DeterminantIndexMap::new(self.n_electrons, self.n_orbitals, self.index_map)?;
        let n = self.n_configs;
        let c = rows_to_matrix(&self.c_matrix, n, "c_matrix")?;
        let m_dip = rows_to_matrix(&self.m_dip, n, "m_dip")?;
        let field = FieldProfile {
            amplitude: self.field.amplitude.0,
            omega: self.field.omega.0,
            cycles: self.field.cycles,
        };
        let mut zero_pairs = Vec::with_capacity(self.zero_pairs.len());
        for [i, j] in self.zero_pairs {
            if i == 0 || j == 0 {
                return Err(Error::validation("zero_pairs are 1-based"));
            }
            zero_pairs.push((i.min(j) - 1, i.max(j) - 1));
        }
        let h0 = self.h0_diag.into_iter().map(|x| x.0).collect();
        CiSystem::new(map, c, h0, m_dip, field)?.with_zero_pairs(zero_pairs)
    }
}

/// How to choose the CI coefficients of a one-electron system.
#[derive(Clone, Debug)]
pub enum CiCoefficients {
    Given(CMat),
    /// Rotate into the eigenbasis of the field-free two-electron Hamiltonian.
    Diagonalize,
}

/// Two non-interacting electrons with one-electron Hamiltonian
/// `h(t) = h + f(t) μ`, expressed in a `K²`-dimensional CI basis.
///
/// With CI states `Ψ_a = Σ_q C[a,q] ψ_q` the CI-basis Hamiltonian is
/// `conj(C) (h(t)⊗I + I⊗h(t)) Cᵀ`, the convention under which
/// `B[k,l,b,c] = Σ C[k,q] conj(C[l,q']) core[q,q',b,c]` is consistent.
#[derive(Clone, Debug)]
pub struct OneElectronSystem {
    pub h: CMat,
    pub mu: CMat,
    pub field: FieldProfile,
    pub c: CMat,
    pub index_map: DeterminantIndexMap,
}

/// `h ⊗ I + I ⊗ h`.
pub fn kron_sum(h: &CMat) -> CMat {
    let id = CMat::identity(h.nrows(), h.nrows());
    kron(h, &id) + kron(&id, h)
}

pub fn build_one_electron_system(
    h: CMat,
    mu: CMat,
    coefficients: CiCoefficients,
    field: FieldProfile,
) -> Result<OneElectronSystem> {
    numkit::ensure_hermitian(&h, 1e-12, "one-electron Hamiltonian")?;
    numkit::ensure_hermitian(&mu, 1e-12, "one-electron dipole")?;
    if h.shape() != mu.shape() {
        return Err(Error::validation("h and mu must have the same shape"));
    }
    field.validate()?;
    let k = h.nrows();
    let index_map = DeterminantIndexMap::alpha_beta(k)?;
    let nc = k * k;
    let c = match coefficients {
        CiCoefficients::Given(c) => {
            if c.shape() != (nc, nc) {
                return Err(Error::validation(format!("C must be {nc}x{nc}")));
            }
            if !(numkit::unitarity_defect(&c) <= 1e-10 * nc as f64) {
                return Err(Error::validation("C must be unitary"));
            }
            c
        }
        CiCoefficients::Diagonalize => {
            let (_, v) = numkit::hermitian_eigen(&kron_sum(&h))?;
            v.transpose()
        }
    };
    Ok(OneElectronSystem {
        h,
        mu,
        field,
        c,
        index_map,
    })
}

impl OneElectronSystem {
    pub fn n_orbitals(&self) -> usize {
        self.h.nrows()
    }

    /// `h(t) = h + f(t) μ`.
    pub fn h_at(&self, t: f64) -> CMat {
        &self.h + &self.mu * C64::new(self.field.at(t), 0.0)
    }

    pub fn build_b(&self) -> Result<BTensor> {
        build_b(&self.index_map, &self.c)
    }

    /// Map a one-electron operator `W` into the CI basis.
    pub fn lift(&self, w: &CMat) -> CMat {
        self.c.conjugate() * kron_sum(w) * self.c.transpose()
    }
}

impl Hamiltonian for OneElectronSystem {
    fn dim(&self) -> usize {
        self.c.nrows()
    }

    fn at(&self, t: f64) -> CMat {
        self.lift(&self.h_at(t))
    }
}

/// Maximum deviations found by [`verify_bplus_identities`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BplusReport {
    /// `‖B̃ B̃⁺ − I‖_max`
    pub right_inverse: f64,
    /// `B̃ vec(W⊗I + I⊗W) = vec(2K W + 2 tr(W) I)` over general `W`.
    pub forward_general: f64,
    /// `B̃⁺ vec(2K W + 2 tr(W) I) = vec(W⊗I + I⊗W)` over general `W`.
    pub inverse_general: f64,
    /// The fixed-constant form `vec(2K W + 4 I)` over `W` with `tr W = 2`.
    pub forward_trace_two: f64,
    pub inverse_trace_two: f64,
    pub samples: usize,
}

impl BplusReport {
    pub fn max_deviation(&self) -> f64 {
        [
            self.right_inverse,
            self.forward_general,
            self.inverse_general,
            self.forward_trace_two,
            self.inverse_trace_two,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Check the action of `B̃` and `B̃⁺` on lifted one-electron operators for a
/// one-electron-structured tensor with `C = I`.
pub fn verify_bplus_identities(b: &BTensor, k: usize, samples: usize, seed: u64) -> Result<BplusReport> {
    if k != 2 && k != 4 {
        return Err(Error::validation(format!("identity check supports K = 2 or 4, got {k}")));
    }
    if b.n_orbitals() != k || b.n_configs() != k * k || b.n_electrons() != 2 {
        return Err(Error::validation("tensor is not a two-electron K² determinant tensor"));
    }
    let bt = b.matricized();
    let pinv = numkit::pinv_thresholded(bt, 1e-12)?.matrix;
    let kk = k * k;
    let mut report = BplusReport {
        right_inverse: numkit::max_abs(&(bt * &pinv - CMat::identity(kk, kk))),
        samples,
        ..Default::default()
    };
    let mut rng = crate::random::rng(seed);
    let id = CMat::identity(k, k);
    let two_k = C64::new(2.0 * k as f64, 0.0);
    for _ in 0..samples {
        let w = crate::random::random_complex(k, k, &mut rng);
        let lifted = numkit::vec(&kron_sum(&w));
        let image = numkit::vec(&(&w * two_k + &id * (numkit::trace(&w) * 2.0)));
        report.forward_general = report.forward_general.max((bt * &lifted - &image).camax());
        report.inverse_general = report.inverse_general.max((&pinv * &image - &lifted).camax());

        let mut w2 = w.clone();
        let shift = (C64::new(2.0, 0.0) - numkit::trace(&w)) / k as f64;
        for i in 0..k {
            w2[(i, i)] += shift;
        }
        let lifted = numkit::vec(&kron_sum(&w2));
        let image = numkit::vec(&(&w2 * two_k + &id * C64::new(4.0, 0.0)));
        report.forward_trace_two = report.forward_trace_two.max((bt * &lifted - &image).camax());
        report.inverse_trace_two = report.inverse_trace_two.max((&pinv * &image - &lifted).camax());
    }
    Ok(report)
}

/// The `K = 2` table of `B̃ᵀ` for `C = I`, rows ordered row-major over
/// `(k, l)` and columns `(b, c) = (1,1), (2,1), (1,2), (2,2)`.
pub const PRINTED_K2_TABLE: [[i32; 4]; 16] = [
    [2, 0, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 0],
    [0, 1, 0, 0],
    [1, 0, 0, 1],
    [0, 0, 0, 0],
    [0, 0, 1, 0],
    [0, 1, 0, 0],
    [0, 0, 0, 0],
    [1, 0, 0, 1],
    [0, 0, 1, 0],
    [0, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 0, 2],
];

/// Pseudoinverse of the `K = 2` table in the same layout, in eighths.
pub const PRINTED_K2_PINV_EIGHTHS: [[i32; 4]; 16] = [
    [3, 0, 0, -1],
    [0, 0, 2, 0],
    [0, 0, 2, 0],
    [0, 0, 0, 0],
    [0, 2, 0, 0],
    [1, 0, 0, 1],
    [0, 0, 0, 0],
    [0, 0, 2, 0],
    [0, 2, 0, 0],
    [0, 0, 0, 0],
    [1, 0, 0, 1],
    [0, 0, 2, 0],
    [0, 0, 0, 0],
    [0, 2, 0, 0],
    [0, 2, 0, 0],
    [-1, 0, 0, 3],
];

/// `C = I`: CI states coincide with determinants.
pub fn identity_coefficients(n: usize) -> CMat {
    CMat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}
