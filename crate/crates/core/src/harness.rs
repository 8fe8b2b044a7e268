//! Experiment orchestration: metrics, single runs, sweeps, the one-electron
//! validation suite, the Mori–Zwanzig comparison and synthetic systems.
//!
//! A run computes the reference trajectory, seeds the delay propagator with
//! the exact `Q(0…kℓ)`, propagates to `n_steps` and compares against the
//! reference. Artifacts are CSV and JSON with 17 significant digits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::ci_model::{
    build_one_electron_system, reduce_density, BTensor, BplusReport, CiCoefficients, CiSystem,
    DeterminantIndexMap, FieldProfile, Hamiltonian, PRINTED_K2_TABLE,
};
use crate::constraint_prop::{ConstraintSpec, DelayPropagator, PropagationMode, StepDiagnostics};
use crate::delay_core::{
    complete_reduction_basis, diagonal_unitary, mori_zwanzig_propagate, run_delay, DelayConfig,
    LinearSystem, MemoryTruncation, MzOptions, ReductionMap,
};
use crate::error::{Error, Result};
use crate::ground_truth::{eigenvalue_drift, full_density, propagate_coefficients, reduced_series, GroundTruthRun, QSeriesFile};
use crate::numio::{fmt17, F17};
use crate::numkit::{self, CMat, CVec, FlattenConvention, C64};
use crate::par::{self, Execution};
use crate::random::{random_complex, random_hermitian, random_unitary, rng, uniform};

/// Final time used by the reference experiments, `20000 × 0.008268`.
pub const REFERENCE_FINAL_TIME: f64 = 165.36;

/// Root-mean-square error over steps `ℓ+1 … n`:
/// `sqrt((1/K²)(1/(n−ℓ)) Σ ‖Q_model − Q_true‖_F²)`.
pub fn rmse(model: &[CMat], truth: &[CMat], ell: usize) -> Result<f64> {
    if model.len() != truth.len() {
        return Err(Error::validation(format!(
            "series lengths differ: {} vs {}",
            model.len(),
            truth.len()
        )));
    }
    if model.len() < ell + 2 {
        return Err(Error::validation(format!(
            "need at least {} entries for ell = {ell}, got {}",
            ell + 2,
            model.len()
        )));
    }
    let n = model.len() - 1;
    let k2 = (truth[0].nrows() * truth[0].ncols()) as f64;
    let mut sum = 0.0;
    for j in ell + 1..=n {
        if model[j].shape() != truth[j].shape() {
            return Err(Error::validation(format!("shape mismatch at step {j}")));
        }
        sum += (&model[j] - &truth[j]).norm_squared();
    }
    Ok((sum / k2 / (n - ell) as f64).sqrt())
}

/// Mean absolute entrywise error `(1/K²) Σ |Q_model − Q_true|`.
pub fn mae(model: &CMat, truth: &CMat) -> Result<f64> {
    if model.shape() != truth.shape() {
        return Err(Error::validation(format!(
            "shape mismatch: {:?} vs {:?}",
            model.shape(),
            truth.shape()
        )));
    }
    let n = (model.nrows() * model.ncols()) as f64;
    Ok(model.iter().zip(truth.iter()).map(|(a, b)| (a - b).norm()).sum::<f64>() / n)
}

/// Parameters of one propagation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunParams {
    pub dt: f64,
    pub n_steps: usize,
    pub delay: DelayConfig,
    pub mode: PropagationMode,
}

impl RunParams {
    pub fn new(dt: f64, n_steps: usize, delay: DelayConfig, mode: PropagationMode) -> Result<Self> {
        let p = RunParams { dt, n_steps, delay, mode };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation(format!("dt must be positive, got {}", self.dt)));
        }
        self.delay.validate()?;
        if self.n_steps < self.delay.depth() + 1 {
            return Err(Error::validation(format!(
                "{} steps leave nothing to propagate after a warm start of {}",
                self.n_steps,
                self.delay.depth()
            )));
        }
        Ok(())
    }

    pub fn total_memory(&self) -> f64 {
        self.delay.total_memory(self.dt)
    }
}

/// Which parameter a sweep varies.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum SweepAxis {
    #[default]
    None,
    Ell(Vec<usize>),
    Stride(Vec<usize>),
    /// Time steps at fixed final time and fixed total memory `kℓΔt`:
    /// `n_steps` and `ℓ` are rescaled from the base point.
    Dt(Vec<f64>),
}

/// Everything needed to run an experiment from a system file.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub system: PathBuf,
    pub base: RunParams,
    pub sweep: SweepAxis,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn points(&self) -> Result<Vec<RunParams>> {
        let b = self.base;
        let with = |ell: usize, stride: usize, dt: f64, n_steps: usize| {
            RunParams::new(dt, n_steps, DelayConfig::new(ell, stride, b.delay.r_tol)?, b.mode)
        };
        match &self.sweep {
            SweepAxis::None => Ok(vec![b]),
            SweepAxis::Ell(ells) => ells.iter().map(|&l| with(l, b.delay.stride, b.dt, b.n_steps)).collect(),
            SweepAxis::Stride(ks) => ks.iter().map(|&k| with(b.delay.ell, k, b.dt, b.n_steps)).collect(),
            SweepAxis::Dt(dts) => {
                let t_final = b.n_steps as f64 * b.dt;
                let memory = b.total_memory();
                dts.iter()
                    .map(|&dt| {
                        let n = (t_final / dt).round() as usize;
                        let ell = (memory / (b.delay.stride as f64 * dt)).round() as usize;
                        with(ell, b.delay.stride, dt, n)
                    })
                    .collect()
            }
        }
    }
}

/// Reference trajectory shared by every run with the same `dt` and length.
#[derive(Clone, Debug)]
pub struct Reference {
    pub run: GroundTruthRun,
    pub b: Arc<BTensor>,
    pub q_true: Vec<CMat>,
}

pub fn reference_run(system: &CiSystem, dt: f64, n_steps: usize) -> Result<Reference> {
    let b = Arc::new(system.build_b()?);
    reference_with_tensor(system, b, dt, n_steps)
}

fn reference_with_tensor(system: &CiSystem, b: Arc<BTensor>, dt: f64, n_steps: usize) -> Result<Reference> {
    let run = propagate_coefficients(system, dt, n_steps, None)?;
    let q_true = reduced_series(&run, &b)?;
    Ok(Reference { run, b, q_true })
}

/// Metrics of one run; series are indexed by propagated step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub params: RunParams,
    pub total_memory: f64,
    pub rmse: f64,
    /// MAE at every time `0 … n_steps` (zero on the warm start).
    pub mae_series: Vec<f64>,
    pub max_mae: f64,
    pub residual_series: Vec<f64>,
    pub rank_series: Vec<usize>,
    pub columns: usize,
    pub condition_series: Vec<f64>,
    /// Largest eigenvalue drift of the model `Q` at every time.
    pub eigen_drift_series: Vec<f64>,
    pub final_residual: f64,
    pub min_rank: usize,
    pub max_cond: f64,
    /// `max |tr Q − N|` over the model trajectory.
    pub max_trace_error: f64,
    pub max_q_hermiticity_defect: f64,
    pub max_p_hermiticity_defect: f64,
    /// `max |tr P̂ − 1|`.
    pub max_p_trace_error: f64,
    pub min_p_eigenvalue: f64,
}

#[derive(Serialize)]
struct SummaryFile {
    mode: PropagationMode,
    ell: usize,
    stride: usize,
    dt: F17,
    n_steps: usize,
    r_tol: F17,
    total_memory: F17,
    rmse: F17,
    max_mae: F17,
    final_residual: F17,
    min_rank: usize,
    columns: usize,
    max_cond: F17,
    max_trace_error: F17,
    max_q_hermiticity_defect: F17,
    max_p_hermiticity_defect: F17,
    max_p_trace_error: F17,
    min_p_eigenvalue: F17,
}

impl MetricsReport {
    /// Deterministic JSON of the scalar metrics.
    pub fn summary_json(&self) -> Result<String> {
        let p = &self.params;
        let s = SummaryFile {
            mode: p.mode,
            ell: p.delay.ell,
            stride: p.delay.stride,
            dt: F17(p.dt),
            n_steps: p.n_steps,
            r_tol: F17(p.delay.r_tol),
            total_memory: F17(self.total_memory),
            rmse: F17(self.rmse),
            max_mae: F17(self.max_mae),
            final_residual: F17(self.final_residual),
            min_rank: self.min_rank,
            columns: self.columns,
            max_cond: F17(self.max_cond),
            max_trace_error: F17(self.max_trace_error),
            max_q_hermiticity_defect: F17(self.max_q_hermiticity_defect),
            max_p_hermiticity_defect: F17(self.max_p_hermiticity_defect),
            max_p_trace_error: F17(self.max_p_trace_error),
            min_p_eigenvalue: F17(self.min_p_eigenvalue),
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }

    fn sweep_row(&self) -> Vec<String> {
        let p = &self.params;
        vec![
            p.delay.ell.to_string(),
            p.delay.stride.to_string(),
            fmt17(p.dt),
            fmt17(self.total_memory),
            fmt17(self.rmse),
            fmt17(self.max_mae),
            fmt17(self.final_residual),
            self.min_rank.to_string(),
            fmt17(self.max_cond),
        ]
    }
}

/// Model trajectory, per-step diagnostics and metrics of one run.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub q_model: Vec<CMat>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub metrics: MetricsReport,
}

/// Warm start from the reference, propagate, and score.
pub fn propagate_against(system: &CiSystem, reference: &Reference, params: &RunParams) -> Result<ExperimentResult> {
    params.validate()?;
    if reference.q_true.len() != params.n_steps + 1 || reference.run.dt != params.dt {
        return Err(Error::validation("reference trajectory does not match the run parameters"));
    }
    let spec = ConstraintSpec::new(system.n_configs(), 1.0, &system.zero_pairs)?;
    let mut prop = DelayPropagator::new(reference.b.clone(), params.delay, spec, params.mode, params.dt)?;
    let t0 = params.delay.depth();
    prop.warm_start(&reference.q_true[..=t0], &reference.run.unitaries[..t0])?;
    let mut q_model: Vec<CMat> = reference.q_true[..=t0].to_vec();
    let mut diagnostics = Vec::with_capacity(params.n_steps - t0);
    for t in t0..params.n_steps {
        let out = prop.step_with_unitary(reference.run.unitaries[t].clone())?;
        q_model.push(out.q_next);
        diagnostics.push(out.diagnostics);
    }
    let metrics = score(system, reference, params, &q_model, &diagnostics)?;
    Ok(ExperimentResult {
        q_model,
        diagnostics,
        metrics,
    })
}

/// Reference run plus propagation.
pub fn run_experiment(system: &CiSystem, params: &RunParams) -> Result<(Reference, ExperimentResult)> {
    params.validate()?;
    let reference = reference_run(system, params.dt, params.n_steps)?;
    let result = propagate_against(system, &reference, params)?;
    Ok((reference, result))
}

fn score(
    system: &CiSystem,
    reference: &Reference,
    params: &RunParams,
    q_model: &[CMat],
    diagnostics: &[StepDiagnostics],
) -> Result<MetricsReport> {
    let ell = params.delay.ell;
    let n_el = system.n_electrons() as f64;
    let rmse = rmse(q_model, &reference.q_true, ell)?;
    let mae_series = q_model
        .iter()
        .zip(&reference.q_true)
        .map(|(m, t)| mae(m, t))
        .collect::<Result<Vec<_>>>()?;
    let max_mae = mae_series[ell + 1..].iter().copied().fold(0.0, f64::max);
    let eigen_drift_series = match eigenvalue_drift(q_model) {
        Ok(d) => d.iter().map(|v| v.amax()).collect(),
        Err(_) => vec![f64::NAN; q_model.len()],
    };
    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) });
    Ok(MetricsReport {
        params: *params,
        total_memory: params.total_memory(),
        rmse,
        max_mae,
        residual_series: diagnostics.iter().map(|d| d.residual).collect(),
        rank_series: diagnostics.iter().map(|d| d.effective_rank).collect(),
        columns: diagnostics.first().map_or(0, |d| d.columns),
        condition_series: diagnostics.iter().map(|d| d.condition_number).collect(),
        final_residual: diagnostics.last().map_or(0.0, |d| d.residual),
        min_rank: diagnostics.iter().map(|d| d.effective_rank).min().unwrap_or(0),
        max_cond: fold_max(&mut diagnostics.iter().map(|d| d.condition_number)),
        max_trace_error: fold_max(&mut q_model.iter().map(|q| (numkit::trace(q).re - n_el).abs())),
        max_q_hermiticity_defect: fold_max(&mut q_model.iter().map(numkit::hermiticity_defect)),
        max_p_hermiticity_defect: fold_max(&mut diagnostics.iter().map(|d| d.hermiticity_defect)),
        max_p_trace_error: fold_max(&mut diagnostics.iter().map(|d| (d.trace_p - 1.0).abs())),
        min_p_eigenvalue: diagnostics.iter().map(|d| d.min_eigenvalue_p).fold(f64::INFINITY, f64::min),
        mae_series,
        eigen_drift_series,
    })
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step diagnostics CSV.
pub fn write_diagnostics_csv(diagnostics: &[StepDiagnostics], path: &Path) -> Result<()> {
    write_rows(
        path,
        &["t", "residual", "effective_rank", "condition_number", "trace_Q", "hermiticity_defect"],
        diagnostics.iter().map(|d| {
            vec![
                fmt17(d.t),
                fmt17(d.residual),
                d.effective_rank.to_string(),
                fmt17(d.condition_number),
                fmt17(d.trace_q),
                fmt17(d.hermiticity_defect),
            ]
        }),
    )
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "ell",
    "k",
    "dt",
    "total_memory",
    "rmse",
    "max_mae",
    "final_residual",
    "min_rank",
    "max_cond",
];

/// Sweep table; failed points are written with `NaN` metrics.
pub fn write_sweep_table(points: &[(RunParams, Option<&MetricsReport>)], path: &Path) -> Result<()> {
    write_rows(
        path,
        &SWEEP_COLUMNS,
        points.iter().map(|(p, m)| match m {
            Some(m) => m.sweep_row(),
            None => vec![
                p.delay.ell.to_string(),
                p.delay.stride.to_string(),
                fmt17(p.dt),
                fmt17(p.total_memory()),
                fmt17(f64::NAN),
                fmt17(f64::NAN),
                fmt17(f64::NAN),
                "0".to_string(),
                fmt17(f64::NAN),
            ],
        }),
    )
}

/// `diagnostics.csv`, `mae.csv`, `q_model.json` and `summary.json` in `dir`.
pub fn write_run_artifacts(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_diagnostics_csv(&result.diagnostics, &dir.join("diagnostics.csv"))?;
    let m = &result.metrics;
    write_rows(
        &dir.join("mae.csv"),
        &["t", "mae", "eigen_drift"],
        m.mae_series.iter().zip(&m.eigen_drift_series).enumerate().map(|(j, (a, d))| {
            vec![fmt17(j as f64 * m.params.dt), fmt17(*a), fmt17(*d)]
        }),
    )?;
    QSeriesFile::from_series(m.params.dt, &result.q_model).write(&dir.join("q_model.json"))?;
    fs::write(dir.join("summary.json"), m.summary_json()?)?;
    Ok(())
}

/// Outcome of a sweep: one entry per point, in input order.
#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<RunParams>,
    pub results: Vec<Result<ExperimentResult>>,
}

impl SweepOutcome {
    pub fn reports(&self) -> Vec<Option<&MetricsReport>> {
        self.results.iter().map(|r| r.as_ref().ok().map(|e| &e.metrics)).collect()
    }

    pub fn first_error(&self) -> Option<&Error> {
        self.results.iter().find_map(|r| r.as_ref().err())
    }

    /// Table followed by one subdirectory per successful point.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let rows: Vec<(RunParams, Option<&MetricsReport>)> =
            self.points.iter().copied().zip(self.reports()).collect();
        write_sweep_table(&rows, &dir.join("sweep.csv"))?;
        for (i, r) in self.results.iter().enumerate() {
            if let Ok(res) = r {
                write_run_artifacts(res, &dir.join(format!("point_{i:03}")))?;
            }
        }
        Ok(())
    }
}

/// Run every point, sharing reference trajectories between points with the
/// same `dt` and length. Points run concurrently under `Execution::Parallel`.
pub fn sweep(system: &CiSystem, points: &[RunParams], exec: Execution) -> Result<SweepOutcome> {
    for p in points {
        p.validate()?;
    }
    let b = Arc::new(system.build_b()?);
    let mut keys: BTreeMap<(u64, usize), usize> = BTreeMap::new();
    for p in points {
        let next = keys.len();
        keys.entry((p.dt.to_bits(), p.n_steps)).or_insert(next);
    }
    let mut ordered: Vec<(u64, usize)> = vec![(0, 0); keys.len()];
    for (k, &i) in &keys {
        ordered[i] = *k;
    }
    let references = par::map(exec, &ordered, |&(bits, n)| {
        reference_with_tensor(system, b.clone(), f64::from_bits(bits), n)
    });
    let references = references.into_iter().collect::<Result<Vec<_>>>()?;
    let results = par::map(exec, points, |p| {
        let r = &references[keys[&(p.dt.to_bits(), p.n_steps)]];
        propagate_against(system, r, p)
    });
    Ok(SweepOutcome {
        points: points.to_vec(),
        results,
    })
}

/// Load the system, run every point of the config, write artifacts if an
/// output directory is set.
pub fn run_config(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let system = CiSystem::load(&cfg.system)?;
    let points = cfg.points()?;
    let outcome = par::with_workers(cfg.workers, || sweep(&system, &points, Execution::Parallel))?;
    if let Some(dir) = &cfg.out_dir {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

/// Scalar summary of a reference run.
#[derive(Clone, Debug, Serialize)]
pub struct GroundTruthSummary {
    pub dt: F17,
    pub n_steps: usize,
    pub final_time: F17,
    /// `max_t |‖a(t)‖ − 1|`.
    pub max_norm_error: F17,
    /// `max_t |tr Q(t) − N|`.
    pub max_trace_error: F17,
    pub max_eigen_drift: F17,
}

/// Reference run written as `trajectory.csv`, `q_true.json` and `drift.csv`.
pub fn write_ground_truth(system: &CiSystem, dt: f64, n_steps: usize, dir: &Path) -> Result<GroundTruthSummary> {
    let reference = reference_run(system, dt, n_steps)?;
    fs::create_dir_all(dir)?;
    crate::ground_truth::write_trajectory_csv(&reference.run, &dir.join("trajectory.csv"))?;
    QSeriesFile::from_series(dt, &reference.q_true).write(&dir.join("q_true.json"))?;
    let drift = eigenvalue_drift(&reference.q_true)?;
    let k = system.n_orbitals();
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|j| format!("drift_{j}")));
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        &dir.join("drift.csv"),
        &hdr,
        drift.iter().enumerate().map(|(j, d)| {
            let mut row = vec![fmt17(j as f64 * dt)];
            row.extend(d.iter().map(|x| fmt17(*x)));
            row
        }),
    )?;
    let n_el = system.n_electrons() as f64;
    let summary = GroundTruthSummary {
        dt: F17(dt),
        n_steps,
        final_time: F17(reference.run.final_time()),
        max_norm_error: F17(reference.run.coefficients.iter().map(|a| (a.norm() - 1.0).abs()).fold(0.0, f64::max)),
        max_trace_error: F17(reference.q_true.iter().map(|q| (numkit::trace(q).re - n_el).abs()).fold(0.0, f64::max)),
        max_eigen_drift: F17(crate::ground_truth::max_drift(&drift)),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Serialize)]
struct BTensorFile {
    n_electrons: usize,
    n_orbitals: usize,
    n_configs: usize,
    /// `B̃`, `K² × N_C²`, row `b + cK` is `vec` of slice `(b, c)`.
    b_tilde: Vec<Vec<[F17; 2]>>,
    /// `B̃ᵀ` with rows in row-major `(k, l)` order, the printed layout.
    b_tilde_t_row_major: Vec<Vec<[F17; 2]>>,
    adjoint_symmetry_defect: F17,
    trace_contraction_defect: F17,
}

fn rows_of(m: &CMat) -> Vec<Vec<[F17; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [F17(m[(i, j)].re), F17(m[(i, j)].im)]).collect())
        .collect()
}

/// JSON export of `B̃` with its invariant defects.
pub fn b_tensor_json(b: &BTensor) -> Result<String> {
    Ok(serde_json::to_string_pretty(&BTensorFile {
        n_electrons: b.n_electrons(),
        n_orbitals: b.n_orbitals(),
        n_configs: b.n_configs(),
        b_tilde: rows_of(b.matricized()),
        b_tilde_t_row_major: rows_of(&b.transpose_export(FlattenConvention::RowMajor)),
        adjoint_symmetry_defect: F17(b.adjoint_symmetry_defect()),
        trace_contraction_defect: F17(b.trace_contraction_defect()),
    })?)
}

/// Options for [`generate_synthetic_system`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticOptions {
    /// Zero the dipole diagonal, as for a centrosymmetric molecule.
    pub zero_diagonal_dipole: bool,
    /// Configuration energies are uniform in `[−scale, scale]`.
    pub energy_scale: f64,
    pub field: FieldProfile,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            zero_diagonal_dipole: false,
            energy_scale: 1.0,
            field: FieldProfile {
                amplitude: 0.5,
                omega: 0.9,
                cycles: 5,
            },
        }
    }
}

/// A two-electron system with sorted random energies, a random Hermitian
/// dipole and a random unitary `C`. `n_c = K²` uses the αβ map, `n_c =
/// C(2K, 2)` all determinants.
pub fn generate_synthetic_system(n_c: usize, k: usize, seed: u64, opts: &SyntheticOptions) -> Result<CiSystem> {
    if k == 0 {
        return Err(Error::validation("need at least one orbital"));
    }
    if !(opts.energy_scale > 0.0 && opts.energy_scale.is_finite()) {
        return Err(Error::validation("energy scale must be positive"));
    }
    let all = 2 * k * (2 * k - 1) / 2;
    let map = if n_c == k * k {
        DeterminantIndexMap::alpha_beta(k)?
    } else if n_c == all {
        DeterminantIndexMap::all_determinants(2, k)?
    } else {
        return Err(Error::validation(format!(
            "{n_c} configurations is neither K² = {} nor C(2K, 2) = {all} for K = {k}",
            k * k
        )));
    };
    let mut g = rng(seed);
    let mut h0: Vec<f64> = (0..n_c).map(|_| opts.energy_scale * uniform(-1.0, 1.0, &mut g)).collect();
    h0.sort_by(f64::total_cmp);
    let mut m = random_hermitian(n_c, &mut g);
    if opts.zero_diagonal_dipole {
        for i in 0..n_c {
            m[(i, i)] = C64::new(0.0, 0.0);
        }
    }
    let c = random_unitary(n_c, &mut g);
    CiSystem::new(map, c, h0, m, opts.field)
}

/// Max deviations of the one-electron exactness checks.
#[derive(Clone, Debug, Serialize)]
pub struct OneElectronReport {
    pub k: usize,
    pub steps: usize,
    pub dt: F17,
    /// `K = 2, C = I`: the row-major export equals the printed integer table.
    pub printed_matrix_exact: Option<bool>,
    /// `max |B̃B̃⁺ − I|` for `C = I` and for a random unitary `C`.
    pub right_inverse_identity_c: F17,
    pub right_inverse_random_c: F17,
    pub bplus: BplusSummary,
    /// `max |Q_scheme − Q_LvN|` of the memoryless scheme.
    pub memoryless_identity_c: F17,
    pub memoryless_random_c: F17,
    pub memoryless_raw_random_c: F17,
}

#[derive(Clone, Debug, Serialize)]
pub struct BplusSummary {
    pub forward_general: F17,
    pub inverse_general: F17,
    pub forward_trace_two: F17,
    pub inverse_trace_two: F17,
    pub samples: usize,
}

impl From<&BplusReport> for BplusSummary {
    fn from(r: &BplusReport) -> Self {
        BplusSummary {
            forward_general: F17(r.forward_general),
            inverse_general: F17(r.inverse_general),
            forward_trace_two: F17(r.forward_trace_two),
            inverse_trace_two: F17(r.inverse_trace_two),
            samples: r.samples,
        }
    }
}

impl OneElectronReport {
    pub fn max_identity_deviation(&self) -> f64 {
        [
            self.right_inverse_identity_c.0,
            self.right_inverse_random_c.0,
            self.bplus.forward_general.0,
            self.bplus.inverse_general.0,
            self.bplus.forward_trace_two.0,
            self.bplus.inverse_trace_two.0,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn max_memoryless_deviation(&self) -> f64 {
        [
            self.memoryless_identity_c.0,
            self.memoryless_random_c.0,
            self.memoryless_raw_random_c.0,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `max_t |Q_scheme(t) − Q_LvN(t)|` for the memoryless scheme on a
/// one-electron system, starting from the first configuration.
fn memoryless_deviation(
    h: &CMat,
    mu: &CMat,
    coeffs: CiCoefficients,
    field: FieldProfile,
    mode: PropagationMode,
    dt: f64,
    steps: usize,
) -> Result<f64> {
    let sys = build_one_electron_system(h.clone(), mu.clone(), coeffs, field)?;
    let b = Arc::new(sys.build_b()?);
    let nc = sys.index_map.n_configs();
    let mut a0 = CVec::zeros(nc);
    a0[0] = C64::new(1.0, 0.0);
    let q0 = reduce_density(&full_density(&a0), &b)?;
    let mut prop = DelayPropagator::new(b, DelayConfig::default(), ConstraintSpec::trace_only(nc), mode, dt)?;
    prop.warm_start(std::slice::from_ref(&q0), &[])?;
    let mut lvn = q0;
    let mut worst = 0.0f64;
    for j in 0..steps {
        let t = j as f64 * dt;
        let out = prop.step(&sys.at(t), dt)?;
        let u = numkit::step_unitary(&sys.h_at(t), dt)?;
        lvn = &u * lvn * u.adjoint();
        worst = worst.max(numkit::max_abs(&(out.q_next - &lvn)));
    }
    Ok(worst)
}

/// The one-electron exactness suite for `K ∈ {2, 4}`.
pub fn validate_one_electron(k: usize, seed: u64, steps: usize, dt: f64) -> Result<OneElectronReport> {
    if k != 2 && k != 4 {
        return Err(Error::validation(format!("one-electron validation is defined for K = 2 or 4, got {k}")));
    }
    let mut g = rng(seed);
    let h = random_hermitian(k, &mut g);
    let mu = random_hermitian(k, &mut g);
    let c = random_unitary(k * k, &mut g);
    let field = FieldProfile::new(0.5, 0.9, 5)?;
    let ident = build_one_electron_system(h.clone(), mu.clone(), CiCoefficients::Given(numkit::identity(k * k)), field)?;
    let b_ident = ident.build_b()?;
    let random = build_one_electron_system(h.clone(), mu.clone(), CiCoefficients::Given(c.clone()), field)?;
    let b_random = random.build_b()?;

    let printed_matrix_exact = (k == 2).then(|| {
        let t = b_ident.transpose_export(FlattenConvention::RowMajor);
        (0..16).all(|r| (0..4).all(|col| t[(r, col)] == C64::new(PRINTED_K2_TABLE[r][col] as f64, 0.0)))
    });
    let right_inverse = |b: &BTensor| -> Result<f64> {
        let bt = b.matricized();
        let pinv = numkit::pinv_thresholded(bt, 1e-12)?;
        Ok(numkit::max_abs(&(bt * pinv.matrix - numkit::identity(k * k))))
    };
    let bplus = crate::ci_model::verify_bplus_identities(&b_ident, k, 10, seed ^ 0x5eed)?;

    Ok(OneElectronReport {
        k,
        steps,
        dt: F17(dt),
        printed_matrix_exact,
        right_inverse_identity_c: F17(right_inverse(&b_ident)?),
        right_inverse_random_c: F17(right_inverse(&b_random)?),
        bplus: BplusSummary::from(&bplus),
        memoryless_identity_c: F17(memoryless_deviation(
            &h,
            &mu,
            CiCoefficients::Given(numkit::identity(k * k)),
            field,
            PropagationMode::Constrained,
            dt,
            steps,
        )?),
        memoryless_random_c: F17(memoryless_deviation(
            &h,
            &mu,
            CiCoefficients::Given(c.clone()),
            field,
            PropagationMode::Constrained,
            dt,
            steps,
        )?),
        memoryless_raw_random_c: F17(memoryless_deviation(
            &h,
            &mu,
            CiCoefficients::Given(c),
            field,
            PropagationMode::Raw,
            dt,
            steps,
        )?),
    })
}

/// Propagator used in the Mori–Zwanzig comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MzDynamics {
    Identity,
    Diagonal,
    Dense,
}

impl std::str::FromStr for MzDynamics {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(MzDynamics::Identity),
            "diagonal" => Ok(MzDynamics::Diagonal),
            "dense" => Ok(MzDynamics::Dense),
            other => Err(Error::validation(format!("unknown dynamics '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MzConfig {
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub seed: u64,
    pub dynamics: MzDynamics,
    /// Delay depth; `⌊n/m⌋` if `None`.
    pub ell: Option<usize>,
}

impl Default for MzConfig {
    fn default() -> Self {
        MzConfig {
            n: 6,
            m: 2,
            steps: 200,
            seed: 1,
            dynamics: MzDynamics::Diagonal,
            ell: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MzReport {
    pub config: MzConfig,
    pub ell: usize,
    pub direct: Vec<CVec>,
    pub mz: Vec<CVec>,
    pub mz_truncated: Vec<CVec>,
    pub delay: Vec<CVec>,
    /// `max_t ‖y_MZ(t) − y(t)‖ / ‖y(0)‖`.
    pub mz_error: f64,
    pub mz_diverged_at: Option<usize>,
    /// Same error with the memory sum cut to the most recent half.
    pub mz_truncated_error: f64,
    pub delay_error: f64,
    pub delay_min_rank: usize,
}

#[derive(Serialize)]
struct MzSummary {
    dynamics: MzDynamics,
    n: usize,
    m: usize,
    steps: usize,
    seed: u64,
    ell: usize,
    mz_error: F17,
    mz_diverged_at: Option<usize>,
    mz_truncated_error: F17,
    delay_error: F17,
    delay_min_rank: usize,
}

impl MzReport {
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MzSummary {
            dynamics: self.config.dynamics,
            n: self.config.n,
            m: self.config.m,
            steps: self.config.steps,
            seed: self.config.seed,
            ell: self.ell,
            mz_error: F17(self.mz_error),
            mz_diverged_at: self.mz_diverged_at,
            mz_truncated_error: F17(self.mz_truncated_error),
            delay_error: F17(self.delay_error),
            delay_min_rank: self.delay_min_rank,
        })?)
    }

    /// Columns `t, direct_j, mz_j, delay_j` as `re, im` pairs.
    pub fn write_trajectories(&self, path: &Path) -> Result<()> {
        let m = self.config.m;
        let mut header = vec!["t".to_string()];
        for name in ["direct", "mz", "delay"] {
            for j in 1..=m {
                header.push(format!("re_{name}_{j}"));
                header.push(format!("im_{name}_{j}"));
            }
        }
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        write_rows(
            path,
            &hdr,
            (0..self.direct.len()).map(|t| {
                let mut row = vec![t.to_string()];
                for series in [&self.direct, &self.mz, &self.delay] {
                    for z in series[t].iter() {
                        row.push(fmt17(z.re));
                        row.push(fmt17(z.im));
                    }
                }
                row
            }),
        )
    }
}

fn series_error(a: &[CVec], b: &[CVec], scale: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm() / scale)
        .fold(0.0, |acc, e| if e.is_nan() { f64::NAN } else { acc.max(e) })
}

/// Mori–Zwanzig versus the delay equation on `y = R z`, `z(t+1) = A z(t)`.
pub fn mz_compare(cfg: &MzConfig) -> Result<MzReport> {
    let (n, m) = (cfg.n, cfg.m);
    if !(0 < m && m < n) {
        return Err(Error::validation(format!("need 0 < m < n, got m = {m}, n = {n}")));
    }
    if cfg.steps == 0 {
        return Err(Error::validation("need at least one step"));
    }
    let mut g = rng(cfg.seed);
    let a = match cfg.dynamics {
        MzDynamics::Identity => numkit::identity(n),
        MzDynamics::Diagonal => {
            let phases: Vec<f64> = (0..n).map(|_| uniform(-std::f64::consts::PI, std::f64::consts::PI, &mut g)).collect();
            diagonal_unitary(&phases)
        }
        MzDynamics::Dense => random_unitary(n, &mut g),
    };
    let r = ReductionMap::new(random_complex(m, n, &mut g))?;
    let mut z0 = random_complex(n, 1, &mut g).column(0).into_owned();
    z0 /= C64::new(z0.norm(), 0.0);

    let mut direct = Vec::with_capacity(cfg.steps + 1);
    let mut z = z0.clone();
    for _ in 0..=cfg.steps {
        direct.push(r.apply(&z));
        z = &a * z;
    }
    let completion = complete_reduction_basis(&r)?;
    let y0 = r.apply(&z0);
    let yt0 = &completion * &z0;
    let mz = mori_zwanzig_propagate(&a, &r, &y0, &yt0, cfg.steps, &MzOptions::default())?;
    let truncated = mori_zwanzig_propagate(
        &a,
        &r,
        &y0,
        &yt0,
        cfg.steps,
        &MzOptions {
            completion: None,
            truncation: MemoryTruncation::RecentHalf,
        },
    )?;

    let ell = cfg.ell.unwrap_or(n / m);
    let delay_cfg = DelayConfig::new(ell, 1, 1e-12)?;
    let system = LinearSystem::constant(a, cfg.steps.max(ell), true)?;
    let delay = run_delay(&system, &r, &z0, cfg.steps, &delay_cfg)?;
    let scale = y0.norm().max(f64::MIN_POSITIVE);
    Ok(MzReport {
        config: *cfg,
        ell,
        mz_error: series_error(&mz.ys, &direct, scale),
        mz_diverged_at: mz.diverged_at,
        mz_truncated_error: series_error(&truncated.ys, &direct, scale),
        delay_error: series_error(&delay.ys, &direct, scale),
        delay_min_rank: delay.diagnostics.iter().map(|d| d.effective_rank).min().unwrap_or(n),
        direct,
        mz: mz.ys,
        mz_truncated: truncated.ys,
        delay: delay.ys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loop_rmse(model: &[CMat], truth: &[CMat], ell: usize) -> f64 {
        let n = model.len() - 1;
        let k = truth[0].nrows();
        let mut s = 0.0;
        for j in ell + 1..=n {
            for a in 0..k {
                for b in 0..k {
                    let d = model[j][(a, b)] - truth[j][(a, b)];
                    s += d.re * d.re + d.im * d.im;
                }
            }
        }
        (s / (k * k) as f64 / (n - ell) as f64).sqrt()
    }

    fn loop_mae(a: &CMat, b: &CMat) -> f64 {
        let k = a.nrows();
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                s += (a[(i, j)] - b[(i, j)]).norm();
            }
        }
        s / (k * k) as f64
    }

    fn series(len: usize, k: usize, seed: u64) -> Vec<CMat> {
        let mut g = rng(seed);
        (0..len).map(|_| random_complex(k, k, &mut g)).collect()
    }

    #[test]
    fn rmse_examples() {
        let t = series(6, 2, 1);
        assert_eq!(rmse(&t, &t, 2).unwrap(), 0.0);
        let delta = 0.03;
        let shifted: Vec<CMat> = t.iter().map(|q| q.add_scalar(C64::new(delta, 0.0))).collect();
        assert!((rmse(&shifted, &t, 1).unwrap() - delta).abs() < 1e-15);
        let m = series(6, 3, 2);
        let tr = series(6, 3, 3);
        assert!((rmse(&m, &tr, 2).unwrap() - loop_rmse(&m, &tr, 2)).abs() < 1e-14);
        assert!(rmse(&m[..3], &tr[..3], 2).is_err());
        assert!(rmse(&m[..4], &tr, 0).is_err());
    }

    #[test]
    fn mae_examples() {
        let a = random_complex(2, 2, &mut rng(4));
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b[(0, 1)] += C64::new(0.04, 0.0);
        assert!((mae(&b, &a).unwrap() - 0.01).abs() < 1e-15);
        let c = random_complex(3, 3, &mut rng(5));
        let d = random_complex(3, 3, &mut rng(6));
        assert!((mae(&c, &d).unwrap() - loop_mae(&c, &d)).abs() < 1e-15);
        assert!(mae(&c, &a).is_err());
    }

    #[test]
    fn synthetic_systems() {
        let opts = SyntheticOptions::default();
        let s4 = generate_synthetic_system(4, 2, 7, &opts).unwrap();
        assert_eq!((s4.n_configs(), s4.n_orbitals()), (4, 2));
        let s16 = generate_synthetic_system(16, 4, 7, &opts).unwrap();
        assert_eq!((s16.n_configs(), s16.n_orbitals()), (16, 4));
        let s6 = generate_synthetic_system(6, 2, 7, &opts).unwrap();
        assert_eq!(s6.index_map.n_configs(), 6);
        assert!(generate_synthetic_system(5, 2, 7, &opts).is_err());
        let a = generate_synthetic_system(4, 2, 7, &opts).unwrap().to_json_string().unwrap();
        let b = generate_synthetic_system(4, 2, 7, &opts).unwrap().to_json_string().unwrap();
        assert_eq!(a, b);
        let z = generate_synthetic_system(4, 2, 7, &SyntheticOptions { zero_diagonal_dipole: true, ..opts }).unwrap();
        assert!((0..4).all(|i| z.m_dip[(i, i)] == C64::new(0.0, 0.0)));
        assert!(s4.h0_diag.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn one_electron_memoryless_run_is_exact() {
        for k in [2, 4] {
            let rep = validate_one_electron(k, 3, 200, 0.008268).unwrap();
            assert_eq!(rep.printed_matrix_exact, (k == 2).then_some(true));
            assert!(rep.max_identity_deviation() < 1e-12, "{rep:?}");
            assert!(rep.max_memoryless_deviation() < 1e-10, "{rep:?}");
        }
        assert!(validate_one_electron(3, 3, 10, 0.01).is_err());
    }

    #[test]
    fn experiment_on_small_system() {
        let sys = generate_synthetic_system(4, 2, 11, &SyntheticOptions::default()).unwrap();
        let params = RunParams::new(0.08268, 300, DelayConfig::new(16, 1, 1e-12).unwrap(), PropagationMode::Constrained).unwrap();
        let (reference, res) = run_experiment(&sys, &params).unwrap();
        assert_eq!(res.q_model.len(), 301);
        assert_eq!(res.diagnostics.len(), 300 - 16);
        let m = &res.metrics;
        assert!(m.rmse < 1e-6, "rmse {}", m.rmse);
        assert!(m.max_trace_error < 1e-8);
        assert_eq!(m.max_p_hermiticity_defect, 0.0);
        assert_eq!(m.mae_series.len(), 301);
        assert!((m.total_memory - 16.0 * 0.08268).abs() < 1e-15);
        assert_eq!(reference.q_true.len(), 301);
        assert_eq!(m.summary_json().unwrap(), run_experiment(&sys, &params).unwrap().1.metrics.summary_json().unwrap());
    }

    #[test]
    fn sweep_points_and_sharing() {
        let base = RunParams::new(0.08268, 200, DelayConfig::new(4, 1, 1e-12).unwrap(), PropagationMode::Constrained).unwrap();
        let cfg = ExperimentConfig {
            system: PathBuf::new(),
            base,
            sweep: SweepAxis::Dt(vec![0.08268, 0.008268]),
            out_dir: None,
            workers: None,
        };
        let pts = cfg.points().unwrap();
        assert_eq!(pts[1].n_steps, 2000);
        assert_eq!(pts[1].delay.ell, 40);
        let sys = generate_synthetic_system(4, 2, 12, &SyntheticOptions::default()).unwrap();
        let ells: Vec<RunParams> = [1, 2, 4]
            .iter()
            .map(|&l| RunParams { delay: DelayConfig::new(l, 1, 1e-12).unwrap(), ..base })
            .collect();
        let par_out = sweep(&sys, &ells, Execution::Parallel).unwrap();
        let seq_out = sweep(&sys, &ells, Execution::Sequential).unwrap();
        for (a, b) in par_out.reports().iter().zip(seq_out.reports()) {
            assert_eq!(a.unwrap().summary_json().unwrap(), b.unwrap().summary_json().unwrap());
        }
    }

    #[test]
    fn mz_comparison_cases() {
        let diag = mz_compare(&MzConfig::default()).unwrap();
        assert!(diag.mz_error < 1e-8, "{}", diag.mz_error);
        assert!(diag.delay_error < 1e-8, "{}", diag.delay_error);
        assert!(diag.mz_truncated_error > 1e-3);
        let ident = mz_compare(&MzConfig { dynamics: MzDynamics::Identity, ..MzConfig::default() }).unwrap();
        for y in &ident.mz {
            assert!((y - &ident.mz[0]).norm() < 1e-12);
        }
        for y in &ident.delay {
            assert!((y - &ident.delay[0]).norm() < 1e-10);
        }
        let dense = mz_compare(&MzConfig { dynamics: MzDynamics::Dense, ..MzConfig::default() }).unwrap();
        assert!(dense.delay_error < 1e-8, "{}", dense.delay_error);
    }
}
