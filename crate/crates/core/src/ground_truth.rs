//! Reference TDCI dynamics: `a(t+Δt) = exp(−i H(t) Δt) a(t)` with the
//! Hamiltonian evaluated at the left endpoint, full densities `P = a a†`,
//! and the reduced series `Q = B P`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use crate::ci_model::FieldProfile;
use crate::ci_model::{self, BTensor, Hamiltonian};
use crate::error::{Error, Result};
use crate::numio::{fmt17, F17};
use crate::numkit::{self, CMat, CVec, RVec, C64};

/// Coefficients `a(0…n)` and the step unitaries `U_j = exp(−i H(jΔt) Δt)`.
#[derive(Clone, Debug)]
pub struct GroundTruthRun {
    pub dt: f64,
    pub n_steps: usize,
    pub coefficients: Vec<CVec>,
    pub unitaries: Vec<Arc<CMat>>,
}

impl GroundTruthRun {
    pub fn final_time(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// The unitaries `U_0 … U_{n−1}`.
pub fn step_unitaries<H: Hamiltonian>(ham: &H, dt: f64, n_steps: usize) -> Result<Vec<Arc<CMat>>> {
    check_dt(dt)?;
    let out: Vec<Result<Arc<CMat>>> = crate::par::map_range(crate::par::Execution::Parallel, n_steps, |j| {
        numkit::step_unitary(&ham.at(j as f64 * dt), dt)
            .map(Arc::new)
            .map_err(|e| e.at_step(j))
    });
    out.into_iter().collect()
}

/// Propagate from `a0` (default `e₁`).
pub fn propagate_coefficients<H: Hamiltonian>(
    ham: &H,
    dt: f64,
    n_steps: usize,
    a0: Option<CVec>,
) -> Result<GroundTruthRun> {
    let n = ham.dim();
    let a0 = match a0 {
        Some(a) if a.len() != n => {
            return Err(Error::validation(format!("initial state has length {}, expected {n}", a.len())))
        }
        Some(a) => {
            let norm = a.norm();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::validation(format!("initial state has norm {norm}")));
            }
            a
        }
        None => {
            let mut e1 = CVec::zeros(n);
            e1[0] = C64::new(1.0, 0.0);
            e1
        }
    };
    let unitaries = step_unitaries(ham, dt, n_steps)?;
    let mut coefficients = Vec::with_capacity(n_steps + 1);
    coefficients.push(a0);
    for u in &unitaries {
        let next = u.as_ref() * coefficients.last().expect("nonempty");
        coefficients.push(next);
    }
    Ok(GroundTruthRun {
        dt,
        n_steps,
        coefficients,
        unitaries,
    })
}

/// `P(t) = a(t) a(t)†`.
pub fn full_density(a: &CVec) -> CMat {
    a * a.adjoint()
}

pub fn full_density_series(run: &GroundTruthRun) -> Vec<CMat> {
    run.coefficients.iter().map(full_density).collect()
}

/// `Q_true(t) = B P(t)` for every stored time.
pub fn reduced_series(run: &GroundTruthRun, b: &BTensor) -> Result<Vec<CMat>> {
    run.coefficients
        .iter()
        .map(|a| ci_model::reduce_density(&full_density(a), b))
        .collect()
}

/// `|λ_j(t) − λ_j(0)|` with eigenvalues sorted descending.
pub fn eigenvalue_drift(q_series: &[CMat]) -> Result<Vec<RVec>> {
    let first = q_series
        .first()
        .ok_or_else(|| Error::validation("empty series"))?;
    let base = numkit::hermitian_eigenvalues(first)?;
    q_series
        .iter()
        .enumerate()
        .map(|(t, q)| {
            let ev = numkit::hermitian_eigenvalues(q).map_err(|e| e.at_step(t))?;
            Ok((ev - &base).abs())
        })
        .collect()
}

/// Largest entry over all drift vectors.
pub fn max_drift(drift: &[RVec]) -> f64 {
    drift.iter().flat_map(|d| d.iter().copied()).fold(0.0, f64::max)
}

/// CSV with `t` and the real and imaginary part of each coefficient.
pub fn write_trajectory_csv(run: &GroundTruthRun, path: &Path) -> Result<()> {
    let n = run.coefficients.first().map_or(0, |a| a.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    for j in 1..=n {
        header.push(format!("re_a{j}"));
        header.push(format!("im_a{j}"));
    }
    w.write_record(&header)?;
    for (j, a) in run.coefficients.iter().enumerate() {
        let mut row = vec![fmt17(run.time(j))];
        for z in a.iter() {
            row.push(fmt17(z.re));
            row.push(fmt17(z.im));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A `Q` series with its time step, for warm-starting other runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QSeriesFile {
    pub dt: F17,
    pub n_orbitals: usize,
    /// `q[t][b][c] = [re, im]`
    pub q: Vec<Vec<Vec<[F17; 2]>>>,
}

impl QSeriesFile {
    pub fn from_series(dt: f64, series: &[CMat]) -> Self {
        let k = series.first().map_or(0, |q| q.nrows());
        QSeriesFile {
            dt: F17(dt),
            n_orbitals: k,
            q: series
                .iter()
                .map(|q| {
                    (0..k)
                        .map(|b| (0..k).map(|c| [F17(q[(b, c)].re), F17(q[(b, c)].im)]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_series(&self) -> Result<Vec<CMat>> {
        let k = self.n_orbitals;
        self.q
            .iter()
            .map(|rows| {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::validation(format!("Q entries must be {k}x{k}")));
                }
                Ok(CMat::from_fn(k, k, |b, c| C64::new(rows[b][c][0].0, rows[b][c][1].0)))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}
