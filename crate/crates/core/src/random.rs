//! Seeded random matrices for synthetic systems, tests and benches.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numkit::{CMat, C64};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries with independent standard normal real and imaginary parts.
pub fn random_complex(rows: usize, cols: usize, rng: &mut Rng) -> CMat {
    DMatrix::from_fn(rows, cols, |_, _| {
        C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    })
}

/// `(G + G†)/2` for a complex Gaussian `G`.
pub fn random_hermitian(n: usize, rng: &mut Rng) -> CMat {
    let g = random_complex(n, n, rng);
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

/// Haar-distributed unitary from the phase-corrected QR of a Gaussian matrix.
pub fn random_unitary(n: usize, rng: &mut Rng) -> CMat {
    let g = random_complex(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            for i in 0..n {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

pub fn uniform(lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    rng.random_range(lo..hi)
}
