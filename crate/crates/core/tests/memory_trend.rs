//! Statistical memory trend: median RMSE over seeds as total memory doubles.

use rdm_delay::constraint_prop::PropagationMode;
use rdm_delay::delay_core::DelayConfig;
use rdm_delay::harness::{generate_synthetic_system, sweep, RunParams, SyntheticOptions};
use rdm_delay::par::Execution;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn median_rmse_does_not_grow_with_memory() {
    let ells = [4usize, 8, 16, 32, 64];
    let points: Vec<RunParams> = ells
        .iter()
        .map(|&l| {
            RunParams::new(0.08268, 2000, DelayConfig::new(l, 1, 1e-12).unwrap(), PropagationMode::Constrained)
                .unwrap()
        })
        .collect();
    let mut per_seed = Vec::new();
    for seed in 1..=5 {
        let sys = generate_synthetic_system(4, 2, seed, &SyntheticOptions::default()).unwrap();
        let out = sweep(&sys, &points, Execution::Parallel).unwrap();
        let rmse: Vec<f64> = out.reports().iter().map(|m| m.map_or(f64::NAN, |m| m.rmse)).collect();
        per_seed.push(rmse);
    }
    let medians: Vec<f64> = (0..ells.len()).map(|i| median(per_seed.iter().map(|r| r[i]).collect())).collect();
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "median RMSE grew with memory: {medians:?}");
    }
}
