//! Fixtures shared by the benchmarks.

use pfts_core::inference::{LinkFunction, PreferenceHistory};
use pfts_core::{CandidateSet, Environment, Utility};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ackley grid with `pairs` uniform random BTL comparisons.
pub fn ackley_history(points: usize, pairs: usize, seed: u64) -> (CandidateSet, PreferenceHistory) {
    let grid = CandidateSet::linspace(-5.0, 5.0, points);
    let env = Environment::new(grid.clone(), Utility::AckleyFlipped).expect("grid is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = PreferenceHistory::new();
    for _ in 0..pairs {
        let i = rng.random_range(0..points);
        let j = rng.random_range(0..points);
        let y = rng.random::<f64>() < LinkFunction::mu(env.value(i) - env.value(j));
        h.push(grid.point(i).clone(), grid.point(j).clone(), y);
    }
    (grid, h)
}
