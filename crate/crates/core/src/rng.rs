//! Seeded random streams.
//!
//! Every stochastic routine draws from xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`), with Gaussian variates from the ziggurat sampler in
//! `rand_distr`. Both algorithms are fixed, so a seed reproduces the same
//! stream on every platform.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SeededRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SeededRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Sample indices `0..n` shuffled once, chunked into minibatches.
pub(crate) fn shuffled_batches<R: Rng + ?Sized>(rng: &mut R, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}
