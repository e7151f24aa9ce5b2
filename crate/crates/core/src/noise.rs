//! Counter-keyed Gaussian draws.
//!
//! Every draw is addressed by `(seed, stream, block)`: the stream is the trial
//! or sample index and the block is the time step. Results therefore do not
//! depend on how work is split across threads, and two scenarios evaluated
//! with the same seed share their random numbers.

use covsteer_conic::Real;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn keyed_rng(seed: u64, stream: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((block as u128) << 20);
    rng
}

pub fn standard_normal<T: Real>(rng: &mut impl Rng, dim: usize) -> DVector<T> {
    DVector::from_fn(dim, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)))
}
