//! Counter-based random streams.
//!
//! Every random quantity is addressed by `(seed, domain, index)`: a ChaCha8
//! key derived from the seed and the domain tag, the ChaCha stream id set to
//! the index, and an optional word offset inside the stream. Nothing depends
//! on how many draws happened before, so parallel schedules and coupled runs
//! consume identical numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Particles per noise block. Each block reads from its own fixed offset in
/// the per-step stream.
pub const NOISE_BLOCK: usize = 64;

const BLOCK_STRIDE_WORDS: u128 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Wiener increments; index = fine step.
    Noise,
    /// Initial-law draws.
    Initial,
    /// Regularity probes; index = probe number.
    Probe(u32),
    /// Synthetic data for tests and fits.
    Synthetic,
    /// Child seeds for ladders and restarted blocks.
    Derived,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Noise => 0x4e4f_4953_4500_0000,
            Domain::Initial => 0x494e_4954_0000_0000,
            Domain::Probe(k) => 0x5052_4f42_0000_0000 | k as u64,
            Domain::Synthetic => 0x5359_4e54_0000_0000,
            Domain::Derived => 0x4445_5249_5645_0000,
        }
    }
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    stream_at(seed, domain, index, 0)
}

pub fn stream_at(seed: u64, domain: Domain, index: u64, word_pos: u128) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.tag().to_le_bytes());
    key[16..24].copy_from_slice(b"mkvlab01");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    if word_pos != 0 {
        rng.set_word_pos(word_pos);
    }
    rng
}

/// Child seed number `(a, b)` of `seed`. Different pairs give unrelated seeds.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut r = stream_at(seed, Domain::Derived, a, 2 * b as u128);
    r.next_u64()
}

/// Fills `out` (row-major `n_particles × d1`) with N(0, dt) increments for one
/// fine step.
pub fn fill_increments(seed: u64, step: u64, d1: usize, dt: f64, out: &mut [f64]) {
    let scale = dt.sqrt();
    out.par_chunks_mut(NOISE_BLOCK * d1)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = stream_at(seed, Domain::Noise, step, block as u128 * BLOCK_STRIDE_WORDS);
            for v in chunk.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = scale * z;
            }
        });
}

/// Increments over a coarse step made of `factor` consecutive fine steps of
/// length `fine_dt`; summed in fine-step order.
pub fn fill_coarse_increments(
    seed: u64,
    coarse_step: u64,
    factor: usize,
    d1: usize,
    fine_dt: f64,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    if factor == 1 {
        fill_increments(seed, coarse_step, d1, fine_dt, out);
        return;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    scratch.resize(out.len(), 0.0);
    for i in 0..factor {
        fill_increments(seed, coarse_step * factor as u64 + i as u64, d1, fine_dt, scratch);
        out.par_iter_mut().zip(scratch.par_iter()).for_each(|(o, s)| *o += s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_independent_of_thread_count() {
        let mut a = vec![0.0; 1000 * 2];
        let mut b = vec![0.0; 1000 * 2];
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        pool1.install(|| fill_increments(7, 3, 2, 0.01, &mut a));
        pool4.install(|| fill_increments(7, 3, 2, 0.01, &mut b));
        assert_eq!(a, b);
    }

    #[test]
    fn increments_have_requested_variance() {
        let n = 200_000;
        let mut a = vec![0.0; n];
        fill_increments(11, 0, 1, 0.25, &mut a);
        let mean = a.iter().sum::<f64>() / n as f64;
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * (0.25 / n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.005);
    }

    #[test]
    fn coarse_increment_is_sum_of_fine() {
        let mut fine0 = vec![0.0; 10];
        let mut fine1 = vec![0.0; 10];
        fill_increments(5, 6, 1, 0.1, &mut fine0);
        fill_increments(5, 7, 1, 0.1, &mut fine1);
        let mut coarse = vec![0.0; 10];
        let mut scratch = Vec::new();
        fill_coarse_increments(5, 3, 2, 1, 0.1, &mut coarse, &mut scratch);
        for i in 0..10 {
            assert_eq!(coarse[i], fine0[i] + fine1[i]);
        }
    }

    #[test]
    fn distinct_steps_differ() {
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        fill_increments(1, 0, 1, 1.0, &mut a);
        fill_increments(1, 1, 1, 1.0, &mut b);
        assert_ne!(a, b);
    }
}
