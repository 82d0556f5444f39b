//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, period, index)`: the key of a ChaCha8
//! generator is derived from `(seed, period)` and the stream id is the sample
//! index. A sample therefore never depends on how many other samples were
//! generated before it, or on which thread generated them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one `(seed, period, index)` address.
pub fn stream(seed: u64, period: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ period.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Fills `out` with independent standard normals for the given address.
pub fn standard_normals(seed: u64, period: u64, index: u64, out: &mut [f64]) {
    let mut rng = stream(seed, period, index);
    for z in out.iter_mut() {
        *z = rng.sample(StandardNormal);
    }
}

/// Uniform index in `0..bound` for the given address.
pub fn uniform_index(seed: u64, period: u64, index: u64, bound: usize) -> usize {
    stream(seed, period, index).random_range(0..bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_address_same_draws() {
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        standard_normals(7, 2, 11, &mut a);
        standard_normals(7, 2, 11, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn addresses_are_distinct() {
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        let mut c = [0.0; 2];
        standard_normals(7, 2, 11, &mut a);
        standard_normals(7, 3, 11, &mut b);
        standard_normals(7, 2, 12, &mut c);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn normals_have_unit_variance() {
        let n = 20_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut z = [0.0];
        for i in 0..n {
            standard_normals(1, 0, i, &mut z);
            s1 += z[0];
            s2 += z[0] * z[0];
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }
}
