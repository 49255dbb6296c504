use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Matrix;

/// Deterministic generator used for every random draw in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with stream identifiers (epoch, batch, ...) into a new seed.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    // splitmix64 finalizer applied per component
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &s in stream {
        h = h.wrapping_add(s.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        h ^= h >> 30;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// `rows × cols` matrix of i.i.d. `N(0, scale²)` draws.
pub fn seeded_gaussian(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    gaussian_from(&mut rng, rows, cols, scale)
}

pub(crate) fn gaussian_from(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Matrix {
    if scale == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}
