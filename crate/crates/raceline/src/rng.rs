//! Seeded random number helpers. Everything stochastic in the toolkit draws
//! through these so runs are reproducible from a single u64 seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::Real;

/// The RNG used across the toolkit. ChaCha12 is seedable, portable, and its
/// stream does not depend on platform word size.
pub type Prng = ChaCha12Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named subsystem so that adding draws
/// in one place does not shift another's sequence.
pub fn substream(seed: u64, stream: u64) -> Prng {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Standard normal via Box-Muller. Generic so f32 kernels can draw too;
/// sampling happens in f64 and converts once, keeping the stream identical
/// across scalar types.
pub fn standard_normal<T: Real, R: Rng>(rng: &mut R) -> T {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    T::of(z)
}
