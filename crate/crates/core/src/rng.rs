//! Named random streams derived from a single run seed.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream, so
//! enabling or disabling one stage (for example contamination) never shifts
//! the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Sources,
    Outliers,
    Mixing,
    Permutation,
    Init,
    Minibatch,
    FastIca,
    Hsic,
    Scales,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Sources => 1,
            Stream::Outliers => 2,
            Stream::Mixing => 3,
            Stream::Permutation => 4,
            Stream::Init => 5,
            Stream::Minibatch => 6,
            Stream::FastIca => 7,
            Stream::Hsic => 8,
            Stream::Scales => 9,
        }
    }
}

/// Root of all randomness for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(pub u64);

impl Seed {
    pub fn stream(self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream.id());
        rng
    }

    /// A sub-seed for nested runs (e.g. one instance of a sweep).
    pub fn derive(self, salt: u64) -> Seed {
        // splitmix64 finalizer
        let mut z = self.0 ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

/// Laplace(0, scale) by inversion.
pub fn laplace<R: rand::Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    let a = 1.0 - 2.0 * u.abs();
    // a is in (0, 1]; guard the measure-zero endpoint
    let a = if a <= 0.0 { f64::MIN_POSITIVE } else { a };
    -scale * u.signum() * a.ln()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
