//! Seeded, splittable random streams.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Role tags used as the last element of a child path.
pub mod role {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PROPOSAL: u64 = 3;
    pub const SIGMA: u64 = 4;
    pub const CHAIN: u64 = 5;
    pub const RESAMPLE: u64 = 6;
    pub const BATCH: u64 = 7;
    pub const GRAPH: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in a tree of random streams. Children are addressed by index paths,
/// so the draws for (run, iteration, role) never depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, index: u64) -> Self {
        RngStream {
            seed: splitmix64(splitmix64(self.seed) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn path(&self, indices: &[u64]) -> Self {
        indices.iter().fold(*self, |s, &i| s.child(i))
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `mean + L z` with `z` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, lower: &DMatrix<f64>) -> DVector<f64> {
    let z = standard_normal_vec(rng, mean.len());
    mean + lower * z
}
