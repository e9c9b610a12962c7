//! Counter-based noise streams.
//!
//! Every path owns an independent ChaCha8 stream selected by `(seed, path_id)`,
//! so a path's draws never depend on which worker simulated it or in what
//! order. Within a path the draw order is fixed: at each step the signal
//! noise (n normals) then the observation noise (m normals).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Scalar;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn for_path(seed: u64, path_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_id);
        Self { rng }
    }

    #[inline]
    pub fn normal<T: Scalar>(&mut self) -> T {
        let z: f64 = self.rng.sample(StandardNormal);
        T::lit(z)
    }

    #[inline]
    pub fn fill_normal<T: Scalar>(&mut self, out: &mut [T]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}
