//! Seeded random tensors for tests, benchmarks and the toy task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::kernels::ActivationVector;
use crate::tensor::{ComplexMatrix, ComplexScalar, RealMatrix};

pub type SynthRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Entries drawn from `N(0, std²)`.
pub fn gaussian_real(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| std * gaussian(rng))
}

/// Real and imaginary parts drawn independently from `N(0, std²)`.
pub fn gaussian_complex(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        ComplexScalar::new(std * gaussian(rng), std * gaussian(rng))
    })
}

pub fn gaussian_activation(rng: &mut impl Rng, len: usize) -> ActivationVector {
    let re = (0..len).map(|_| gaussian(rng)).collect();
    let im = (0..len).map(|_| gaussian(rng)).collect();
    ActivationVector { re, im }
}
