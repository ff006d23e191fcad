//! Seeded Gaussian weights, so whole networks can be compressed without
//! trained checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::archive::Archive;
use crate::error::Result;
use crate::netspec::{expected_tensors, NetworkSpec};
use crate::tensor::{DType, DenseTensor};

/// Standard normal entries from a ChaCha8 stream seeded with `seed`.
pub fn gaussian_tensor(dims: &[usize], seed: u64) -> Result<DenseTensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::from_fn(dims.to_vec(), |_| StandardNormal.sample(&mut rng))
}

/// One tensor per expected archive entry of `net`. Weights are standard
/// normal; batch-norm tensors hold scale 1 and shift 0; biases are 0.
pub fn synthetic_weights(net: &NetworkSpec, seed: u64, dtype: DType) -> Result<Archive> {
    net.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ar = Archive::default();
    for (name, dims) in expected_tensors(net) {
        let t = if name.ends_with(".bn") {
            DenseTensor::from_fn(dims, |i| if i[0] == 0 { 1.0 } else { 0.0 })?
        } else if name.ends_with(".bias") {
            DenseTensor::zeros(dims)?
        } else {
            DenseTensor::from_fn(dims, |_| StandardNormal.sample(&mut rng))?
        };
        match dtype {
            DType::F32 => ar.push(name, t.cast::<f32>()),
            DType::F64 => ar.push(name, t),
        }
    }
    Ok(ar)
}
