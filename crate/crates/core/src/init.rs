//! Parameter initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Absolute truncation bounds for every truncated-normal draw.
pub const TRUNCATION_BOUND: f64 = 2.0;

/// Deterministic generator used everywhere a seed is accepted.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-item generator derived from a base seed, so items can be produced
/// independently and in any order.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Samples `N(0, std²)` and rejects draws outside `[-2, 2]`.
pub fn truncated_normal<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: impl Into<Vec<usize>>,
    std: f64,
) -> Result<Tensor<T>> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Config(format!("initialization scale must be positive, got {std}")));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Tensor::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= TRUNCATION_BOUND {
            break T::of(v);
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_respect_bounds_and_scale() {
        let mut rng = rng_from_seed(7);
        let t: Tensor<f64> = truncated_normal(&mut rng, [200, 100], 0.02).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.02).abs() < 0.002, "std {std}");
        assert!(t.data().iter().all(|v| v.abs() <= 2.0));

        let wide: Tensor<f64> = truncated_normal(&mut rng, [10_000], 1.0).unwrap();
        assert!(wide.data().iter().all(|v| v.abs() <= 2.0));
    }

    #[test]
    fn rejects_bad_scale() {
        let mut rng = rng_from_seed(0);
        assert!(truncated_normal::<f32, _>(&mut rng, [2], 0.0).is_err());
        assert!(truncated_normal::<f32, _>(&mut rng, [2], -1.0).is_err());
    }

    #[test]
    fn item_streams_differ_and_repeat() {
        let a: u64 = item_rng(3, 0).random();
        let b: u64 = item_rng(3, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, item_rng(3, 0).random::<u64>());
    }
}
