//! Reference models for the invariance and scaling comparisons.
//!
//! [`ByteTransformer`] runs full self-attention over the byte array, so it
//! is permutation invariant but quadratic in `M`. [`Conv1dProbe`] convolves
//! along the row axis and flattens, so its output depends on row order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionBlockConfig, SelfAttention};
use crate::error::{Error, Result};
use crate::init::{rng_from_seed, truncated_normal};
use crate::params::{Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{kernels, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ByteTransformerConfig {
    pub input_channels: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub num_classes: usize,
    pub dense_widening: f64,
    pub layer_norm_eps: f64,
}

impl Default for ByteTransformerConfig {
    fn default() -> Self {
        ByteTransformerConfig {
            input_channels: 261,
            width: 64,
            layers: 2,
            heads: 1,
            num_classes: 1000,
            dense_widening: 1.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ByteTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.width == 0 || self.num_classes == 0 {
            return Err(Error::Config("byte transformer needs non-zero widths and classes".into()));
        }
        self.block_config().validate()
    }

    pub fn block_config(&self) -> AttentionBlockConfig {
        AttentionBlockConfig::latent(self.width, self.heads).with_widening(self.dense_widening)
    }
}

/// Input projection, self-attention over all `M` rows, mean-pool, linear
/// classifier.
#[derive(Clone, Debug)]
pub struct ByteTransformer<T> {
    config: ByteTransformerConfig,
    params: ParamStore<T>,
    projection: Linear,
    blocks: Vec<SelfAttention>,
    head: Linear,
}

impl<T: Scalar> ByteTransformer<T> {
    pub fn build(config: ByteTransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let projection = Linear::new(&mut params, "projection", config.input_channels, config.width, &mut rng)?;
        let blocks = (0..config.layers)
            .map(|l| {
                SelfAttention::new(
                    &mut params,
                    &format!("block.{l}"),
                    config.block_config(),
                    config.layer_norm_eps,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::with_std(&mut params, "head", config.width, config.num_classes, 0.02, &mut rng)?;
        Ok(ByteTransformer { config, params, projection, blocks, head })
    }

    pub fn config(&self) -> &ByteTransformerConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.count()
    }

    /// Logits and the FLOPs the tape recorded for them.
    pub fn logits_counted(&self, bytes: &Tensor<T>) -> Result<(Tensor<T>, u64)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let x = tape.constant(bytes.clone())?;
        let mut h = self.projection.forward(&mut tape, &p, x)?;
        for b in &self.blocks {
            h = b.forward(&mut tape, &p, h)?;
        }
        let pooled = tape.mean_over_index(h)?;
        let logits = self.head.forward(&mut tape, &p, pooled)?;
        Ok((tape.value(logits).clone(), tape.flops()))
    }

    pub fn logits(&self, bytes: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.logits_counted(bytes)?.0)
    }
}

/// Width-3 convolution along the row axis (zero padded), GELU, then a
/// linear map of the flattened `M×hidden` activations.
#[derive(Clone, Debug)]
pub struct Conv1dProbe<T> {
    rows: usize,
    channels: usize,
    hidden: usize,
    num_classes: usize,
    /// `3·channels × hidden`, taps ordered previous, current, next row.
    kernel: Tensor<T>,
    readout: Tensor<T>,
}

impl<T: Scalar> Conv1dProbe<T> {
    pub fn new<R: Rng + ?Sized>(
        rows: usize,
        channels: usize,
        hidden: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if rows == 0 || channels == 0 || hidden == 0 || num_classes == 0 {
            return Err(Error::Config("conv probe needs non-zero sizes".into()));
        }
        Ok(Conv1dProbe {
            rows,
            channels,
            hidden,
            num_classes,
            kernel: truncated_normal(rng, [3 * channels, hidden], 1.0 / ((3 * channels) as f64).sqrt())?,
            readout: truncated_normal(rng, [rows * hidden, num_classes], 1.0 / ((rows * hidden) as f64).sqrt())?,
        })
    }

    pub fn logits(&self, bytes: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, c) = bytes.expect_matrix("conv1d_probe")?;
        if (m, c) != (self.rows, self.channels) {
            return Err(Error::dim(
                "conv1d_probe",
                format!("probe built for {}×{}, got {m}×{c}", self.rows, self.channels),
            ));
        }
        let x = bytes.data();
        let mut window = vec![T::zero(); m * 3 * c];
        for i in 0..m {
            for (tap, src) in [i.checked_sub(1), Some(i), (i + 1 < m).then_some(i + 1)].into_iter().enumerate() {
                if let Some(s) = src {
                    window[i * 3 * c + tap * c..i * 3 * c + (tap + 1) * c].copy_from_slice(&x[s * c..(s + 1) * c]);
                }
            }
        }
        let mut hidden = vec![T::zero(); m * self.hidden];
        kernels::matmul(&window, self.kernel.data(), &mut hidden, m, 3 * c, self.hidden);
        hidden.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        let mut out = vec![T::zero(); self.num_classes];
        kernels::matmul(&hidden, self.readout.data(), &mut out, 1, m * self.hidden, self.num_classes);
        Tensor::new([self.num_classes], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_probe_sees_row_order() {
        let mut rng = rng_from_seed(2);
        let probe = Conv1dProbe::<f64>::new(6, 2, 4, 3, &mut rng).unwrap();
        let x = Tensor::from_fn([6, 2], |i| (i as f64 * 0.7).sin());
        let y = x.permute_rows(&[5, 4, 3, 2, 1, 0]).unwrap();
        let a = probe.logits(&x).unwrap();
        let b = probe.logits(&y).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(p, q)| (p - q).abs() > 1e-3));
    }

    #[test]
    fn transformer_ignores_row_order() {
        let cfg = ByteTransformerConfig {
            input_channels: 3,
            width: 8,
            layers: 1,
            heads: 2,
            num_classes: 2,
            ..Default::default()
        };
        let t = ByteTransformer::<f64>::build(cfg, 1).unwrap();
        let x = Tensor::from_fn([5, 3], |i| (i as f64).cos());
        let y = x.permute_rows(&[2, 0, 4, 1, 3]).unwrap();
        let a = t.logits(&x).unwrap();
        let b = t.logits(&y).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}
