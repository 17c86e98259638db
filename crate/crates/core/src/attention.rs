//! Multi-head QKV attention and the two Perceiver blocks built on it.
//!
//! Both blocks are pre-layer-norm and fully residual: the attention output
//! is projected back to the latent width and added to the latent, then a
//! dense block (layer norm, linear, GELU, linear) adds its own residual.
//! No masks are applied anywhere.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, LayerNorm, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Widths and head count of one attention block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlockConfig {
    pub num_heads: usize,
    pub qk_channels: usize,
    pub v_channels: usize,
    /// Width of the residual stream the block writes back into.
    pub output_channels: usize,
    /// Hidden width of the dense block relative to `output_channels`.
    pub dense_widening: f64,
}

impl AttentionBlockConfig {
    /// Cross-attention widths: queries, keys and values all take the
    /// smaller of the latent and byte channel counts.
    pub fn cross(latent_channels: usize, input_channels: usize, num_heads: usize) -> Self {
        let width = latent_channels.min(input_channels);
        AttentionBlockConfig {
            num_heads,
            qk_channels: width,
            v_channels: width,
            output_channels: latent_channels,
            dense_widening: 1.0,
        }
    }

    /// Latent self-attention widths: everything at the latent width.
    pub fn latent(channels: usize, num_heads: usize) -> Self {
        AttentionBlockConfig {
            num_heads,
            qk_channels: channels,
            v_channels: channels,
            output_channels: channels,
            dense_widening: 1.0,
        }
    }

    pub fn with_widening(mut self, widening: f64) -> Self {
        self.dense_widening = widening;
        self
    }

    pub fn dense_hidden(&self) -> usize {
        ((self.output_channels as f64) * self.dense_widening).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 {
            return Err(Error::Config("attention needs at least one head".into()));
        }
        if self.qk_channels == 0 || self.v_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("attention widths must be positive".into()));
        }
        if !self.qk_channels.is_multiple_of(self.num_heads) || !self.v_channels.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide qk/v widths {}/{}",
                self.num_heads, self.qk_channels, self.v_channels
            )));
        }
        if !(self.dense_widening > 0.0) || !self.dense_widening.is_finite() {
            return Err(Error::Config("dense widening must be positive".into()));
        }
        Ok(())
    }
}

/// Pre-softmax `QKᵀ` scores, `heads × N × M`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T> {
    pub heads: usize,
    pub queries: usize,
    pub keys: usize,
    scores: Vec<T>,
}

impl<T: Scalar> AttentionMaps<T> {
    pub fn new(heads: usize, queries: usize, keys: usize, scores: Vec<T>) -> Result<Self> {
        if scores.len() != heads * queries * keys {
            return Err(Error::dim("attention_maps", "score buffer does not match shape"));
        }
        Ok(AttentionMaps { heads, queries, keys, scores })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.heads, self.queries, self.keys]
    }

    /// `N×M` scores of one head.
    pub fn head(&self, h: usize) -> &[T] {
        let n = self.queries * self.keys;
        &self.scores[h * n..(h + 1) * n]
    }

    /// Scores of one latent index against every input row.
    pub fn latent_row(&self, h: usize, latent: usize) -> &[T] {
        &self.head(h)[latent * self.keys..(latent + 1) * self.keys]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new([self.heads, self.queries, self.keys], self.scores.clone()).expect("shape checked at construction")
    }

    /// One head's maps reshaped to `N × H × W` for grid inputs.
    pub fn head_as_grid(&self, h: usize, height: usize, width: usize) -> Result<Tensor<T>> {
        if height * width != self.keys {
            return Err(Error::dim("attention_maps", format!("{}×{} grid for {} inputs", height, width, self.keys)));
        }
        Tensor::new([self.queries, height, width], self.head(h).to_vec())
    }
}

/// `softmax(QKᵀ/√d_h)·V` per head, heads concatenated along channels.
///
/// When `capture` is set the unscaled `QKᵀ` scores are returned as well.
pub fn qkv_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    capture: bool,
) -> Result<(Var, Option<AttentionMaps<T>>)> {
    if heads == 0 {
        return Err(Error::Config("attention needs at least one head".into()));
    }
    let (n, dq) = tape.value(q).expect_matrix("qkv_attention")?;
    let (m, dk) = tape.value(k).expect_matrix("qkv_attention")?;
    let (mv, dv) = tape.value(v).expect_matrix("qkv_attention")?;
    if dq != dk || m != mv {
        return Err(Error::dim("qkv_attention", format!("Q {n}×{dq}, K {m}×{dk}, V {mv}×{dv}")));
    }
    if dq % heads != 0 || dv % heads != 0 {
        return Err(Error::dim("qkv_attention", format!("{heads} heads do not divide widths {dq}/{dv}")));
    }
    let (hq, hv) = (dq / heads, dv / heads);
    let scale = T::of(1.0 / (hq as f64).sqrt());
    let mut outputs = Vec::with_capacity(heads);
    let mut scores = capture.then(|| Vec::with_capacity(heads * n * m));
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, h * hq, hq)?, tape.slice_cols(k, h * hq, hq)?, tape.slice_cols(v, h * hv, hv)?)
        };
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        if let Some(buf) = scores.as_mut() {
            buf.extend_from_slice(tape.value(logits).data());
        }
        let scaled = tape.scale(logits, scale)?;
        let weights = tape.softmax_last_axis(scaled)?;
        outputs.push(tape.matmul(weights, vh)?);
    }
    let out = if heads == 1 { outputs[0] } else { tape.concat_cols(&outputs)? };
    let maps = scores.map(|s| AttentionMaps::new(heads, n, m, s)).transpose()?;
    Ok((out, maps))
}

/// Layer norm, linear, GELU, linear, residual.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl DenseBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(DenseBlock {
            norm: LayerNorm::new(store, &format!("{name}.norm"), channels, eps),
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, channels, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, p, x)?;
        let h = self.fc1.forward(tape, p, h)?;
        let h = tape.gelu(h)?;
        let h = self.fc2.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Latent queries attending to the byte array.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub config: AttentionBlockConfig,
    pub input_channels: usize,
    pub latent_norm: LayerNorm,
    pub input_norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub dense: DenseBlock,
}

impl CrossAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: AttentionBlockConfig,
        input_channels: usize,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.output_channels;
        Ok(CrossAttention {
            config,
            input_channels,
            latent_norm: LayerNorm::new(store, &format!("{name}.latent_norm"), d, eps),
            input_norm: LayerNorm::new(store, &format!("{name}.input_norm"), input_channels, eps),
            query: Linear::new(store, &format!("{name}.query"), d, config.qk_channels, rng)?,
            key: Linear::new(store, &format!("{name}.key"), input_channels, config.qk_channels, rng)?,
            value: Linear::new(store, &format!("{name}.value"), input_channels, config.v_channels, rng)?,
            output: Linear::new(store, &format!("{name}.output"), config.v_channels, d, rng)?,
            dense: DenseBlock::new(store, &format!("{name}.dense"), d, config.dense_hidden(), eps, rng)?,
        })
    }

    /// Returns the updated latent and, when `capture` is set, the
    /// pre-softmax maps.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        latent: Var,
        bytes: Var,
        capture: bool,
    ) -> Result<(Var, Option<AttentionMaps<T>>)> {
        let lq = self.latent_norm.forward(tape, p, latent)?;
        let lkv = self.input_norm.forward(tape, p, bytes)?;
        let q = self.query.forward(tape, p, lq)?;
        let k = self.key.forward(tape, p, lkv)?;
        let v = self.value.forward(tape, p, lkv)?;
        let (att, maps) = qkv_attention(tape, q, k, v, self.config.num_heads, capture)?;
        let out = self.output.forward(tape, p, att)?;
        let latent = tape.add(latent, out)?;
        Ok((self.dense.forward(tape, p, latent)?, maps))
    }
}

/// One block of the latent Transformer.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub config: AttentionBlockConfig,
    pub norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub dense: DenseBlock,
}

impl SelfAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: AttentionBlockConfig,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.output_channels;
        Ok(SelfAttention {
            config,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d, eps),
            query: Linear::new(store, &format!("{name}.query"), d, config.qk_channels, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d, config.qk_channels, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, config.v_channels, rng)?,
            output: Linear::new(store, &format!("{name}.output"), config.v_channels, d, rng)?,
            dense: DenseBlock::new(store, &format!("{name}.dense"), d, config.dense_hidden(), eps, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, latent: Var) -> Result<Var> {
        let h = self.norm.forward(tape, p, latent)?;
        let q = self.query.forward(tape, p, h)?;
        let k = self.key.forward(tape, p, h)?;
        let v = self.value.forward(tape, p, h)?;
        let (att, _) = qkv_attention(tape, q, k, v, self.config.num_heads, false)?;
        let out = self.output.forward(tape, p, att)?;
        let latent = tape.add(latent, out)?;
        self.dense.forward(tape, p, latent)
    }
}
