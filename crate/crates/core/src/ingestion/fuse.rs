use crate::error::{Error, Result};
use crate::positional::{modality_embed_sizes, modality_pad};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{ByteArray, ModalitySpan, PositionMeta};

/// Stacks single-modality arrays into one, padding each to the common width
/// `max(Cᵢ + minᵢ)` with zero channels. The model fills those channels with
/// its learned modality embeddings.
pub fn fuse_modalities<T: Scalar>(parts: &[ByteArray<T>], min_embed: &[usize]) -> Result<ByteArray<T>> {
    if parts.is_empty() {
        return Err(Error::Config("nothing to fuse".into()));
    }
    if let Some(p) = parts.iter().find(|p| p.spans.len() != 1) {
        return Err(Error::Config(format!("fused inputs must be single-modality, got {} spans", p.spans.len())));
    }
    let channels: Vec<usize> = parts.iter().map(|p| p.channels()).collect();
    let (_, sizes) = modality_embed_sizes(&channels, min_embed)?;
    let zeros: Vec<Tensor<T>> = sizes.iter().map(|&e| Tensor::zeros([e])).collect();
    let arrays: Vec<&Tensor<T>> = parts.iter().map(|p| &p.data).collect();
    let embeds: Vec<&Tensor<T>> = zeros.iter().collect();
    let data = modality_pad(&arrays, &embeds)?;
    let mut spans = Vec::with_capacity(parts.len());
    let mut start = 0;
    for p in parts {
        let name = &p.spans[0].modality;
        if spans.iter().any(|s: &ModalitySpan| &s.modality == name) {
            return Err(Error::Config(format!("modality `{name}` appears twice")));
        }
        spans.push(ModalitySpan {
            modality: name.clone(),
            rows: start..start + p.rows(),
            feature_channels: p.channels(),
        });
        start += p.rows();
    }
    let b = ByteArray {
        data,
        spans,
        position_meta: PositionMeta::Fused(parts.iter().map(|p| p.position_meta.clone()).collect()),
    };
    b.validate()?;
    Ok(b)
}
