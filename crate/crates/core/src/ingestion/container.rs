//! On-disk dataset container: a directory holding `manifest.toml` and one
//! little-endian binary file of inputs plus one of `u32` labels per split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModalityConfig;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

use super::{Dataset, DatasetKind, Example, ModalitySpan};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: DatasetKind,
    seed: u64,
    dtype: String,
    num_classes: usize,
    rows: usize,
    channels: usize,
    train_size: usize,
    test_size: usize,
    #[serde(default)]
    grid: Option<Vec<usize>>,
    spans: Vec<SpanEntry>,
    #[serde(default)]
    modalities: Vec<ModalityConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanEntry {
    modality: String,
    start: usize,
    end: usize,
    feature_channels: usize,
}

pub fn save_dataset<T: Scalar>(dir: &Path, dataset: &Dataset<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        kind: dataset.kind,
        seed: dataset.seed,
        dtype: T::DTYPE.name().to_string(),
        num_classes: dataset.num_classes,
        rows: dataset.rows(),
        channels: dataset.channels(),
        train_size: dataset.train.len(),
        test_size: dataset.test.len(),
        grid: dataset.grid.clone(),
        spans: dataset
            .spans
            .iter()
            .map(|s| SpanEntry {
                modality: s.modality.clone(),
                start: s.rows.start,
                end: s.rows.end,
                feature_channels: s.feature_channels,
            })
            .collect(),
        modalities: dataset.modalities.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    for (name, split) in [("train", &dataset.train), ("test", &dataset.test)] {
        let mut data = Vec::new();
        let mut labels = Vec::with_capacity(split.len() * 4);
        for e in split {
            e.input.data().iter().for_each(|v| v.write_le(&mut data));
            labels.extend_from_slice(&(e.label as u32).to_le_bytes());
        }
        fs::write(dir.join(format!("{name}.bin")), data)?;
        fs::write(dir.join(format!("{name}_labels.bin")), labels)?;
    }
    Ok(())
}

/// Loads a saved dataset, converting to `T` if it was stored at the other
/// precision.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", MANIFEST)))?;
    let dtype = DType::parse(&m.dtype).ok_or_else(|| Error::Format(format!("unknown dtype `{}`", m.dtype)))?;
    let item = m.rows * m.channels;
    let read_split = |name: &str, n: usize| -> Result<Vec<Example<T>>> {
        let data = fs::read(dir.join(format!("{name}.bin")))?;
        let labels = fs::read(dir.join(format!("{name}_labels.bin")))?;
        if data.len() != n * item * dtype.size() || labels.len() != n * 4 {
            return Err(Error::Format(format!("{name} split does not match the manifest")));
        }
        let values: Vec<T> = data
            .chunks_exact(dtype.size())
            .map(|b| match dtype {
                DType::F32 => T::of(f32::read_le(b) as f64),
                DType::F64 => T::of(f64::read_le(b)),
            })
            .collect();
        (0..n)
            .map(|i| {
                let label = u32::from_le_bytes(labels[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
                if label >= m.num_classes {
                    return Err(Error::Format(format!("label {label} out of range in {name} split")));
                }
                Ok(Example {
                    input: Tensor::new([m.rows, m.channels], values[i * item..(i + 1) * item].to_vec())?,
                    label,
                })
            })
            .collect()
    };
    let spans: Vec<ModalitySpan> = m
        .spans
        .iter()
        .map(|s| ModalitySpan {
            modality: s.modality.clone(),
            rows: s.start..s.end,
            feature_channels: s.feature_channels,
        })
        .collect();
    super::validate_spans(&spans, m.rows, m.channels).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Dataset {
        kind: m.kind,
        seed: m.seed,
        num_classes: m.num_classes,
        spans,
        modalities: m.modalities,
        grid: m.grid,
        train: read_split("train", m.train_size)?,
        test: read_split("test", m.test_size)?,
    })
}
