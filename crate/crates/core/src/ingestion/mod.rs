//! Conversion of raw modality data into byte arrays: flattened `M×C` inputs
//! with position features attached.

mod audio;
mod container;
mod datasets;
mod fuse;
mod image;
mod permute;
mod pointcloud;
mod video;

pub use audio::{audio_to_segments, spectrogram_to_bytes};
pub use container::{load_dataset, save_dataset, MANIFEST};
pub use datasets::{synthetic_dataset, Dataset, DatasetKind, DatasetOptions, Example, PARITY_MIN_EMBED};
pub use fuse::fuse_modalities;
pub use image::{image_to_bytes, CoordinateFrame, RgbImage};
pub use permute::{permute_bytes, PermutationSpec};
pub use pointcloud::{normalize_cloud, pointcloud_to_bytes, CloudAugment, POINT_CLOUD_MAX_RESOLUTION};
pub use video::{video_to_patches, Video};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::positional::{CropRect, FourierConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Contiguous rows belonging to one modality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModalitySpan {
    pub modality: String,
    pub rows: Range<usize>,
    /// Leading channels holding the modality's own features (content plus
    /// position); the rest of the row is modality-embedding padding.
    pub feature_channels: usize,
}

impl ModalitySpan {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// How the position features of a byte array were produced.
#[derive(Clone, Debug, PartialEq)]
pub enum PositionMeta {
    None,
    Image { source: (usize, usize), crop: CropRect, frame: CoordinateFrame, fourier: FourierConfig },
    Patches { grid: [usize; 3], patch: [usize; 3], fourier: FourierConfig },
    Segments { count: usize, length: usize, padded: usize, fourier: FourierConfig },
    Spectrogram { freq: usize, time: usize, fourier: FourierConfig },
    Cloud { points: usize, fourier: FourierConfig },
    Permuted(Box<PositionMeta>),
    Fused(Vec<PositionMeta>),
}

impl PositionMeta {
    /// Spatial grid shape usable for reshaping attention maps.
    pub fn grid_shape(&self) -> Option<Vec<usize>> {
        match self {
            PositionMeta::Image { crop, .. } => Some(vec![crop.height, crop.width]),
            PositionMeta::Patches { grid, .. } => Some(grid.to_vec()),
            PositionMeta::Spectrogram { freq, time, .. } => Some(vec![*freq, *time]),
            _ => None,
        }
    }
}

/// Flattened `M×C` input with per-modality row spans.
#[derive(Clone, Debug, PartialEq)]
pub struct ByteArray<T> {
    pub data: Tensor<T>,
    pub spans: Vec<ModalitySpan>,
    pub position_meta: PositionMeta,
}

impl<T: Scalar> ByteArray<T> {
    /// Single-modality array.
    pub fn new(modality: &str, data: Tensor<T>, position_meta: PositionMeta) -> Result<Self> {
        let (m, c) = data.expect_matrix("byte_array")?;
        let spans = vec![ModalitySpan { modality: modality.to_string(), rows: 0..m, feature_channels: c }];
        let b = ByteArray { data, spans, position_meta };
        b.validate()?;
        Ok(b)
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn channels(&self) -> usize {
        self.data.last_dim()
    }

    /// Spans must tile `[0, M)` in order.
    pub fn validate(&self) -> Result<()> {
        let (m, c) = self.data.expect_matrix("byte_array")?;
        validate_spans(&self.spans, m, c)
    }

    pub fn span(&self, modality: &str) -> Result<&ModalitySpan> {
        self.spans.iter().find(|s| s.modality == modality).ok_or_else(|| Error::UnknownModality(modality.to_string()))
    }

    /// Rows of one modality.
    pub fn modality_rows(&self, modality: &str) -> Result<Tensor<T>> {
        let s = self.span(modality)?;
        self.data.slice_rows(s.rows.start, s.rows.end)
    }
}

/// Coordinate in `[-1, 1]` of the centre of chunk `index` of width `chunk`
/// along an axis of `len` samples, sample `j` sitting at `-1 + 2j/(len-1)`.
pub(crate) fn center_coordinate(index: usize, chunk: usize, len: usize) -> f64 {
    if len <= 1 {
        return 0.0;
    }
    let c = index as f64 * chunk as f64 + (chunk as f64 - 1.0) / 2.0;
    (-1.0 + 2.0 * c / (len - 1) as f64).clamp(-1.0, 1.0)
}

pub(crate) fn validate_spans(spans: &[ModalitySpan], rows: usize, channels: usize) -> Result<()> {
    let mut next = 0;
    for s in spans {
        if s.rows.start != next || s.rows.end < s.rows.start {
            return Err(Error::dim("byte_array", "modality spans do not tile the rows"));
        }
        if s.feature_channels > channels {
            return Err(Error::dim("byte_array", "span feature channels exceed row width"));
        }
        next = s.rows.end;
    }
    if next != rows {
        return Err(Error::dim("byte_array", format!("spans cover {next} of {rows} rows")));
    }
    Ok(())
}
