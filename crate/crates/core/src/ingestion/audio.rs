use crate::error::{Error, Result};
use crate::positional::{concat_position, fourier_features, FourierConfig, PositionGrid};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{center_coordinate, ByteArray, PositionMeta};

/// Splits a raw waveform into `L`-sample rows, each followed by 1-D Fourier
/// features of its centre time. When `L` does not divide the signal, `pad`
/// zero-fills the last segment; without it the call fails. The number of
/// padding samples is kept in the position metadata.
pub fn audio_to_segments<T: Scalar>(
    waveform: &[T],
    segment: usize,
    pad: bool,
    fourier: &FourierConfig,
) -> Result<ByteArray<T>> {
    if segment == 0 {
        return Err(Error::Config("audio segment length must be positive".into()));
    }
    if fourier.dims != 1 {
        return Err(Error::Config(format!("audio needs a 1-d encoding, got {}-d", fourier.dims)));
    }
    if waveform.is_empty() {
        return Err(Error::Domain("empty waveform".into()));
    }
    let rem = waveform.len() % segment;
    if rem != 0 && !pad {
        return Err(Error::Domain(format!("segment length {segment} does not divide {} samples", waveform.len())));
    }
    let padded = if rem == 0 { 0 } else { segment - rem };
    let count = (waveform.len() + padded) / segment;
    let mut data = waveform.to_vec();
    data.resize(count * segment, T::zero());
    let total = count * segment;
    let coords = (0..count).map(|i| center_coordinate(i, segment, total)).collect();
    let enc = fourier_features(&PositionGrid::new(1, coords)?, fourier)?;
    let meta = PositionMeta::Segments { count, length: segment, padded, fourier: fourier.clone() };
    let features = Tensor::new([count, segment], data)?;
    ByteArray::new("audio", concat_position(&features, &enc)?, meta)
}

/// Flattens a precomputed `F×T` spectrogram to one row per bin (its single
/// value) with 2-D Fourier features of the `(frequency, time)` coordinate.
pub fn spectrogram_to_bytes<T: Scalar>(spectrogram: &Tensor<T>, fourier: &FourierConfig) -> Result<ByteArray<T>> {
    let (freq, time) = spectrogram.expect_matrix("spectrogram_to_bytes")?;
    if fourier.dims != 2 {
        return Err(Error::Config(format!("spectrograms need a 2-d encoding, got {}-d", fourier.dims)));
    }
    let grid = PositionGrid::linear(&[freq, time])?;
    let enc = fourier_features(&grid, fourier)?;
    let features = spectrogram.clone().reshape([freq * time, 1])?;
    let meta = PositionMeta::Spectrogram { freq, time, fourier: fourier.clone() };
    ByteArray::new("audio", concat_position(&features, &enc)?, meta)
}
