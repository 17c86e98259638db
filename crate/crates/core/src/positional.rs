//! Position encodings: Fourier features over `[-1, 1]` coordinates, learned
//! tables, crop-relative coordinate grids and modality-identity padding.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::truncated_normal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSpacing {
    #[default]
    Linear,
    Logarithmic,
}

/// Fourier feature parameters.
///
/// Each of the `dims` coordinates is expanded into `sin(f_k·π·x)` and
/// `cos(f_k·π·x)` for `num_bands` frequencies running from 1 up to half the
/// per-dimension `max_resolution` (the Nyquist frequency of a signal sampled
/// `max_resolution` times across `[-1, 1]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierConfig {
    pub num_bands: usize,
    /// One entry shared by all dimensions, or one entry per dimension.
    pub max_resolution: Vec<f64>,
    pub dims: usize,
    pub concat_raw_position: bool,
    pub spacing: BandSpacing,
}

impl FourierConfig {
    pub fn new(dims: usize, num_bands: usize, max_resolution: f64) -> Self {
        FourierConfig {
            num_bands,
            max_resolution: vec![max_resolution],
            dims,
            concat_raw_position: true,
            spacing: BandSpacing::Linear,
        }
    }

    pub fn with_resolutions(mut self, per_dim: Vec<f64>) -> Self {
        self.max_resolution = per_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bands == 0 {
            return Err(Error::Config("number of Fourier bands must be at least 1".into()));
        }
        if self.dims == 0 {
            return Err(Error::Config("Fourier dimensionality must be at least 1".into()));
        }
        if self.max_resolution.len() != 1 && self.max_resolution.len() != self.dims {
            return Err(Error::Config(format!(
                "{} max resolutions for {} dimensions",
                self.max_resolution.len(),
                self.dims
            )));
        }
        if let Some(mu) = self.max_resolution.iter().find(|&&mu| !(mu >= 2.0) || !mu.is_finite()) {
            return Err(Error::Config(format!("max resolution must be at least 2, got {mu}")));
        }
        Ok(())
    }

    pub fn resolution(&self, dim: usize) -> f64 {
        if self.max_resolution.len() == 1 {
            self.max_resolution[0]
        } else {
            self.max_resolution[dim]
        }
    }

    /// Channels emitted per position: `d(2K+1)` with raw positions, `2dK`
    /// without.
    pub fn channels(&self) -> usize {
        let per_dim = 2 * self.num_bands + usize::from(self.concat_raw_position);
        self.dims * per_dim
    }

    /// Frequencies for one dimension, from 1 to `μ/2` inclusive.
    pub fn bands(&self, dim: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let top = self.resolution(dim) / 2.0;
        let k = self.num_bands;
        if k == 1 {
            return Ok(vec![1.0]);
        }
        let steps = (k - 1) as f64;
        let bands = (0..k)
            .map(|i| {
                if i == k - 1 {
                    return top;
                }
                let frac = i as f64 / steps;
                match self.spacing {
                    BandSpacing::Linear => 1.0 + frac * (top - 1.0),
                    BandSpacing::Logarithmic => top.powf(frac),
                }
            })
            .collect();
        Ok(bands)
    }
}

/// `M×d` coordinates, each in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionGrid {
    dims: usize,
    positions: Vec<f64>,
}

impl PositionGrid {
    pub fn new(dims: usize, positions: Vec<f64>) -> Result<Self> {
        if dims == 0 || !positions.len().is_multiple_of(dims) {
            return Err(Error::dim("position_grid", format!("{} coordinates for {dims} dimensions", positions.len())));
        }
        if let Some(x) = positions.iter().find(|x| !(x.abs() <= 1.0)) {
            return Err(Error::Domain(format!("coordinate {x} lies outside [-1, 1]")));
        }
        Ok(PositionGrid { dims, positions })
    }

    /// Regular grid over `axes`, row-major, each axis spanning `[-1, 1]`
    /// with both endpoints hit. A length-1 axis sits at 0.
    pub fn linear(axes: &[usize]) -> Result<Self> {
        if axes.is_empty() || axes.contains(&0) {
            return Err(Error::Domain(format!("empty grid axes {axes:?}")));
        }
        let coords: Vec<Vec<f64>> = axes.iter().map(|&n| linspace_unit(n)).collect();
        let total: usize = axes.iter().product();
        let mut positions = Vec::with_capacity(total * axes.len());
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0; axes.len()];
            for a in (0..axes.len()).rev() {
                idx[a] = rem % axes[a];
                rem /= axes[a];
            }
            for (a, &i) in idx.iter().enumerate() {
                positions.push(coords[a][i]);
            }
        }
        Ok(PositionGrid { dims: axes.len(), positions })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dims..(i + 1) * self.dims]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
}

/// `n` evenly spaced values from -1 to 1 inclusive.
pub(crate) fn linspace_unit(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| if i == n - 1 { 1.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 }).collect()
}

/// Fourier features for every position. Per dimension the layout is
/// `[sin(f_1πx) … sin(f_Kπx), cos(f_1πx) … cos(f_Kπx), x]`, dimensions in
/// order.
pub fn fourier_features<T: Scalar>(grid: &PositionGrid, cfg: &FourierConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    if grid.dims() != cfg.dims {
        return Err(Error::dim("fourier_features", format!("{}-d grid for a {}-d encoding", grid.dims(), cfg.dims)));
    }
    let bands: Vec<Vec<f64>> = (0..cfg.dims).map(|d| cfg.bands(d)).collect::<Result<_>>()?;
    let width = cfg.channels();
    let mut data = Vec::with_capacity(grid.len() * width);
    for i in 0..grid.len() {
        for (d, &x) in grid.point(i).iter().enumerate() {
            for &f in &bands[d] {
                data.push(T::of((f * PI * x).sin()));
            }
            for &f in &bands[d] {
                data.push(T::of((f * PI * x).cos()));
            }
            if cfg.concat_raw_position {
                data.push(T::of(x));
            }
        }
    }
    Tensor::new([grid.len(), width], data)
}

/// Powers-of-two frequencies `2^k`, `k = 0..K`, computed in the target
/// precision. Kept only as a comparison point: it leaves the finite range of
/// `f32` at `k = 128`.
pub fn power_of_two_bands<T: Scalar>(num_bands: usize) -> Vec<T> {
    let two = T::of(2.0);
    (0..num_bands).map(|k| two.powi(k as i32)).collect()
}

/// Pixel rectangle inside a source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn full(height: usize, width: usize) -> Self {
        CropRect { top: 0, left: 0, height, width }
    }

    fn check(&self, source: (usize, usize)) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Domain("empty crop".into()));
        }
        if self.top + self.height > source.0 || self.left + self.width > source.1 {
            return Err(Error::Domain(format!("crop {self:?} exceeds source extent {}×{}", source.0, source.1)));
        }
        Ok(())
    }
}

/// `(y, x)` coordinates of the crop's pixels, standardized to `[-1, 1]`
/// relative to the crop itself: the crop's corner pixels land on ±1 no
/// matter where the crop sits in the source or what its aspect ratio is.
pub fn crop_coordinates(source: (usize, usize), crop: CropRect) -> Result<PositionGrid> {
    crop.check(source)?;
    PositionGrid::linear(&[crop.height, crop.width])
}

/// Image-relative alternative to [`crop_coordinates`]: each crop pixel gets
/// its coordinate in the full source frame. Only meant for ablations.
pub fn image_coordinates(source: (usize, usize), crop: CropRect) -> Result<PositionGrid> {
    crop.check(source)?;
    let ys = linspace_unit(source.0);
    let xs = linspace_unit(source.1);
    let mut positions = Vec::with_capacity(crop.height * crop.width * 2);
    for y in &ys[crop.top..crop.top + crop.height] {
        for x in &xs[crop.left..crop.left + crop.width] {
            positions.push(*y);
            positions.push(*x);
        }
    }
    PositionGrid::new(2, positions)
}

/// Trainable `M×E` position table.
#[derive(Clone, Debug)]
pub struct LearnedEncoding<T> {
    pub table: Tensor<T>,
    pub init_scale: f64,
}

pub fn learned_encoding_init<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    channels: usize,
    init_scale: f64,
    rng: &mut R,
) -> Result<LearnedEncoding<T>> {
    if rows == 0 || channels == 0 {
        return Err(Error::Config(format!("learned encoding needs a non-empty table, got {rows}×{channels}")));
    }
    Ok(LearnedEncoding { table: truncated_normal(rng, [rows, channels], init_scale)?, init_scale })
}

/// Common padded width and per-modality embedding sizes: every modality
/// reaches `C = max(Cᵢ + minᵢ)`, so modality `i` gets `C − Cᵢ` embedding
/// channels.
pub fn modality_embed_sizes(channels: &[usize], min_embed: &[usize]) -> Result<(usize, Vec<usize>)> {
    if channels.len() != min_embed.len() || channels.is_empty() {
        return Err(Error::Config(format!(
            "{} modalities but {} minimum embedding sizes",
            channels.len(),
            min_embed.len()
        )));
    }
    let target = channels.iter().zip(min_embed).map(|(c, e)| c + e).max().unwrap_or(0);
    Ok((target, channels.iter().map(|c| target - c).collect()))
}

/// Appends each modality's embedding vector to every one of its rows and
/// stacks the modalities along the index axis.
pub fn modality_pad<T: Scalar>(arrays: &[&Tensor<T>], embeddings: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if arrays.len() != embeddings.len() || arrays.is_empty() {
        return Err(Error::Config(format!("{} modalities but {} embeddings", arrays.len(), embeddings.len())));
    }
    let mut target = None;
    let mut padded = Vec::with_capacity(arrays.len());
    for (a, e) in arrays.iter().zip(embeddings) {
        let (rows, c) = a.expect_matrix("modality_pad")?;
        let width = c + e.numel();
        match target {
            None => target = Some(width),
            Some(t) if t != width => {
                return Err(Error::Config(format!("modalities reach inconsistent widths {t} and {width}")))
            }
            _ => {}
        }
        let tiled = Tensor::from_fn([rows, e.numel()], |i| e.data()[i % e.numel().max(1)]);
        padded.push(Tensor::concat_cols(&[a, &tiled])?);
    }
    let refs: Vec<&Tensor<T>> = padded.iter().collect();
    Tensor::concat_rows(&refs)
}

/// Channel concatenation, features first.
pub fn concat_position<T: Scalar>(features: &Tensor<T>, encodings: &Tensor<T>) -> Result<Tensor<T>> {
    let (mf, _) = features.expect_matrix("concat_position")?;
    let (me, _) = encodings.expect_matrix("concat_position")?;
    if mf != me {
        return Err(Error::dim("concat_position", format!("{mf} feature rows but {me} encoding rows")));
    }
    Tensor::concat_cols(&[features, encodings])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng_from_seed;

    #[test]
    fn origin_gives_zero_sines_unit_cosines() {
        let grid = PositionGrid::new(3, vec![0.0; 3]).unwrap();
        let cfg = FourierConfig::new(3, 5, 16.0);
        let f: Tensor<f64> = fourier_features(&grid, &cfg).unwrap();
        for d in 0..3 {
            let block = &f.row(0)[d * 11..(d + 1) * 11];
            assert!(block[..5].iter().all(|&v| v == 0.0));
            assert!(block[5..10].iter().all(|&v| v == 1.0));
            assert_eq!(block[10], 0.0);
        }
    }

    #[test]
    fn imagenet_channel_count() {
        let cfg = FourierConfig::new(2, 64, 224.0);
        assert_eq!(cfg.channels(), 258);
        assert_eq!(cfg.channels() + 3, 261);
        let pc = FourierConfig::new(3, 64, 1120.0);
        assert_eq!(pc.channels(), 387);
        let no_raw = FourierConfig { concat_raw_position: false, ..cfg };
        assert_eq!(no_raw.channels(), 2 * 2 * 64);
    }

    #[test]
    fn band_examples() {
        assert_eq!(FourierConfig::new(1, 3, 8.0).bands(0).unwrap(), vec![1.0, 2.5, 4.0]);
        assert_eq!(FourierConfig::new(1, 1, 8.0).bands(0).unwrap(), vec![1.0]);
        assert_eq!(FourierConfig::new(1, 2, 10.0).bands(0).unwrap(), vec![1.0, 5.0]);
        let log = FourierConfig { spacing: BandSpacing::Logarithmic, ..FourierConfig::new(1, 3, 8.0) };
        let b = log.bands(0).unwrap();
        assert_eq!(b[0], 1.0);
        assert_eq!(b[2], 4.0);
        assert!((b[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_errors() {
        assert!(FourierConfig::new(2, 0, 8.0).validate().is_err());
        assert!(FourierConfig::new(2, 4, 1.0).validate().is_err());
        assert!(FourierConfig::new(2, 4, 8.0).with_resolutions(vec![8.0, 8.0, 8.0]).validate().is_err());
    }

    #[test]
    fn out_of_range_coordinates_are_domain_errors() {
        assert!(matches!(PositionGrid::new(1, vec![1.5]), Err(Error::Domain(_))));
        assert!(PositionGrid::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn crop_grid_endpoints() {
        let g = crop_coordinates((3, 3), CropRect::full(3, 3)).unwrap();
        let xs: Vec<f64> = (0..3).map(|i| g.point(i)[1]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        let a = crop_coordinates((100, 80), CropRect { top: 3, left: 9, height: 17, width: 40 }).unwrap();
        let b = crop_coordinates((100, 80), CropRect { top: 50, left: 0, height: 17, width: 40 }).unwrap();
        assert_eq!(a, b);
        for d in 0..2 {
            let vals: Vec<f64> = (0..a.len()).map(|i| a.point(i)[d]).collect();
            assert_eq!(vals.iter().copied().fold(f64::INFINITY, f64::min), -1.0);
            assert_eq!(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
        assert!(crop_coordinates((4, 4), CropRect { top: 0, left: 0, height: 0, width: 2 }).is_err());
        assert!(crop_coordinates((4, 4), CropRect { top: 3, left: 0, height: 2, width: 2 }).is_err());
    }

    #[test]
    fn image_coordinates_depend_on_crop_position() {
        let src = (10, 10);
        let a = image_coordinates(src, CropRect { top: 0, left: 0, height: 4, width: 4 }).unwrap();
        let b = image_coordinates(src, CropRect { top: 5, left: 5, height: 4, width: 4 }).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.point(0), &[-1.0, -1.0]);
    }

    #[test]
    fn learned_encoding_statistics() {
        let mut rng = rng_from_seed(11);
        let enc: LearnedEncoding<f64> = learned_encoding_init(128, 128, 0.02, &mut rng).unwrap();
        let d = enc.table.data();
        let n = d.len() as f64;
        let std = (d.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        assert!((std - 0.02).abs() < 0.002);
        assert!(d.iter().all(|v| v.abs() <= 2.0));
        let unit: LearnedEncoding<f64> = learned_encoding_init(64, 32, 1.0, &mut rng).unwrap();
        assert!(unit.table.data().iter().all(|v| v.abs() <= 2.0));
        assert!(learned_encoding_init::<f64, _>(4, 4, 0.0, &mut rng).is_err());
        assert!(learned_encoding_init::<f64, _>(0, 4, 1.0, &mut rng).is_err());
    }

    #[test]
    fn modality_embedding_arithmetic() {
        let (c, e) = modality_embed_sizes(&[387, 128], &[4, 0]).unwrap();
        assert_eq!(c, 391);
        assert_eq!(e, vec![4, 263]);
    }

    #[test]
    fn modality_pad_examples() {
        let a = Tensor::<f64>::from_rows(&[&[1., 2.], &[3., 4.]]).unwrap();
        let empty = Tensor::<f64>::zeros([0]);
        assert_eq!(modality_pad(&[&a], &[&empty]).unwrap(), a);

        let b = Tensor::<f64>::from_rows(&[&[5.]]).unwrap();
        let ea = Tensor::<f64>::zeros([1]);
        let eb = Tensor::<f64>::zeros([2]);
        let out = modality_pad(&[&a, &b], &[&ea, &eb]).unwrap();
        assert_eq!(out.shape(), &[3, 3]);
        assert_eq!(out.row(0), &[1., 2., 0.]);
        assert_eq!(out.row(2), &[5., 0., 0.]);

        let tag = Tensor::<f64>::new([2], vec![7., 8.]).unwrap();
        let out = modality_pad(&[&a, &b], &[&ea, &tag]).unwrap();
        assert_eq!(out.row(2), &[5., 7., 8.]);
        assert_ne!(&out.row(0)[2..], &out.row(2)[1..]);

        assert!(matches!(modality_pad(&[&a, &b], &[&ea, &ea]), Err(Error::Config(_))));
    }

    #[test]
    fn concat_position_examples() {
        let rgb = Tensor::<f64>::zeros([5, 3]);
        let grid = PositionGrid::linear(&[5, 1]).unwrap();
        let enc: Tensor<f64> = fourier_features(&grid, &FourierConfig::new(2, 64, 224.0)).unwrap();
        assert_eq!(concat_position(&rgb, &enc).unwrap().shape(), &[5, 261]);
        let none = Tensor::<f64>::zeros([5, 0]);
        assert_eq!(concat_position(&rgb, &none).unwrap(), rgb);
        assert!(concat_position(&rgb, &Tensor::zeros([4, 2])).is_err());
    }
}
