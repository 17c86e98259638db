use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::item_rng;
use crate::model::ModalityConfig;
use crate::positional::{concat_position, CropRect, FourierConfig, PositionGrid};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::image::{image_to_bytes, CoordinateFrame, RgbImage};
use super::{
    fuse_modalities, pointcloud_to_bytes, ByteArray, CloudAugment, ModalitySpan, PermutationSpec, PositionMeta,
};

/// Desk-scale generated tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// 16 scalars per item; label 1 iff their mean is positive.
    SignOfMean,
    /// Four shapes drawn on an 8×8 grid.
    ProceduralShapes,
    /// Points sampled on a sphere or on a cube surface.
    TwoClassClouds,
    /// A video stream and an audio stream each carry one bit; the label is
    /// their XOR.
    TwoModalityParity,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::SignOfMean,
        DatasetKind::ProceduralShapes,
        DatasetKind::TwoClassClouds,
        DatasetKind::TwoModalityParity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::SignOfMean => "sign-of-mean",
            DatasetKind::ProceduralShapes => "procedural-shapes",
            DatasetKind::TwoClassClouds => "two-class-clouds",
            DatasetKind::TwoModalityParity => "two-modality-parity",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::ProceduralShapes => 4,
            _ => 2,
        }
    }

    fn default_fourier(self) -> (usize, f64) {
        match self {
            DatasetKind::SignOfMean => (2, SIGN_ROWS as f64),
            DatasetKind::ProceduralShapes => (4, SHAPE_SIDE as f64),
            DatasetKind::TwoClassClouds => (4, 16.0),
            DatasetKind::TwoModalityParity => (1, 2.0),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign-of-mean" => Ok(DatasetKind::SignOfMean),
            "procedural-shapes" | "procedural-shapes-8x8" => Ok(DatasetKind::ProceduralShapes),
            "two-class-clouds" => Ok(DatasetKind::TwoClassClouds),
            "two-modality-parity" => Ok(DatasetKind::TwoModalityParity),
            other => Err(Error::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Generator knobs. `None` picks the kind's default.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DatasetOptions {
    pub fourier_bands: Option<usize>,
    pub max_resolution: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub input: Tensor<T>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub kind: DatasetKind,
    pub seed: u64,
    pub num_classes: usize,
    /// Row layout shared by every item.
    pub spans: Vec<ModalitySpan>,
    /// Fused modalities, empty for single-modality data.
    pub modalities: Vec<ModalityConfig>,
    /// Spatial shape of the rows, when they form a grid.
    pub grid: Option<Vec<usize>>,
    pub train: Vec<Example<T>>,
    pub test: Vec<Example<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn rows(&self) -> usize {
        self.first().map_or(0, |e| e.input.rows())
    }

    pub fn channels(&self) -> usize {
        self.first().map_or(0, |e| e.input.last_dim())
    }

    fn first(&self) -> Option<&Example<T>> {
        self.train.first().or(self.test.first())
    }

    /// Applies one shared row permutation to every item.
    pub fn permuted(&self, spec: &PermutationSpec) -> Result<Self> {
        if spec.len() != self.rows() {
            return Err(Error::dim(
                "permute_dataset",
                format!("permutation of {} for {} rows", spec.len(), self.rows()),
            ));
        }
        if self.spans.len() > 1 {
            return Err(Error::Domain("permuting a fused dataset would split its modality spans".into()));
        }
        let apply = |set: &[Example<T>]| {
            set.iter()
                .map(|e| Ok(Example { input: e.input.permute_rows(&spec.permutation)?, label: e.label }))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Dataset { train: apply(&self.train)?, test: apply(&self.test)?, grid: None, ..self.clone() })
    }

    /// Byte array for one item, carrying the dataset's spans.
    pub fn byte_array(&self, example: &Example<T>) -> ByteArray<T> {
        ByteArray { data: example.input.clone(), spans: self.spans.clone(), position_meta: PositionMeta::None }
    }

    /// Fraction of labels equal to the majority class in the test split.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.num_classes];
        self.test.iter().for_each(|e| counts[e.label] += 1);
        counts.into_iter().max().unwrap_or(0) as f64 / self.test.len().max(1) as f64
    }
}

const SIGN_ROWS: usize = 16;
const SIGN_MARGIN: f64 = 0.25;
const SHAPE_SIDE: usize = 8;
const CLOUD_POINTS: usize = 64;
const PARITY_VIDEO_ROWS: usize = 8;
const PARITY_AUDIO_ROWS: usize = 6;
const PARITY_VIDEO_PATTERN: [f64; 4] = [1.0, -1.0, 1.0, -1.0];
const PARITY_AUDIO_PATTERN: [f64; 3] = [1.0, 0.0, -1.0];
const PARITY_NOISE: f64 = 0.5;
/// Minimum embedding widths used when fusing the parity streams.
pub const PARITY_MIN_EMBED: [usize; 2] = [4, 2];
const TEST_STREAM: u64 = 1 << 32;

/// Deterministic train/test split. Item `i` of the train split is drawn from
/// `item_rng(seed, i)` and test items from a disjoint stream range, so every
/// item is reproducible on its own.
pub fn synthetic_dataset<T: Scalar>(
    kind: DatasetKind,
    train_size: usize,
    test_size: usize,
    seed: u64,
    options: DatasetOptions,
) -> Result<Dataset<T>> {
    let (k0, mu0) = kind.default_fourier();
    let bands = options.fourier_bands.unwrap_or(k0);
    let mu = options.max_resolution.unwrap_or(mu0);
    let gen = Generator::new(kind, bands, mu)?;
    let make = |offset: u64, n: usize| {
        (0..n).map(|i| gen.example::<T>(&mut item_rng(seed, offset + i as u64))).collect::<Result<Vec<_>>>()
    };
    let train = make(0, train_size)?;
    let test = make(TEST_STREAM, test_size)?;
    Ok(Dataset {
        kind,
        seed,
        num_classes: kind.num_classes(),
        spans: gen.spans.clone(),
        modalities: gen.modalities.clone(),
        grid: (kind == DatasetKind::ProceduralShapes).then(|| vec![SHAPE_SIDE, SHAPE_SIDE]),
        train,
        test,
    })
}

struct Generator {
    kind: DatasetKind,
    fourier: FourierConfig,
    spans: Vec<ModalitySpan>,
    modalities: Vec<ModalityConfig>,
}

impl Generator {
    fn new(kind: DatasetKind, bands: usize, mu: f64) -> Result<Self> {
        let dims = match kind {
            DatasetKind::SignOfMean => 1,
            DatasetKind::ProceduralShapes => 2,
            DatasetKind::TwoClassClouds => 3,
            DatasetKind::TwoModalityParity => 1,
        };
        let fourier = FourierConfig::new(dims, bands, mu);
        fourier.validate()?;
        let mut g = Generator { kind, fourier, spans: Vec::new(), modalities: Vec::new() };
        // Layout is fixed per kind, so one probe item fixes the spans.
        let probe: ByteArray<f64> = g.bytes(&mut item_rng(0, 0))?.0;
        g.spans = probe.spans.clone();
        if kind == DatasetKind::TwoModalityParity {
            g.modalities = probe
                .spans
                .iter()
                .zip(PARITY_MIN_EMBED)
                .map(|(s, min_embed)| ModalityConfig {
                    name: s.modality.clone(),
                    feature_channels: s.feature_channels,
                    min_embed,
                })
                .collect();
        }
        Ok(g)
    }

    fn example<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Result<Example<T>> {
        let (b, label) = self.bytes::<T>(rng)?;
        Ok(Example { input: b.data, label })
    }

    fn bytes<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Result<(ByteArray<T>, usize)> {
        match self.kind {
            DatasetKind::SignOfMean => sign_of_mean(rng, &self.fourier),
            DatasetKind::ProceduralShapes => shape(rng, &self.fourier),
            DatasetKind::TwoClassClouds => cloud(rng, &self.fourier),
            DatasetKind::TwoModalityParity => parity(rng, &self.fourier),
        }
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("positive std")
}

fn sign_of_mean<T: Scalar>(rng: &mut ChaCha8Rng, fourier: &FourierConfig) -> Result<(ByteArray<T>, usize)> {
    let mut v: Vec<f64> = normal(1.0).sample_iter(&mut *rng).take(SIGN_ROWS).collect();
    let mean = v.iter().sum::<f64>() / SIGN_ROWS as f64;
    // Push the mean away from zero so the label never sits on the boundary.
    let sign = if mean >= 0.0 { 1.0 } else { -1.0 };
    let shift = sign * (mean.abs() + SIGN_MARGIN) - mean;
    v.iter_mut().for_each(|x| *x += shift);
    let label = usize::from(sign > 0.0);
    let values = Tensor::new([SIGN_ROWS, 1], v.into_iter().map(T::of).collect())?;
    let enc = crate::positional::fourier_features(&PositionGrid::linear(&[SIGN_ROWS])?, fourier)?;
    Ok((ByteArray::new("values", concat_position(&values, &enc)?, PositionMeta::None)?, label))
}

/// Classes: 0 horizontal bar, 1 vertical bar, 2 filled 3×3 square,
/// 3 diagonal line. Shapes are bright on a dim noisy background.
fn shape<T: Scalar>(rng: &mut ChaCha8Rng, fourier: &FourierConfig) -> Result<(ByteArray<T>, usize)> {
    let n = SHAPE_SIDE;
    let label = rng.random_range(0..4usize);
    let mut on = vec![false; n * n];
    match label {
        0 => {
            let y = rng.random_range(0..n);
            (0..n).for_each(|x| on[y * n + x] = true);
        }
        1 => {
            let x = rng.random_range(0..n);
            (0..n).for_each(|y| on[y * n + x] = true);
        }
        2 => {
            let (y0, x0) = (rng.random_range(0..n - 2), rng.random_range(0..n - 2));
            for y in y0..y0 + 3 {
                for x in x0..x0 + 3 {
                    on[y * n + x] = true;
                }
            }
        }
        _ => {
            let anti = rng.random::<bool>();
            (0..n).for_each(|y| on[y * n + if anti { n - 1 - y } else { y }] = true);
        }
    }
    let mut data = Vec::with_capacity(n * n * 3);
    for &lit in &on {
        let v: u8 = if lit { rng.random_range(170..=255) } else { rng.random_range(0..=60) };
        data.extend([v; 3]);
    }
    let img = RgbImage::new(n, n, data)?;
    let b = image_to_bytes(&img, fourier, CropRect::full(n, n), CoordinateFrame::Crop)?;
    Ok((b, label))
}

/// Class 0 samples the unit sphere, class 1 the surface of the unit cube,
/// each at a random scale and offset.
fn cloud<T: Scalar>(rng: &mut ChaCha8Rng, fourier: &FourierConfig) -> Result<(ByteArray<T>, usize)> {
    let label = rng.random_range(0..2usize);
    let std = normal(1.0);
    let scale = rng.random_range(0.5..2.0);
    let offset: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let points: Vec<[f64; 3]> = (0..CLOUD_POINTS)
        .map(|_| {
            let mut p: [f64; 3] = std::array::from_fn(|_| std.sample(&mut *rng));
            let r = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            if label == 0 {
                p.iter_mut().for_each(|v| *v /= r);
            } else {
                let face = rng.random_range(0..3);
                p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                p[face] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            std::array::from_fn(|a| p[a] * scale + offset[a])
        })
        .collect();
    let b = pointcloud_to_bytes(&points, fourier, None::<(CloudAugment, &mut ChaCha8Rng)>)?;
    Ok((b, label))
}

fn parity<T: Scalar>(rng: &mut ChaCha8Rng, fourier: &FourierConfig) -> Result<(ByteArray<T>, usize)> {
    let noise = normal(PARITY_NOISE);
    let stream = |name: &str, rows: usize, pattern: &[f64], rng: &mut ChaCha8Rng| -> Result<(ByteArray<T>, usize)> {
        let bit = rng.random_range(0..2usize);
        let sign = if bit == 1 { 1.0 } else { -1.0 };
        let content = Tensor::from_fn([rows, pattern.len()], |i| {
            T::of(sign * pattern[i % pattern.len()] + noise.sample(&mut *rng))
        });
        let enc = crate::positional::fourier_features(&PositionGrid::linear(&[rows])?, fourier)?;
        Ok((ByteArray::new(name, concat_position(&content, &enc)?, PositionMeta::None)?, bit))
    };
    let (video, a) = stream("video", PARITY_VIDEO_ROWS, &PARITY_VIDEO_PATTERN, rng)?;
    let (audio, b) = stream("audio", PARITY_AUDIO_ROWS, &PARITY_AUDIO_PATTERN, rng)?;
    Ok((fuse_modalities(&[video, audio], &PARITY_MIN_EMBED)?, a ^ b))
}
