use rand::Rng;

use crate::error::{Error, Result};
use crate::positional::{fourier_features, FourierConfig, PositionGrid};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{ByteArray, PositionMeta};

/// Default maximum resolution for point-cloud Fourier features.
pub const POINT_CLOUD_MAX_RESOLUTION: f64 = 1120.0;

/// Per-point scaling applied between centering and unit-cube normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudAugment {
    pub scale_low: f64,
    pub scale_high: f64,
}

impl Default for CloudAugment {
    fn default() -> Self {
        CloudAugment { scale_low: 0.99, scale_high: 1.01 }
    }
}

fn center(points: &mut [[f64; 3]]) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points.iter() {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    for p in points.iter_mut() {
        for a in 0..3 {
            p[a] -= mean[a] / n;
        }
    }
}

/// Zero-centres the cloud, optionally scales each point by a factor drawn
/// uniformly from the augment range, re-centres, and divides by the largest
/// absolute coordinate so every point lies in `[-1, 1]³`.
pub fn normalize_cloud<R: Rng + ?Sized>(
    points: &[[f64; 3]],
    augment: Option<(CloudAugment, &mut R)>,
) -> Result<Vec<[f64; 3]>> {
    if points.is_empty() {
        return Err(Error::Domain("point cloud has no points".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "normalize_cloud" });
    }
    let mut pts = points.to_vec();
    center(&mut pts);
    if let Some((aug, rng)) = augment {
        for p in pts.iter_mut() {
            let s = rng.random_range(aug.scale_low..=aug.scale_high);
            p.iter_mut().for_each(|v| *v *= s);
        }
        center(&mut pts);
    }
    let extent = pts.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if extent == 0.0 {
        return Err(Error::Domain("degenerate point cloud: all points coincide".into()));
    }
    for p in pts.iter_mut() {
        p.iter_mut().for_each(|v| *v = (*v / extent).clamp(-1.0, 1.0));
    }
    Ok(pts)
}

/// Rows are the 3-D Fourier features of the normalized points.
pub fn pointcloud_to_bytes<T: Scalar, R: Rng + ?Sized>(
    points: &[[f64; 3]],
    fourier: &FourierConfig,
    augment: Option<(CloudAugment, &mut R)>,
) -> Result<ByteArray<T>> {
    if fourier.dims != 3 {
        return Err(Error::Config(format!("point clouds need a 3-d encoding, got {}-d", fourier.dims)));
    }
    let pts = normalize_cloud(points, augment)?;
    let grid = PositionGrid::new(3, pts.iter().flatten().copied().collect())?;
    let data: Tensor<T> = fourier_features(&grid, fourier)?;
    let meta = PositionMeta::Cloud { points: pts.len(), fourier: fourier.clone() };
    ByteArray::new("points", data, meta)
}
