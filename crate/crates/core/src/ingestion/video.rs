use crate::error::{Error, Result};
use crate::positional::{concat_position, fourier_features, FourierConfig, PositionGrid};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::image::unit_range;
use super::{center_coordinate, ByteArray, PositionMeta};

/// 8-bit RGB clip, row-major `T×H×W×3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * height * width * 3 {
            return Err(Error::dim("video", "buffer does not match T×H×W×3"));
        }
        Ok(Video { frames, height, width, data })
    }

    fn at(&self, t: usize, y: usize, x: usize, c: usize) -> u8 {
        self.data[((t * self.height + y) * self.width + x) * 3 + c]
    }
}

/// One row per `t×h×w` space-time patch: the patch's RGB values flattened in
/// `(t, y, x, channel)` order and scaled to `[-1, 1]`, then 3-D Fourier
/// features of the patch centre, with time, vertical and horizontal
/// coordinates each scaled to `[-1, 1]`.
pub fn video_to_patches<T: Scalar>(video: &Video, patch: [usize; 3], fourier: &FourierConfig) -> Result<ByteArray<T>> {
    if fourier.dims != 3 {
        return Err(Error::Config(format!("video needs a 3-d encoding, got {}-d", fourier.dims)));
    }
    let dims = [video.frames, video.height, video.width];
    if patch.contains(&0) || dims.iter().zip(&patch).any(|(d, p)| d % p != 0) {
        return Err(Error::Domain(format!("patch {patch:?} does not divide video {dims:?}")));
    }
    let grid = [dims[0] / patch[0], dims[1] / patch[1], dims[2] / patch[2]];
    let rows = grid.iter().product::<usize>();
    let width = patch.iter().product::<usize>() * 3;
    let mut feats = Vec::with_capacity(rows * width);
    for gt in 0..grid[0] {
        for gy in 0..grid[1] {
            for gx in 0..grid[2] {
                for dt in 0..patch[0] {
                    for dy in 0..patch[1] {
                        for dx in 0..patch[2] {
                            for c in 0..3 {
                                let v = video.at(gt * patch[0] + dt, gy * patch[1] + dy, gx * patch[2] + dx, c);
                                feats.push(unit_range::<T>(v));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut coords = Vec::with_capacity(rows * 3);
    for gt in 0..grid[0] {
        for gy in 0..grid[1] {
            for gx in 0..grid[2] {
                for (a, g) in [gt, gy, gx].into_iter().enumerate() {
                    coords.push(center_coordinate(g, patch[a], dims[a]));
                }
            }
        }
    }
    let positions = PositionGrid::new(3, coords)?;
    let enc = fourier_features(&positions, fourier)?;
    let features = Tensor::new([rows, width], feats)?;
    let meta = PositionMeta::Patches { grid, patch, fourier: fourier.clone() };
    ByteArray::new("video", concat_position(&features, &enc)?, meta)
}
