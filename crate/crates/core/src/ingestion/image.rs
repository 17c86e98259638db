use crate::error::{Error, Result};
use crate::positional::{
    concat_position, crop_coordinates, fourier_features, image_coordinates, CropRect, FourierConfig,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{ByteArray, PositionMeta};

/// 8-bit RGB image, row-major `H×W×3`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::dim(
                "rgb_image",
                format!("{}×{}×3 image needs {} bytes, got {}", height, width, height * width * 3, data.len()),
            ));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Which frame position coordinates are measured in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CoordinateFrame {
    /// `[-1, 1]` spans the crop (default).
    #[default]
    Crop,
    /// `[-1, 1]` spans the full source image (ablation only).
    Image,
}

/// Maps a byte in `[0, 255]` to `[-1, 1]`.
pub(crate) fn unit_range<T: Scalar>(v: u8) -> T {
    T::of(v as f64 / 127.5 - 1.0)
}

/// One row per crop pixel: RGB scaled to `[-1, 1]`, then 2-D Fourier
/// features of the pixel's crop-relative `(y, x)` coordinate.
pub fn image_to_bytes<T: Scalar>(
    image: &RgbImage,
    fourier: &FourierConfig,
    crop: CropRect,
    frame: CoordinateFrame,
) -> Result<ByteArray<T>> {
    if fourier.dims != 2 {
        return Err(Error::Config(format!("images need a 2-d encoding, got {}-d", fourier.dims)));
    }
    let source = (image.height, image.width);
    let grid = match frame {
        CoordinateFrame::Crop => crop_coordinates(source, crop)?,
        CoordinateFrame::Image => image_coordinates(source, crop)?,
    };
    let mut rgb = Vec::with_capacity(crop.height * crop.width * 3);
    for y in crop.top..crop.top + crop.height {
        for x in crop.left..crop.left + crop.width {
            rgb.extend(image.pixel(y, x).iter().map(|&v| unit_range::<T>(v)));
        }
    }
    let features = Tensor::new([crop.height * crop.width, 3], rgb)?;
    let enc = fourier_features(&grid, fourier)?;
    let meta = PositionMeta::Image { source, crop, frame, fourier: fourier.clone() };
    ByteArray::new("image", concat_position(&features, &enc)?, meta)
}
