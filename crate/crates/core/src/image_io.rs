//! PNG conversion: RGB8 images map to `[1, 3, h, w]` in `[-1, 1]`, gray masks to `BinaryMask` (255 = valid).

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn decode_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    }
}

pub fn to_u8(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| decode_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = T::lit(from_u8(p[c]));
        }
    }
    Tensor::from_vec(data, &[1, 3, h, w])
}

/// Writes image `index` of a `[b, 3, h, w]` batch.
pub fn save_image<T: Scalar>(t: &Tensor<T>, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 || index >= s[0] {
        return Err(Error::shape("save image", s, &[index + 1, 3, 0, 0]));
    }
    let (h, w) = (s[2], s[3]);
    let v = t.to_vec();
    let base = index * 3 * h * w;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| to_u8(v[base + c * h * w + y as usize * w + x as usize].to_f64_lossy());
        image::Rgb([at(0), at(1), at(2)])
    });
    img.save(path).map_err(|e| decode_err(path, e))
}

/// Gray level 255 is valid; anything darker is a hole.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| decode_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits = img.pixels().map(|p| u8::from(p[0] == 255)).collect();
    BinaryMask::from_bits(h, w, bits)
}

pub fn save_mask(m: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        image::Luma([if m.is_valid(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| decode_err(path, e))
}
