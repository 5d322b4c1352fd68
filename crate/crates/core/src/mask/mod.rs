//! Pixel validity masks: free-form sampling, hole statistics and padding.
//!
//! Convention throughout: `1` marks a valid (visible) pixel, `0` a hole.

mod token;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use token::{
    derive_token_mask, effective_window, partition_windows, reverse_windows, update_token_mask, window_index,
    wrap_regions, TokenMask, TokenRule, Windows,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn all_valid(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn all_invalid(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("mask", &[bits.len()], &[height, width]));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::contract("mask values must be 0 or 1"));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, valid: bool) {
        self.bits[y * self.width + x] = valid as u8;
    }

    pub fn valid_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Fraction of hole pixels.
    pub fn hole_ratio(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        1.0 - self.valid_count() as f64 / self.bits.len() as f64
    }

    /// `[1, 1, h, w]` tensor of 0/1 values.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.bits.iter().map(|&b| if b == 1 { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(data, &[1, 1, self.height, self.width]).expect("extent matches")
    }

    /// Stacks masks into a `[b, 1, h, w]` tensor.
    pub fn batch_tensor<T: Scalar>(masks: &[BinaryMask]) -> Result<Tensor<T>> {
        let first = masks.first().ok_or_else(|| Error::contract("empty mask batch"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if (m.height, m.width) != (h, w) {
                return Err(Error::shape("mask batch", &[h, w], &[m.height, m.width]));
            }
            data.extend(m.bits.iter().map(|&b| if b == 1 { T::one() } else { T::zero() }));
        }
        Tensor::from_vec(data, &[masks.len(), 1, h, w])
    }

    fn fill_rect(&mut self, y0: usize, x0: usize, h: usize, w: usize) {
        for y in y0..(y0 + h).min(self.height) {
            let row = y * self.width;
            for b in &mut self.bits[row + x0..row + (x0 + w).min(self.width)] {
                *b = 0;
            }
        }
    }

    /// Marks every pixel whose centre lies within `radius` of segment `a`–`b` as a hole.
    fn fill_capsule(&mut self, a: (f64, f64), b: (f64, f64), radius: f64) {
        let (h, w) = (self.height as f64, self.width as f64);
        let x_lo = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
        let x_hi = ((a.0.max(b.0) + radius).ceil().min(w)).max(0.0) as usize;
        let y_lo = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
        let y_hi = ((a.1.max(b.1) + radius).ceil().min(h)).max(0.0) as usize;
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let r2 = radius * radius;
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if cx * cx + cy * cy <= r2 {
                    self.bits[y * self.width + x] = 0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSetting {
    Small,
    Large,
}

impl std::str::FromStr for MaskSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(MaskSetting::Small),
            "large" => Ok(MaskSetting::Large),
            other => Err(Error::contract(format!("unknown mask setting '{other}' (small|large)"))),
        }
    }
}

/// Parameters of the free-form mask sampler. Count ranges are inclusive.
///
/// Brush widths are given at `reference_size` pixels and scale linearly with
/// the shorter side of the requested mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub setting: MaskSetting,
    /// Rectangles with sides up to the full image extent.
    pub full_rects: (u32, u32),
    /// Rectangles with sides up to half the image extent.
    pub half_rects: (u32, u32),
    pub strokes: (u32, u32),
    pub brush_width: (f64, f64),
    pub vertices: (u32, u32),
    /// Range of a rectangle side as a fraction of its class maximum.
    pub rect_fraction: (f64, f64),
    pub reference_size: usize,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(setting: MaskSetting, seed: u64) -> Self {
        let (full, half, strokes) = match setting {
            MaskSetting::Large => (3, 5, 9),
            MaskSetting::Small => (2, 3, 4),
        };
        MaskSpec {
            setting,
            full_rects: (0, full),
            half_rects: (0, half),
            strokes: (0, strokes),
            brush_width: (12.0, 48.0),
            vertices: (4, 18),
            rect_fraction: (0.0, 1.0),
            reference_size: 512,
            seed,
        }
    }

    pub fn large(seed: u64) -> Self {
        Self::new(MaskSetting::Large, seed)
    }

    pub fn small(seed: u64) -> Self {
        Self::new(MaskSetting::Small, seed)
    }

    /// A spec that draws nothing (every mask all-valid).
    pub fn empty(seed: u64) -> Self {
        MaskSpec {
            full_rects: (0, 0),
            half_rects: (0, 0),
            strokes: (0, 0),
            ..Self::large(seed)
        }
    }

    /// Samples with a generator seeded from `self.seed`.
    pub fn sample_seeded(&self, height: usize, width: usize) -> Result<BinaryMask> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        sample_free_form_mask(self, height, width, &mut rng)
    }
}

fn count<R: Rng + ?Sized>((lo, hi): (u32, u32), rng: &mut R) -> u32 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn uniform<R: Rng + ?Sized>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Union of random rectangles and brush strokes, marked as holes.
pub fn sample_free_form_mask<R: Rng + ?Sized>(
    spec: &MaskSpec,
    height: usize,
    width: usize,
    rng: &mut R,
) -> Result<BinaryMask> {
    if height == 0 || width == 0 {
        return Err(Error::contract(format!("mask extent must be positive, got {height}x{width}")));
    }
    let mut mask = BinaryMask::all_valid(height, width);
    for (range, divisor) in [(spec.half_rects, 2), (spec.full_rects, 1)] {
        let (max_h, max_w) = ((height / divisor).max(1), (width / divisor).max(1));
        for _ in 0..count(range, rng) {
            let rh = ((uniform(spec.rect_fraction, rng) * max_h as f64).round() as usize).min(max_h);
            let rw = ((uniform(spec.rect_fraction, rng) * max_w as f64).round() as usize).min(max_w);
            let y0 = rng.random_range(0..=height - rh);
            let x0 = rng.random_range(0..=width - rw);
            mask.fill_rect(y0, x0, rh, rw);
        }
    }
    draw_strokes(&mut mask, spec, rng);
    Ok(mask)
}

fn draw_strokes<R: Rng + ?Sized>(mask: &mut BinaryMask, spec: &MaskSpec, rng: &mut R) {
    use std::f64::consts::PI;
    let (h, w) = (mask.height as f64, mask.width as f64);
    let mean_angle = 2.0 * PI / 5.0;
    let angle_range = 2.0 * PI / 15.0;
    let avg_radius = (h * h + w * w).sqrt() / 8.0;
    let radius_dist = Normal::new(avg_radius, avg_radius / 2.0).expect("positive spread");
    let width_scale = h.min(w) / spec.reference_size as f64;
    for _ in 0..count(spec.strokes, rng) {
        let n_vertex = count(spec.vertices, rng) as usize;
        let angle_min = mean_angle - rng.random_range(0.0..angle_range);
        let angle_max = mean_angle + rng.random_range(0.0..angle_range);
        let mut vertex = vec![(rng.random_range(0.0..w), rng.random_range(0.0..h))];
        for i in 0..n_vertex {
            let a = rng.random_range(angle_min..angle_max);
            let angle = if i % 2 == 0 { 2.0 * PI - a } else { a };
            let r = radius_dist.sample(rng).clamp(0.0, 2.0 * avg_radius);
            let last = vertex[vertex.len() - 1];
            vertex.push((
                (last.0 + r * angle.cos()).clamp(0.0, w),
                (last.1 + r * angle.sin()).clamp(0.0, h),
            ));
        }
        let brush = (uniform(spec.brush_width, rng) * width_scale).max(1.0);
        for seg in vertex.windows(2) {
            mask.fill_capsule(seg[0], seg[1], brush / 2.0);
        }
    }
}

/// `n` masks drawn in sequence from one generator seeded with `spec.seed`.
pub fn sample_masks(spec: &MaskSpec, n: usize, height: usize, width: usize) -> Result<Vec<BinaryMask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..n).map(|_| sample_free_form_mask(spec, height, width, &mut rng)).collect()
}

pub const HIST_BINS: usize = 20;

/// 20-bin histogram of hole ratios over `[0, 1]`; the last bin is closed.
pub fn mask_stats(masks: &[BinaryMask]) -> Result<[usize; HIST_BINS]> {
    if masks.is_empty() {
        return Err(Error::contract("mask_stats needs at least one mask"));
    }
    let mut hist = [0usize; HIST_BINS];
    for m in masks {
        let bin = ((m.hole_ratio() * HIST_BINS as f64).floor() as usize).min(HIST_BINS - 1);
        hist[bin] += 1;
    }
    Ok(hist)
}

/// Record of the extent an input had before [`pad_to_multiple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
}

impl CropRecord {
    pub fn is_identity(&self) -> bool {
        self.height == self.padded_height && self.width == self.padded_width
    }

    /// Restores the original extent of a `[.., h, w]` tensor.
    pub fn crop<T: Scalar>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let r = t.rank();
        if r < 2 || t.dim(r - 2) != self.padded_height || t.dim(r - 1) != self.padded_width {
            return Err(Error::shape("crop", t.shape(), &[self.padded_height, self.padded_width]));
        }
        t.narrow(r - 2, 0, self.height)?.narrow(r - 1, 0, self.width)
    }

    pub fn crop_mask(&self, m: &BinaryMask) -> BinaryMask {
        let mut bits = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            bits.extend_from_slice(&m.bits[y * m.width..y * m.width + self.width]);
        }
        BinaryMask {
            height: self.height,
            width: self.width,
            bits,
        }
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let t = i % period;
    if t < n {
        t
    } else {
        period - t
    }
}

/// Pads a `[.., h, w]` image by reflection and its mask with holes on the
/// bottom/right so both extents become multiples of `multiple`.
pub fn pad_to_multiple<T: Scalar>(
    image: &Tensor<T>,
    mask: &BinaryMask,
    multiple: usize,
) -> Result<(Tensor<T>, BinaryMask, CropRecord)> {
    if multiple == 0 {
        return Err(Error::contract("pad multiple must be at least 1"));
    }
    let r = image.rank();
    if r < 2 || image.dim(r - 2) != mask.height || image.dim(r - 1) != mask.width {
        return Err(Error::shape("pad_to_multiple", image.shape(), &[mask.height, mask.width]));
    }
    let (h, w) = (mask.height, mask.width);
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let record = CropRecord {
        height: h,
        width: w,
        padded_height: ph,
        padded_width: pw,
    };
    if record.is_identity() {
        return Ok((image.clone(), mask.clone(), record));
    }
    let planes = image.numel() / (h * w);
    let src = image.data();
    let mut data = Vec::with_capacity(planes * ph * pw);
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..ph {
            let sy = reflect(y, h);
            for x in 0..pw {
                data.push(plane[sy * w + reflect(x, w)]);
            }
        }
    }
    let mut shape = image.shape().to_vec();
    shape[r - 2] = ph;
    shape[r - 1] = pw;
    let mut padded_mask = BinaryMask::all_invalid(ph, pw);
    for y in 0..h {
        padded_mask.bits[y * pw..y * pw + w].copy_from_slice(&mask.bits[y * w..(y + 1) * w]);
    }
    Ok((Tensor::from_vec(data, &shape)?, padded_mask, record))
}
