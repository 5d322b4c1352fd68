//! Convolution (cross-correlation, zero padding) built on an im2col/col2im
//! pair of mutually adjoint primitives, plus resampling helpers.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub pad: usize,
    /// Transposed convolution; the weight is then `[c_in, c_out, kh, kw]` and
    /// the output extent is `input · stride` for odd kernels with `pad = k / 2`.
    pub transposed: bool,
}

impl ConvOpts {
    pub const fn same(k: usize) -> Self {
        ConvOpts {
            stride: 1,
            pad: k / 2,
            transposed: false,
        }
    }

    pub const fn down(k: usize) -> Self {
        ConvOpts {
            stride: 2,
            pad: k / 2,
            transposed: false,
        }
    }
}

pub fn conv_output_size(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits `(col, pixel, len)` for every run of column entries that read
    /// real pixels; consecutive entries advance the pixel by `stride`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (s, p) = (self.stride, self.pad);
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let row_base = row * self.oh * self.ow;
                    // ox range with 0 <= ox*s + kj - p < w
                    let lo = if p > kj { (p - kj).div_ceil(s) } else { 0 };
                    let hi = if self.w + p > kj { ((self.w + p - kj - 1) / s + 1).min(self.ow) } else { 0 };
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let pix = (ci * self.h + iy as usize) * self.w + lo * s + kj - p;
                        f(row_base + oy * self.ow + lo, pix, hi - lo);
                    }
                }
            }
        }
    }
}

fn im2col<T: Scalar>(x: &Tensor<T>, g: Geometry) -> Tensor<T> {
    let b = x.dim(0);
    let (img, col) = (g.c * g.h * g.w, g.rows() * g.cols());
    let mut out = vec![T::zero(); b * col];
    let d = x.data();
    for bi in 0..b {
        let src = &d[bi * img..(bi + 1) * img];
        let dst = &mut out[bi * col..(bi + 1) * col];
        if g.stride == 1 {
            g.for_each_run(|c, p, n| dst[c..c + n].copy_from_slice(&src[p..p + n]));
        } else {
            let st = g.stride;
            g.for_each_run(|c, p, n| {
                for (j, v) in dst[c..c + n].iter_mut().enumerate() {
                    *v = src[p + j * st];
                }
            });
        }
    }
    Tensor::from_op(out, vec![b, g.rows(), g.cols()], &[x], "im2col", move |_, _, grad| {
        Ok(vec![Some(col2im(grad, g))])
    })
}

fn col2im<T: Scalar>(cols: &Tensor<T>, g: Geometry) -> Tensor<T> {
    let b = cols.dim(0);
    let (img, col) = (g.c * g.h * g.w, g.rows() * g.cols());
    let mut out = vec![T::zero(); b * img];
    let d = cols.data();
    for bi in 0..b {
        let src = &d[bi * col..(bi + 1) * col];
        let dst = &mut out[bi * img..(bi + 1) * img];
        if g.stride == 1 {
            g.for_each_run(|c, p, n| {
                for (o, &v) in dst[p..p + n].iter_mut().zip(&src[c..c + n]) {
                    *o += v;
                }
            });
        } else {
            let st = g.stride;
            g.for_each_run(|c, p, n| {
                for (j, &v) in src[c..c + n].iter().enumerate() {
                    dst[p + j * st] += v;
                }
            });
        }
    }
    Tensor::from_op(out, vec![b, g.c, g.h, g.w], &[cols], "col2im", move |_, _, grad| {
        Ok(vec![Some(im2col(grad, g))])
    })
}

impl<T: Scalar> Tensor<T> {
    /// 2-D convolution of `[b, c_in, h, w]` input.
    ///
    /// Forward: weight `[c_out, c_in, kh, kw]`. Transposed: weight
    /// `[c_in, c_out, kh, kw]`. Optional bias has `c_out` entries.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, opts: ConvOpts) -> Result<Tensor<T>> {
        if self.rank() != 4 || weight.rank() != 4 {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        }
        if opts.stride == 0 {
            return Err(Error::contract("conv2d: stride must be positive"));
        }
        let out = if opts.transposed {
            self.conv_transpose2d_impl(weight, opts)?
        } else {
            let ws = weight.shape();
            let w2 = weight.reshape(&[ws[0], ws[1] * ws[2] * ws[3]])?;
            self.conv2d_cols(&w2, ws[2], ws[3], opts.stride, opts.pad)?
        };
        match bias {
            Some(bias) => {
                let c = out.dim(1);
                if bias.numel() != c {
                    return Err(Error::shape("conv2d bias", bias.shape(), &[c]));
                }
                out.add(&bias.reshape(&[1, c, 1, 1])?)
            }
            None => Ok(out),
        }
    }

    /// Convolution with flattened weights `[c_out, c_in·kh·kw]` or per-sample
    /// weights `[b, c_out, c_in·kh·kw]` (used for style-modulated layers).
    pub fn conv2d_cols(&self, weight: &Tensor<T>, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        }
        let [b, c, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        let k = *weight.shape().last().unwrap_or(&0);
        if k != c * kh * kw || !(weight.rank() == 2 || (weight.rank() == 3 && weight.dim(0) == b)) {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        }
        let c_out = weight.dim(weight.rank() - 2);
        let (oh, ow) = match (conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => return Err(Error::shape("conv2d", self.shape(), weight.shape())),
        };
        let g = Geometry { c, h, w, kh, kw, stride, pad, oh, ow };
        let out = if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
            weight.matmul(&self.reshape(&[b, c, h * w])?)?
        } else {
            weight.matmul(&im2col(self, g))?
        };
        out.reshape(&[b, c_out, oh, ow])
    }

    fn conv_transpose2d_impl(&self, weight: &Tensor<T>, opts: ConvOpts) -> Result<Tensor<T>> {
        let [b, c_in, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        let ws = weight.shape();
        if ws[0] != c_in {
            return Err(Error::shape("conv_transpose2d", self.shape(), ws));
        }
        let (c_out, kh, kw) = (ws[1], ws[2], ws[3]);
        let s = opts.stride;
        let extent = |n: usize, k: usize| ((n - 1) * s + k + s - 1).checked_sub(2 * opts.pad);
        let (oh, ow) = match (extent(h, kh), extent(w, kw)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => return Err(Error::shape("conv_transpose2d", self.shape(), ws)),
        };
        let g = Geometry {
            c: c_out,
            h: oh,
            w: ow,
            kh,
            kw,
            stride: s,
            pad: opts.pad,
            oh: conv_output_size(oh, kh, s, opts.pad).unwrap_or(0),
            ow: conv_output_size(ow, kw, s, opts.pad).unwrap_or(0),
        };
        if g.oh != h || g.ow != w {
            return Err(Error::contract(format!(
                "conv_transpose2d: kernel {kh}x{kw}, stride {s}, pad {} does not invert to {h}x{w}",
                opts.pad
            )));
        }
        let w2 = weight.reshape(&[c_in, c_out * kh * kw])?;
        let cols = w2.matmul_t(&self.reshape(&[b, c_in, h * w])?, true, false)?;
        Ok(col2im(&cols, g))
    }

    /// Nearest-neighbour ×2 upsampling of `[b, c, h, w]`.
    pub fn upsample_nearest2x(&self) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::contract(format!("upsample: expected rank 4, got {:?}", self.shape())));
        }
        let [b, c, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        self.reshape(&[b, c, h, 1, w, 1])?
            .broadcast_to(&[b, c, h, 2, w, 2])?
            .reshape(&[b, c, 2 * h, 2 * w])
    }

    /// Bilinear ×2 upsampling (half-pixel centres, edge clamping).
    pub fn upsample_bilinear2x(&self) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::contract(format!("upsample: expected rank 4, got {:?}", self.shape())));
        }
        self.bilinear_axis(2)?.bilinear_axis(3)
    }

    fn bilinear_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let n = self.dim(axis);
        let (prev, next) = if n == 1 {
            (self.clone(), self.clone())
        } else {
            let first = self.narrow(axis, 0, 1)?;
            let last = self.narrow(axis, n - 1, 1)?;
            (
                Tensor::concat(&[&first, &self.narrow(axis, 0, n - 1)?], axis)?,
                Tensor::concat(&[&self.narrow(axis, 1, n - 1)?, &last], axis)?,
            )
        };
        let core = self.scale(0.75);
        let even = core.add(&prev.scale(0.25))?.unsqueeze(axis + 1)?;
        let odd = core.add(&next.scale(0.25))?.unsqueeze(axis + 1)?;
        let both = Tensor::concat(&[&even, &odd], axis + 1)?;
        let mut shape = self.shape().to_vec();
        shape[axis] *= 2;
        both.reshape(&shape)
    }

    /// 2×2 average pooling of `[b, c, h, w]` with even `h`, `w`.
    pub fn avg_pool2x(&self) -> Result<Tensor<T>> {
        if self.rank() != 4 || !self.dim(2).is_multiple_of(2) || !self.dim(3).is_multiple_of(2) {
            return Err(Error::contract(format!("avg_pool2x: unsupported shape {:?}", self.shape())));
        }
        let [b, c, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        self.reshape(&[b, c, h / 2, 2, w / 2, 2])?
            .sum_axes(&[3, 5], false)
            .map(|t| t.scale(0.25))
    }
}
