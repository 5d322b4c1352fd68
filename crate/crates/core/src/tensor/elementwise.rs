//! Broadcasting arithmetic, pointwise nonlinearities and reductions.

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides that read `shape` as if it had been broadcast to `out`.
pub(crate) fn view_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let base = contiguous_strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                base[i - off]
            }
        })
        .collect()
}

/// Merges adjacent axes that are contiguous in both stride sets.
fn coalesce(out: &[usize], sa: &[usize], sb: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut o, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..out.len() {
        if out[i] == 1 {
            continue;
        }
        if let Some(n) = o.len().checked_sub(1) {
            if a[n] == sa[i] * out[i] && b[n] == sb[i] * out[i] {
                o[n] *= out[i];
                a[n] = sa[i];
                b[n] = sb[i];
                continue;
            }
        }
        o.push(out[i]);
        a.push(sa[i]);
        b.push(sb[i]);
    }
    if o.is_empty() {
        (vec![1], vec![0], vec![0])
    } else {
        (o, a, b)
    }
}

/// Calls `f(linear_index, offset_a, offset_b, len, step_a, step_b)` once per
/// run of the innermost (coalesced) axis.
pub(crate) fn for_each_row(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    if numel(out) == 0 {
        return;
    }
    let (out, sa, sb) = coalesce(out, sa, sb);
    let r = out.len();
    let last = out[r - 1];
    let (la, lb) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r - 1];
    let (mut oa, mut ob, mut i) = (0usize, 0usize, 0usize);
    loop {
        f(i, oa, ob, last, la, lb);
        i += last;
        let mut ax = r - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

/// Calls `f(linear_index, offset_a, offset_b)` for every element of `out`.
pub(crate) fn for_each_offset(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    for_each_row(out, sa, sb, |i, oa, ob, n, la, lb| {
        for j in 0..n {
            f(i + j, oa + j * la, ob + j * lb);
        }
    });
}

fn binary_kernel<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<(Vec<T>, Vec<usize>)> {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        return Ok((ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(), a.shape().to_vec()));
    }
    let out = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| Error::shape(op, a.shape(), b.shape()))?;
    if b.numel() == 1 && out == a.shape() {
        let y = bd[0];
        return Ok((ad.iter().map(|&x| f(x, y)).collect(), out));
    }
    let sa = view_strides(a.shape(), &out);
    let sb = view_strides(b.shape(), &out);
    let mut data = vec![T::zero(); numel(&out)];
    for_each_offset(&out, &sa, &sb, |i, oa, ob| data[i] = f(ad[oa], bd[ob]));
    Ok((data, out))
}

fn unary<T: Scalar, B>(x: &Tensor<T>, name: &'static str, f: impl Fn(T) -> T, backward: B) -> Tensor<T>
where
    B: Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Result<Tensor<T>> + Send + Sync + 'static,
{
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), &[x], name, move |p, out, g| {
        Ok(vec![Some(backward(&p[0], out, g)?)])
    })
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (data, shape) = binary_kernel("add", self, other, |x, y| x + y)?;
        Ok(Tensor::from_op(data, shape, &[self, other], "add", |p, _, g| {
            Ok(vec![Some(g.sum_to(p[0].shape())?), Some(g.sum_to(p[1].shape())?)])
        }))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (data, shape) = binary_kernel("sub", self, other, |x, y| x - y)?;
        Ok(Tensor::from_op(data, shape, &[self, other], "sub", |p, _, g| {
            Ok(vec![Some(g.sum_to(p[0].shape())?), Some(g.neg().sum_to(p[1].shape())?)])
        }))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (data, shape) = binary_kernel("mul", self, other, |x, y| x * y)?;
        Ok(Tensor::from_op(data, shape, &[self, other], "mul", |p, _, g| {
            let ga = if p[0].requires_grad() { Some(g.mul(&p[1])?.sum_to(p[0].shape())?) } else { None };
            let gb = if p[1].requires_grad() { Some(g.mul(&p[0])?.sum_to(p[1].shape())?) } else { None };
            Ok(vec![ga, gb])
        }))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (data, shape) = binary_kernel("div", self, other, |x, y| x / y)?;
        Ok(Tensor::from_op(data, shape, &[self, other], "div", |p, _, g| {
            let ga = if p[0].requires_grad() { Some(g.div(&p[1])?.sum_to(p[0].shape())?) } else { None };
            let gb = if p[1].requires_grad() {
                // d(a/b)/db = -a / b^2
                let t = g.mul(&p[0])?.div(&p[1].square())?.neg();
                Some(t.sum_to(p[1].shape())?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        }))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::lit(c);
        unary(self, "add_scalar", move |v| v + c, |_, _, g| Ok(g.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let ct = T::lit(c);
        unary(self, "scale", move |v| v * ct, move |_, _, g| Ok(g.scale(c)))
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, "neg", |v| -v, |_, _, g| Ok(g.neg()))
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, "square", |v| v * v, |x, _, g| Ok(g.mul(x)?.scale(2.0)))
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |v| v.exp(), |_, y, g| g.mul(y))
    }

    pub fn log(&self) -> Tensor<T> {
        unary(self, "log", |v| v.ln(), |x, _, g| g.div(x))
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(self, "sqrt", |v| v.sqrt(), |_, y, g| Ok(g.div(y)?.scale(0.5)))
    }

    /// `x^-1/2`.
    pub fn rsqrt(&self) -> Tensor<T> {
        unary(self, "rsqrt", |v| v.sqrt().recip(), |_, y, g| {
            Ok(g.mul(&y.mul(y)?.mul(y)?)?.scale(-0.5))
        })
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, "tanh", |v| v.tanh(), |_, y, g| g.mul(&y.square().neg().add_scalar(1.0)))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, "sigmoid", sigmoid, |_, y, g| g.mul(&y.mul(&y.neg().add_scalar(1.0))?))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        unary(
            self,
            "softplus",
            |v| v.max(T::zero()) + (-v.abs()).exp().ln_1p(),
            |x, _, g| g.mul(&x.sigmoid()),
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        unary(self, "abs", |v| v.abs(), |x, _, g| {
            let sign = x.map_const(|v| if v > T::zero() { T::one() } else if v < T::zero() { -T::one() } else { T::zero() });
            g.mul(&sign)
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::lit(slope);
        unary(
            self,
            "leaky_relu",
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _, g| g.mul(&x.map_const(|v| if v > T::zero() { T::one() } else { s })),
        )
    }

    /// GELU, tanh approximation. Composite, so higher derivatives come for free.
    pub fn gelu(&self) -> Tensor<T> {
        let k = (2.0 / std::f64::consts::PI).sqrt();
        let cube = self.square().mul(self).expect("same shape");
        let inner = self.add(&cube.scale(0.044715)).expect("same shape").scale(k);
        self.mul(&inner.tanh().add_scalar(1.0)).expect("same shape").scale(0.5)
    }

    /// A constant (non-differentiable) tensor computed pointwise from `self`.
    pub(crate) fn map_const(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::leaf(
            std::sync::Arc::new(self.data().iter().map(|&v| f(v)).collect()),
            self.shape().to_vec(),
            false,
        )
    }

    /// Sums broadcast axes away so the result has `shape`; the adjoint of
    /// [`broadcast_to`](Self::broadcast_to).
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        match broadcast_shapes(shape, self.shape()) {
            Some(b) if b == self.shape() => {}
            _ => return Err(Error::shape("sum_to", self.shape(), shape)),
        }
        let src = self.shape().to_vec();
        let st = view_strides(shape, &src);
        let cs = contiguous_strides(&src);
        let mut out = vec![T::zero(); numel(shape)];
        let d = self.data();
        for_each_row(&src, &cs, &st, |_, i, o, n, li, lo| match (li, lo) {
            (1, 0) => out[o] += d[i..i + n].iter().copied().sum::<T>(),
            (1, 1) => {
                for (a, &v) in out[o..o + n].iter_mut().zip(&d[i..i + n]) {
                    *a += v;
                }
            }
            _ => {
                for j in 0..n {
                    out[o + j * lo] += d[i + j * li];
                }
            }
        });
        Ok(Tensor::from_op(out, shape.to_vec(), &[self], "sum_to", move |_, _, g| {
            Ok(vec![Some(g.broadcast_to(&src)?)])
        }))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        match broadcast_shapes(self.shape(), shape) {
            Some(b) if b == shape => {}
            _ => return Err(Error::shape("broadcast_to", self.shape(), shape)),
        }
        let ss = view_strides(self.shape(), shape);
        let mut out = vec![T::zero(); numel(shape)];
        let d = self.data();
        for_each_row(shape, &ss, &ss, |i, o, _, n, lo, _| match lo {
            0 => out[i..i + n].fill(d[o]),
            1 => out[i..i + n].copy_from_slice(&d[o..o + n]),
            _ => {
                for j in 0..n {
                    out[i + j] = d[o + j * lo];
                }
            }
        });
        Ok(Tensor::from_op(out, shape.to_vec(), &[self], "broadcast_to", |p, _, g| {
            Ok(vec![Some(g.sum_to(p[0].shape())?)])
        }))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], Vec::new(), &[self], "sum_all", |p, _, g| {
            Ok(vec![Some(g.broadcast_to(p[0].shape())?)])
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over `axes`; with `keepdim` those axes stay as extent 1.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        let mut kept = self.shape().to_vec();
        for &a in axes {
            if a >= kept.len() {
                return Err(Error::contract(format!("sum_axes: axis {a} out of range for {:?}", self.shape())));
            }
            kept[a] = 1;
        }
        let s = self.sum_to(&kept)?;
        if keepdim {
            return Ok(s);
        }
        let dropped: Vec<usize> = self
            .shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        s.reshape(&dropped)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes, keepdim)?.scale(1.0 / count.max(1) as f64))
    }

    /// Softmax along `axis`, evaluated after subtracting the running maximum.
    /// NaN inputs propagate to NaN outputs.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!("softmax: axis {axis} out of range for {shape:?}")));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut m = T::neg_infinity();
                for j in 0..n {
                    let v = x[base + j * inner];
                    if v > m || v.is_nan() {
                        m = v;
                    }
                }
                let mut s = T::zero();
                for j in 0..n {
                    let e = (x[base + j * inner] - m).exp();
                    y[base + j * inner] = e;
                    s += e;
                }
                for j in 0..n {
                    y[base + j * inner] /= s;
                }
            }
        }
        Ok(Tensor::from_op(y, shape, &[self], "softmax", move |_, y, g| {
            // dx = y * (g - sum(g * y))
            let gy = g.mul(y)?;
            let s = gy.sum_axes(&[axis], true)?;
            Ok(vec![Some(gy.sub(&y.mul(&s)?)?)])
        }))
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        (T::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
