//! Layout operations: reshape, permute, slicing, concatenation and cyclic shifts.

use super::elementwise::{contiguous_strides, for_each_offset};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Reinterprets the element order under a new shape; shares storage.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        Ok(Tensor::from_shared_op(
            self.shared_data(),
            shape.to_vec(),
            &[self],
            "reshape",
            |p, _, g| Ok(vec![Some(g.reshape(p[0].shape())?)]),
        ))
    }

    /// Inserts an axis of extent 1 at `axis`.
    pub fn unsqueeze(&self, axis: usize) -> Result<Tensor<T>> {
        let mut s = self.shape().to_vec();
        if axis > s.len() {
            return Err(Error::contract(format!("unsqueeze: axis {axis} for rank {}", s.len())));
        }
        s.insert(axis, 1);
        self.reshape(&s)
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(format!("permute: {perm:?} is not a permutation of rank {r}")));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let in_strides = contiguous_strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = vec![T::zero(); self.numel()];
        let d = self.data();
        for_each_offset(&out_shape, &src_strides, &src_strides, |i, o, _| out[i] = d[o]);
        let mut inverse = vec![0; r];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(Tensor::from_op(out, out_shape, &[self], "permute", move |_, _, g| {
            Ok(vec![Some(g.permute(&inverse)?)])
        }))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(Error::contract(format!("transpose: axes ({a},{b}) for rank {}", perm.len())));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::contract(format!(
                "narrow: [{start}, {}) on axis {axis} of {shape:?}",
                start + len
            )));
        }
        if start == 0 && len == shape[axis] {
            return Ok(self.clone());
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let d = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(Tensor::from_op(out, out_shape, &[self], "narrow", move |_, _, g| {
            Ok(vec![Some(g.pad_axis(axis, start, n - start - len)?)])
        }))
    }

    /// Zero padding of `before`/`after` entries along `axis`; adjoint of [`narrow`](Self::narrow).
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!("pad_axis: axis {axis} for {shape:?}")));
        }
        if before == 0 && after == 0 {
            return Ok(self.clone());
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let m = n + before + after;
        let d = self.data();
        let mut out = vec![T::zero(); outer * m * inner];
        for o in 0..outer {
            let dst = (o * m + before) * inner;
            out[dst..dst + n * inner].copy_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = m;
        Ok(Tensor::from_op(out, out_shape, &[self], "pad_axis", move |_, _, g| {
            Ok(vec![Some(g.narrow(axis, before, n)?)])
        }))
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat needs at least one tensor"))?;
        let shape = first.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!("concat: axis {axis} for {shape:?}")));
        }
        for p in parts {
            let ok = p.rank() == shape.len()
                && p.shape().iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &shape, p.shape()));
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &n) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = total;
        Ok(Tensor::from_op(out, out_shape, parts, "concat", move |_, _, g| {
            let mut start = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for &n in &sizes {
                grads.push(Some(g.narrow(axis, start, n)?));
                start += n;
            }
            Ok(grads)
        }))
    }

    /// Cyclic shift along `axis`: `out[i] = x[(i - shift) mod n]`.
    pub fn roll(&self, axis: usize, shift: isize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!("roll: axis {axis} for {shape:?}")));
        }
        let n = shape[axis];
        if n == 0 || shift.rem_euclid(n as isize) == 0 {
            return Ok(self.clone());
        }
        let s = shift.rem_euclid(n as isize) as usize;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = self.data();
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..n {
                let src = (o * n + (i + n - s) % n) * inner;
                let dst = (o * n + i) * inner;
                out[dst..dst + inner].copy_from_slice(&d[src..src + inner]);
            }
        }
        Ok(Tensor::from_op(out, shape, &[self], "roll", move |_, _, g| {
            Ok(vec![Some(g.roll(axis, -shift)?)])
        }))
    }
}
