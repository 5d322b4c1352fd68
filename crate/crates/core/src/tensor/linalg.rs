use super::elementwise::{broadcast_shapes, contiguous_strides, view_strides};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Calls `f(batch_index, offset_a, offset_b)` for every broadcast batch position.
fn for_each_batch(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(out);
    let strides = contiguous_strides(out);
    for i in 0..total {
        let (mut oa, mut ob, mut rem) = (0, 0, i);
        for ax in 0..out.len() {
            let idx = rem / strides[ax];
            rem %= strides[ax];
            oa += idx * sa[ax];
            ob += idx * sb[ax];
        }
        f(i, oa, ob);
    }
}

impl<T: Scalar> Tensor<T> {
    /// Batched matrix product `[.., m, k] · [.., k, n]` with broadcast batch axes.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes the last two axes when its flag is set.
    pub fn matmul_t(&self, other: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
        let (a, b) = (self, other);
        let err = || Error::shape("matmul", a.shape(), b.shape());
        if a.rank() < 2 || b.rank() < 2 {
            return Err(err());
        }
        let (ra, rb) = (a.rank(), b.rank());
        let (a0, a1) = (a.shape()[ra - 2], a.shape()[ra - 1]);
        let (b0, b1) = (b.shape()[rb - 2], b.shape()[rb - 1]);
        let (m, k) = if ta { (a1, a0) } else { (a0, a1) };
        let (kb, n) = if tb { (b1, b0) } else { (b0, b1) };
        if k != kb {
            return Err(err());
        }
        let batch_a = &a.shape()[..ra - 2];
        let batch_b = &b.shape()[..rb - 2];
        let batch = broadcast_shapes(batch_a, batch_b).ok_or_else(err)?;
        let sa: Vec<usize> = view_strides(batch_a, &batch).iter().map(|s| s * a0 * a1).collect();
        let sb: Vec<usize> = view_strides(batch_b, &batch).iter().map(|s| s * b0 * b1).collect();
        let a_str = if ta { (1, a1 as isize) } else { (a1 as isize, 1) };
        let b_str = if tb { (1, b1 as isize) } else { (b1 as isize, 1) };
        let mut out = vec![T::zero(); numel(&batch) * m * n];
        let (ad, bd) = (a.data(), b.data());
        for_each_batch(&batch, &sa, &sb, |i, oa, ob| {
            T::gemm(
                m,
                k,
                n,
                &ad[oa..oa + a0 * a1],
                a_str,
                &bd[ob..ob + b0 * b1],
                b_str,
                &mut out[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
            );
        });
        let mut shape = batch;
        shape.extend([m, n]);
        Ok(Tensor::from_op(out, shape, &[a, b], "matmul", move |p, _, g| {
            let (a, b) = (&p[0], &p[1]);
            let ga = if a.requires_grad() {
                let d = if ta { b.matmul_t(g, tb, true)? } else { g.matmul_t(b, false, !tb)? };
                Some(d.sum_to(a.shape())?)
            } else {
                None
            };
            let gb = if b.requires_grad() {
                let d = if tb { g.matmul_t(a, true, ta)? } else { a.matmul_t(g, !ta, false)? };
                Some(d.sum_to(b.shape())?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        }))
    }
}
