//! Multi-head contextual attention: windowed attention whose logits are
//! penalized for invalid keys.

use rand::Rng;

use crate::error::{Error, Result};
use crate::impl_params;
use crate::mask::{effective_window, update_token_mask, window_index, wrap_regions, TokenMask};
use crate::nn::Linear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Penalty separating tokens that only share a window because of the cyclic wrap.
const WRAP_PENALTY: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub window: usize,
    pub tau: f64,
}

impl AttentionConfig {
    pub fn new(embed_dim: usize, heads: usize, window: usize) -> Result<Self> {
        let cfg = AttentionConfig {
            embed_dim,
            heads,
            window,
            tau: 100.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::contract(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.window == 0 {
            return Err(Error::contract("window size must be positive"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::contract(format!("mask penalty must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Upper bound on the total softmax weight of invalid keys when at least one
/// key is valid and raw logits span at most `delta`.
pub fn attention_weight_bound(delta: f64, tau: f64, head_dim: usize, window_area: usize) -> f64 {
    (window_area.saturating_sub(1)) as f64 * ((delta - tau) / (head_dim as f64).sqrt()).exp()
}

/// Learned projections of one attention layer.
#[derive(Debug, Clone)]
pub struct ContextualAttention<T: Scalar> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub config: AttentionConfig,
}

impl_params!(ContextualAttention { qkv, proj });

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct AttentionOutput<T: Scalar> {
    /// `[b, tokens, c]`.
    pub tokens: Tensor<T>,
    /// One updated mask per batch element.
    pub masks: Vec<TokenMask>,
    /// Softmax weights `[b * windows, heads, w², w²]`.
    pub weights: Tensor<T>,
    pub window: usize,
    pub shift: usize,
}

impl<T: Scalar> ContextualAttention<T> {
    pub fn new<R: Rng + ?Sized>(config: AttentionConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim;
        Ok(ContextualAttention {
            qkv: Linear::new(c, 3 * c, true, rng),
            proj: Linear::new(c, c, true, rng),
            config,
        })
    }

    /// `x` is `[b, n_h * n_w, c]` with the grid given by `masks` (one per sample).
    pub fn forward(&self, x: &Tensor<T>, masks: &[TokenMask], shifted: bool) -> Result<AttentionOutput<T>> {
        let cfg = &self.config;
        let c = cfg.embed_dim;
        let (b, n_h, n_w) = check_input(x, masks, c)?;
        let (w, can_shift) = effective_window(n_h, n_w, cfg.window);
        let shifted = shifted && can_shift;
        let shift = if shifted { w / 2 } else { 0 };

        let windows = to_windows(x, n_h, n_w, w, shift)?;
        let bw = windows.dim(0);
        let n = w * w;
        let (heads, d) = (cfg.heads, cfg.head_dim());
        let qkv = self
            .qkv
            .forward(&windows)?
            .reshape(&[bw, n, 3, heads, d])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| qkv.narrow(0, i, 1)?.reshape(&[bw, heads, n, d]);
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let mut logits = q.matmul_t(&k, false, true)?;
        if let Some(bias) = mask_bias::<T>(masks, n_h, n_w, w, shift, cfg.tau)? {
            logits = logits.add(&bias)?;
        }
        let weights = logits.scale(1.0 / (d as f64).sqrt()).softmax(3)?;
        let heads_out = weights
            .matmul(&v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[bw, n, c])?;
        let out = self.proj.forward(&heads_out)?;
        let tokens = from_windows(&out, b, n_h, n_w, w, shift)?;
        let masks = masks
            .iter()
            .map(|m| update_token_mask(m, w, shifted))
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionOutput {
            tokens,
            masks,
            weights,
            window: w,
            shift,
        })
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, masks: &[TokenMask], c: usize) -> Result<(usize, usize, usize)> {
    let first = masks.first().ok_or_else(|| Error::contract("attention needs one token mask per sample"))?;
    let (n_h, n_w) = (first.n_h, first.n_w);
    if masks.iter().any(|m| (m.n_h, m.n_w) != (n_h, n_w)) {
        return Err(Error::contract("token masks in a batch must share one grid"));
    }
    let b = masks.len();
    if x.shape() != [b, n_h * n_w, c] {
        return Err(Error::shape("attention", x.shape(), &[b, n_h * n_w, c]));
    }
    Ok((b, n_h, n_w))
}

/// `[b, n_h * n_w, c]` to `[b * windows, w², c]`, rolling by `-shift` first.
pub(crate) fn to_windows<T: Scalar>(x: &Tensor<T>, n_h: usize, n_w: usize, w: usize, shift: usize) -> Result<Tensor<T>> {
    let (b, c) = (x.dim(0), x.dim(2));
    if !n_h.is_multiple_of(w) || !n_w.is_multiple_of(w) {
        return Err(Error::contract(format!("grid {n_h}x{n_w} is not divisible by window {w}")));
    }
    let mut g = x.reshape(&[b, n_h, n_w, c])?;
    if shift > 0 {
        g = g.roll(1, -(shift as isize))?.roll(2, -(shift as isize))?;
    }
    g.reshape(&[b, n_h / w, w, n_w / w, w, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b * (n_h / w) * (n_w / w), w * w, c])
}

pub(crate) fn from_windows<T: Scalar>(
    x: &Tensor<T>,
    b: usize,
    n_h: usize,
    n_w: usize,
    w: usize,
    shift: usize,
) -> Result<Tensor<T>> {
    let c = x.dim(2);
    let mut g = x
        .reshape(&[b, n_h / w, n_w / w, w, w, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, n_h, n_w, c])?;
    if shift > 0 {
        g = g.roll(1, shift as isize)?.roll(2, shift as isize)?;
    }
    g.reshape(&[b, n_h * n_w, c])
}

/// Additive logit term `[b * windows, 1, w², w²]`, or `None` when it would be all zero.
fn mask_bias<T: Scalar>(
    masks: &[TokenMask],
    n_h: usize,
    n_w: usize,
    w: usize,
    shift: usize,
    tau: f64,
) -> Result<Option<Tensor<T>>> {
    if shift == 0 && masks.iter().all(|m| m.all_valid()) {
        return Ok(None);
    }
    let index = window_index(n_h, n_w, w, shift)?;
    let regions = wrap_regions(n_h, n_w, w, shift)?;
    let n = w * w;
    let n_win = index.len() / n;
    let mut data = Vec::with_capacity(masks.len() * n_win * n * n);
    for m in masks {
        for k in 0..n_win {
            let keys = &index[k * n..(k + 1) * n];
            let reg = &regions[k * n..(k + 1) * n];
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    if m.bits[keys[j]] == 0 {
                        v -= tau;
                    }
                    if reg[i] != reg[j] {
                        v -= WRAP_PENALTY;
                    }
                    data.push(T::lit(v));
                }
            }
        }
    }
    Tensor::from_vec(data, &[masks.len() * n_win, 1, n, n]).map(Some)
}
