#![allow(dead_code)]

use mat_core::attention::{AttentionConfig, ContextualAttention};
use mat_core::mask::TokenMask;
use mat_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Windowed multi-head attention evaluated with plain loops in f64 from the layer's raw weights.
pub struct Oracle {
    c: usize,
    heads: usize,
    w_qkv: Vec<f64>,
    b_qkv: Vec<f64>,
    w_proj: Vec<f64>,
    b_proj: Vec<f64>,
}

impl Oracle {
    pub fn of<T: Scalar>(a: &ContextualAttention<T>) -> Self {
        let c = a.config.embed_dim;
        let s = 1.0 / (c as f64).sqrt();
        Oracle {
            c,
            heads: a.config.heads,
            w_qkv: a.qkv.weight.to_f64_vec().iter().map(|v| v * s).collect(),
            b_qkv: a.qkv.bias.as_ref().unwrap().to_f64_vec(),
            w_proj: a.proj.weight.to_f64_vec().iter().map(|v| v * s).collect(),
            b_proj: a.proj.bias.as_ref().unwrap().to_f64_vec(),
        }
    }

    fn affine(w: &[f64], b: &[f64], x: &[f64], out_dim: usize) -> Vec<f64> {
        let n = x.len();
        (0..out_dim).map(|o| b[o] + (0..n).map(|i| w[o * n + i] * x[i]).sum::<f64>()).collect()
    }

    /// Raw logits `q·k` per head for the query/key pair.
    pub fn qkv(&self, x: &[f64]) -> Vec<f64> {
        Self::affine(&self.w_qkv, &self.b_qkv, x, 3 * self.c)
    }

    /// `x` is `[n*n, c]` for one sample; returns `[n*n, c]` and the raw logit span over valid rows.
    pub fn forward(&self, x: &[f64], n: usize, w: usize, shifted: bool, tm: &TokenMask, tau: f64) -> (Vec<f64>, f64) {
        let c = self.c;
        let d = c / self.heads;
        let (w, shift) = if n <= w { (n, 0) } else { (w, if shifted { w / 2 } else { 0 }) };
        let proj: Vec<Vec<f64>> = (0..n * n).map(|t| self.qkv(&x[t * c..(t + 1) * c])).collect();
        let frame = |p: usize| (p + n - shift) % n;
        let region = |p: usize| {
            if shift == 0 || p < n - w {
                0
            } else if p < n - shift {
                1
            } else {
                2
            }
        };
        let mut out = vec![0.0; n * n * c];
        let mut span: f64 = 0.0;
        for qt in 0..n * n {
            let (qy, qx) = (frame(qt / n), frame(qt % n));
            let keys: Vec<usize> = (0..n * n)
                .filter(|&kt| {
                    let (ky, kx) = (frame(kt / n), frame(kt % n));
                    ky / w == qy / w && kx / w == qx / w && region(ky) == region(qy) && region(kx) == region(qx)
                })
                .collect();
            let mut heads_out = vec![0.0; c];
            for h in 0..self.heads {
                let q = &proj[qt][h * d..(h + 1) * d];
                let raw: Vec<f64> = keys
                    .iter()
                    .map(|&kt| q.iter().zip(&proj[kt][c + h * d..c + (h + 1) * d]).map(|(a, b)| a * b).sum())
                    .collect();
                let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
                span = span.max(hi - lo);
                let logits: Vec<f64> = raw
                    .iter()
                    .zip(&keys)
                    .map(|(r, &kt)| (r - if tm.is_valid(kt / n, kt % n) { 0.0 } else { tau }) / (d as f64).sqrt())
                    .collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (ei, &kt) in e.iter().zip(&keys) {
                    for k in 0..d {
                        heads_out[h * d + k] += ei / z * proj[kt][2 * c + h * d + k];
                    }
                }
            }
            out[qt * c..(qt + 1) * c].copy_from_slice(&Self::affine(&self.w_proj, &self.b_proj, &heads_out, c));
        }
        (out, span)
    }
}

pub fn random_mask<R: Rng>(n: usize, p_valid: f64, rng: &mut R) -> TokenMask {
    TokenMask::new(n, n, (0..n * n).map(|_| u8::from(rng.random_bool(p_valid))).collect()).unwrap()
}

/// Draws grid side, window, heads and width for one random instance.
pub fn instance<R: Rng>(rng: &mut R) -> (usize, usize, AttentionConfig, usize, bool) {
    let w = [2, 4][rng.random_range(0..2)];
    let n = w * rng.random_range(1..=3);
    let c = [8, 16][rng.random_range(0..2)];
    let heads = [1, 2, 4][rng.random_range(0..3)];
    let b = rng.random_range(1..=2);
    (n, w, AttentionConfig::new(c, heads, w).unwrap(), b, rng.random_bool(0.5))
}

/// Rounds of alternating updates on an 8×8 grid with w = 4, frozen from [`brute_force_rounds`].
pub const K_ROUNDS: usize = 2;

/// Direct simulation of the window rule on coordinates, independent of the crate's index maps.
pub fn oracle_update(bits: &[u8], n: usize, w: usize, shift: usize) -> Vec<u8> {
    let mut out = bits.to_vec();
    let win_of = |y: usize, x: usize| {
        let ry = (y + n - shift) % n;
        let rx = (x + n - shift) % n;
        (ry / w, rx / w)
    };
    for wy in 0..n / w {
        for wx in 0..n / w {
            let any = (0..n * n).any(|t| bits[t] == 1 && win_of(t / n, t % n) == (wy, wx));
            if any {
                for (t, o) in out.iter_mut().enumerate() {
                    if win_of(t / n, t % n) == (wy, wx) {
                        *o = 1;
                    }
                }
            }
        }
    }
    out
}

pub fn rounds_to_full(bits: &[u8], n: usize, w: usize) -> usize {
    let mut cur = bits.to_vec();
    let mut r = 0;
    while cur.contains(&0) {
        let shift = if r % 2 == 1 { w / 2 } else { 0 };
        cur = oracle_update(&cur, n, w, shift);
        r += 1;
        assert!(r < 100, "no convergence");
    }
    r
}

pub fn brute_force_rounds() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut k = 0;
    for t in 0..64 {
        let mut bits = vec![0u8; 64];
        bits[t] = 1;
        k = k.max(rounds_to_full(&bits, 8, 4));
    }
    for _ in 0..10_000 {
        let p: f64 = rng.random_range(0.0..0.3);
        let mut bits: Vec<u8> = (0..64).map(|_| rng.random_bool(p) as u8).collect();
        if bits.iter().all(|&b| b == 0) {
            bits[rng.random_range(0..64)] = 1;
        }
        k = k.max(rounds_to_full(&bits, 8, 4));
    }
    k
}

