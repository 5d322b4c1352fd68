use super::BinaryMask;
use crate::error::{Error, Result};

/// How a pixel patch maps to a single token bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenRule {
    /// Valid if any pixel of the patch is valid.
    #[default]
    AnyValid,
    /// Valid only if every pixel of the patch is valid.
    AllValid,
}

impl std::str::FromStr for TokenRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" | "any-valid" => Ok(TokenRule::AnyValid),
            "all" | "all-valid" => Ok(TokenRule::AllValid),
            other => Err(Error::contract(format!("unknown token rule '{other}' (any|all)"))),
        }
    }
}

/// Token validity on an `n_h × n_w` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenMask {
    pub n_h: usize,
    pub n_w: usize,
    pub bits: Vec<u8>,
    /// Window size of the most recent update (0 before any).
    pub window: usize,
    /// Shift offset of the most recent update.
    pub shift: usize,
}

impl TokenMask {
    pub fn new(n_h: usize, n_w: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != n_h * n_w {
            return Err(Error::shape("token mask", &[bits.len()], &[n_h, n_w]));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::contract("token mask values must be 0 or 1"));
        }
        Ok(TokenMask {
            n_h,
            n_w,
            bits,
            window: 0,
            shift: 0,
        })
    }

    pub fn filled(n_h: usize, n_w: usize, valid: bool) -> Self {
        TokenMask {
            n_h,
            n_w,
            bits: vec![valid as u8; n_h * n_w],
            window: 0,
            shift: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.n_w + x] == 1
    }

    pub fn valid_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn all_valid(&self) -> bool {
        self.bits.iter().all(|&b| b == 1)
    }

    /// Pointwise `self >= other`.
    pub fn dominates(&self, other: &TokenMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| a >= b)
    }

    /// Halves the grid; a coarse token is valid if any of its 2×2 children is.
    pub fn pool2x(&self) -> Result<TokenMask> {
        if !self.n_h.is_multiple_of(2) || !self.n_w.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "token grid {}x{} cannot be pooled by 2",
                self.n_h, self.n_w
            )));
        }
        let (h, w) = (self.n_h / 2, self.n_w / 2);
        let mut bits = vec![0u8; h * w];
        for y in 0..self.n_h {
            for x in 0..self.n_w {
                bits[(y / 2) * w + x / 2] |= self.bits[y * self.n_w + x];
            }
        }
        Ok(TokenMask::filled(h, w, false).with_bits(bits))
    }

    /// Doubles the grid by replication.
    pub fn replicate2x(&self) -> TokenMask {
        let (h, w) = (self.n_h * 2, self.n_w * 2);
        let bits = (0..h * w).map(|i| self.bits[(i / w / 2) * self.n_w + (i % w) / 2]).collect();
        TokenMask::filled(h, w, false).with_bits(bits)
    }

    fn with_bits(mut self, bits: Vec<u8>) -> Self {
        self.bits = bits;
        self
    }
}

/// Pools a pixel mask into `factor × factor` patches.
pub fn derive_token_mask(m: &BinaryMask, factor: usize, rule: TokenRule) -> Result<TokenMask> {
    if factor == 0 || !m.height().is_multiple_of(factor) || !m.width().is_multiple_of(factor) {
        return Err(Error::contract(format!(
            "mask {}x{} is not divisible by token factor {factor}",
            m.height(),
            m.width()
        )));
    }
    let (n_h, n_w) = (m.height() / factor, m.width() / factor);
    let mut valid = vec![0usize; n_h * n_w];
    for y in 0..m.height() {
        for x in 0..m.width() {
            valid[(y / factor) * n_w + x / factor] += m.is_valid(y, x) as usize;
        }
    }
    let full = factor * factor;
    let bits = valid
        .into_iter()
        .map(|v| match rule {
            TokenRule::AnyValid => (v > 0) as u8,
            TokenRule::AllValid => (v == full) as u8,
        })
        .collect();
    TokenMask::new(n_h, n_w, bits)
}

/// Window size actually used on an `n_h × n_w` grid and whether shifting is
/// allowed: a grid no larger than the window is covered by one unshifted window.
pub fn effective_window(n_h: usize, n_w: usize, w: usize) -> (usize, bool) {
    let side = n_h.min(n_w);
    if side <= w {
        (side, false)
    } else {
        (w, true)
    }
}

/// Grid values regrouped into windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows<E> {
    /// `[n_windows, w * w, c]`, row-major.
    pub data: Vec<E>,
    /// `index[k]` is the original flat token index at windowed position `k`.
    pub index: Vec<usize>,
    pub n_h: usize,
    pub n_w: usize,
    pub channels: usize,
    pub window: usize,
    pub shift: usize,
}

impl<E> Windows<E> {
    pub fn count(&self) -> usize {
        (self.n_h / self.window) * (self.n_w / self.window)
    }
}

fn check_windows(n_h: usize, n_w: usize, w: usize) -> Result<()> {
    if w == 0 || !n_h.is_multiple_of(w) || !n_w.is_multiple_of(w) {
        return Err(Error::contract(format!("grid {n_h}x{n_w} is not divisible by window {w}")));
    }
    Ok(())
}

/// Windowed order of the grid's token indices (cyclic shift by `shift` applied first).
pub fn window_index(n_h: usize, n_w: usize, w: usize, shift: usize) -> Result<Vec<usize>> {
    check_windows(n_h, n_w, w)?;
    let (wh, ww) = (n_h / w, n_w / w);
    let mut index = Vec::with_capacity(n_h * n_w);
    for wy in 0..wh {
        for wx in 0..ww {
            for py in 0..w {
                for px in 0..w {
                    let y = (wy * w + py + shift) % n_h;
                    let x = (wx * w + px + shift) % n_w;
                    index.push(y * n_w + x);
                }
            }
        }
    }
    Ok(index)
}

/// Splits a `[n_h, n_w, c]` grid into `w × w` windows, after rolling by
/// `-(w / 2)` on both axes when `shifted`.
pub fn partition_windows<E: Copy>(
    grid: &[E],
    n_h: usize,
    n_w: usize,
    channels: usize,
    w: usize,
    shifted: bool,
) -> Result<Windows<E>> {
    if grid.len() != n_h * n_w * channels {
        return Err(Error::shape("partition_windows", &[grid.len()], &[n_h, n_w, channels]));
    }
    let shift = if shifted { w / 2 } else { 0 };
    let index = window_index(n_h, n_w, w, shift)?;
    let mut data = Vec::with_capacity(grid.len());
    for &t in &index {
        data.extend_from_slice(&grid[t * channels..(t + 1) * channels]);
    }
    Ok(Windows {
        data,
        index,
        n_h,
        n_w,
        channels,
        window: w,
        shift,
    })
}

/// Inverse of [`partition_windows`].
pub fn reverse_windows<E: Copy + Default>(windows: &Windows<E>) -> Vec<E> {
    let c = windows.channels;
    let mut grid = vec![E::default(); windows.data.len()];
    for (k, &t) in windows.index.iter().enumerate() {
        grid[t * c..(t + 1) * c].copy_from_slice(&windows.data[k * c..(k + 1) * c]);
    }
    grid
}

/// Region label of each windowed position; after a cyclic shift, tokens that
/// wrapped around the border only attend within their own region.
pub fn wrap_regions(n_h: usize, n_w: usize, w: usize, shift: usize) -> Result<Vec<u8>> {
    check_windows(n_h, n_w, w)?;
    let band = |r: usize, n: usize| -> u8 {
        if shift == 0 || r < n - w {
            0
        } else if r < n - shift {
            1
        } else {
            2
        }
    };
    let (wh, ww) = (n_h / w, n_w / w);
    let mut out = Vec::with_capacity(n_h * n_w);
    for wy in 0..wh {
        for wx in 0..ww {
            for py in 0..w {
                for px in 0..w {
                    out.push(3 * band(wy * w + py, n_h) + band(wx * w + px, n_w));
                }
            }
        }
    }
    Ok(out)
}

/// Makes every token of a window valid if the window holds at least one valid token.
pub fn update_token_mask(tm: &TokenMask, w: usize, shifted: bool) -> Result<TokenMask> {
    let shift = if shifted { w / 2 } else { 0 };
    let index = window_index(tm.n_h, tm.n_w, w, shift)?;
    let mut bits = tm.bits.clone();
    for win in index.chunks(w * w) {
        if win.iter().any(|&t| tm.bits[t] == 1) {
            for &t in win {
                bits[t] = 1;
            }
        }
    }
    Ok(TokenMask {
        n_h: tm.n_h,
        n_w: tm.n_w,
        bits,
        window: w,
        shift,
    })
}
