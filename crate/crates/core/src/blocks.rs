//! Transformer blocks without normalization, transformer stages, the five
//! stage body and the two tokenizers.

use rand::Rng;

use crate::attention::{AttentionConfig, ContextualAttention};
use crate::error::{Error, Result};
use crate::impl_params;
use crate::mask::TokenMask;
use crate::nn::{lrelu, Conv2d, Linear};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub depths: [usize; 5],
    pub windows: [usize; 5],
    pub tau: f64,
}

impl BlockConfig {
    pub fn full() -> Self {
        BlockConfig {
            embed_dim: 180,
            heads: 6,
            mlp_ratio: 4,
            depths: [2, 3, 4, 3, 2],
            windows: [8, 16, 16, 16, 8],
            tau: 100.0,
        }
    }

    pub fn tiny() -> Self {
        BlockConfig {
            embed_dim: 32,
            heads: 4,
            mlp_ratio: 4,
            depths: [1, 1, 2, 1, 1],
            windows: [4, 4, 2, 4, 4],
            tau: 100.0,
        }
    }

    pub fn attention(&self, stage: usize) -> Result<AttentionConfig> {
        let mut cfg = AttentionConfig::new(self.embed_dim, self.heads, self.windows[stage])?;
        cfg.tau = self.tau;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp_ratio == 0 {
            return Err(Error::contract("mlp ratio must be positive"));
        }
        for s in 0..5 {
            self.attention(s)?;
        }
        Ok(())
    }
}

/// Attention, concatenation fusion and an MLP, with no normalization and no residual adds.
#[derive(Debug, Clone)]
pub struct AdjustedBlock<T: Scalar> {
    pub attn: ContextualAttention<T>,
    pub fuse: Linear<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl_params!(AdjustedBlock { attn, fuse, fc1, fc2 });

impl<T: Scalar> AdjustedBlock<T> {
    pub fn new<R: Rng + ?Sized>(cfg: AttentionConfig, mlp_ratio: usize, rng: &mut R) -> Result<Self> {
        let c = cfg.embed_dim;
        Ok(AdjustedBlock {
            attn: ContextualAttention::new(cfg, rng)?,
            fuse: Linear::new(2 * c, c, true, rng),
            fc1: Linear::new(c, mlp_ratio * c, true, rng),
            fc2: Linear::new(mlp_ratio * c, c, true, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, masks: &[TokenMask], shifted: bool) -> Result<(Tensor<T>, Vec<TokenMask>)> {
        let att = self.attn.forward(x, masks, shifted)?;
        let fused = self.fuse.forward(&Tensor::concat(&[&att.tokens, x], 2)?)?;
        let out = self.fc2.forward(&self.fc1.forward(&fused)?.gelu())?;
        Ok((out, att.masks))
    }
}

/// Alternating unshifted/shifted blocks, a 3×3 convolution over the grid and a global residual.
#[derive(Debug, Clone)]
pub struct Stage<T: Scalar> {
    pub blocks: Vec<AdjustedBlock<T>>,
    pub conv: Conv2d<T>,
}

impl_params!(Stage { blocks, conv });

/// `[b, n, c]` tokens to a `[b, c, n_h, n_w]` grid.
pub fn tokens_to_grid<T: Scalar>(x: &Tensor<T>, n_h: usize, n_w: usize) -> Result<Tensor<T>> {
    let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
    if n != n_h * n_w {
        return Err(Error::shape("tokens_to_grid", x.shape(), &[b, n_h * n_w, c]));
    }
    x.permute(&[0, 2, 1])?.reshape(&[b, c, n_h, n_w])
}

pub fn grid_to_tokens<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    if g.rank() != 4 {
        return Err(Error::shape("grid_to_tokens", g.shape(), &[0, 0, 0, 0]));
    }
    let (b, c, h, w) = (g.dim(0), g.dim(1), g.dim(2), g.dim(3));
    g.reshape(&[b, c, h * w])?.permute(&[0, 2, 1])
}

impl<T: Scalar> Stage<T> {
    pub fn new<R: Rng + ?Sized>(cfg: AttentionConfig, depth: usize, mlp_ratio: usize, rng: &mut R) -> Result<Self> {
        let blocks = (0..depth)
            .map(|_| AdjustedBlock::new(cfg, mlp_ratio, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Stage {
            blocks,
            conv: Conv2d::new(cfg.embed_dim, cfg.embed_dim, 3, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, masks: &[TokenMask]) -> Result<(Tensor<T>, Vec<TokenMask>)> {
        let (n_h, n_w) = masks
            .first()
            .map(|m| (m.n_h, m.n_w))
            .ok_or_else(|| Error::contract("stage needs token masks"))?;
        let mut h = x.clone();
        let mut ms = masks.to_vec();
        for (i, blk) in self.blocks.iter().enumerate() {
            let (y, m) = blk.forward(&h, &ms, i % 2 == 1)?;
            h = y;
            ms = m;
        }
        let conv = self.conv.forward(&tokens_to_grid(&h, n_h, n_w)?)?;
        Ok((grid_to_tokens(&conv)?.add(x)?, ms))
    }
}

/// Five stages at 1/8, 1/16, 1/32, 1/16 and 1/8 of the input with additive
/// skips around the bottleneck.
#[derive(Debug, Clone)]
pub struct TransformerBody<T: Scalar> {
    pub stages: Vec<Stage<T>>,
    pub downs: Vec<Conv2d<T>>,
    pub ups: Vec<Conv2d<T>>,
}

impl_params!(TransformerBody { stages, downs, ups });

impl<T: Scalar> TransformerBody<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &BlockConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let stages = (0..5)
            .map(|s| Stage::new(cfg.attention(s)?, cfg.depths[s], cfg.mlp_ratio, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerBody {
            stages,
            downs: (0..2).map(|_| Conv2d::down(c, c, 3, rng)).collect(),
            ups: (0..2).map(|_| Conv2d::new(c, c, 3, rng)).collect(),
        })
    }

    /// Tokens `[b, n, c]` on the grid of `masks` to tokens and masks on the same grid.
    pub fn forward(&self, x: &Tensor<T>, masks: &[TokenMask]) -> Result<(Tensor<T>, Vec<TokenMask>)> {
        let grid = |m: &[TokenMask]| (m[0].n_h, m[0].n_w);
        let down = |conv: &Conv2d<T>, x: &Tensor<T>, m: &[TokenMask]| -> Result<(Tensor<T>, Vec<TokenMask>)> {
            let (h, w) = grid(m);
            let y = lrelu(&conv.forward(&tokens_to_grid(x, h, w)?)?);
            let pooled = m.iter().map(TokenMask::pool2x).collect::<Result<Vec<_>>>()?;
            Ok((grid_to_tokens(&y)?, pooled))
        };
        let up = |conv: &Conv2d<T>, x: &Tensor<T>, m: &[TokenMask]| -> Result<(Tensor<T>, Vec<TokenMask>)> {
            let (h, w) = grid(m);
            let y = lrelu(&conv.forward(&tokens_to_grid(x, h, w)?.upsample_nearest2x()?)?);
            Ok((grid_to_tokens(&y)?, m.iter().map(TokenMask::replicate2x).collect()))
        };
        let (x0, m0) = self.stages[0].forward(x, masks)?;
        let (d1, md1) = down(&self.downs[0], &x0, &m0)?;
        let (x1, m1) = self.stages[1].forward(&d1, &md1)?;
        let (d2, md2) = down(&self.downs[1], &x1, &m1)?;
        let (x2, m2) = self.stages[2].forward(&d2, &md2)?;
        let (u3, mu3) = up(&self.ups[0], &x2, &m2)?;
        let (x3, m3) = self.stages[3].forward(&u3.add(&x1)?, &mu3)?;
        let (u4, mu4) = up(&self.ups[1], &x3, &m3)?;
        self.stages[4].forward(&u4.add(&x0)?, &mu4)
    }
}

/// Head output: tokens at 1/8 plus the intermediate maps kept for decoder shortcuts.
#[derive(Debug, Clone)]
pub struct HeadOutput<T: Scalar> {
    /// `[b, (h/8)(w/8), c]`.
    pub tokens: Tensor<T>,
    /// Features at full, 1/2 and 1/4 resolution (empty for the linear head).
    pub shortcuts: Vec<Tensor<T>>,
    pub grid: (usize, usize),
}

fn check_head_input<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    if x.rank() != 4 || x.dim(1) != 4 {
        return Err(Error::shape("head", x.shape(), &[0, 4, 0, 0]));
    }
    let (h, w) = (x.dim(2), x.dim(3));
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::contract(format!("head input {h}x{w} is not divisible by 8")));
    }
    Ok((h / 8, w / 8))
}

/// A channel-lift convolution then three stride-2 convolutions.
#[derive(Debug, Clone)]
pub struct ConvHead<T: Scalar> {
    pub lift: Conv2d<T>,
    pub downs: Vec<Conv2d<T>>,
}

impl_params!(ConvHead { lift, downs });

impl<T: Scalar> ConvHead<T> {
    /// `channels` gives the widths at full, 1/2 and 1/4 resolution; the 1/8 map has `embed_dim`.
    pub fn new<R: Rng + ?Sized>(channels: [usize; 3], embed_dim: usize, rng: &mut R) -> Self {
        let widths = [channels[0], channels[1], channels[2], embed_dim];
        ConvHead {
            lift: Conv2d::new(4, widths[0], 3, rng),
            downs: (0..3).map(|i| Conv2d::down(widths[i], widths[i + 1], 3, rng)).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<HeadOutput<T>> {
        let grid = check_head_input(x)?;
        let mut h = lrelu(&self.lift.forward(x)?);
        let mut shortcuts = vec![h.clone()];
        for (i, d) in self.downs.iter().enumerate() {
            h = lrelu(&d.forward(&h)?);
            if i < 2 {
                shortcuts.push(h.clone());
            }
        }
        Ok(HeadOutput {
            tokens: grid_to_tokens(&h)?,
            shortcuts,
            grid,
        })
    }
}

/// Non-overlapping 8×8 patches mapped linearly to tokens.
#[derive(Debug, Clone)]
pub struct LinearProjectionHead<T: Scalar> {
    pub proj: Linear<T>,
}

impl_params!(LinearProjectionHead { proj });

impl<T: Scalar> LinearProjectionHead<T> {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, rng: &mut R) -> Self {
        LinearProjectionHead {
            proj: Linear::new(4 * 64, embed_dim, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<HeadOutput<T>> {
        let (gh, gw) = check_head_input(x)?;
        let b = x.dim(0);
        let patches = x
            .reshape(&[b, 4, gh, 8, gw, 8])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[b, gh * gw, 4 * 64])?;
        Ok(HeadOutput {
            tokens: self.proj.forward(&patches)?,
            shortcuts: Vec::new(),
            grid: (gh, gw),
        })
    }
}
