//! The two-stage inpainting generator and the discriminator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{tokens_to_grid, BlockConfig, ConvHead, HeadOutput, LinearProjectionHead, TransformerBody};
use crate::error::{Error, Result};
use crate::impl_params;
use crate::mask::{derive_token_mask, pad_to_multiple, BinaryMask, TokenMask, TokenRule};
use crate::nn::{lrelu, param_count, Conv2d, Linear, Params};
use crate::scalar::Scalar;
use crate::style::{ConditionalStyle, MappingNetwork, ModulatedConv, StyleFusion, StyledLayer, DEMOD_EPS};
use crate::tensor::{no_grad, ConvOpts, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tokenizer {
    #[default]
    StackedConv,
    LinearProjection,
}

impl std::str::FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stacked_conv" => Ok(Tokenizer::StackedConv),
            "linear_projection" => Ok(Tokenizer::LinearProjection),
            other => Err(Error::contract(format!(
                "unknown tokenizer '{other}' (stacked_conv|linear_projection)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub size: usize,
    pub blocks: BlockConfig,
    /// Must equal the embedding width.
    pub style_dim: usize,
    pub mapping_depth: usize,
    /// Head and tail widths at full, 1/2 and 1/4 resolution.
    pub head_channels: [usize; 3],
    pub unet_base: usize,
    pub unet_max: usize,
    pub tokenizer: Tokenizer,
    pub token_rule: TokenRule,
    /// Keep probability of image features when forming the conditional style.
    pub p: f64,
    pub eps: f64,
    pub disc_base: usize,
    pub disc_max: usize,
}

impl GeneratorConfig {
    pub fn tiny() -> Self {
        GeneratorConfig {
            size: 64,
            blocks: BlockConfig::tiny(),
            style_dim: 32,
            mapping_depth: 8,
            head_channels: [16, 16, 32],
            unet_base: 8,
            unet_max: 64,
            tokenizer: Tokenizer::StackedConv,
            token_rule: TokenRule::AnyValid,
            p: 0.5,
            eps: DEMOD_EPS,
            disc_base: 16,
            disc_max: 64,
        }
    }

    pub fn full() -> Self {
        GeneratorConfig {
            size: 512,
            blocks: BlockConfig::full(),
            style_dim: 180,
            mapping_depth: 8,
            head_channels: [180, 180, 180],
            unet_base: 64,
            unet_max: 512,
            disc_base: 32,
            disc_max: 512,
            ..Self::tiny()
        }
    }

    /// Smallest configuration exercising every component, for finite-difference checks.
    pub fn micro() -> Self {
        GeneratorConfig {
            size: 32,
            blocks: BlockConfig {
                embed_dim: 4,
                heads: 1,
                mlp_ratio: 1,
                depths: [1, 1, 1, 1, 1],
                windows: [2, 1, 1, 1, 2],
                tau: 100.0,
            },
            style_dim: 4,
            mapping_depth: 2,
            head_channels: [2, 2, 2],
            unet_base: 2,
            unet_max: 2,
            disc_base: 2,
            disc_max: 4,
            ..Self::tiny()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.blocks.validate()?;
        if self.style_dim != self.blocks.embed_dim {
            return Err(Error::contract(format!(
                "style dim {} must equal embed dim {}",
                self.style_dim, self.blocks.embed_dim
            )));
        }
        if self.size == 0 || !self.size.is_multiple_of(self.pad_multiple()) {
            return Err(Error::contract(format!(
                "size {} must be a positive multiple of {}",
                self.size,
                self.pad_multiple()
            )));
        }
        if !(0.0..=1.0).contains(&self.p) || !(self.eps > 0.0) {
            return Err(Error::contract("p must lie in [0, 1] and eps must be positive"));
        }
        if self.head_channels.contains(&0) || self.unet_base == 0 || self.disc_base == 0 {
            return Err(Error::contract("channel widths must be positive"));
        }
        Ok(())
    }

    /// Input extents must be multiples of this value.
    pub fn pad_multiple(&self) -> usize {
        const FACTORS: [usize; 5] = [8, 16, 32, 16, 8];
        FACTORS
            .iter()
            .zip(self.blocks.windows)
            .map(|(f, w)| f * w)
            .max()
            .unwrap_or(32)
            .max(32)
    }

    fn unet_channels(&self) -> [usize; 6] {
        std::array::from_fn(|i| (self.unet_base << i).min(self.unet_max.max(self.unet_base)))
    }
}

#[derive(Debug, Clone)]
pub enum Head<T: Scalar> {
    Conv(ConvHead<T>),
    Linear(LinearProjectionHead<T>),
}

impl<T: Scalar> Params<T> for Head<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        match self {
            Head::Conv(h) => h.visit(prefix, f),
            Head::Linear(h) => h.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        match self {
            Head::Conv(h) => h.visit_mut(prefix, f),
            Head::Linear(h) => h.visit_mut(prefix, f),
        }
    }
}

impl<T: Scalar> Head<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<HeadOutput<T>> {
        match self {
            Head::Conv(h) => h.forward(x),
            Head::Linear(h) => h.forward(x),
        }
    }
}

/// Style-modulated upsampling tail from 1/8 back to full resolution.
#[derive(Debug, Clone)]
pub struct Tail<T: Scalar> {
    pub layers: Vec<StyledLayer<T>>,
    pub to_rgb: ModulatedConv<T>,
}

impl_params!(Tail { layers, to_rgb });

impl<T: Scalar> Tail<T> {
    fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Self {
        let c = cfg.blocks.embed_dim;
        let [full, half, quarter] = cfg.head_channels;
        let s = cfg.style_dim;
        let layers = vec![
            StyledLayer::new(c, c, s, false, rng),
            StyledLayer::new(c, quarter, s, true, rng),
            StyledLayer::new(quarter, half, s, true, rng),
            StyledLayer::new(half, full, s, true, rng),
        ];
        Tail {
            layers,
            to_rgb: ModulatedConv::to_rgb(full, 3, s, rng),
        }
    }

    fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, shortcuts: &[Tensor<T>], s: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        let mut h = self.layers[0].forward(x, s, rng)?;
        for (i, layer) in self.layers[1..].iter().enumerate() {
            h = layer.forward(&h, s, rng)?;
            if let Some(sc) = shortcuts.len().checked_sub(i + 1).map(|j| &shortcuts[j]) {
                h = h.add(sc)?;
            }
        }
        Ok(self.to_rgb.forward(&h, s)?.tanh())
    }
}

/// Convolutional encoder to 1/32 and a style-modulated decoder with shortcuts.
#[derive(Debug, Clone)]
pub struct UNet<T: Scalar> {
    pub from_input: Conv2d<T>,
    pub enc_down: Vec<Conv2d<T>>,
    pub enc_conv: Vec<Conv2d<T>>,
    pub bottleneck: StyledLayer<T>,
    pub dec_up: Vec<StyledLayer<T>>,
    pub dec_conv: Vec<StyledLayer<T>>,
    pub to_rgb: ModulatedConv<T>,
}

impl_params!(UNet { from_input, enc_down, enc_conv, bottleneck, dec_up, dec_conv, to_rgb });

impl<T: Scalar> UNet<T> {
    fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Self {
        let ch = cfg.unet_channels();
        let s = cfg.style_dim;
        UNet {
            from_input: Conv2d::new(4, ch[0], 3, rng),
            enc_down: (1..6).map(|i| Conv2d::down(ch[i - 1], ch[i], 3, rng)).collect(),
            enc_conv: (1..6).map(|i| Conv2d::new(ch[i], ch[i], 3, rng)).collect(),
            bottleneck: StyledLayer::new(ch[5], ch[5], s, false, rng),
            dec_up: (0..5).rev().map(|i| StyledLayer::new(ch[i + 1], ch[i], s, true, rng)).collect(),
            dec_conv: (0..5).rev().map(|i| StyledLayer::new(ch[i], ch[i], s, false, rng)).collect(),
            to_rgb: ModulatedConv::to_rgb(ch[0], 3, s, rng),
        }
    }

    /// `x` is the composited coarse image with the mask, `[b, 4, h, w]`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, s: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        if !x.dim(2).is_multiple_of(32) || !x.dim(3).is_multiple_of(32) {
            return Err(Error::contract(format!(
                "refiner input {}x{} is not divisible by 32",
                x.dim(2),
                x.dim(3)
            )));
        }
        let mut feats = vec![lrelu(&self.from_input.forward(x)?)];
        for (d, c) in self.enc_down.iter().zip(&self.enc_conv) {
            let h = lrelu(&d.forward(&feats[feats.len() - 1])?);
            feats.push(lrelu(&c.forward(&h)?));
        }
        let mut h = self.bottleneck.forward(&feats[5], s, rng)?;
        for (k, (up, conv)) in self.dec_up.iter().zip(&self.dec_conv).enumerate() {
            h = up.forward(&h, s, rng)?.add(&feats[4 - k])?;
            h = conv.forward(&h, s, rng)?;
        }
        Ok(self.to_rgb.forward(&h, s)?.tanh())
    }
}

/// Both stage outputs of one generator pass.
#[derive(Debug, Clone)]
pub struct GeneratorOutput<T: Scalar> {
    pub coarse: Tensor<T>,
    pub refined: Tensor<T>,
    pub token_masks: Vec<TokenMask>,
}

#[derive(Debug, Clone)]
pub struct Generator<T: Scalar> {
    pub config: GeneratorConfig,
    pub head: Head<T>,
    pub body: TransformerBody<T>,
    pub mapping: MappingNetwork<T>,
    pub cond: ConditionalStyle<T>,
    pub fusion: StyleFusion<T>,
    pub tail: Tail<T>,
    pub unet: UNet<T>,
}

impl_params!(Generator { head, body, mapping, cond, fusion, tail, unet });

/// `M ⊙ a + (1 − M) ⊙ b` with a `[b, 1, h, w]` mask.
pub fn composite<T: Scalar>(known: &Tensor<T>, generated: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let inv = mask.map_const(|v| T::one() - v);
    known.mul(mask)?.add(&generated.mul(&inv)?)
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.blocks.embed_dim;
        let head = match config.tokenizer {
            Tokenizer::StackedConv => Head::Conv(ConvHead::new(config.head_channels, c, rng)),
            Tokenizer::LinearProjection => Head::Linear(LinearProjectionHead::new(c, rng)),
        };
        Ok(Generator {
            head,
            body: TransformerBody::new(&config.blocks, rng)?,
            mapping: MappingNetwork::new(config.style_dim, config.mapping_depth, rng),
            cond: ConditionalStyle::new(config.style_dim, config.p, rng),
            fusion: StyleFusion::new(config.style_dim, rng),
            tail: Tail::new(&config, rng),
            unet: UNet::new(&config, rng),
            config,
        })
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    fn check_inputs(&self, image: &Tensor<T>, mask: &Tensor<T>, z: &Tensor<T>) -> Result<()> {
        if image.rank() != 4 || image.dim(1) != 3 {
            return Err(Error::shape("generator image", image.shape(), &[0, 3, 0, 0]));
        }
        let (b, h, w) = (image.dim(0), image.dim(2), image.dim(3));
        if mask.shape() != [b, 1, h, w] {
            return Err(Error::shape("generator mask", mask.shape(), &[b, 1, h, w]));
        }
        if z.shape() != [b, self.config.style_dim] {
            return Err(Error::shape("generator noise", z.shape(), &[b, self.config.style_dim]));
        }
        let m = self.config.pad_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::contract(format!("input {h}x{w} is not a multiple of {m}; pad first")));
        }
        Ok(())
    }

    /// Both stages on `image` `[b, 3, h, w]` in `[-1, 1]`, 0/1 `mask` `[b, 1, h, w]`
    /// and noise `z` `[b, style_dim]`. Holes of `image` are ignored.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        image: &Tensor<T>,
        mask: &Tensor<T>,
        z: &Tensor<T>,
        rng: &mut R,
    ) -> Result<GeneratorOutput<T>> {
        self.check_inputs(image, mask, z)?;
        let masked = image.mul(mask)?;
        let token_masks = token_masks_of(mask, self.config.token_rule)?;
        let head = self.head.forward(&Tensor::concat(&[&masked, mask], 1)?)?;
        let (tokens, token_masks) = self.body.forward(&head.tokens, &token_masks)?;
        let grid = tokens_to_grid(&tokens, head.grid.0, head.grid.1)?;
        let s_u = self.mapping.forward(z)?;
        let s_c = self.cond.forward(&grid, &s_u, rng)?;
        let s = self.fusion.forward(&s_u, &s_c)?;
        let coarse = self.tail.forward(&grid, &head.shortcuts, &s, rng)?;
        let kept = composite(&masked, &coarse, mask)?;
        let refined = self.unet.forward(&Tensor::concat(&[&kept, mask], 1)?, &s, rng)?;
        Ok(GeneratorOutput {
            coarse,
            refined,
            token_masks,
        })
    }

    /// Full inference: pad, both stages, crop and paste the known pixels back
    /// exactly. `image` is `[b, 3, h, w]`.
    pub fn inpaint(&self, image: &Tensor<T>, masks: &[BinaryMask], seed: u64) -> Result<Tensor<T>> {
        if image.rank() != 4 || image.dim(1) != 3 {
            return Err(Error::contract(format!(
                "inpaint expects [b, 3, h, w] RGB input, got {:?}",
                image.shape()
            )));
        }
        if masks.len() != image.dim(0) {
            return Err(Error::contract("inpaint needs one mask per image"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = image.dim(0);
        let z = Tensor::randn(&[b, self.config.style_dim], &mut rng);
        let multiple = self.config.pad_multiple();
        let (h, w) = (image.dim(2), image.dim(3));
        let mut padded = Vec::with_capacity(b);
        let mut padded_masks = Vec::with_capacity(b);
        let mut record = None;
        for (i, m) in masks.iter().enumerate() {
            let img = image.narrow(0, i, 1)?;
            let (p, pm, rec) = pad_to_multiple(&img, m, multiple)?;
            padded.push(p);
            padded_masks.push(pm);
            record = Some(rec);
        }
        let refs: Vec<&Tensor<T>> = padded.iter().collect();
        let x = Tensor::concat(&refs, 0)?;
        let mt = BinaryMask::batch_tensor::<T>(&padded_masks)?;
        let out = no_grad(|| self.forward(&x, &mt, &z, &mut rng))?;
        let full = record.expect("nonempty batch").crop(&out.refined)?;
        let (src, gen) = (image.data(), full.data());
        let mut data = Vec::with_capacity(src.len());
        for (i, m) in masks.iter().enumerate() {
            let bits = m.bits();
            for c in 0..3 {
                let off = (i * 3 + c) * h * w;
                data.extend((0..h * w).map(|p| if bits[p] == 1 { src[off + p] } else { gen[off + p] }));
            }
        }
        Tensor::from_vec(data, image.shape())
    }
}

/// Token masks from a `[b, 1, h, w]` 0/1 tensor.
pub fn token_masks_of<T: Scalar>(mask: &Tensor<T>, rule: TokenRule) -> Result<Vec<TokenMask>> {
    let (b, h, w) = (mask.dim(0), mask.dim(2), mask.dim(3));
    let d = mask.data();
    (0..b)
        .map(|i| {
            let bits = d[i * h * w..(i + 1) * h * w].iter().map(|v| (*v > T::lit(0.5)) as u8).collect();
            derive_token_mask(&BinaryMask::from_bits(h, w, bits)?, 8, rule)
        })
        .collect()
}

/// Residual downsampling block.
#[derive(Debug, Clone)]
pub struct DiscBlock<T: Scalar> {
    pub conv: Conv2d<T>,
    pub down: Conv2d<T>,
    pub skip: Conv2d<T>,
}

impl_params!(DiscBlock { conv, down, skip });

impl<T: Scalar> DiscBlock<T> {
    fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        DiscBlock {
            conv: Conv2d::new(c_in, c_in, 3, rng),
            down: Conv2d::down(c_in, c_out, 3, rng),
            skip: Conv2d::with_opts(c_in, c_out, 1, ConvOpts::same(1), false, rng),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let main = lrelu(&self.down.forward(&lrelu(&self.conv.forward(x)?))?);
        let skip = self.skip.forward(&x.avg_pool2x()?)?;
        Ok(main.add(&skip)?.scale(std::f64::consts::FRAC_1_SQRT_2))
    }
}

/// Residual down blocks to 4×4, then two fully connected layers to one logit.
/// The mask is an extra input channel.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    pub size: usize,
    pub from_input: Conv2d<T>,
    pub blocks: Vec<DiscBlock<T>>,
    pub conv: Conv2d<T>,
    pub fc: Linear<T>,
    pub out: Linear<T>,
}

impl_params!(Discriminator { from_input, blocks, conv, fc, out });

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        let size = cfg.size;
        if size < 8 || !size.is_power_of_two() {
            return Err(Error::contract(format!("discriminator size {size} must be a power of two >= 8")));
        }
        let n = (size / 4).trailing_zeros() as usize;
        let ch = |i: usize| (cfg.disc_base << i).min(cfg.disc_max.max(cfg.disc_base));
        let top = ch(n);
        Ok(Discriminator {
            size,
            from_input: Conv2d::with_opts(4, ch(0), 1, ConvOpts::same(1), true, rng),
            blocks: (0..n).map(|i| DiscBlock::new(ch(i), ch(i + 1), rng)).collect(),
            conv: Conv2d::new(top, top, 3, rng),
            fc: Linear::new(top * 16, top, true, rng),
            out: Linear::new(top, 1, true, rng),
        })
    }

    /// `image` `[b, 3, s, s]`, `mask` `[b, 1, s, s]`; returns logits `[b]`.
    pub fn forward(&self, image: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.size;
        let b = image.dim(0);
        if image.shape() != [b, 3, s, s] || mask.shape() != [b, 1, s, s] {
            return Err(Error::shape("discriminator", image.shape(), &[b, 3, s, s]));
        }
        let mut h = lrelu(&self.from_input.forward(&Tensor::concat(&[image, mask], 1)?)?);
        for blk in &self.blocks {
            h = blk.forward(&h)?;
        }
        let h = lrelu(&self.conv.forward(&h)?);
        let flat = h.reshape(&[b, h.numel() / b])?;
        self.out.forward(&lrelu(&self.fc.forward(&flat)?))?.reshape(&[b])
    }
}
