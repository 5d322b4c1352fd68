//! Adversarial, gradient-penalty and perceptual losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::lrelu;
use crate::scalar::Scalar;
use crate::tensor::{enable_grad, grad, ConvOpts, Tensor};

/// Non-saturating generator loss `mean softplus(-logit)`.
pub fn g_loss<T: Scalar>(logits_fake: &Tensor<T>) -> Tensor<T> {
    logits_fake.neg().softplus().mean_all()
}

/// `mean softplus(-real) + mean softplus(fake)`.
pub fn d_loss<T: Scalar>(logits_real: &Tensor<T>, logits_fake: &Tensor<T>) -> Result<Tensor<T>> {
    logits_real.neg().softplus().mean_all().add(&logits_fake.softplus().mean_all())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum R1Mode {
    /// `½ E‖∇D‖²`.
    #[default]
    Squared,
    /// `E‖∇D‖`.
    Norm,
}

impl std::str::FromStr for R1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(R1Mode::Squared),
            "norm" => Ok(R1Mode::Norm),
            other => Err(Error::contract(format!("unknown r1 mode '{other}' (squared|norm)"))),
        }
    }
}

/// Gradient penalty of `d` at `x_real`; the result stays differentiable with
/// respect to the parameters used inside `d`.
pub fn r1_penalty<T, F>(d: F, x_real: &Tensor<T>, mode: R1Mode) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
{
    let x = x_real.detach().requires_grad_(true);
    let g = enable_grad(|| -> Result<_> {
        let logits = d(&x)?;
        grad(&logits.sum_all(), &[&x], true)?
            .pop()
            .flatten()
            .ok_or_else(|| Error::contract("r1 penalty: discriminator output does not depend on its input"))
    })?;
    let b = x.dim(0).max(1);
    let per_sample = g.square().reshape(&[b, g.numel() / b])?.sum_axes(&[1], false)?;
    Ok(match mode {
        R1Mode::Squared => per_sample.mean_all().scale(0.5),
        R1Mode::Norm => per_sample.sqrt().mean_all(),
    })
}

/// Pure map from an image batch to an ordered list of feature maps.
pub trait FeatureExtractor<T: Scalar> {
    fn name(&self) -> &str;
    fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
}

/// Returns the pixels themselves as the only feature map.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![x.clone()])
    }
}

pub const EXTRACTOR_SEED: u64 = 0x5eed_f00d;

/// Two fixed random stride-2 3×3 convolutions with leaky ReLU.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor<T: Scalar> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub seed: u64,
}

impl<T: Scalar> RandomConvExtractor<T> {
    pub fn new(seed: u64, c1: usize, c2: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = Tensor::<f64>::randn(&[c1, 3, 3, 3], &mut rng).scale(1.0 / 27f64.sqrt());
        let w2 = Tensor::<f64>::randn(&[c2, c1, 3, 3], &mut rng).scale(1.0 / ((9 * c1) as f64).sqrt());
        RandomConvExtractor {
            w1: w1.cast(),
            w2: w2.cast(),
            seed,
        }
    }

    /// Global average of the second feature map, `[b, c2]`.
    pub fn pooled(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.features(x)?;
        f[1].mean_axes(&[2, 3], false)
    }
}

impl<T: Scalar> Default for RandomConvExtractor<T> {
    fn default() -> Self {
        Self::new(EXTRACTOR_SEED, 8, 16)
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomConvExtractor<T> {
    fn name(&self) -> &str {
        "random-conv"
    }

    fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let h1 = lrelu(&x.conv2d(&self.w1, None, ConvOpts::down(3))?);
        let h2 = lrelu(&h1.conv2d(&self.w2, None, ConvOpts::down(3))?);
        Ok(vec![h1, h2])
    }
}

/// `Σ_i η_i · mean|φ_i(x̂) − φ_i(x)|`.
pub fn perceptual_loss<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    x_hat: &Tensor<T>,
    x: &Tensor<T>,
    extractor: &E,
    eta: &[f64],
) -> Result<Tensor<T>> {
    if x_hat.shape() != x.shape() {
        return Err(Error::shape("perceptual", x_hat.shape(), x.shape()));
    }
    let fa = extractor.features(x_hat)?;
    let fb = extractor.features(x)?;
    if fa.len() != eta.len() {
        return Err(Error::contract(format!(
            "extractor '{}' yields {} layers but {} weights were given",
            extractor.name(),
            fa.len(),
            eta.len()
        )));
    }
    let mut total = Tensor::scalar(T::zero());
    for ((a, b), &w) in fa.iter().zip(&fb).zip(eta) {
        total = total.add(&a.sub(&b.detach())?.abs().mean_all().scale(w))?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda: f64,
    pub eta: Vec<f64>,
    pub r1_mode: R1Mode,
    /// Apply the penalty every this many discriminator steps (scaled by it).
    pub r1_every: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 10.0,
            lambda: 0.1,
            eta: vec![0.25, 0.5],
            r1_mode: R1Mode::Squared,
            r1_every: 1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || self.lambda < 0.0 || self.eta.iter().any(|&e| e < 0.0) {
            return Err(Error::contract("loss weights must be nonnegative"));
        }
        if self.r1_every == 0 {
            return Err(Error::contract("r1 interval must be at least 1"));
        }
        Ok(())
    }
}

/// Generator objective: adversarial loss on both stage outputs plus `λ` times the perceptual term.
pub fn total_g_loss<T: Scalar>(
    logits_coarse: &Tensor<T>,
    logits_refined: &Tensor<T>,
    perceptual: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Tensor<T>> {
    g_loss(logits_coarse)
        .add(&g_loss(logits_refined))?
        .add(&perceptual.scale(weights.lambda))
}

/// Discriminator objective: real term once, both fake stage outputs, plus `γ · R1`.
pub fn total_d_loss<T: Scalar>(
    logits_real: &Tensor<T>,
    logits_coarse: &Tensor<T>,
    logits_refined: &Tensor<T>,
    r1: Option<&Tensor<T>>,
    weights: &LossWeights,
) -> Result<Tensor<T>> {
    let mut loss = d_loss(logits_real, logits_refined)?.add(&logits_coarse.softplus().mean_all())?;
    if let Some(r1) = r1 {
        loss = loss.add(&r1.scale(weights.gamma * weights.r1_every as f64))?;
    }
    Ok(loss)
}
