//! Style codes and style-modulated convolution.

use rand::Rng;

use crate::error::{Error, Result};
use crate::impl_params;
use crate::nn::{lrelu, Conv2d, Linear};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEMOD_EPS: f64 = 1e-8;

/// Eight fully connected layers with leaky ReLU, noise to unconditional style.
#[derive(Debug, Clone)]
pub struct MappingNetwork<T: Scalar> {
    pub layers: Vec<Linear<T>>,
}

impl_params!(MappingNetwork { layers });

impl<T: Scalar> MappingNetwork<T> {
    pub fn new<R: Rng + ?Sized>(style_dim: usize, depth: usize, rng: &mut R) -> Self {
        MappingNetwork {
            layers: (0..depth).map(|_| Linear::new(style_dim, style_dim, true, rng)).collect(),
        }
    }

    /// `[b, s_d] -> [b, s_d]`.
    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = z.clone();
        for l in &self.layers {
            h = lrelu(&l.forward(&h)?);
        }
        Ok(h)
    }
}

/// Image-conditional style: mixes features with the broadcast noise style
/// under a random binary mask, then convolves and average-pools.
#[derive(Debug, Clone)]
pub struct ConditionalStyle<T: Scalar> {
    pub convs: Vec<Conv2d<T>>,
    pub p: f64,
}

impl_params!(ConditionalStyle { convs });

impl<T: Scalar> ConditionalStyle<T> {
    pub fn new<R: Rng + ?Sized>(style_dim: usize, p: f64, rng: &mut R) -> Self {
        ConditionalStyle {
            convs: (0..2).map(|_| Conv2d::down(style_dim, style_dim, 3, rng)).collect(),
            p,
        }
    }

    /// `x` is `[b, s_d, h, w]`, `s_u` is `[b, s_d]`; returns `[b, s_d]`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, s_u: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::contract(format!("keep probability must lie in [0, 1], got {}", self.p)));
        }
        let mixed = mix_with_style(x, s_u, self.p, rng)?;
        let mut h = mixed;
        for c in &self.convs {
            h = lrelu(&c.forward(&h)?);
        }
        h.mean_axes(&[2, 3], false)
    }
}

/// `B ⊙ X + (1 − B) ⊙ s_u` with `B` Bernoulli(`p`) per element.
pub fn mix_with_style<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, s_u: &Tensor<T>, p: f64, rng: &mut R) -> Result<Tensor<T>> {
    if x.rank() != 4 || s_u.shape() != [x.dim(0), x.dim(1)] {
        return Err(Error::shape("conditional style", x.shape(), s_u.shape()));
    }
    if p >= 1.0 {
        return Ok(x.clone());
    }
    let s = s_u.reshape(&[x.dim(0), x.dim(1), 1, 1])?;
    if p <= 0.0 {
        return s.broadcast_to(x.shape());
    }
    let keep: Vec<T> = (0..x.numel()).map(|_| if rng.random_bool(p) { T::one() } else { T::zero() }).collect();
    let b = Tensor::from_vec(keep, x.shape())?;
    let inv = b.map_const(|v| T::one() - v);
    x.mul(&b)?.add(&s.mul(&inv)?)
}

/// Fuses the two styles with one fully connected layer over their concatenation.
#[derive(Debug, Clone)]
pub struct StyleFusion<T: Scalar> {
    pub fc: Linear<T>,
}

impl_params!(StyleFusion { fc });

impl<T: Scalar> StyleFusion<T> {
    pub fn new<R: Rng + ?Sized>(style_dim: usize, rng: &mut R) -> Self {
        StyleFusion {
            fc: Linear::new(2 * style_dim, style_dim, true, rng),
        }
    }

    pub fn forward(&self, s_u: &Tensor<T>, s_c: &Tensor<T>) -> Result<Tensor<T>> {
        if s_u.shape() != s_c.shape() {
            return Err(Error::contract(format!(
                "style lengths differ: {:?} vs {:?}",
                s_u.shape(),
                s_c.shape()
            )));
        }
        let axis = s_u.rank() - 1;
        self.fc.forward(&Tensor::concat(&[s_u, s_c], axis)?)
    }
}

/// Scales `w` (`[c_out, c_in, kh, kw]`) per input channel by `s` (`[b, c_in]`)
/// and, when `eps` is given, renormalizes each output filter. Returns `[b, c_out, c_in, kh, kw]`.
pub fn modulate_demodulate<T: Scalar>(w: &Tensor<T>, s: &Tensor<T>, eps: Option<f64>) -> Result<Tensor<T>> {
    if w.rank() != 4 || s.rank() != 2 || s.dim(1) != w.dim(1) {
        return Err(Error::shape("modulate", w.shape(), s.shape()));
    }
    let b = s.dim(0);
    let w5 = w.unsqueeze(0)?;
    let modulated = w5.mul(&s.reshape(&[b, 1, w.dim(1), 1, 1])?)?;
    let Some(eps) = eps else { return Ok(modulated) };
    let d = modulated.square().sum_axes(&[2, 3, 4], true)?.add_scalar(eps).rsqrt();
    modulated.mul(&d)
}

/// Convolution whose weights are modulated per sample by a style code.
#[derive(Debug, Clone)]
pub struct ModulatedConv<T: Scalar> {
    pub weight: Tensor<T>,
    pub affine: Linear<T>,
    pub bias: Tensor<T>,
    pub demodulate: bool,
    pub upsample: bool,
    pub eps: f64,
}

impl_params!(ModulatedConv { weight, affine, bias });

impl<T: Scalar> ModulatedConv<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, style_dim: usize, rng: &mut R) -> Self {
        ModulatedConv {
            weight: Tensor::randn(&[c_out, c_in, k, k], rng).requires_grad_(true),
            affine: Linear::with_bias_init(style_dim, c_in, Some(1.0), rng),
            bias: Tensor::zeros(&[c_out]).requires_grad_(true),
            demodulate: true,
            upsample: false,
            eps: DEMOD_EPS,
        }
    }

    pub fn upsampling(mut self) -> Self {
        self.upsample = true;
        self
    }

    /// 1×1 projection without demodulation.
    pub fn to_rgb<R: Rng + ?Sized>(c_in: usize, c_out: usize, style_dim: usize, rng: &mut R) -> Self {
        ModulatedConv {
            demodulate: false,
            ..Self::new(c_in, c_out, 1, style_dim, rng)
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(0)
    }

    /// `x` is `[b, c_in, h, w]`, `style` is `[b, s_d]`.
    pub fn forward(&self, x: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
        let (c_out, c_in, k) = (self.weight.dim(0), self.weight.dim(1), self.weight.dim(2));
        let b = x.dim(0);
        let fan_in = (c_in * k * k) as f64;
        let s = self.affine.forward(style)?.scale(1.0 / fan_in.sqrt());
        let eps = self.demodulate.then_some(self.eps);
        let w = modulate_demodulate(&self.weight, &s, eps)?.reshape(&[b, c_out, c_in * k * k])?;
        let x = if self.upsample { x.upsample_bilinear2x()? } else { x.clone() };
        let y = x.conv2d_cols(&w, k, k, 1, k / 2)?;
        y.add(&self.bias.reshape(&[1, c_out, 1, 1])?)
    }
}

/// Adds learned-strength per-pixel Gaussian noise shared across channels.
#[derive(Debug, Clone)]
pub struct NoiseInjection<T: Scalar> {
    pub strength: Tensor<T>,
}

impl_params!(NoiseInjection { strength });

impl<T: Scalar> Default for NoiseInjection<T> {
    fn default() -> Self {
        NoiseInjection {
            strength: Tensor::zeros(&[1]).requires_grad_(true),
        }
    }
}

impl<T: Scalar> NoiseInjection<T> {
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::shape("noise injection", x.shape(), &[0, 0, 0, 0]));
        }
        let noise = Tensor::randn(&[x.dim(0), 1, x.dim(2), x.dim(3)], rng);
        x.add(&noise.mul(&self.strength)?)
    }
}

/// Modulated convolution, noise, then leaky ReLU.
#[derive(Debug, Clone)]
pub struct StyledLayer<T: Scalar> {
    pub conv: ModulatedConv<T>,
    pub noise: NoiseInjection<T>,
}

impl_params!(StyledLayer { conv, noise });

impl<T: Scalar> StyledLayer<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, style_dim: usize, upsample: bool, rng: &mut R) -> Self {
        let conv = ModulatedConv::new(c_in, c_out, 3, style_dim, rng);
        StyledLayer {
            conv: if upsample { conv.upsampling() } else { conv },
            noise: NoiseInjection::default(),
        }
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, style: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        Ok(lrelu(&self.noise.forward(&self.conv.forward(x, style)?, rng)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zero_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mapping_shape_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = MappingNetwork::<f32>::new(16, 8, &mut rng);
        let z = Tensor::randn(&[3, 16], &mut rng);
        assert_eq!(m.forward(&z).unwrap().shape(), &[3, 16]);
        zero_params(&mut m);
        assert!(m.forward(&z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixing_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[2, 4, 4, 4], &mut rng);
        let s = Tensor::<f64>::randn(&[2, 4], &mut rng);
        assert_eq!(mix_with_style(&x, &s, 1.0, &mut rng).unwrap().data(), x.data());
        let only = mix_with_style(&x, &s, 0.0, &mut rng).unwrap();
        assert_eq!(only.data()[..16], [s.data()[0]; 16]);
        let a = mix_with_style(&x, &s, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mix_with_style(&x, &s, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn fusion_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = StyleFusion::<f64>::new(8, &mut rng);
        let a = Tensor::randn(&[2, 8], &mut rng);
        assert_eq!(f.forward(&a, &a).unwrap().shape(), &[2, 8]);
        assert!(f.forward(&a, &Tensor::zeros(&[2, 7])).is_err());
        f.fc.weight = Tensor::zeros(&[8, 16]);
        f.fc.bias = Some(Tensor::full(&[8], 0.5));
        assert!(f.forward(&a, &a).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn demodulated_norm_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::<f64>::randn(&[5, 3, 3, 3], &mut rng);
        let s = Tensor::<f64>::randn(&[2, 3], &mut rng);
        let wd = modulate_demodulate(&w, &s, Some(DEMOD_EPS)).unwrap();
        let wm = modulate_demodulate(&w, &s, None).unwrap();
        let n2 = wd.square().sum_axes(&[2, 3, 4], false).unwrap();
        let s2 = wm.square().sum_axes(&[2, 3, 4], false).unwrap();
        for (a, b) in n2.data().iter().zip(s2.data()) {
            assert!((a - b / (b + DEMOD_EPS)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_strength_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::randn(&[1, 3, 4, 4], &mut rng);
        let n = NoiseInjection::default();
        assert_eq!(n.forward(&x, &mut rng).unwrap().data(), x.data());
    }

    #[test]
    fn modconv_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = ModulatedConv::<f32>::new(4, 6, 3, 8, &mut rng).upsampling();
        let x = Tensor::randn(&[2, 4, 8, 8], &mut rng);
        let s = Tensor::randn(&[2, 8], &mut rng);
        assert_eq!(c.forward(&x, &s).unwrap().shape(), &[2, 6, 16, 16]);
    }
}
