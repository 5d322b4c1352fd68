//! Parameter containers and the basic learned layers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ConvOpts, GradStore, Tensor};

/// Visits the named learned tensors of a module.
pub trait Params<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Params<T> for Tensor<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(prefix.to_string(), self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(prefix.to_string(), self)
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Option<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        if let Some(p) = self {
            p.visit(prefix, f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f)
        }
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f)
        }
    }
}

/// Implements [`Params`] for a struct generic over `T` by listing its fields.
#[macro_export]
macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::Scalar> $crate::nn::Params<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a $crate::Tensor<T>)) {
                $( $crate::nn::Params::visit(&self.$field, &$crate::nn::child(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut $crate::Tensor<T>)) {
                $( $crate::nn::Params::visit_mut(&mut self.$field, &$crate::nn::child(prefix, stringify!($field)), f); )*
            }
        }
    };
}

#[doc(hidden)]
pub fn child(prefix: &str, name: &str) -> String {
    join(prefix, name)
}

pub fn named_params<T: Scalar>(m: &impl Params<T>) -> Vec<(String, Tensor<T>)> {
    let mut out = Vec::new();
    m.visit("", &mut |n, t| out.push((n, t.clone())));
    out
}

pub fn param_count<T: Scalar>(m: &impl Params<T>) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, t| n += t.numel());
    n
}

/// Replaces every parameter by `f(name, param)`.
pub fn map_params<T: Scalar>(m: &mut impl Params<T>, mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<T>) {
    m.visit_mut("", &mut |n, t| *t = f(&n, t));
}

pub fn zero_params<T: Scalar>(m: &mut impl Params<T>) {
    map_params(m, |_, t| Tensor::zeros(t.shape()).requires_grad_(true));
}

/// Euclidean norm over all gradients present in `grads` for the module's parameters.
pub fn grad_norm<T: Scalar>(m: &impl Params<T>, grads: &GradStore<T>) -> f64 {
    let mut s = 0.0;
    m.visit("", &mut |_, t| {
        if let Some(g) = grads.get(t) {
            s += g.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
        }
    });
    s.sqrt()
}

impl<T: Scalar> crate::tensor::Adam<T> {
    /// Applies one update to every parameter of `m` that has a gradient.
    pub fn step_module(&mut self, m: &mut impl Params<T>, grads: &GradStore<T>) -> Result<()> {
        let mut err = None;
        let cfg = self.config;
        let states = &mut self.states;
        m.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            let Some(g) = grads.get(p) else { return };
            let st = states
                .entry(name)
                .or_insert_with(|| crate::tensor::AdamState::new(p.shape()));
            match st.step(p, g, &cfg) {
                Ok(q) => *p = q,
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// Leaky ReLU with slope 0.2 and a √2 gain.
pub fn lrelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.leaky_relu(0.2).scale(std::f64::consts::SQRT_2)
}

fn fresh<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, rng).requires_grad_(true)
}

/// Fully connected layer with unit-normal weights scaled by `1/√fan_in` at run time.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    scale: f64,
}

impl_params!(Linear { weight, bias });

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        Self::with_bias_init(in_dim, out_dim, bias.then_some(0.0), rng)
    }

    pub fn with_bias_init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, bias: Option<f64>, rng: &mut R) -> Self {
        Linear {
            weight: fresh(&[out_dim, in_dim], rng),
            bias: bias.map(|b| Tensor::full(&[out_dim], T::lit(b)).requires_grad_(true)),
            scale: 1.0 / (in_dim as f64).sqrt(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(0)
    }

    /// `[.., in] -> [.., out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let r = x.rank();
        if r == 0 || x.dim(r - 1) != self.in_dim() {
            return Err(Error::shape("linear", x.shape(), self.weight.shape()));
        }
        let rows = x.numel() / self.in_dim();
        let flat = x.reshape(&[rows, self.in_dim()])?;
        let mut y = flat.matmul_t(&self.weight.scale(self.scale), false, true)?;
        if let Some(b) = &self.bias {
            y = y.add(b)?;
        }
        let mut shape = x.shape().to_vec();
        shape[r - 1] = self.out_dim();
        y.reshape(&shape)
    }
}

/// 2-D convolution layer with runtime weight scaling.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub opts: ConvOpts,
    scale: f64,
}

impl_params!(Conv2d { weight, bias });

impl<T: Scalar> Conv2d<T> {
    /// Stride-1 "same" convolution for odd `k`.
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Self {
        Self::with_opts(c_in, c_out, k, ConvOpts::same(k), true, rng)
    }

    /// Stride-2 convolution halving the extent.
    pub fn down<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Self {
        Self::with_opts(c_in, c_out, k, ConvOpts::down(k), true, rng)
    }

    pub fn with_opts<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        opts: ConvOpts,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let shape = if opts.transposed { [c_in, c_out, k, k] } else { [c_out, c_in, k, k] };
        Conv2d {
            weight: fresh(&shape, rng),
            bias: bias.then(|| Tensor::zeros(&[c_out]).requires_grad_(true)),
            opts,
            scale: 1.0 / ((c_in * k * k) as f64).sqrt(),
        }
    }

    pub fn c_out(&self) -> usize {
        if self.opts.transposed {
            self.weight.dim(1)
        } else {
            self.weight.dim(0)
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight.scale(self.scale), self.bias.as_ref(), self.opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Pair<T: Scalar> {
        a: Linear<T>,
        b: Vec<Conv2d<T>>,
    }
    impl_params!(Pair { a, b });

    #[test]
    fn visitor_names_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Pair::<f32> {
            a: Linear::new(3, 2, true, &mut rng),
            b: vec![Conv2d::new(2, 4, 3, &mut rng), Conv2d::down(4, 4, 3, &mut rng)],
        };
        let names: Vec<String> = named_params(&p).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["a.weight", "a.bias", "b.0.weight", "b.0.bias", "b.1.weight", "b.1.bias"]);
        assert_eq!(param_count(&p), 6 + 2 + 72 + 4 + 144 + 4);
    }

    #[test]
    fn linear_shapes_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Linear::<f64>::new(5, 3, true, &mut rng);
        let x = Tensor::randn(&[2, 4, 5], &mut rng);
        assert_eq!(l.forward(&x).unwrap().shape(), &[2, 4, 3]);
        assert!(l.forward(&Tensor::zeros(&[2, 4])).is_err());
        zero_params(&mut l);
        assert!(l.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
