//! Finite-difference checks of the composite model blocks, on top of the
//! per-op suite in [`crate::tensor::gradcheck`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionConfig;
use crate::blocks::{AdjustedBlock, ConvHead, Stage};
use crate::error::Result;
use crate::generator::{Discriminator, Generator, GeneratorConfig};
use crate::losses::{r1_penalty, R1Mode};
use crate::mask::{BinaryMask, TokenMask};
use crate::nn::{named_params, Params};
use crate::style::ModulatedConv;
use crate::tensor::gradcheck::{check_gradients, op_suite, GradcheckOptions, GradcheckReport};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;
pub const DEEP_TOLERANCE: f64 = 1e-3;

fn with_params<M: Params<f64> + Clone>(m: &M, vals: &[Tensor<f64>]) -> M {
    let mut m = m.clone();
    let mut i = 0;
    m.visit_mut("", &mut |_, t| {
        *t = vals[i].clone();
        i += 1;
    });
    m
}

/// Parameters jittered away from their initial values so that zero biases do
/// not pin pre-activations exactly on an activation kink.
fn params_of<M: Params<f64>>(m: &M, seed: u64) -> Vec<Tensor<f64>> {
    let mut r = rng(seed ^ 0x7a11);
    named_params(m)
        .into_iter()
        .map(|(_, t)| t.add(&Tensor::randn(t.shape(), &mut r).scale(0.1)).expect("same shape"))
        .collect()
}

fn flat_concat(parts: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let flat = parts.iter().map(|t| t.reshape(&[t.numel()])).collect::<Result<Vec<_>>>()?;
    Tensor::concat(&flat.iter().collect::<Vec<_>>(), 0)
}

/// Token mask of a 4×4 grid with the top-left 2×2 tokens valid.
fn corner_mask() -> TokenMask {
    let bits = (0..16).map(|i| u8::from(i / 4 < 2 && i % 4 < 2)).collect();
    TokenMask::new(4, 4, bits).expect("16 bits")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs `f(inputs[..k], module with params inputs[k..])` through the checker.
fn module_case<M, F>(
    name: &str,
    module: &M,
    data: Vec<Tensor<f64>>,
    f: F,
    tolerance: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradcheckReport>
where
    M: Params<f64> + Clone,
    F: Fn(&[Tensor<f64>], &M) -> Result<Tensor<f64>>,
{
    let k = data.len();
    let mut inputs = data;
    inputs.extend(params_of(module, seed));
    let opts = GradcheckOptions {
        tolerance,
        max_entries,
        seed,
        ..GradcheckOptions::default()
    };
    check_gradients(name, &inputs, |x| f(&x[..k], &with_params(module, &x[k..])), opts)
}

/// Composite blocks: adjusted block, stage, conv head, modulated convs, the
/// micro discriminator, R1 through double backward and both generator stages.
pub fn composite_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let attn = AttentionConfig::new(8, 2, 2)?;
    let masks = vec![corner_mask()];

    let blk = AdjustedBlock::<f64>::new(attn, 2, &mut r)?;
    let x = Tensor::randn(&[1, 16, 8], &mut r);
    let m = masks.clone();
    out.push(module_case(
        "adjusted block (shifted, masked)",
        &blk,
        vec![x.clone()],
        move |d, b| Ok(b.forward(&d[0], &m, true)?.0),
        TOLERANCE,
        16,
        seed,
    )?);

    let stage = Stage::<f64>::new(attn, 2, 2, &mut r)?;
    let m = masks.clone();
    out.push(module_case(
        "stage (2 blocks + conv)",
        &stage,
        vec![x],
        move |d, s| Ok(s.forward(&d[0], &m)?.0),
        TOLERANCE,
        12,
        seed,
    )?);

    let head = ConvHead::<f64>::new([2, 3, 4], 4, &mut r);
    out.push(module_case(
        "conv head",
        &head,
        vec![Tensor::randn(&[1, 4, 16, 16], &mut r)],
        |d, h| {
            let o = h.forward(&d[0])?;
            let mut parts = vec![o.tokens];
            parts.extend(o.shortcuts);
            flat_concat(&parts)
        },
        TOLERANCE,
        16,
        seed,
    )?);

    let style = Tensor::randn(&[2, 4], &mut r);
    let mc = ModulatedConv::<f64>::new(3, 4, 3, 4, &mut r);
    out.push(module_case(
        "modulated conv (demodulated)",
        &mc,
        vec![Tensor::randn(&[2, 3, 5, 5], &mut r), style.clone()],
        |d, c| c.forward(&d[0], &d[1]),
        TOLERANCE,
        24,
        seed,
    )?);
    let up = ModulatedConv::<f64>::new(3, 2, 3, 4, &mut r).upsampling();
    out.push(module_case(
        "modulated conv (upsampling)",
        &up,
        vec![Tensor::randn(&[2, 3, 3, 3], &mut r), style],
        |d, c| c.forward(&d[0], &d[1]),
        TOLERANCE,
        24,
        seed,
    )?);

    let cfg = GeneratorConfig::micro();
    let s = cfg.size;
    let disc = Discriminator::<f64>::new(&cfg, &mut r)?;
    let image = Tensor::randn(&[2, 3, s, s], &mut r).scale(0.5);
    let mut bm = BinaryMask::all_valid(s, s);
    for y in 4..16 {
        for x in 6..16 {
            bm.set(y, x, false);
        }
    }
    let mask = BinaryMask::batch_tensor::<f64>(&[bm.clone(), BinaryMask::all_valid(s, s)])?;
    let mk = mask.clone();
    out.push(module_case(
        "discriminator (micro)",
        &disc,
        vec![image.clone()],
        move |d, net| net.forward(&d[0], &mk),
        DEEP_TOLERANCE,
        8,
        seed,
    )?);
    let (img, mk) = (image.clone(), mask.clone());
    out.push(module_case(
        "r1 penalty (double backward)",
        &disc,
        Vec::new(),
        move |_, net| r1_penalty(|x| net.forward(x, &mk), &img, R1Mode::Squared),
        DEEP_TOLERANCE,
        8,
        seed,
    )?);

    let g = Generator::<f64>::new(cfg.clone(), &mut r)?;
    let z = Tensor::randn(&[2, cfg.style_dim], &mut r);
    let mk = mask.clone();
    out.push(module_case(
        "generator both stages (micro)",
        &g,
        vec![image, z],
        move |d, g| {
            let o = g.forward(&d[0], &mk, &d[1], &mut rng(seed ^ 0x51))?;
            flat_concat(&[o.coarse, o.refined])
        },
        DEEP_TOLERANCE,
        4,
        seed,
    )?);
    Ok(out)
}

/// The per-op suite over `instances` draws followed by the composite suite.
pub fn full_suite(instances: usize, seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut v = op_suite(instances, seed)?;
    v.extend(composite_suite(seed)?);
    Ok(v)
}
