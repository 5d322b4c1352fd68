use std::f64::consts::LN_2;

use mat_core::losses::{
    d_loss, g_loss, perceptual_loss, r1_penalty, total_d_loss, total_g_loss, FeatureExtractor, IdentityExtractor,
    LossWeights, R1Mode, RandomConvExtractor,
};
use mat_core::tensor::backward;
use mat_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn value(t: &Tensor<f64>) -> f64 {
    t.item().unwrap()
}

/// Naive stride-2, pad-1 3×3 convolution of one `[c, h, w]` image.
fn conv_down(x: &[f64], c: usize, h: usize, w: usize, k: &[f64], co: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut y = vec![0.0; co * oh * ow];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c {
                    for u in 0..3 {
                        for v in 0..3 {
                            let (yy, xx) = ((2 * i + u) as isize - 1, (2 * j + v) as isize - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += k[((o * c + ci) * 3 + u) * 3 + v] * x[(ci * h + yy as usize) * w + xx as usize];
                        }
                    }
                }
                let a = if acc >= 0.0 { acc } else { 0.2 * acc };
                y[(o * oh + i) * ow + j] = a * 2f64.sqrt();
            }
        }
    }
    (y, oh, ow)
}

#[test]
fn generator_loss_pushes_logits_up() {
    let mut r = rng(1);
    let logits = Tensor::<f64>::randn(&[16], &mut r).scale(3.0).requires_grad_(true);
    let g = backward(&g_loss(&logits)).unwrap().get_or_zeros(&logits).to_vec();
    let base = logits.to_vec();
    for i in 0..16 {
        assert!(g[i] < 0.0);
        let mut up = base.clone();
        up[i] += 1e-6;
        let fd = (value(&g_loss(&Tensor::from_vec(up, &[16]).unwrap())) - value(&g_loss(&logits))) / 1e-6;
        assert!((fd - g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
    }

    let real = Tensor::<f64>::randn(&[8], &mut r).requires_grad_(true);
    let fake = Tensor::<f64>::randn(&[8], &mut r).requires_grad_(true);
    let store = backward(&d_loss(&real, &fake).unwrap()).unwrap();
    assert!(store.get_or_zeros(&real).to_vec().iter().all(|&v| v < 0.0));
    assert!(store.get_or_zeros(&fake).to_vec().iter().all(|&v| v > 0.0));
}

#[test]
fn totals_match_their_recomputation() {
    let z = Tensor::<f64>::zeros(&[4]);
    let w = LossWeights::default();
    assert!((value(&total_d_loss(&z, &z, &z, None, &w).unwrap()) - 3.0 * LN_2).abs() < 1e-12);
    assert!((value(&total_g_loss(&z, &z, &Tensor::scalar(0.0), &w).unwrap()) - 2.0 * LN_2).abs() < 1e-12);

    let mut r = rng(2);
    for _ in 0..50 {
        let (lr, lc, lf) = (Tensor::<f64>::randn(&[3], &mut r), Tensor::randn(&[3], &mut r), Tensor::randn(&[3], &mut r));
        let perc = Tensor::scalar(0.37);
        let r1 = Tensor::scalar(0.05);
        let sp = |v: &Tensor<f64>, sign: f64| v.to_vec().iter().map(|x| (1.0 + (sign * x).exp()).ln()).sum::<f64>() / 3.0;
        let weights = LossWeights {
            gamma: 4.0,
            lambda: 0.25,
            r1_every: 4,
            ..LossWeights::default()
        };
        let want_g = sp(&lc, -1.0) + sp(&lf, -1.0) + 0.25 * 0.37;
        let want_d = sp(&lr, -1.0) + sp(&lc, 1.0) + sp(&lf, 1.0) + 16.0 * 0.05;
        assert!((value(&total_g_loss(&lc, &lf, &perc, &weights).unwrap()) - want_g).abs() < 1e-12);
        assert!((value(&total_d_loss(&lr, &lc, &lf, Some(&r1), &weights).unwrap()) - want_d).abs() < 1e-12);

        let no_perc = LossWeights { lambda: 0.0, ..weights.clone() };
        assert_eq!(
            value(&total_g_loss(&lc, &lf, &perc, &no_perc).unwrap()),
            value(&g_loss(&lc).add(&g_loss(&lf)).unwrap())
        );
    }
    assert!(LossWeights { r1_every: 0, ..w.clone() }.validate().is_err());
    assert!(LossWeights { gamma: -1.0, ..w }.validate().is_err());
}

#[test]
fn random_conv_perceptual_loss_matches_a_direct_computation() {
    let ex = RandomConvExtractor::<f64>::default();
    let (w1, w2) = (ex.w1.to_vec(), ex.w2.to_vec());
    let mut r = rng(3);
    for (h, w) in [(16, 16), (15, 9), (32, 20)] {
        let xh = Tensor::<f64>::rand_uniform(&[2, 3, h, w], -1.0, 1.0, &mut r);
        let x = Tensor::<f64>::rand_uniform(&[2, 3, h, w], -1.0, 1.0, &mut r);
        let eta = [0.25, 0.5];
        let got = value(&perceptual_loss(&xh, &x, &ex, &eta).unwrap());

        let (mut l1, mut l2, mut n1, mut n2) = (0.0, 0.0, 0, 0);
        let (a, b) = (xh.to_vec(), x.to_vec());
        for s in 0..2 {
            let img = |v: &[f64]| v[s * 3 * h * w..(s + 1) * 3 * h * w].to_vec();
            let (a1, oh, ow) = conv_down(&img(&a), 3, h, w, &w1, 8);
            let (b1, _, _) = conv_down(&img(&b), 3, h, w, &w1, 8);
            let (a2, _, _) = conv_down(&a1, 8, oh, ow, &w2, 16);
            let (b2, _, _) = conv_down(&b1, 8, oh, ow, &w2, 16);
            l1 += a1.iter().zip(&b1).map(|(p, q)| (p - q).abs()).sum::<f64>();
            l2 += a2.iter().zip(&b2).map(|(p, q)| (p - q).abs()).sum::<f64>();
            n1 += a1.len();
            n2 += a2.len();
        }
        let want = 0.25 * l1 / n1 as f64 + 0.5 * l2 / n2 as f64;
        assert!((got - want).abs() <= 1e-6 * want.max(1.0), "{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn perceptual_loss_contract() {
    let x = Tensor::<f64>::zeros(&[1, 3, 8, 8]);
    assert_eq!(value(&perceptual_loss(&x, &x, &RandomConvExtractor::default(), &[0.25, 0.5]).unwrap()), 0.0);
    assert!(perceptual_loss(&x, &x, &IdentityExtractor, &[1.0, 1.0]).is_err());
    assert!(perceptual_loss(&x, &Tensor::zeros(&[1, 3, 8, 4]), &IdentityExtractor, &[1.0]).is_err());
    let a = Tensor::<f64>::ones(&[1, 3, 8, 8]);
    assert!((value(&perceptual_loss(&a, &x, &IdentityExtractor, &[2.0]).unwrap()) - 2.0).abs() < 1e-15);
    assert_eq!(<IdentityExtractor as FeatureExtractor<f64>>::name(&IdentityExtractor), "identity");
    assert_eq!(RandomConvExtractor::<f32>::default().pooled(&Tensor::zeros(&[2, 3, 16, 16])).unwrap().shape(), &[2, 16]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn r1_is_nonnegative(seed in any::<u64>(), norm in any::<bool>()) {
        let mut r = rng(seed);
        let a = Tensor::<f64>::randn(&[1, 12], &mut r);
        let x = Tensor::<f64>::randn(&[3, 12], &mut r);
        let mode = if norm { R1Mode::Norm } else { R1Mode::Squared };
        let p = value(&r1_penalty(|x| x.mul(&a)?.tanh().sum_axes(&[1], false), &x, mode).unwrap());
        prop_assert!(p >= 0.0 && p.is_finite());
    }

    #[test]
    fn adversarial_losses_are_positive_and_monotone(v in -20.0f64..20.0, dv in 0.01f64..5.0) {
        let l = |x: f64| value(&g_loss(&Tensor::from_vec(vec![x], &[1]).unwrap()));
        prop_assert!(l(v) > 0.0);
        prop_assert!(l(v + dv) < l(v));
    }
}
