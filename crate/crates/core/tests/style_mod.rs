use mat_core::style::{mix_with_style, modulate_demodulate, ConditionalStyle, MappingNetwork, NoiseInjection, StyleFusion};
use mat_core::tensor::gradcheck::{check_gradients, GradcheckOptions};
use mat_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Σ_{i,k} W″²` per sample and output channel of a `[b, c_out, c_in, k, k]` tensor.
fn filter_norms(w: &[f64], b: usize, c_out: usize, per: usize) -> Vec<f64> {
    (0..b * c_out).map(|f| w[f * per..(f + 1) * per].iter().map(|v| v * v).sum()).collect()
}

#[test]
fn demodulated_filters_have_the_normalized_energy() {
    let mut r = rng(1);
    for _ in 0..100 {
        let (c_out, c_in, k, b) = (r.random_range(1..6), r.random_range(1..6), [1, 3][r.random_range(0..2)], 2);
        let eps = [1e-8, 1e-2, 1.0][r.random_range(0..3)];
        let w = Tensor::<f32>::randn(&[c_out, c_in, k, k], &mut r);
        let s = Tensor::<f32>::randn(&[b, c_in], &mut r);
        let out = modulate_demodulate(&w, &s, Some(eps)).unwrap().to_f64_vec();
        let modulated = modulate_demodulate(&w, &s, None).unwrap().to_f64_vec();
        let per = c_in * k * k;
        for (got, raw) in filter_norms(&out, b, c_out, per).iter().zip(filter_norms(&modulated, b, c_out, per)) {
            let want = raw / (raw + eps);
            assert!((got - want).abs() <= 4.0 * f32::EPSILON as f64 * per as f64, "{got} vs {want}");
        }
    }
}

#[test]
fn zero_style_channel_annihilates_its_weights() {
    let mut r = rng(2);
    for _ in 0..100 {
        let (c_out, c_in) = (r.random_range(1..5), r.random_range(2..6));
        let w = Tensor::<f32>::randn(&[c_out, c_in, 3, 3], &mut r);
        let z = r.random_range(0..c_in);
        let mut sv: Vec<f32> = Tensor::<f32>::randn(&[1, c_in], &mut r).to_vec();
        sv[z] = 0.0;
        let s = Tensor::from_vec(sv, &[1, c_in]).unwrap();
        let out = modulate_demodulate(&w, &s, Some(1e-8)).unwrap().to_vec();
        for o in 0..c_out {
            assert!(out[(o * c_in + z) * 9..(o * c_in + z + 1) * 9].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn without_epsilon_uniform_style_scaling_cancels() {
    let mut r = rng(3);
    for _ in 0..100 {
        let (c_out, c_in) = (r.random_range(1..5), r.random_range(1..6));
        let w = Tensor::<f32>::randn(&[c_out, c_in, 3, 3], &mut r);
        let s = Tensor::<f32>::randn(&[2, c_in], &mut r);
        let base = modulate_demodulate(&w, &s, Some(0.0)).unwrap();
        let pow2 = 2f64.powi(r.random_range(-6..7));
        assert_eq!(modulate_demodulate(&w, &s.scale(pow2), Some(0.0)).unwrap().to_vec(), base.to_vec());
        let c = r.random_range(0.01..50.0);
        let scaled = modulate_demodulate(&w, &s.scale(c), Some(0.0)).unwrap();
        assert!(scaled.max_abs_diff(&base) <= 4.0 * f32::EPSILON);
    }
}

#[test]
fn mapping_and_fusion_gradients() {
    let mut r = rng(4);
    let map = MappingNetwork::<f64>::new(4, 8, &mut r);
    let w = map.layers[3].weight.clone();
    let z = Tensor::<f64>::randn(&[2, 4], &mut r);
    let report = check_gradients("mapping", &[z, w], |x| {
        let mut m = map.clone();
        m.layers[3].weight = x[1].clone();
        m.forward(&x[0])
    }, GradcheckOptions::default())
    .unwrap();
    assert!(report.passed(), "{report}");

    let fusion = StyleFusion::<f64>::new(4, &mut r);
    let (su, sc) = (Tensor::<f64>::randn(&[3, 4], &mut r), Tensor::<f64>::randn(&[3, 4], &mut r));
    let report = check_gradients("fusion", &[su, sc, fusion.fc.weight.clone()], |x| {
        let mut f = fusion.clone();
        f.fc.weight = x[2].clone();
        f.forward(&x[0], &x[1])
    }, GradcheckOptions::default())
    .unwrap();
    assert!(report.passed(), "{report}");

    let mut zeroed = fusion.clone();
    zeroed.fc.weight = Tensor::zeros(&[4, 8]);
    zeroed.fc.bias = Some(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[4]).unwrap());
    let out = zeroed.forward(&Tensor::randn(&[1, 4], &mut r), &Tensor::randn(&[1, 4], &mut r)).unwrap();
    assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    assert!(zeroed.forward(&Tensor::zeros(&[1, 4]), &Tensor::zeros(&[1, 3])).is_err());
}

#[test]
fn conditional_style_extremes_and_reproducibility() {
    let mut r = rng(5);
    let x = Tensor::<f32>::randn(&[2, 8, 4, 4], &mut r);
    let su = Tensor::<f32>::randn(&[2, 8], &mut r);
    assert_eq!(mix_with_style(&x, &su, 1.0, &mut r).unwrap().to_vec(), x.to_vec());

    let cond = ConditionalStyle::<f32>::new(8, 0.0, &mut r);
    let other = Tensor::<f32>::randn(&[2, 8, 4, 4], &mut r);
    assert_eq!(
        cond.forward(&x, &su, &mut rng(0)).unwrap().to_vec(),
        cond.forward(&other, &su, &mut rng(1)).unwrap().to_vec()
    );

    let half = ConditionalStyle { p: 0.5, ..cond };
    let a = half.forward(&x, &su, &mut rng(7)).unwrap();
    assert_eq!(a.to_vec(), half.forward(&x, &su, &mut rng(7)).unwrap().to_vec());
    assert_eq!(a.shape(), &[2, 8]);
}

#[test]
fn different_noise_gives_different_fused_styles() {
    let mut r = rng(6);
    let map = MappingNetwork::<f64>::new(8, 8, &mut r);
    let cond = ConditionalStyle::<f64>::new(8, 0.5, &mut r);
    let fusion = StyleFusion::<f64>::new(8, &mut r);
    let x = Tensor::<f64>::randn(&[1, 8, 4, 4], &mut r);
    let style = |seed: u64| {
        let mut nr = rng(seed);
        let su = map.forward(&Tensor::randn(&[1, 8], &mut nr)).unwrap();
        let sc = cond.forward(&x, &su, &mut rng(100)).unwrap();
        fusion.forward(&su, &sc).unwrap()
    };
    let (a, b) = (style(1), style(2));
    let dist: f64 = a.to_f64_vec().iter().zip(b.to_f64_vec()).map(|(p, q)| (p - q).powi(2)).sum();
    assert!(dist > 0.0);
}

#[test]
fn noise_injection_adds_the_expected_variance() {
    let mut r = rng(8);
    let x = Tensor::<f64>::randn(&[1, 1, 100, 100], &mut r);
    let zero = NoiseInjection::<f64>::default();
    assert_eq!(zero.forward(&x, &mut r).unwrap().to_vec(), x.to_vec());
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    for strength in [0.5, 1.0, 2.0] {
        let inj = NoiseInjection {
            strength: Tensor::<f64>::full(&[1], strength),
        };
        let y = inj.forward(&x, &mut r).unwrap().to_vec();
        let want = var(&x.to_vec()) + strength * strength;
        assert!((var(&y) / want - 1.0).abs() < 0.05, "strength {strength}");
        assert_eq!(inj.forward(&x, &mut rng(3)).unwrap().to_vec(), inj.forward(&x, &mut rng(3)).unwrap().to_vec());
    }
}

proptest! {
    #[test]
    fn demodulation_norm_below_one(seed in any::<u64>(), eps in 1e-8f64..1.0) {
        let mut r = rng(seed);
        let w = Tensor::<f64>::randn(&[3, 4, 3, 3], &mut r);
        let s = Tensor::<f64>::randn(&[1, 4], &mut r);
        let out = modulate_demodulate(&w, &s, Some(eps)).unwrap().to_vec();
        for n in filter_norms(&out, 1, 3, 36) {
            prop_assert!(n < 1.0 && n > 0.0);
        }
    }
}
