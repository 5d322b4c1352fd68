//! Central finite-difference checks of analytic gradients (run in `f64`).
//!
//! A tensor-valued function is reduced to a scalar by a fixed random
//! projection, `L = Σ f(x) ⊙ R`, and every checked entry of every input is
//! perturbed by `±h`. The error of an entry is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 0.01 · scale)` where
//! `scale` is the largest gradient magnitude of that input, so entries many
//! orders below the dominant ones are judged against a floor rather than
//! against themselves. An entry above a tenth of the tolerance at step `h`
//! is re-probed at `h / 10` and `10 h` and keeps its best error: the smaller
//! step avoids straddling a kink of a piecewise-linear activation, the larger
//! one suppresses round-off in deep composites. A genuine error persists at
//! every step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, no_grad, ConvOpts, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on perturbed entries per input; entries are spread evenly.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub entries: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<40} max rel err {:.3e} (tol {:.0e}, {} entries)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.tolerance,
            self.entries
        )
    }
}

fn projected<F>(f: &F, inputs: &[Tensor<f64>], proj: &mut Option<Tensor<f64>>, seed: u64) -> Result<Tensor<f64>>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let out = f(inputs)?;
    let r = match proj {
        Some(r) => r.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
            let r = Tensor::randn(out.shape(), &mut rng);
            *proj = Some(r.clone());
            r
        }
    };
    Ok(out.mul(&r)?.sum_all())
}

/// Compares autodiff gradients of `f` at `inputs` against central differences.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor<f64>], f: F, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad_(true)).collect();
    let mut proj = None;
    let loss = projected(&f, &leaves, &mut proj, opts.seed)?;
    let grads = backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|t| grads.get_or_zeros(t)).collect();
    drop(grads);
    drop(loss);

    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        no_grad(|| projected(&f, vals, &mut proj.clone(), opts.seed)).and_then(|l| l.item())
    };
    let numeric_at = |i: usize, j: usize, h: f64| -> Result<f64> {
        let mut vals: Vec<Tensor<f64>> = leaves.iter().map(|t| t.detach()).collect();
        let base = vals[i].to_vec();
        let mut plus = base.clone();
        plus[j] += h;
        vals[i] = Tensor::from_vec(plus, leaves[i].shape())?;
        let lp = eval(&vals)?;
        let mut minus = base;
        minus[j] -= h;
        vals[i] = Tensor::from_vec(minus, leaves[i].shape())?;
        let lm = eval(&vals)?;
        Ok((lp - lm) / (2.0 * h))
    };

    let mut worst = 0.0f64;
    let mut entries = 0;
    for (i, a) in analytic.iter().enumerate() {
        let n = a.numel();
        let count = n.min(opts.max_entries);
        if count == 0 {
            continue;
        }
        let idx: Vec<usize> = (0..count).map(|c| c * n / count).collect();
        let mut numeric = Vec::with_capacity(count);
        for &j in &idx {
            numeric.push(numeric_at(i, j, opts.step)?);
        }
        let scale = idx
            .iter()
            .zip(&numeric)
            .map(|(&j, nv)| a.data()[j].abs().max(nv.abs()))
            .fold(0.0, f64::max);
        let rel = |av: f64, nv: f64| (av - nv).abs() / av.abs().max(nv.abs()).max(0.01 * scale).max(1e-12);
        for (&j, &nv) in idx.iter().zip(&numeric) {
            let av = a.data()[j];
            let mut e = rel(av, nv);
            if e >= 0.1 * opts.tolerance {
                for h in [opts.step / 10.0, opts.step * 10.0] {
                    e = e.min(rel(av, numeric_at(i, j, h)?));
                }
            }
            worst = worst.max(e);
            entries += 1;
        }
    }
    Ok(GradcheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance: opts.tolerance,
        entries,
    })
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, rng)
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, 0.5, 2.0, rng)
}

type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>);

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($input:expr),*], $f:expr) => {
            v.push(($name, vec![$($input),*], Box::new($f)))
        };
    }
    case!("matmul 4x5·5x3", [randn(&[4, 5], rng), randn(&[5, 3], rng)], |x| x[0].matmul(&x[1]));
    case!("matmul batched broadcast", [randn(&[2, 3, 4], rng), randn(&[4, 2], rng)], |x| x[0].matmul(&x[1]));
    case!("matmul transposed", [randn(&[2, 4, 3], rng), randn(&[2, 5, 4], rng)], |x| {
        x[0].matmul_t(&x[1], true, true)
    });
    case!("conv2d stride 1", [randn(&[2, 3, 5, 5], rng), randn(&[4, 3, 3, 3], rng), randn(&[4], rng)], |x| {
        x[0].conv2d(&x[1], Some(&x[2]), ConvOpts::same(3))
    });
    case!("conv2d stride 2", [randn(&[1, 2, 6, 6], rng), randn(&[3, 2, 3, 3], rng)], |x| {
        x[0].conv2d(&x[1], None, ConvOpts::down(3))
    });
    case!("conv2d 1x1", [randn(&[2, 3, 4, 4], rng), randn(&[2, 3, 1, 1], rng)], |x| {
        x[0].conv2d(&x[1], None, ConvOpts::same(1))
    });
    case!("conv2d transposed", [randn(&[1, 3, 3, 3], rng), randn(&[3, 2, 3, 3], rng)], |x| {
        x[0].conv2d(&x[1], None, ConvOpts { stride: 2, pad: 1, transposed: true })
    });
    case!("per-sample conv", [randn(&[2, 2, 4, 4], rng), randn(&[2, 3, 18], rng)], |x| {
        x[0].conv2d_cols(&x[1], 3, 3, 1, 1)
    });
    case!("softmax last axis", [randn(&[8], rng)], |x| x[0].softmax(0));
    case!("softmax inner axis", [randn(&[3, 4, 2], rng)], |x| x[0].softmax(1));
    case!("add broadcast", [randn(&[3, 1, 4], rng), randn(&[2, 1], rng)], |x| x[0].add(&x[1]));
    case!("sub broadcast", [randn(&[3, 4], rng), randn(&[4], rng)], |x| x[0].sub(&x[1]));
    case!("mul broadcast", [randn(&[2, 3], rng), randn(&[2, 1], rng)], |x| x[0].mul(&x[1]));
    case!("div broadcast", [randn(&[2, 3], rng), positive(&[3], rng)], |x| x[0].div(&x[1]));
    case!("scale and shift", [randn(&[5], rng)], |x| Ok(x[0].scale(-1.7).add_scalar(0.3)));
    case!("exp", [randn(&[6], rng)], |x| Ok(x[0].exp()));
    case!("log", [positive(&[6], rng)], |x| Ok(x[0].log()));
    case!("sqrt", [positive(&[6], rng)], |x| Ok(x[0].sqrt()));
    case!("rsqrt", [positive(&[6], rng)], |x| Ok(x[0].rsqrt()));
    case!("tanh", [randn(&[6], rng)], |x| Ok(x[0].tanh()));
    case!("sigmoid", [randn(&[6], rng)], |x| Ok(x[0].sigmoid()));
    case!("softplus", [randn(&[6], rng)], |x| Ok(x[0].softplus()));
    case!("abs", [randn(&[6], rng)], |x| Ok(x[0].abs()));
    case!("square", [randn(&[6], rng)], |x| Ok(x[0].square()));
    case!("gelu", [randn(&[10], rng)], |x| Ok(x[0].gelu()));
    case!("leaky_relu 0.2", [randn(&[10], rng)], |x| Ok(x[0].leaky_relu(0.2)));
    case!("sum/mean reductions", [randn(&[2, 3, 4], rng)], |x| {
        let a = x[0].sum_axes(&[1], false)?;
        let b = x[0].mean_axes(&[0, 2], true)?;
        a.sum_all().add(&b.mean_all())?.add(&x[0].mean_all())
    });
    case!("broadcast_to", [randn(&[3, 1], rng)], |x| x[0].broadcast_to(&[2, 3, 4]));
    case!("reshape", [randn(&[2, 6], rng)], |x| x[0].reshape(&[3, 4]));
    case!("permute", [randn(&[2, 3, 4], rng)], |x| x[0].permute(&[1, 2, 0]));
    case!("transpose", [randn(&[3, 5], rng)], |x| x[0].transpose(0, 1));
    case!("concat", [randn(&[2, 3], rng), randn(&[2, 2], rng)], |x| Tensor::concat(&[&x[0], &x[1]], 1));
    case!("narrow", [randn(&[4, 5], rng)], |x| x[0].narrow(1, 1, 3));
    case!("roll", [randn(&[2, 5], rng)], |x| x[0].roll(1, 2));
    case!("upsample nearest", [randn(&[1, 2, 3, 3], rng)], |x| x[0].upsample_nearest2x());
    case!("upsample bilinear", [randn(&[1, 2, 3, 4], rng)], |x| x[0].upsample_bilinear2x());
    case!("avg pool", [randn(&[1, 2, 4, 4], rng)], |x| x[0].avg_pool2x());
    case!(
        "conv-gelu-fc-softmax-xent",
        [randn(&[2, 2, 4, 4], rng), randn(&[3, 2, 3, 3], rng), randn(&[48, 5], rng), randn(&[5], rng)],
        |x| {
            let h = x[0].conv2d(&x[1], None, ConvOpts::down(3))?.gelu();
            let logits = h.reshape(&[2, 12])?.broadcast_to(&[2, 12])?;
            let flat = Tensor::concat(&[&logits, &logits, &logits, &logits], 1)?;
            let z = flat.matmul(&x[2])?.add(&x[3])?;
            let p = z.softmax(1)?;
            // cross-entropy against fixed one-hot targets
            let target = Tensor::from_f64(&[1., 0., 0., 0., 0., 0., 0., 0., 1., 0.], &[2, 5])?;
            Ok(p.log().mul(&target)?.sum_all().neg())
        }
    );
    v
}

/// Runs every tensor-level case on `instances` random draws each.
pub fn op_suite(instances: usize, seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut reports: Vec<GradcheckReport> = Vec::new();
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(inst as u64));
        for (name, inputs, f) in cases(&mut rng) {
            let opts = GradcheckOptions {
                seed: seed ^ inst as u64,
                ..GradcheckOptions::default()
            };
            let r = check_gradients(name, &inputs, f, opts)?;
            match reports.iter_mut().find(|p| p.name == r.name) {
                Some(prev) => {
                    prev.max_rel_error = prev.max_rel_error.max(r.max_rel_error);
                    prev.entries += r.entries;
                }
                None => reports.push(r),
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        // A deliberately wrong backward rule must be caught.
        let x = Tensor::<f64>::from_vec(vec![0.3, -0.8, 1.1], &[3]).unwrap();
        let wrong = |v: &[Tensor<f64>]| -> Result<Tensor<f64>> {
            let d = v[0].to_vec();
            Ok(Tensor::from_op(
                d.iter().map(|a| a * a).collect(),
                vec![3],
                &[&v[0]],
                "bad_square",
                |p, _, g| Ok(vec![Some(g.mul(&p[0])?)]),
            ))
        };
        let r = check_gradients("bad", &[x], wrong, GradcheckOptions::default()).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn every_op_passes_on_five_instances() {
        for r in op_suite(5, 11).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }
}
