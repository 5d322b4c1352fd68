//! Adversarial training loop, FID-toy evaluation, checkpoints and resume.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::SyntheticDataset;
use crate::error::{Error, Result};
use crate::generator::{composite, Discriminator, Generator};
use crate::losses::{perceptual_loss, r1_penalty, total_d_loss, total_g_loss, RandomConvExtractor};
use crate::mask::{sample_free_form_mask, BinaryMask, MaskSpec};
use crate::metrics::{fid, FeatureSet};
use crate::nn::grad_norm;
use crate::scalar::Scalar;
use crate::tensor::{backward, no_grad, Adam, Tensor};

/// Images, masks, noise and the step-local generator.
type StepInputs<T> = (Tensor<T>, Tensor<T>, Tensor<T>, ChaCha8Rng);

pub const METRICS_HEADER: &str = "step,d_loss,g_loss,r1,perc,fid_toy";

/// First image index of the held-out evaluation set.
const EVAL_OFFSET: u64 = 1 << 40;
const EVAL_BATCH: usize = 16;

/// Scalars produced by one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Number of completed steps after this one.
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    /// `None` on steps that skip the lazy penalty.
    pub r1: Option<f64>,
    pub perc: f64,
    pub d_grad_norm: f64,
    pub g_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub g: Generator<T>,
    pub d: Discriminator<T>,
    pub g_opt: Adam<T>,
    pub d_opt: Adam<T>,
    pub step: u64,
    pub extractor: RandomConvExtractor<T>,
    pub dataset: SyntheticDataset,
}

fn finite(what: &str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            step,
            last_good: None,
        })
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g = Generator::new(config.model.clone(), &mut rng)?;
        let d = Discriminator::new(&config.model, &mut rng)?;
        let dataset = SyntheticDataset::new(config.dataset, config.model.size, config.seed);
        Ok(Trainer {
            g,
            d,
            g_opt: Adam::new(config.adam),
            d_opt: Adam::new(config.adam),
            step: 0,
            extractor: RandomConvExtractor::default(),
            dataset,
            config,
        })
    }

    pub fn mask_spec(&self, seed: u64) -> MaskSpec {
        MaskSpec::new(self.config.mask_setting, seed)
    }

    /// Batch, masks and step-local randomness for step `step`; a pure function of the seed and step.
    fn step_inputs(&self, step: u64) -> Result<StepInputs<T>> {
        let cfg = &self.config;
        let (b, s) = (cfg.batch_size, cfg.model.size);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        rng.set_stream(step);
        let real = self.dataset.batch::<T>(step * b as u64, b);
        let spec = self.mask_spec(0);
        let masks = (0..b)
            .map(|_| sample_free_form_mask(&spec, s, s, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let m = BinaryMask::batch_tensor::<T>(&masks)?;
        let z = Tensor::randn(&[b, cfg.model.style_dim], &mut rng);
        Ok((real, m, z, rng))
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let step = self.step;
        let (real, m, z, mut rng) = self.step_inputs(step)?;
        let w = self.config.loss.clone();
        let out = self.g.forward(&real, &m, &z, &mut rng)?;
        let comp_c = composite(&real, &out.coarse, &m)?;
        let comp_r = composite(&real, &out.refined, &m)?;

        let mut real_logits = None;
        let r1 = if step.is_multiple_of(w.r1_every as u64) {
            let d = &self.d;
            let r = r1_penalty(
                |x| {
                    let l = d.forward(x, &m)?;
                    real_logits = Some(l.clone());
                    Ok(l)
                },
                &real,
                w.r1_mode,
            )?;
            Some(r)
        } else {
            None
        };
        let real_logits = match real_logits {
            Some(l) => l,
            None => self.d.forward(&real, &m)?,
        };
        let lc = self.d.forward(&comp_c.detach(), &m)?;
        let lr = self.d.forward(&comp_r.detach(), &m)?;
        let ld = total_d_loss(&real_logits, &lc, &lr, r1.as_ref(), &w)?;
        let d_loss = finite("d_loss", ld.item()?.to_f64_lossy(), step)?;
        let r1 = r1.map(|r| r.item().map(|v| v.to_f64_lossy())).transpose()?;
        if let Some(v) = r1 {
            finite("r1", v, step)?;
        }
        let dg = backward(&ld)?;
        let d_grad_norm = grad_norm(&self.d, &dg);
        self.d_opt.step_module(&mut self.d, &dg)?;
        drop(dg);

        let lc = self.d.forward(&comp_c, &m)?;
        let lr = self.d.forward(&comp_r, &m)?;
        let perc = perceptual_loss(&out.refined, &real, &self.extractor, &w.eta)?;
        let lg = total_g_loss(&lc, &lr, &perc, &w)?;
        let g_loss = finite("g_loss", lg.item()?.to_f64_lossy(), step)?;
        let perc = finite("perc", perc.item()?.to_f64_lossy(), step)?;
        let gg = backward(&lg)?;
        let g_grad_norm = grad_norm(&self.g, &gg);
        self.g_opt.step_module(&mut self.g, &gg)?;

        self.step += 1;
        Ok(StepReport {
            step: self.step,
            d_loss,
            g_loss,
            r1,
            perc,
            d_grad_norm,
            g_grad_norm,
        })
    }

    /// Features of `n` held-out real images and of their inpaintings under fixed masks and noise.
    pub fn eval_features(&self, n: usize) -> Result<(FeatureSet, FeatureSet)> {
        let s = self.config.model.size;
        let masks = crate::mask::sample_masks(&self.mask_spec(self.config.seed ^ 0xe7a1), n, s, s)?;
        let (mut real, mut fake) = (Vec::new(), Vec::new());
        let mut start = 0;
        while start < n {
            let k = EVAL_BATCH.min(n - start);
            let x = self.dataset.batch::<T>(EVAL_OFFSET + start as u64, k);
            let y = self.g.inpaint(&x, &masks[start..start + k], start as u64)?;
            no_grad(|| -> Result<()> {
                real.extend(self.extractor.pooled(&x)?.to_f64_vec());
                fake.extend(self.extractor.pooled(&y)?.to_f64_vec());
                Ok(())
            })?;
            start += k;
        }
        let d = real.len() / n;
        let tag = |f: FeatureSet| f.tagged("random-conv", self.dataset.kind.name());
        Ok((tag(FeatureSet::new(real, n, d)?), tag(FeatureSet::new(fake, n, d)?)))
    }

    pub fn fid_toy(&self) -> Result<f64> {
        let (r, f) = self.eval_features(self.config.eval_samples)?;
        fid(&r, &f)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.put_bytes("config", self.config.to_ini().as_bytes());
        c.put_u64("step", self.step);
        c.put_params("g", &self.g);
        c.put_params("d", &self.d);
        c.put_adam("g_opt", &self.g_opt);
        c.put_adam("d_opt", &self.d_opt);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let text = std::str::from_utf8(c.bytes("config")?).map_err(|e| Error::Format {
            kind: "checkpoint",
            msg: format!("config record is not UTF-8: {e}"),
        })?;
        let mut t = Trainer::new(TrainConfig::parse(text)?)?;
        t.step = c.u64("step")?;
        c.load_params("g", &mut t.g)?;
        c.load_params("d", &mut t.d)?;
        c.load_adam("g_opt", &mut t.g_opt)?;
        c.load_adam("d_opt", &mut t.d_opt)?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Trains until the sample budget is spent. Writes `metrics.csv`, periodic
    /// `step_XXXXXXXX.matc` snapshots and `final.matc` into `out_dir`; a resumed
    /// run appends to the existing log.
    pub fn run(&mut self, out_dir: impl AsRef<Path>, mut on_step: impl FnMut(&StepReport)) -> Result<TrainOutcome> {
        let dir = out_dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("metrics.csv");
        let resumed = self.step > 0 && log_path.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(resumed)
            .write(true)
            .truncate(!resumed)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut log = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&log_path, io),
            other => Error::Format {
                kind: "csv",
                msg: format!("{other:?}"),
            },
        };
        if !resumed {
            log.write_record(METRICS_HEADER.split(',')).map_err(csv_err)?;
        }
        let every = self.config.eval_every;
        let total = self.config.total_steps();
        let mut outcome = TrainOutcome {
            reports: Vec::new(),
            fid: Vec::new(),
            last_checkpoint: None,
        };
        let row = |log: &mut csv::Writer<fs::File>, t: &Self, r: Option<&StepReport>, out: &mut TrainOutcome| {
            let f = t.fid_toy()?;
            out.fid.push((t.step, f));
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            log.write_record([
                t.step.to_string(),
                opt(r.map(|r| r.d_loss)),
                opt(r.map(|r| r.g_loss)),
                opt(r.and_then(|r| r.r1)),
                opt(r.map(|r| r.perc)),
                f.to_string(),
            ])
            .map_err(csv_err)?;
            log.flush().map_err(|e| Error::io(&log_path, e))
        };
        if every > 0 && self.step == 0 {
            row(&mut log, self, None, &mut outcome)?;
        }
        while self.step < total {
            let report = match self.train_step() {
                Ok(r) => r,
                Err(Error::NonFinite { what, step, .. }) => {
                    return Err(Error::NonFinite {
                        what,
                        step,
                        last_good: outcome.last_checkpoint.clone(),
                    })
                }
                Err(e) => return Err(e),
            };
            on_step(&report);
            outcome.reports.push(report);
            let s = self.step;
            if every > 0 && (s.is_multiple_of(every) || s == total) {
                row(&mut log, self, Some(&report), &mut outcome)?;
            }
            if self.config.checkpoint_every > 0 && s.is_multiple_of(self.config.checkpoint_every) && s < total {
                let p = dir.join(format!("step_{s:08}.matc"));
                self.to_checkpoint().save(&p)?;
                outcome.last_checkpoint = Some(p);
            }
        }
        let p = dir.join("final.matc");
        self.to_checkpoint().save(&p)?;
        outcome.last_checkpoint = Some(p);
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub reports: Vec<StepReport>,
    /// `(step, FID-toy)` at every evaluation.
    pub fid: Vec<(u64, f64)>,
    pub last_checkpoint: Option<PathBuf>,
}
