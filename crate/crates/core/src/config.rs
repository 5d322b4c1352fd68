//! Training configuration in INI form.
//!
//! Every key, with its default for the `tiny` preset:
//!
//! ```ini
//! [model]
//! preset = tiny            ; tiny | full | micro, applied before the keys below
//! size = 64
//! embed_dim = 32
//! heads = 4
//! mlp_ratio = 4
//! depths = 1,1,2,1,1
//! windows = 4,4,2,4,4
//! tau = 100
//! style_dim = 32
//! mapping_depth = 8
//! head_channels = 16,16,32 ; full, 1/2, 1/4 resolution
//! unet_base = 8
//! unet_max = 64
//! tokenizer = stacked_conv ; stacked_conv | linear_projection
//! token_rule = any         ; any | all
//! p = 0.5
//! eps = 1e-8
//! disc_base = 16
//! disc_max = 64
//!
//! [loss]
//! gamma = 10
//! lambda = 0.1
//! eta = 0.25,0.5
//! r1_mode = squared        ; squared | norm
//! r1_every = 1
//!
//! [train]
//! batch_size = 8
//! samples = 20000
//! lr = 0.001
//! beta1 = 0
//! beta2 = 0.99
//! seed = 0
//! eval_every = 250         ; steps, 0 disables evaluation
//! eval_samples = 256
//! checkpoint_every = 0     ; steps, 0 keeps only the final checkpoint
//!
//! [data]
//! dataset = stripes        ; stripes | gradients | blobs | checkerboards
//!
//! [mask]
//! setting = large          ; small | large
//! ```

use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, Tokenizer};
use crate::losses::{LossWeights, R1Mode};
use crate::mask::{MaskSetting, TokenRule};
use crate::tensor::AdamConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: String,
    pub model: GeneratorConfig,
    pub loss: LossWeights,
    pub batch_size: usize,
    pub samples: u64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub eval_every: u64,
    pub eval_samples: usize,
    pub checkpoint_every: u64,
    pub dataset: DatasetKind,
    pub mask_setting: MaskSetting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "tiny".into(),
            model: GeneratorConfig::tiny(),
            loss: LossWeights::default(),
            batch_size: 8,
            samples: 20_000,
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 250,
            eval_samples: 256,
            checkpoint_every: 0,
            dataset: DatasetKind::Stripes,
            mask_setting: MaskSetting::Large,
        }
    }
}

fn preset(name: &str) -> Result<GeneratorConfig> {
    match name {
        "tiny" => Ok(GeneratorConfig::tiny()),
        "full" => Ok(GeneratorConfig::full()),
        "micro" => Ok(GeneratorConfig::micro()),
        other => Err(Error::contract(format!("unknown preset '{other}' (tiny|full|micro)"))),
    }
}

fn bad(section: &str, key: &str, value: &str) -> Error {
    Error::contract(format!("[{section}] {key}: cannot parse '{value}'"))
}

fn num<V: FromStr>(section: &str, key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| bad(section, key, value))
}

fn list<V: FromStr + Copy, const N: usize>(section: &str, key: &str, value: &str) -> Result<[V; N]> {
    let items = value
        .split(',')
        .map(|s| num::<V>(section, key, s))
        .collect::<Result<Vec<_>>>()?;
    items.try_into().map_err(|_| bad(section, key, value))
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Format {
            kind: "config",
            msg: e.to_string(),
        })?;
        let mut cfg = TrainConfig::default();
        if let Some(p) = ini.section(Some("model")).and_then(|s| s.get("preset")) {
            cfg.preset = p.trim().to_string();
            cfg.model = preset(&cfg.preset)?;
        }
        for (section, props) in ini.iter() {
            let sec = section.unwrap_or("");
            for (key, value) in props.iter() {
                cfg.set(sec, key, value.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, sec: &str, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match (sec, key) {
            ("model", "preset") => {}
            ("model", "size") => m.size = num(sec, key, v)?,
            ("model", "embed_dim") => m.blocks.embed_dim = num(sec, key, v)?,
            ("model", "heads") => m.blocks.heads = num(sec, key, v)?,
            ("model", "mlp_ratio") => m.blocks.mlp_ratio = num(sec, key, v)?,
            ("model", "depths") => m.blocks.depths = list(sec, key, v)?,
            ("model", "windows") => m.blocks.windows = list(sec, key, v)?,
            ("model", "tau") => m.blocks.tau = num(sec, key, v)?,
            ("model", "style_dim") => m.style_dim = num(sec, key, v)?,
            ("model", "mapping_depth") => m.mapping_depth = num(sec, key, v)?,
            ("model", "head_channels") => m.head_channels = list(sec, key, v)?,
            ("model", "unet_base") => m.unet_base = num(sec, key, v)?,
            ("model", "unet_max") => m.unet_max = num(sec, key, v)?,
            ("model", "tokenizer") => m.tokenizer = Tokenizer::from_str(v)?,
            ("model", "token_rule") => m.token_rule = TokenRule::from_str(v)?,
            ("model", "p") => m.p = num(sec, key, v)?,
            ("model", "eps") => m.eps = num(sec, key, v)?,
            ("model", "disc_base") => m.disc_base = num(sec, key, v)?,
            ("model", "disc_max") => m.disc_max = num(sec, key, v)?,
            ("loss", "gamma") => self.loss.gamma = num(sec, key, v)?,
            ("loss", "lambda") => self.loss.lambda = num(sec, key, v)?,
            ("loss", "eta") => {
                self.loss.eta = v.split(',').map(|s| num(sec, key, s)).collect::<Result<_>>()?;
            }
            ("loss", "r1_mode") => self.loss.r1_mode = R1Mode::from_str(v)?,
            ("loss", "r1_every") => self.loss.r1_every = num(sec, key, v)?,
            ("train", "batch_size") => self.batch_size = num(sec, key, v)?,
            ("train", "samples") => self.samples = num(sec, key, v)?,
            ("train", "lr") => self.adam.lr = num(sec, key, v)?,
            ("train", "beta1") => self.adam.beta1 = num(sec, key, v)?,
            ("train", "beta2") => self.adam.beta2 = num(sec, key, v)?,
            ("train", "seed") => self.seed = num(sec, key, v)?,
            ("train", "eval_every") => self.eval_every = num(sec, key, v)?,
            ("train", "eval_samples") => self.eval_samples = num(sec, key, v)?,
            ("train", "checkpoint_every") => self.checkpoint_every = num(sec, key, v)?,
            ("data", "dataset") => self.dataset = DatasetKind::from_str(v)?,
            ("mask", "setting") => self.mask_setting = MaskSetting::from_str(v)?,
            _ => return Err(Error::contract(format!("unknown config key [{sec}] {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        if self.eval_every > 0 && self.eval_samples <= 16 {
            return Err(Error::contract("eval_samples must exceed the feature dimension (16)"));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::contract("adam: lr must be positive and betas in [0, 1)"));
        }
        Ok(())
    }

    /// Number of optimization steps covering the sample budget.
    pub fn total_steps(&self) -> u64 {
        self.samples.div_ceil(self.batch_size as u64)
    }

    /// Canonical text form; `parse(to_ini())` reproduces the configuration.
    pub fn to_ini(&self) -> String {
        let m = &self.model;
        let b = &m.blocks;
        let tokenizer = match m.tokenizer {
            Tokenizer::StackedConv => "stacked_conv",
            Tokenizer::LinearProjection => "linear_projection",
        };
        let rule = match m.token_rule {
            TokenRule::AnyValid => "any",
            TokenRule::AllValid => "all",
        };
        let r1 = match self.loss.r1_mode {
            R1Mode::Squared => "squared",
            R1Mode::Norm => "norm",
        };
        let setting = match self.mask_setting {
            MaskSetting::Small => "small",
            MaskSetting::Large => "large",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("[model]\npreset", self.preset.clone());
        kv("size", m.size.to_string());
        kv("embed_dim", b.embed_dim.to_string());
        kv("heads", b.heads.to_string());
        kv("mlp_ratio", b.mlp_ratio.to_string());
        kv("depths", join(&b.depths));
        kv("windows", join(&b.windows));
        kv("tau", b.tau.to_string());
        kv("style_dim", m.style_dim.to_string());
        kv("mapping_depth", m.mapping_depth.to_string());
        kv("head_channels", join(&m.head_channels));
        kv("unet_base", m.unet_base.to_string());
        kv("unet_max", m.unet_max.to_string());
        kv("tokenizer", tokenizer.into());
        kv("token_rule", rule.into());
        kv("p", m.p.to_string());
        kv("eps", format!("{:e}", m.eps));
        kv("disc_base", m.disc_base.to_string());
        kv("disc_max", m.disc_max.to_string());
        kv("\n[loss]\ngamma", self.loss.gamma.to_string());
        kv("lambda", self.loss.lambda.to_string());
        kv("eta", join(&self.loss.eta));
        kv("r1_mode", r1.into());
        kv("r1_every", self.loss.r1_every.to_string());
        kv("\n[train]\nbatch_size", self.batch_size.to_string());
        kv("samples", self.samples.to_string());
        kv("lr", self.adam.lr.to_string());
        kv("beta1", self.adam.beta1.to_string());
        kv("beta2", self.adam.beta2.to_string());
        kv("seed", self.seed.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("\n[data]\ndataset", self.dataset.name().into());
        kv("\n[mask]\nsetting", setting.into());
        s
    }
}
