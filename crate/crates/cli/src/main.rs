use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mat_core::config::TrainConfig;
use mat_core::gradsuite::full_suite;
use mat_core::image_io::{load_image, load_mask, save_image, save_mask};
use mat_core::losses::RandomConvExtractor;
use mat_core::mask::{mask_stats, sample_masks, BinaryMask, MaskSetting, MaskSpec, HIST_BINS};
use mat_core::metrics::{fid, pids_uids, FeatureSet, SvmConfig};
use mat_core::tensor::no_grad;
use mat_core::train::Trainer;
use mat_core::{Error, Result, Tensor};

/// Mask-aware transformer inpainting on synthetic data.
///
/// Exit status: 0 on success, 1 on usage or contract errors, 2 on I/O errors.
#[derive(Parser, Debug)]
#[command(name = "mat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config file; writes metrics.csv and checkpoints into --out.
    Train(TrainArgs),
    /// Inpaint one image once per seed.
    Inpaint(InpaintArgs),
    /// Write free-form masks as gray PNGs (255 = valid).
    SampleMasks(SampleArgs),
    /// Print the 20-bin hole-ratio histogram of sampled or stored masks.
    MaskStats(StatsArgs),
    /// FID and P-IDS/U-IDS between two image directories or feature files.
    EvalFid(EvalArgs),
    /// Finite-difference gradient suite; exits 0 iff every case passes.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// INI config; defaults to the tiny preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `[train] seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, conflicts_with_all = ["config", "seed"])]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InpaintArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, default_value = "large")]
    setting: MaskSetting,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Directory of mask PNGs; when absent, masks are sampled.
    #[arg(long, conflicts_with_all = ["setting", "count", "size", "seed"])]
    dir: Option<PathBuf>,
    #[arg(long, default_value = "large")]
    setting: MaskSetting,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of PNGs or a feature file.
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    fake: PathBuf,
    /// Images correspond by sorted file name; also reports P-IDS.
    #[arg(long)]
    paired: bool,
    /// Writes real.matc and fake.matc feature files here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect::<Vec<_>>();
    files.sort();
    Ok(files)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(p) => Trainer::<f32>::load(p)?,
        None => {
            let mut cfg = match &a.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            Trainer::new(cfg)?
        }
    };
    let total = trainer.config.total_steps();
    let out = trainer.run(&a.out, |r| {
        println!(
            "step {}/{total} d_loss {:.4} g_loss {:.4} perc {:.4}",
            r.step, r.d_loss, r.g_loss, r.perc
        )
    })?;
    for (step, f) in &out.fid {
        println!("fid_toy step {step}: {f:.6}");
    }
    if let Some(p) = out.last_checkpoint {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

fn inpaint(a: InpaintArgs) -> Result<()> {
    let trainer = Trainer::<f32>::load(&a.ckpt)?;
    let image = load_image::<f32>(&a.image)?;
    let mask = load_mask(&a.mask)?;
    if (mask.height(), mask.width()) != (image.dim(2), image.dim(3)) {
        return Err(Error::Contract(format!(
            "mask is {}x{} but image is {}x{}",
            mask.height(),
            mask.width(),
            image.dim(2),
            image.dim(3)
        )));
    }
    create_dir(&a.out)?;
    for seed in a.seeds {
        let y = trainer.g.inpaint(&image, std::slice::from_ref(&mask), seed)?;
        let p = a.out.join(format!("inpaint_seed{seed}.png"));
        save_image(&y, 0, &p)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    create_dir(&a.out)?;
    let masks = sample_masks(&MaskSpec::new(a.setting, a.seed), a.count, a.size, a.size)?;
    for (i, m) in masks.iter().enumerate() {
        save_mask(m, a.out.join(format!("mask_{i:05}.png")))?;
    }
    println!("wrote {} masks to {}", masks.len(), a.out.display());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let masks: Vec<BinaryMask> = match &a.dir {
        Some(d) => png_files(d)?.iter().map(load_mask).collect::<Result<_>>()?,
        None => sample_masks(&MaskSpec::new(a.setting, a.seed), a.count, a.size, a.size)?,
    };
    let hist = mask_stats(&masks)?;
    for (i, n) in hist.iter().enumerate() {
        let w = 1.0 / HIST_BINS as f64;
        println!("{:.2}-{:.2} {n}", i as f64 * w, (i + 1) as f64 * w);
    }
    Ok(())
}

fn features(path: &Path) -> Result<FeatureSet> {
    if !path.is_dir() {
        return FeatureSet::load(path);
    }
    let files = png_files(path)?;
    let ex = RandomConvExtractor::<f64>::default();
    let mut data = Vec::new();
    for f in &files {
        let img: Tensor<f64> = load_image(f)?;
        data.extend(no_grad(|| ex.pooled(&img))?.to_f64_vec());
    }
    let d = if files.is_empty() { 0 } else { data.len() / files.len() };
    Ok(FeatureSet::new(data, files.len(), d)?.tagged("random-conv", &path.display().to_string()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (real, fake) = (features(&a.real)?, features(&a.fake)?);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        real.save(dir.join("real.matc"))?;
        fake.save(dir.join("fake.matc"))?;
    }
    println!("fid {:.6}", fid(&real, &fake)?);
    let (p, u) = pids_uids(&real, &fake, a.paired, SvmConfig::default())?;
    println!("u_ids {u:.4}");
    if let Some(p) = p {
        println!("p_ids {p:.4}");
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let reports = full_suite(a.instances, a.seed)?;
    let passed = reports.iter().filter(|r| r.passed()).count();
    for r in &reports {
        println!("{r}");
    }
    println!("{passed}/{} passed", reports.len());
    Ok(passed == reports.len())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Inpaint(a) => inpaint(a).map(|_| true),
        Command::SampleMasks(a) => sample(a).map(|_| true),
        Command::MaskStats(a) => stats(a).map(|_| true),
        Command::EvalFid(a) => eval(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
