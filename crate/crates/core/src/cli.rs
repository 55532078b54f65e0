//! Command-line front end. [`dispatch`] parses arguments, runs one
//! subcommand and maps the outcome to an exit code: 0 on success, 1 when the
//! command fails at runtime, 2 for usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::color::{regroup, rgb_to_hsv, RgbImage};
use crate::disturbance::{disturb, sample_gamma};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, is_image_path, EvalOptions, SsimMode};
use crate::network::{checkpoint, ModelParams};
use crate::pipeline::{enhance, regroup_demo};
use crate::training::{self, TrainConfig, Variant};

const CONFIG_KEYS: &str = "\
Config keys (TOML; defaults in brackets, values used by the original method in parentheses):
  data_dir           training images: flat directory or sequence subdirectories [required]
  output_dir         checkpoints and logs [unset: nothing written]
  reference_dir      normal-light references for model selection by PSNR [unset]
  image_size         square training resolution, multiple of 16 [64] (512)
  batch_size         [8] (8)
  learning_rate      Adam step size [1e-4] (1e-4)
  epochs             [500] (500)
  max_steps          optional cap on optimizer steps [unset]
  eval_every         evaluate every N epochs and keep the best model [50] (50)
  w_is               weight of the illumination smoothness loss [10] (10)
  n_disturbances     disturbed copies per image; 0 drops the consistency loss [1] (1)
  seed               seed of the single random generator [0]
  val_fraction       held-out share of a flat directory; sequences hold out one image each [0.1]
  base_channels      U-Net width at full resolution [16]
  [losses]           rc, ec, ss, is: enable each loss term [all true]
  [pool]             n_exposure [16] (16), m_structure [4] (4), e_target [0.7] (0.7)
  [output_activation] kind = \"softplus\" [default] or kind = \"scaled_sigmoid\", max = <f64>";

#[derive(Debug, Parser)]
#[command(
    name = "hsv-retinex",
    version,
    about = "Low-light image enhancement on the HSV value channel",
    long_about = "Low-light image enhancement on the HSV value channel.\n\n\
        Log verbosity follows RUST_LOG (for example RUST_LOG=info)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a config file.
    #[command(after_help = CONFIG_KEYS)]
    Train(TrainArgs),
    /// Enhance one image or every image in a directory.
    Enhance(EnhanceArgs),
    /// Score enhanced images against references (PSNR, SSIM).
    Eval(EvalArgs),
    /// Combine the hue and saturation of a low-light image with the value of a normal-light one.
    RegroupDemo(RegroupArgs),
    /// Apply a random (or given) gamma to the value channel of an image.
    DisturbDemo(DisturbArgs),
    /// Train one ablation variant of a config.
    #[command(after_help = CONFIG_KEYS)]
    Ablate(AblateArgs),
}

/// Command-line overrides for config keys.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub reference_dir: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub w_is: Option<f64>,
    #[arg(long)]
    pub n_disturbances: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        set!(data_dir, image_size, batch_size, learning_rate, epochs, eval_every, w_is, n_disturbances, seed, base_channels);
        if self.output_dir.is_some() {
            c.output_dir = self.output_dir.clone();
        }
        if self.reference_dir.is_some() {
            c.reference_dir = self.reference_dir.clone();
        }
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; results are written as `<stem>.png`.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write V, a disturbed V', R and L as grayscale PNGs (L divided by its maximum).
    #[arg(long)]
    pub save_intermediates: bool,
    /// Seed for the disturbed V' intermediate.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SsimArg {
    Rgb,
    Luma,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub enhanced: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Evaluation size `WxH`, or `native` to score at stored resolution.
    #[arg(long, default_value = "640x480", value_parser = parse_size)]
    pub size: EvalSize,
    #[arg(long, value_enum, default_value_t = SsimArg::Rgb)]
    pub ssim: SsimArg,
    /// Also write machine-readable JSON line records here.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalSize(pub Option<(usize, usize)>);

fn parse_size(s: &str) -> std::result::Result<EvalSize, String> {
    if s == "native" {
        return Ok(EvalSize(None));
    }
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH or native, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok(EvalSize(Some((w, h))))
}

#[derive(Debug, Args)]
pub struct RegroupArgs {
    #[arg(long)]
    pub low: PathBuf,
    #[arg(long)]
    pub normal: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DisturbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Exponent to apply; drawn from the regime of the input's mean value when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub variant: String,
    /// Enhance every image of this directory with the variant's best model.
    #[arg(long)]
    pub enhance: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => run_train(&a),
        Command::Enhance(a) => run_enhance(&a),
        Command::Eval(a) => run_eval(&a),
        Command::RegroupDemo(a) => {
            let low = RgbImage::load(&a.low)?;
            let normal = RgbImage::load(&a.normal)?;
            let out = regroup_demo(&low, &normal)?;
            ensure_parent(&a.output)?;
            out.save(&a.output)
        }
        Command::DisturbDemo(a) => run_disturb(&a),
        Command::Ablate(a) => run_ablate(&a),
    }
}

fn load_config(path: &Path, overrides: &TrainOverrides) -> Result<TrainConfig> {
    let mut c = TrainConfig::load(path)?;
    overrides.apply(&mut c);
    // Relative directories in the file are taken relative to the file.
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() && !p.as_os_str().is_empty() {
            *p = base.join(&*p);
        }
    };
    if overrides.data_dir.is_none() {
        rebase(&mut c.data_dir);
    }
    if overrides.output_dir.is_none() {
        if let Some(p) = c.output_dir.as_mut() {
            rebase(p);
        }
    }
    if overrides.reference_dir.is_none() {
        if let Some(p) = c.reference_dir.as_mut() {
            rebase(p);
        }
    }
    c.validate()?;
    Ok(c)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let config = load_config(&a.config, &a.overrides)?;
    let out = training::train(&config)?;
    report_training(&config, &out);
    Ok(())
}

fn report_training(config: &TrainConfig, out: &training::TrainOutcome) {
    let steps = &out.log.steps;
    match (steps.first(), steps.last()) {
        (Some(f), Some(l)) => println!(
            "{} steps in {:.1}s: total loss {:.6} -> {:.6}",
            steps.len(),
            out.log.wall_clock.as_secs_f64(),
            f.total,
            l.total
        ),
        _ => println!("no training steps run"),
    }
    if let Some(dir) = &config.output_dir {
        println!("wrote checkpoints and logs to {}", dir.display());
    }
}

fn run_ablate(a: &AblateArgs) -> Result<()> {
    let variant: Variant = a.variant.parse()?;
    let base = load_config(&a.config, &a.overrides)?;
    let mut config = variant.apply(&base);
    config.output_dir = Some(base.output_dir.clone().unwrap_or_else(|| PathBuf::from("ablation")).join(variant.name()));
    println!("variant {variant}");
    let out = training::train(&config)?;
    report_training(&config, &out);
    if let Some(dir) = &a.enhance {
        let target = config.output_dir.as_ref().expect("set above").join("enhanced");
        enhance_all(&out.best_params, &collect_inputs(dir)?, &target, false, 0)?;
        println!("enhanced images in {}", target.display());
    }
    Ok(())
}

fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files = Vec::new();
        for e in std::fs::read_dir(input).map_err(|e| Error::io(input, e))? {
            let p = e.map_err(|e| Error::io(input, e))?.path();
            if p.is_file() && is_image_path(&p) {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!("no images in {}", input.display())));
        }
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn enhance_all(params: &ModelParams<f32>, inputs: &[PathBuf], output: &Path, intermediates: bool, seed: u64) -> Result<()> {
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for path in inputs {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let img = RgbImage::load(path)?;
        let res = enhance(&img, params)?;
        res.enhanced.save(output.join(format!("{stem}.png")))?;
        log::info!(
            "{}: decompose {:?}, network {:?}, regroup {:?}",
            path.display(),
            res.timings.decompose,
            res.timings.network,
            res.timings.regroup
        );
        if intermediates {
            let g = sample_gamma(res.value.mean(), &mut rng).gamma;
            res.value.save_png(output.join(format!("{stem}_V.png")))?;
            disturb(&res.value, g).save_png(output.join(format!("{stem}_Vprime.png")))?;
            res.reflectance.save_png(output.join(format!("{stem}_R.png")))?;
            let l = &res.inverse_illumination;
            let peak = l.max().max(f64::MIN_POSITIVE);
            l.map(|x| x / peak).save_png(output.join(format!("{stem}_L.png")))?;
        }
    }
    Ok(())
}

fn run_enhance(a: &EnhanceArgs) -> Result<()> {
    let params = checkpoint::load(&a.checkpoint)?;
    let inputs = collect_inputs(&a.input)?;
    enhance_all(&params, &inputs, &a.output, a.save_intermediates, a.seed)?;
    println!("enhanced {} image(s) into {}", inputs.len(), a.output.display());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let options = EvalOptions {
        size: a.size.0,
        ssim_mode: match a.ssim {
            SsimArg::Rgb => SsimMode::Rgb,
            SsimArg::Luma => SsimMode::Luma,
        },
    };
    let report = evaluate(&a.enhanced, &a.reference, &options)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.records {
        ensure_parent(path)?;
        std::fs::write(path, report.to_records()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn run_disturb(a: &DisturbArgs) -> Result<()> {
    let img = RgbImage::load(&a.input)?;
    let hsv = rgb_to_hsv(&img);
    let gamma = match a.gamma {
        Some(g) if g > 0.0 && g.is_finite() => g,
        Some(g) => return Err(Error::Config(format!("gamma must be positive and finite, got {g}"))),
        None => sample_gamma(hsv.value.mean(), &mut ChaCha8Rng::seed_from_u64(a.seed)).gamma,
    };
    let out = regroup(&hsv, &disturb(&hsv.value, gamma))?;
    ensure_parent(&a.output)?;
    out.save(&a.output)?;
    println!("gamma {gamma}");
    Ok(())
}
