//! Self-regularized training: every value plane is paired with freshly
//! gamma-disturbed copies, all of them go through the same weights, and Adam
//! minimizes the non-reference total loss averaged over the batch.
//!
//! Model selection happens every `eval_every` epochs and after the last one.
//! Without references the criterion is the mean total loss on the held-out
//! images (with disturbances drawn from a fixed evaluation seed, so every
//! evaluation sees the same pairs); with references it is the negated mean
//! PSNR of the enhanced held-out images.

mod ablation;
mod adam;
mod config;
mod dataset;

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::Variant;
pub use adam::Adam;
pub use config::TrainConfig;
pub use dataset::{find_reference, list_images, load_dataset, split_dataset, Sample, Split};

use crate::color::{regroup, Plane, RgbImage};
use crate::disturbance::{disturb, sample_gamma};
use crate::error::{Error, Result};
use crate::losses::{self, total_loss, total_loss_with_grad, LossBreakdown, LossConfig};
use crate::metrics::psnr;
use crate::network::{self, checkpoint, init_params, ForwardOutput, ModelParams, Real};

/// Per-step settings that [`train_step`] needs.
#[derive(Clone, Copy, Debug)]
pub struct StepConfig {
    pub loss: LossConfig,
    pub n_disturbances: usize,
}

impl From<&TrainConfig> for StepConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            loss: c.loss_config(),
            n_disturbances: c.n_disturbances,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Batch-mean loss before the update.
    pub breakdown: LossBreakdown,
    /// Same as `breakdown`, except that disabled terms hold their raw value
    /// (still excluded from `total`). Terms that cannot be formed, such as
    /// consistency without a disturbed copy, stay 0.
    pub monitored: LossBreakdown,
    /// Disturbance exponents per sample, in batch order.
    pub gammas: Vec<Vec<f64>>,
}

fn disturbed_copies<R: Rng + ?Sized>(v: &Plane, n: usize, rng: &mut R) -> (Vec<Plane>, Vec<f64>) {
    let mean = v.mean();
    (0..n)
        .map(|_| {
            let g = sample_gamma(mean, rng).gamma;
            (disturb(v, g), g)
        })
        .unzip()
}

fn monitor_disabled(
    loss: &LossBreakdown,
    out: &ForwardOutput,
    disturbed: &[ForwardOutput],
    v: &Plane,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let t = config.toggles;
    let mut m = *loss;
    if !t.rc {
        m.l_rc = disturbed
            .iter()
            .map(|d| losses::reflectance_consistency(&out.reflectance, &d.reflectance))
            .sum::<Result<f64>>()?;
    }
    if !t.ec {
        m.l_ec = losses::exposure_control(&out.reflectance, &config.pool)?;
    }
    if !t.ss {
        m.l_ss = losses::spatial_structure(&out.reflectance, v, &config.pool)?;
    }
    if !t.is {
        m.l_is = std::iter::once(out)
            .chain(disturbed)
            .map(|o| losses::total_variation_sq(&o.inverse_illumination))
            .sum();
    }
    Ok(m)
}

/// One Adam update on a batch of value planes. `step` only labels errors.
pub fn train_step<T: Real, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    optimizer: &mut Adam<T>,
    batch: &[&Plane],
    config: &StepConfig,
    step: usize,
    rng: &mut R,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::InvalidValue("training batch is empty".into()));
    }
    let mut grads = params.zero_grads();
    let mut per_sample = Vec::with_capacity(batch.len());
    let mut monitored = Vec::with_capacity(batch.len());
    let mut gammas = Vec::with_capacity(batch.len());

    for (batch_index, &v) in batch.iter().enumerate() {
        let (copies, g) = disturbed_copies(v, config.n_disturbances, rng);
        let (out, tape) = network::forward_with_tape(params, v)?;
        let mut disturbed = Vec::with_capacity(copies.len());
        let mut tapes = Vec::with_capacity(copies.len());
        for c in &copies {
            let (o, t) = network::forward_with_tape(params, c)?;
            disturbed.push(o);
            tapes.push(t);
        }
        let (loss, out_grads) = total_loss_with_grad(&out, &disturbed, v, &config.loss)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                batch_index,
                detail: format!(
                    "gammas {g:?}, mean V {:.6}, losses {loss:?}, params finite: {}",
                    v.mean(),
                    params.is_finite()
                ),
            });
        }
        network::backward(
            params,
            tape,
            &out_grads.reflectance,
            &out_grads.inverse_illumination,
            &mut grads,
        )?;
        for (t, dg) in tapes.into_iter().zip(&out_grads.disturbed) {
            network::backward(params, t, &dg.reflectance, &dg.inverse_illumination, &mut grads)?;
        }
        monitored.push(monitor_disabled(&loss, &out, &disturbed, v, &config.loss)?);
        per_sample.push(loss);
        gammas.push(g);
    }

    grads.scale(T::from_f64(1.0 / batch.len() as f64).unwrap());
    optimizer.step(params, &grads);
    let breakdown = LossBreakdown::mean(&per_sample);
    let monitored = LossBreakdown {
        total: breakdown.total,
        ..LossBreakdown::mean(&monitored)
    };
    Ok(StepOutcome {
        breakdown,
        monitored,
        gammas,
    })
}

/// One line of `train_log.jsonl`. Loss terms are raw values even when a term
/// is disabled; `total` is the optimized objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_rc: f64,
    pub l_ec: f64,
    pub l_ss: f64,
    pub l_is: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    /// Lower is better.
    pub criterion: f64,
    pub mean_loss: f64,
    pub mean_psnr: Option<f64>,
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Elapsed time at the end of each step.
    pub step_times: Vec<Duration>,
    pub wall_clock: Duration,
}

impl TrainLog {
    pub fn steps_jsonl(&self) -> String {
        to_jsonl(&self.steps)
    }

    pub fn evals_jsonl(&self) -> String {
        to_jsonl(&self.evals)
    }

    /// Parses the step records written by [`write_outputs`].
    pub fn read_steps(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("records serialize"));
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_params: ModelParams<f32>,
    pub best_params: ModelParams<f32>,
    pub log: TrainLog,
    pub split: Split,
}

struct Evaluator {
    validation: Vec<Plane>,
    /// Held-out colors and references, when present.
    references: Vec<(usize, RgbImage)>,
    hsv: Vec<crate::color::HsvPlanes>,
    seed: u64,
}

impl Evaluator {
    fn new(samples: &[Sample], split: &Split, config: &TrainConfig, seed: u64) -> Result<Self> {
        let ids: &[usize] = if split.validation.is_empty() {
            &split.train
        } else {
            &split.validation
        };
        let mut references = Vec::new();
        if let Some(dir) = &config.reference_dir {
            for (k, &i) in ids.iter().enumerate() {
                if let Some(p) = find_reference(&samples[i], dir) {
                    let img = RgbImage::load(&p)?.resize(config.image_size, config.image_size);
                    references.push((k, img));
                }
            }
            if references.is_empty() {
                log::warn!("no references in {} match the held-out images", dir.display());
            }
        }
        Ok(Self {
            validation: ids.iter().map(|&i| samples[i].hsv.value.clone()).collect(),
            hsv: ids.iter().map(|&i| samples[i].hsv.clone()).collect(),
            references,
            seed,
        })
    }

    fn run(&self, params: &ModelParams<f32>, step: &StepConfig) -> Result<(f64, f64, Option<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut total = 0.0;
        for v in &self.validation {
            let (copies, _) = disturbed_copies(v, step.n_disturbances, &mut rng);
            let out = network::forward(params, v)?;
            let disturbed = copies
                .iter()
                .map(|c| network::forward(params, c))
                .collect::<Result<Vec<_>>>()?;
            total += total_loss(&out, &disturbed, v, &step.loss)?.total;
        }
        let mean_loss = total / self.validation.len() as f64;
        if self.references.is_empty() {
            return Ok((mean_loss, mean_loss, None));
        }
        let mut sum = 0.0;
        let mut finite = 0usize;
        for (k, reference) in &self.references {
            let r = network::forward(params, &self.validation[*k])?.reflectance.clamp_unit();
            let enhanced = regroup(&self.hsv[*k], &r)?;
            let p = psnr(&enhanced, reference)?;
            if p.is_finite() {
                sum += p;
                finite += 1;
            }
        }
        let mean_psnr = if finite == 0 { f64::INFINITY } else { sum / finite as f64 };
        Ok((-mean_psnr, mean_loss, Some(mean_psnr)))
    }
}

/// Loads the dataset named by `config` and trains on it.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = load_dataset(&config.data_dir, config.image_size)?;
    train_on(config, &samples)
}

/// Trains on already decoded samples. Writes checkpoints and logs when
/// `config.output_dir` is set.
pub fn train_on(config: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params: ModelParams<f32> = init_params(&config.arch(), &mut rng)?;
    let split = split_dataset(samples, config.val_fraction, &mut rng);
    let evaluator = Evaluator::new(samples, &split, config, rng.random())?;
    let step_config = StepConfig::from(config);
    log::info!(
        "training on {} images ({} held out), {} parameters",
        split.train.len(),
        split.validation.len(),
        params.num_parameters()
    );

    let mut optimizer = Adam::new(&params, config.learning_rate);
    let mut best = params.clone();
    let mut best_criterion = f64::INFINITY;
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut order = split.train.clone();
    let mut step = 0usize;
    let budget = config.max_steps.unwrap_or(usize::MAX);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if step >= budget {
                break;
            }
            let batch: Vec<&Plane> = chunk.iter().map(|&i| &samples[i].hsv.value).collect();
            let out = train_step(&mut params, &mut optimizer, &batch, &step_config, step, &mut rng)?;
            let m = out.monitored;
            log.steps.push(StepRecord {
                step,
                epoch,
                l_rc: m.l_rc,
                l_ec: m.l_ec,
                l_ss: m.l_ss,
                l_is: m.l_is,
                total: out.breakdown.total,
            });
            log.step_times.push(start.elapsed());
            log::debug!("step {step} epoch {epoch} total {:.6}", out.breakdown.total);
            step += 1;
        }
        let last = epoch == config.epochs || step >= budget;
        if epoch % config.eval_every == 0 || last {
            let (criterion, mean_loss, mean_psnr) = evaluator.run(&params, &step_config)?;
            let improved = criterion < best_criterion;
            if improved {
                best_criterion = criterion;
                best = params.clone();
            }
            log::info!("epoch {epoch} step {step}: eval loss {mean_loss:.6} psnr {mean_psnr:?}");
            log.evals.push(EvalRecord {
                step,
                epoch,
                criterion,
                mean_loss,
                mean_psnr,
                best: improved,
            });
        }
        if last {
            break;
        }
    }
    log.wall_clock = start.elapsed();

    let outcome = TrainOutcome {
        final_params: params,
        best_params: best,
        log,
        split,
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, config, &outcome)?;
    }
    Ok(outcome)
}

/// `final.ckpt`, `best.ckpt`, `train_log.jsonl`, `eval_log.jsonl`, the
/// effective `config.toml` and `timing.json` (the only non-deterministic file).
pub fn write_outputs(dir: &Path, config: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&outcome.final_params, dir.join("final.ckpt"))?;
    checkpoint::save(&outcome.best_params, dir.join("best.ckpt"))?;
    write_file(&dir.join("train_log.jsonl"), outcome.log.steps_jsonl().as_bytes())?;
    write_file(&dir.join("eval_log.jsonl"), outcome.log.evals_jsonl().as_bytes())?;
    write_file(&dir.join("config.toml"), config.to_toml_string()?.as_bytes())?;
    let timing = serde_json::json!({
        "wall_clock_seconds": outcome.log.wall_clock.as_secs_f64(),
        "steps": outcome.log.steps.len(),
    });
    write_file(&dir.join("timing.json"), timing.to_string().as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
