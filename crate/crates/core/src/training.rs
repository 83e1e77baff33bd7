//! Alternating discriminator/generator training, evaluation and run
//! persistence.
//!
//! One step on a batch `h` of clean images in `[-1, 1]`:
//!
//! 1. corrupt every image with a fresh mask to get `h_lr`;
//! 2. `h_hat = G(h_lr)`;
//! 3. discriminator update on `loss_D(D(h), D(h_hat detached), 1 - 0.1 alpha)`;
//! 4. generator update on `loss_G(h_hat, h, D(h_hat))`, with the updated `D`
//!    held fixed.
//!
//! A run directory holds `config.json`, `metrics.csv` (one row per epoch),
//! `steps.csv` (one row per step), `checkpoints/epoch_NNNN.ckpt` every
//! `checkpoint_every` epochs, and `final.ckpt`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamState, DEFAULT_BETA1, DEFAULT_BETA2};
use crate::checkpoint::{load_checkpoint, save_checkpoint, AdamSteps, Checkpoint};
use crate::corruption::{check_level, corrupt_batch, eval_seed, CorruptionMask, DEFAULT_FILL};
use crate::data::{denormalize, normalize, scan_dataset, synthetic_images, Split, SplitRule};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{Mode, Pass};
use crate::losses::{discriminator_loss, generator_loss, real_targets, LossReport, ADVERSARIAL_WEIGHT};
use crate::metrics::{nmse, NmseResult};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Network};
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "epoch,lr,loss_D,loss_G,nmse";
pub const STEPS_HEADER: &str = "step,epoch,loss_D,loss_F,loss_R,loss_G,loss_G_content,loss_G_adv";

/// Where training images come from. Without a `root`, `synthetic_count`
/// smooth synthetic images are generated from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub root: Option<PathBuf>,
    pub synthetic_count: usize,
    /// Train share of the seeded split used when the dataset has no split
    /// files.
    pub train_fraction: f64,
    /// Keep only the first `n` images of each split, in manifest order.
    pub max_images: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "synthetic".into(),
            root: None,
            synthetic_count: 16,
            train_fraction: 0.8,
            max_images: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetConfig,
    pub image_size: usize,
    pub corruption_level: f64,
    /// Value written into corrupted pixels, in `[-1, 1]` space.
    pub fill_value: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_half_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adversarial_weight: f64,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub checkpoint_every: usize,
    /// Number of training images scored for the per-epoch NMSE.
    pub nmse_subset: usize,
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetConfig::default(),
            image_size: 128,
            corruption_level: 0.3,
            fill_value: DEFAULT_FILL,
            epochs: 100,
            batch_size: 64,
            lr0: 2e-4,
            lr_half_every: 25,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            adversarial_weight: ADVERSARIAL_WEIGHT,
            seed: 0,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            checkpoint_every: 25,
            nmse_subset: 64,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        check_level(self.corruption_level).map_err(|e| Error::Config(e.to_string()))?;
        let positive = [
            ("image_size", self.image_size),
            ("batch_size", self.batch_size),
            ("lr_half_every", self.lr_half_every),
            ("checkpoint_every", self.checkpoint_every),
            ("nmse_subset", self.nmse_subset),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.image_size < 8 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be >= 8 and divisible by 4",
                self.image_size
            )));
        }
        if self.generator.channels != 3 || self.discriminator.in_channels != 3 {
            return Err(Error::Config("images have 3 channels".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            return Err(Error::Config("adversarial_weight must be finite and >= 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.fill_value) {
            return Err(Error::Config(format!("fill_value {} outside [-1, 1]", self.fill_value)));
        }
        if !(0.0..=1.0).contains(&self.dataset.train_fraction) {
            return Err(Error::Config("train_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `lr0 * 0.5^floor(epoch / lr_half_every)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let halvings = i32::try_from(epoch / cfg.lr_half_every.max(1)).unwrap_or(i32::MAX);
    cfg.lr0 * 0.5f64.powi(halvings)
}

/// Images of one split in `[-1, 1]`, with their manifest ids.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub images: Vec<Tensor<f32>>,
    pub ids: Vec<u64>,
}

fn split_indices(n: usize, fraction: f64, seed: u64, split: Split) -> Vec<usize> {
    let n_train = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut picked = match split {
        Split::Train => order[..n_train].to_vec(),
        Split::Test => order[n_train..].to_vec(),
    };
    picked.sort_unstable();
    picked
}

/// Loads one split as configured, resized to `image_size` and normalized.
pub fn load_split(cfg: &TrainConfig, split: Split) -> Result<LoadedSplit> {
    let size = cfg.image_size;
    let ds = &cfg.dataset;
    let mut images = match &ds.root {
        Some(root) => {
            let rule = SplitRule {
                train_fraction: ds.train_fraction,
                seed: cfg.seed,
            };
            let mut manifest = scan_dataset(root, &ds.name, split, rule)?;
            if let Some(k) = ds.max_images {
                manifest.entries.truncate(k);
            }
            manifest.load(size)?
        }
        None => {
            let all = synthetic_images(ds.synthetic_count, size, cfg.seed)?;
            let mut picked: Vec<Tensor<f32>> = split_indices(all.len(), ds.train_fraction, cfg.seed, split)
                .into_iter()
                .map(|i| all[i].clone())
                .collect();
            if let Some(k) = ds.max_images {
                picked.truncate(k);
            }
            picked
        }
    };
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} split of {} is empty",
            split.as_str(),
            ds.name
        )));
    }
    images.iter_mut().for_each(|img| *img = normalize(img));
    let ids = (0..images.len() as u64).collect();
    Ok(LoadedSplit { images, ids })
}

/// Per-step switches used by sanity runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub adversarial_weight: f64,
    pub train_discriminator: bool,
}

/// Model NMSE and the NMSE of the corrupted inputs themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: NmseResult,
    pub baseline: NmseResult,
}

const EVAL_CHUNK: usize = 8;

/// Scores `generator` on `images` (in `[-1, 1]`) corrupted with fixed
/// per-image masks seeded by `seed ^ id`. NMSE is computed in `[0, 1]`.
pub fn evaluate(
    generator: &mut Generator<f32>,
    images: &[Tensor<f32>],
    ids: &[u64],
    level: f64,
    seed: u64,
    fill: f32,
) -> Result<EvalReport> {
    if images.len() != ids.len() {
        return Err(Error::Contract("one id per image".into()));
    }
    let mut model = Vec::with_capacity(images.len());
    let mut baseline = Vec::with_capacity(images.len());
    for (chunk, chunk_ids) in images.chunks(EVAL_CHUNK).zip(ids.chunks(EVAL_CHUNK)) {
        let corrupted = chunk
            .iter()
            .zip(chunk_ids)
            .map(|(img, &id)| {
                let [_, h, w] = *img.shape() else {
                    return Err(Error::ShapeMismatch(format!("image shape {:?}", img.shape())));
                };
                CorruptionMask::from_seed(h, w, level, eval_seed(seed, id))?.apply(img, fill)
            })
            .collect::<Result<Vec<_>>>()?;
        let out = generator.infer(&Tensor::stack(&corrupted)?, Pass::EVAL)?;
        for (i, img) in chunk.iter().enumerate() {
            let clean = denormalize(img);
            model.push(nmse(&clean, &denormalize(&out.index_axis0(i)?))?);
            baseline.push(nmse(&clean, &denormalize(&corrupted[i]))?);
        }
    }
    Ok(EvalReport {
        model: NmseResult::from_values(model)?,
        baseline: NmseResult::from_values(baseline)?,
    })
}

/// Generator, discriminator, their optimizers and the run's RNG stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: u64,
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub nmse: f64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        let generator = Generator::new(&cfg.generator, &mut rng)?;
        let discriminator = Discriminator::new(&cfg.discriminator, &mut rng)?;
        let opt_g = Adam::new(generator.params(), cfg.beta1, cfg.beta2)?;
        let opt_d = Adam::new(discriminator.params(), cfg.beta1, cfg.beta2)?;
        Ok(Trainer {
            cfg: cfg.clone(),
            generator,
            discriminator,
            opt_g,
            opt_d,
            rng,
            epoch: 0,
            step: 0,
        })
    }

    pub fn default_options(&self) -> StepOptions {
        StepOptions {
            adversarial_weight: self.cfg.adversarial_weight,
            train_discriminator: true,
        }
    }

    /// One alternating D/G update on a batch of clean images in `[-1, 1]`.
    pub fn train_step(&mut self, batch: &Tensor<f32>, lr: f64, opts: StepOptions) -> Result<LossReport> {
        let (n, _, h, w) = batch.dims4()?;
        let fill = self.cfg.fill_value as f32;
        let (h_lr, _) = corrupt_batch(batch, self.cfg.corruption_level, fill, &mut self.rng)?;

        let mut gg = Graph::new();
        let x = gg.constant(h_lr);
        let h_hat = self.generator.forward(&mut gg, x, Pass::TRAIN)?;

        let mut report = LossReport::default();
        if opts.train_discriminator {
            let mut gd = Graph::new();
            let real = gd.constant(batch.clone());
            let fake = gd.constant(gg.value(h_hat).clone());
            let d_real = self.discriminator.forward(&mut gd, real, Pass::TRAIN)?;
            let d_fake = self.discriminator.forward(&mut gd, fake, Pass::TRAIN)?;
            let targets = gd.constant(real_targets(n, h, w, &mut self.rng)?);
            let l = discriminator_loss(&mut gd, d_real, d_fake, targets)?;
            report.loss_d = gd.value(l.loss_d).item()?;
            report.loss_r = gd.value(l.loss_r).item()?;
            report.loss_f = gd.value(l.loss_f).item()?;
            if !report.loss_d.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite discriminator loss at step {}: {report:?}",
                    self.step + 1
                )));
            }
            let grads = gd.backward(l.loss_d)?;
            let store = self.discriminator.params_mut();
            store.zero_grads();
            store.accumulate(&grads)?;
            self.opt_d.step(store, lr)?;
        }

        let d_fake = self
            .discriminator
            .forward(&mut gg, h_hat, Pass::frozen(Mode::Train))?;
        let target = gg.constant(batch.clone());
        let l = generator_loss(&mut gg, h_hat, target, d_fake, opts.adversarial_weight)?;
        report.loss_g = gg.value(l.loss_g).item()?;
        report.loss_g_content = gg.value(l.content).item()?;
        report.loss_g_adv = gg.value(l.adversarial).item()?;
        if !report.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss at step {}: {report:?}",
                self.step + 1
            )));
        }
        let grads = gg.backward(l.loss_g)?;
        let store = self.generator.params_mut();
        store.zero_grads();
        store.accumulate(&grads)?;
        self.opt_g.step(store, lr)?;
        self.step += 1;
        Ok(report)
    }

    /// Runs one epoch over `images` in a seeded random order. Returns the
    /// summary and the per-step reports.
    pub fn run_epoch(&mut self, train: &LoadedSplit) -> Result<(EpochSummary, Vec<LossReport>)> {
        let lr = lr_at_epoch(&self.cfg, self.epoch);
        let mut order: Vec<usize> = (0..train.images.len()).collect();
        self.rng.shuffle(&mut order);
        let opts = self.default_options();
        let mut reports = Vec::new();
        for idx in order.chunks(self.cfg.batch_size) {
            let items: Vec<Tensor<f32>> = idx.iter().map(|&i| train.images[i].clone()).collect();
            reports.push(self.train_step(&Tensor::stack(&items)?, lr, opts)?);
        }
        self.epoch += 1;
        let k = self.cfg.nmse_subset.min(train.images.len());
        let eval = evaluate(
            &mut self.generator,
            &train.images[..k],
            &train.ids[..k],
            self.cfg.corruption_level,
            self.cfg.seed,
            self.cfg.fill_value as f32,
        )?;
        let mean = |f: fn(&LossReport) -> f32| {
            reports.iter().map(|r| f64::from(f(r))).sum::<f64>() / reports.len() as f64
        };
        let summary = EpochSummary {
            epoch: self.epoch,
            lr,
            loss_d: mean(|r| r.loss_d),
            loss_g: mean(|r| r.loss_g),
            nmse: eval.model.mean,
        };
        Ok((summary, reports))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        push_network(&mut tensors, &self.generator, &self.opt_g);
        push_network(&mut tensors, &self.discriminator, &self.opt_d);
        Checkpoint {
            config: self.cfg.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng.clone(),
            adam_steps: AdamSteps {
                generator: self.opt_g.states.iter().map(|s| s.t).collect(),
                discriminator: self.opt_d.states.iter().map(|s| s.t).collect(),
            },
            tensors,
        }
    }

    /// Rebuilds a trainer from a checkpoint. Every tensor the configured
    /// networks need must be present with a matching shape.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(&ckpt.config)
            .map_err(|e| Error::Checkpoint(format!("stored configuration: {e}")))?;
        let mut by_name: HashMap<&str, &Tensor<f32>> = HashMap::with_capacity(ckpt.tensors.len());
        for (name, tensor) in &ckpt.tensors {
            if by_name.insert(name, tensor).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        let used_g = restore_network(&mut t.generator, &mut t.opt_g, &ckpt.adam_steps.generator, &by_name, &ckpt.config)?;
        let used_d = restore_network(&mut t.discriminator, &mut t.opt_d, &ckpt.adam_steps.discriminator, &by_name, &ckpt.config)?;
        if used_g + used_d != by_name.len() {
            let expected: Vec<String> = t.checkpoint().tensors.into_iter().map(|(n, _)| n).collect();
            let extra = by_name
                .keys()
                .find(|k| !expected.iter().any(|e| e == *k))
                .copied()
                .unwrap_or("?");
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        t.rng = ckpt.rng.clone();
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        Ok(t)
    }
}

fn push_network<N: Network<f32>>(out: &mut Vec<(String, Tensor<f32>)>, net: &N, opt: &Adam<f32>) {
    for p in net.params().iter() {
        out.push((p.name.clone(), p.value.clone()));
    }
    for (name, t) in net.buffers() {
        out.push((name, t.clone()));
    }
    for (p, s) in net.params().iter().zip(&opt.states) {
        out.push((format!("{}.adam_m", p.name), s.m.clone()));
        out.push((format!("{}.adam_v", p.name), s.v.clone()));
    }
}

fn take<'a>(
    by_name: &HashMap<&str, &'a Tensor<f32>>,
    name: &str,
    shape: &[usize],
) -> Result<&'a Tensor<f32>> {
    let t = by_name
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if t.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "tensor {name} has shape {:?}, model expects {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

fn restore_network<N: Network<f32>>(
    net: &mut N,
    opt: &mut Adam<f32>,
    steps: &[u64],
    by_name: &HashMap<&str, &Tensor<f32>>,
    cfg: &TrainConfig,
) -> Result<usize> {
    let store: &mut ParamStore<f32> = net.params_mut();
    if steps.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{} Adam counters for {} parameters",
            steps.len(),
            store.len()
        )));
    }
    let mut used = 0;
    let ids: Vec<_> = store.ids().collect();
    for ((id, &t_step), slot) in ids.into_iter().zip(steps).zip(opt.states.iter_mut()) {
        let name = store.name(id).to_owned();
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, take(by_name, &name, &shape)?.clone())?;
        let mut state = AdamState::new(&shape, cfg.beta1, cfg.beta2)?;
        state.m = take(by_name, &format!("{name}.adam_m"), &shape)?.clone();
        state.v = take(by_name, &format!("{name}.adam_v"), &shape)?.clone();
        state.t = t_step;
        *slot = state;
        used += 3;
    }
    for (name, buf) in net.buffers_mut() {
        let shape = buf.shape().to_vec();
        *buf = take(by_name, &name, &shape)?.clone();
        used += 1;
    }
    Ok(used)
}

/// Files written by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub steps: PathBuf,
    pub checkpoints: PathBuf,
    pub final_checkpoint: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            dir: dir.to_owned(),
            config: dir.join("config.json"),
            metrics: dir.join("metrics.csv"),
            steps: dir.join("steps.csv"),
            checkpoints: dir.join("checkpoints"),
            final_checkpoint: dir.join("final.ckpt"),
        }
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints.join(format!("epoch_{epoch:04}.ckpt"))
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub paths: RunPaths,
    pub epochs: Vec<EpochSummary>,
    pub final_checkpoint: Checkpoint,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keeps the header and the rows whose epoch column (at `col`) is at most
/// `epoch`; creates the file with just the header when absent.
fn reset_csv(path: &Path, header: &str, col: usize, epoch: usize) -> Result<()> {
    let mut out = format!("{header}\n");
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let keep = line
                .split(',')
                .nth(col)
                .and_then(|v| v.parse::<usize>().ok())
                .is_some_and(|e| e <= epoch);
            if keep {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    write_text(path, &out)
}

fn append(path: &Path, rows: &str) -> Result<()> {
    let file = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(rows.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains `trainer` on `train` until `trainer.cfg.epochs` epochs are done,
/// writing CSV rows and checkpoints under `dir`.
pub fn run(trainer: &mut Trainer, train: &LoadedSplit, dir: &Path) -> Result<TrainOutcome> {
    let paths = RunPaths::new(dir);
    fs::create_dir_all(&paths.checkpoints).map_err(|e| Error::io(&paths.checkpoints, e))?;
    let json = serde_json::to_string_pretty(&trainer.cfg)
        .map_err(|e| Error::Config(e.to_string()))?;
    write_text(&paths.config, &(json + "\n"))?;
    reset_csv(&paths.metrics, METRICS_HEADER, 0, trainer.epoch)?;
    reset_csv(&paths.steps, STEPS_HEADER, 1, trainer.epoch)?;

    let mut epochs = Vec::new();
    while trainer.epoch < trainer.cfg.epochs {
        let first_step = trainer.step;
        let (summary, reports) = trainer.run_epoch(train)?;
        let mut rows = String::new();
        for (i, r) in reports.iter().enumerate() {
            rows.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                first_step + i as u64 + 1,
                summary.epoch,
                r.loss_d,
                r.loss_f,
                r.loss_r,
                r.loss_g,
                r.loss_g_content,
                r.loss_g_adv
            ));
        }
        append(&paths.steps, &rows)?;
        append(
            &paths.metrics,
            &format!(
                "{},{},{},{},{}\n",
                summary.epoch, summary.lr, summary.loss_d, summary.loss_g, summary.nmse
            ),
        )?;
        log::info!(
            "epoch {} lr {} loss_D {:.5} loss_G {:.5} nmse {:.5}",
            summary.epoch,
            summary.lr,
            summary.loss_d,
            summary.loss_g,
            summary.nmse
        );
        if trainer.epoch % trainer.cfg.checkpoint_every == 0 {
            save_checkpoint(&trainer.checkpoint(), &paths.epoch_checkpoint(trainer.epoch))?;
        }
        epochs.push(summary);
    }
    let final_checkpoint = trainer.checkpoint();
    save_checkpoint(&final_checkpoint, &paths.final_checkpoint)?;
    Ok(TrainOutcome {
        paths,
        epochs,
        final_checkpoint,
    })
}

/// Trains from scratch as configured, into `cfg.output_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let data = load_split(cfg, Split::Train)?;
    let mut trainer = Trainer::new(cfg)?;
    run(&mut trainer, &data, &cfg.output_dir)
}

/// Continues the run saved at `checkpoint`. `epochs` replaces the stored
/// epoch target and `output_dir` the stored directory when given.
pub fn resume(checkpoint: &Path, epochs: Option<usize>, output_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut ckpt = load_checkpoint(checkpoint)?;
    if let Some(e) = epochs {
        ckpt.config.epochs = e;
    }
    if let Some(dir) = output_dir {
        ckpt.config.output_dir = dir.to_owned();
    }
    let mut trainer = Trainer::from_checkpoint(&ckpt)?;
    let data = load_split(&trainer.cfg, Split::Train)?;
    let dir = trainer.cfg.output_dir.clone();
    run(&mut trainer, &data, &dir)
}
