use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssrgan::corruption::{check_level, eval_seed, CorruptionMask};
use ssrgan::data::{
    denormalize, list_images, load_image, normalize, resize_bilinear, save_image, save_mask, Split,
};
use ssrgan::gradcheck::standard_suite;
use ssrgan::training::{evaluate, load_split, run, EvalReport, TrainOutcome};
use ssrgan::{load_checkpoint, nmse, Checkpoint, Network, Pass, Tensor, TrainConfig, Trainer};

use crate::error::{ensure_dir, CliError};
use crate::{CorruptArgs, EvalArgs, GradcheckArgs, InferArgs, SplitArg, SweepArgs, TrainArgs};

pub const EVAL_FILE: &str = "eval.csv";
pub const LEVEL_TABLE: &str = "nmse_vs_level.csv";

/// One evaluation result, as written to every evaluation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub corruption_level: f64,
    pub epoch: usize,
    pub nmse_mean: f64,
    pub n_images: usize,
}

fn core<'a>(outputs: &'a [&'a Path]) -> impl Fn(ssrgan::Error) -> CliError + 'a {
    move |e| CliError::from_core(e, outputs)
}

/// Fill value in `[0, 1]` pixel space.
fn fill_01(cfg_fill: f64) -> f32 {
    ((cfg_fill + 1.0) / 2.0) as f32
}

fn check_level_arg(level: f64) -> Result<(), CliError> {
    check_level(level).map_err(|e| CliError::usage(e.to_string()))
}

pub fn write_rows(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    let unwritable = |e: csv::Error| CliError::output(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(unwritable)?;
    if rows.is_empty() {
        w.write_record(["dataset", "corruption_level", "epoch", "nmse_mean", "n_images"])
            .map_err(unwritable)?;
    }
    for r in rows {
        w.serialize(r).map_err(unwritable)?;
    }
    w.flush()
        .map_err(|e| CliError::output(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        Some(p) => TrainConfig::from_json_file(p).map_err(core(&[])),
        None => Ok(TrainConfig::default()),
    }
}

fn read_checkpoint(path: &Path) -> Result<(Checkpoint, Trainer), CliError> {
    let ckpt = load_checkpoint(path).map_err(core(&[]))?;
    let trainer = Trainer::from_checkpoint(&ckpt).map_err(|e| match e {
        ssrgan::Error::Io { .. } => CliError::from_core(e, &[]),
        other => CliError::checkpoint(format!("{}: {other}", path.display())),
    })?;
    Ok((ckpt, trainer))
}

pub fn corrupt(a: &CorruptArgs) -> Result<(), CliError> {
    check_level_arg(a.level)?;
    if a.size < 2 {
        return Err(CliError::usage("--size must be at least 2"));
    }
    let files = list_images(&a.input).map_err(core(&[]))?;
    if files.is_empty() {
        return Err(CliError::input(format!(
            "no .png or .ppm images under {}",
            a.input.display()
        )));
    }
    ensure_dir(&a.output)?;
    let out = [a.output.as_path()];
    let fill = fill_01(ssrgan::corruption::DEFAULT_FILL);
    for (i, rel) in files.iter().enumerate() {
        let rec = load_image(&a.input.join(rel)).map_err(core(&out))?;
        let img = resize_bilinear(&rec.pixels, a.size, a.size).map_err(core(&out))?;
        let mask = CorruptionMask::from_seed(a.size, a.size, a.level, eval_seed(a.seed, i as u64))
            .map_err(core(&out))?;
        let corrupted = mask.apply(&img, fill).map_err(core(&out))?;
        let dest = a.output.join(rel).with_extension("png");
        if let Some(parent) = dest.parent() {
            ensure_dir(parent)?;
        }
        save_image(&corrupted, &dest).map_err(core(&out))?;
        save_mask(&mask, &dest.with_extension("mask.pgm")).map_err(core(&out))?;
    }
    println!("corrupted {} images into {}", files.len(), a.output.display());
    Ok(())
}

/// Scores the final model on the test split; `None` when that split is empty.
fn evaluate_test(outcome: &TrainOutcome) -> Result<Option<(EvalRow, EvalReport)>, CliError> {
    let dir = outcome.paths.dir.as_path();
    let mut trainer = Trainer::from_checkpoint(&outcome.final_checkpoint).map_err(core(&[dir]))?;
    let cfg = trainer.cfg.clone();
    let test = match load_split(&cfg, Split::Test) {
        Ok(t) => t,
        Err(ssrgan::Error::EmptyDataset(m)) => {
            log::warn!("skipping test evaluation: {m}");
            return Ok(None);
        }
        Err(e) => return Err(CliError::from_core(e, &[dir])),
    };
    let report = evaluate(
        &mut trainer.generator,
        &test.images,
        &test.ids,
        cfg.corruption_level,
        cfg.seed,
        cfg.fill_value as f32,
    )
    .map_err(core(&[dir]))?;
    let row = EvalRow {
        dataset: cfg.dataset.name.clone(),
        corruption_level: cfg.corruption_level,
        epoch: trainer.epoch,
        nmse_mean: report.model.mean,
        n_images: report.model.count,
    };
    write_rows(&dir.join(EVAL_FILE), std::slice::from_ref(&row))?;
    Ok(Some((row, report)))
}

fn train_config(cfg: &TrainConfig) -> Result<TrainOutcome, CliError> {
    cfg.validate().map_err(core(&[]))?;
    ensure_dir(&cfg.output_dir)?;
    ssrgan::training::train(cfg).map_err(core(&[&cfg.output_dir]))
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let outcome = match &a.resume {
        Some(path) => {
            let (_, mut trainer) = read_checkpoint(path)?;
            if let Some(e) = a.epochs {
                trainer.cfg.epochs = e;
            }
            if let Some(o) = &a.output {
                trainer.cfg.output_dir = o.clone();
            }
            trainer.cfg.validate().map_err(core(&[]))?;
            let dir = trainer.cfg.output_dir.clone();
            ensure_dir(&dir)?;
            let data = load_split(&trainer.cfg, Split::Train).map_err(core(&[]))?;
            run(&mut trainer, &data, &dir).map_err(core(&[&dir]))?
        }
        None => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if let Some(o) = &a.output {
                cfg.output_dir = o.clone();
            }
            train_config(&cfg)?
        }
    };
    let done = outcome.final_checkpoint.epoch;
    match evaluate_test(&outcome)? {
        Some((row, report)) => println!(
            "trained {done} epochs into {}; test NMSE {:.6} over {} images (corrupted input {:.6})",
            outcome.paths.dir.display(),
            row.nmse_mean,
            row.n_images,
            report.baseline.mean
        ),
        None => println!("trained {done} epochs into {}", outcome.paths.dir.display()),
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (_, mut trainer) = read_checkpoint(&a.checkpoint)?;
    let cfg = trainer.cfg.clone();
    let level = a.level.unwrap_or(cfg.corruption_level);
    check_level_arg(level)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let data = load_split(&cfg, split).map_err(core(&[]))?;
    let report = evaluate(
        &mut trainer.generator,
        &data.images,
        &data.ids,
        level,
        seed,
        cfg.fill_value as f32,
    )
    .map_err(|e| match e {
        ssrgan::Error::ShapeMismatch(_) | ssrgan::Error::InvalidShape(_) => {
            CliError::checkpoint(e.to_string())
        }
        other => CliError::from_core(other, &[]),
    })?;
    log::info!(
        "{} split: model NMSE {:.6}, corrupted input {:.6}",
        split.as_str(),
        report.model.mean,
        report.baseline.mean
    );
    let row = EvalRow {
        dataset: cfg.dataset.name.clone(),
        corruption_level: level,
        epoch: trainer.epoch,
        nmse_mean: report.model.mean,
        n_images: report.model.count,
    };
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.serialize(&row)
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::output(e.to_string()))?;
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        write_rows(out, &[row])?;
    }
    Ok(())
}

/// Lays out `(3, H, W)` panels left to right with one white column between.
pub fn side_by_side(panels: &[Tensor<f32>]) -> Result<Tensor<f32>, ssrgan::Error> {
    let (h, w) = (panels[0].shape()[1], panels[0].shape()[2]);
    let total = panels.len() * w + panels.len() - 1;
    let mut out = Tensor::full(&[3, h, total], 1.0)?;
    for (k, p) in panels.iter().enumerate() {
        let x0 = k * (w + 1);
        for c in 0..3 {
            for y in 0..h {
                let src = &p.data()[(c * h + y) * w..(c * h + y + 1) * w];
                let at = (c * h + y) * total + x0;
                out.data_mut()[at..at + w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

pub fn infer(a: &InferArgs) -> Result<(), CliError> {
    check_level_arg(a.level)?;
    let (_, mut trainer) = read_checkpoint(&a.checkpoint)?;
    let size = trainer.cfg.image_size;
    let fill = trainer.cfg.fill_value;
    let rec = load_image(&a.image).map_err(core(&[]))?;
    let original = resize_bilinear(&rec.pixels, size, size).map_err(core(&[]))?;
    let mask = CorruptionMask::from_seed(size, size, a.level, a.seed).map_err(core(&[]))?;
    let input = mask
        .apply(&normalize(&original), fill as f32)
        .map_err(core(&[]))?;
    let batch = Tensor::stack(&[input]).map_err(core(&[]))?;
    let output = trainer
        .generator
        .infer(&batch, Pass::EVAL)
        .map_err(|e| CliError::checkpoint(format!("model does not accept the image: {e}")))?;
    let reconstructed = denormalize(&output.index_axis0(0).map_err(core(&[]))?);
    let corrupted = mask.apply(&original, fill_01(fill)).map_err(core(&[]))?;
    let score = nmse(&original, &reconstructed).map_err(core(&[]))?;
    let strip = side_by_side(&[original, corrupted, reconstructed]).map_err(core(&[]))?;
    let out_dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out_dir)?;
    save_image(&strip, &a.out).map_err(core(&[&out_dir]))?;
    println!("nmse {score:.9}");
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    if a.levels.is_empty() {
        return Err(CliError::usage("--levels is empty"));
    }
    for &l in &a.levels {
        check_level_arg(l)?;
    }
    let mut base = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        base.seed = s;
    }
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    let root = a.output.clone().unwrap_or_else(|| base.output_dir.clone());
    ensure_dir(&root)?;
    let mut rows = Vec::new();
    for &level in &a.levels {
        let cfg = TrainConfig {
            corruption_level: level,
            output_dir: root.join(format!("level_{level:.2}")),
            ..base.clone()
        };
        let outcome = train_config(&cfg)?;
        let Some((row, report)) = evaluate_test(&outcome)? else {
            return Err(CliError::input(format!(
                "test split of {} is empty; lower dataset.train_fraction",
                cfg.dataset.name
            )));
        };
        println!(
            "level {level}: test NMSE {:.6} (corrupted input {:.6})",
            row.nmse_mean, report.baseline.mean
        );
        rows.push(row);
    }
    rows.sort_by(|x, y| x.corruption_level.total_cmp(&y.corruption_level));
    let table = root.join(LEVEL_TABLE);
    write_rows(&table, &rows)?;
    println!("wrote {}", table.display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    if a.instances == 0 {
        return Err(CliError::usage("--instances must be positive"));
    }
    let mut failed = 0;
    for i in 0..a.instances {
        let seed = a.seed.wrapping_add(i);
        for entry in standard_suite(seed).map_err(core(&[]))? {
            let verdict = if entry.passes() { "PASS" } else { "FAIL" };
            failed += usize::from(!entry.passes());
            println!(
                "{verdict} {:<26} seed {seed:<4} rel_error {:.3e} tolerance {:e} worst {}",
                entry.name, entry.result.max_rel_error, entry.tolerance, entry.result.worst
            );
        }
    }
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
