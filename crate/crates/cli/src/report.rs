use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssrgan::data::save_image;
use ssrgan::training::METRICS_HEADER;
use ssrgan::TrainConfig;

use crate::commands::{write_rows, EvalRow, EVAL_FILE, LEVEL_TABLE};
use crate::error::{ensure_dir, CliError};
use crate::plot::{line_plot, Series};
use crate::ReportArgs;

pub const EPOCH_TABLE: &str = "nmse_vs_epoch.csv";
const EVAL_HEADER: [&str; 5] = ["dataset", "corruption_level", "epoch", "nmse_mean", "n_images"];

#[derive(Debug, Deserialize)]
struct MetricsRow {
    epoch: usize,
    #[serde(rename = "lr")]
    _lr: f64,
    #[serde(rename = "loss_D")]
    _loss_d: f64,
    #[serde(rename = "loss_G")]
    _loss_g: f64,
    nmse: f64,
}

#[derive(Debug, Clone, Serialize)]
struct EpochRow {
    run: String,
    dataset: String,
    corruption_level: f64,
    epoch: usize,
    nmse: f64,
}

/// `root` itself when it holds a run, otherwise its run subdirectories.
fn find_runs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join("metrics.csv").is_file() {
        return Ok(vec![root.to_owned()]);
    }
    let entries = fs::read_dir(root)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", root.display())))?;
    let mut runs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    runs.sort();
    if runs.is_empty() {
        return Err(CliError::input(format!(
            "no run directories with metrics.csv under {}",
            root.display()
        )));
    }
    Ok(runs)
}

/// Reads a CSV whose header must equal `header`, failing with exit code 4
/// and a `file:line` location on any malformed row.
fn read_table<R: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<R>, CliError> {
    let at = |line: u64, msg: &dyn std::fmt::Display| {
        CliError::csv(format!("{}:{line}: {msg}", path.display()))
    };
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let found = reader.headers().map_err(|e| at(1, &e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(at(1, &format!("expected header {}", header.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            at(line, &e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push(record.deserialize(Some(&found)).map_err(|e| at(line, &e))?);
    }
    Ok(rows)
}

fn save_plot(series: &[Series], x_label: &str, path: &Path) -> Result<(), CliError> {
    let img = line_plot(series, x_label, "NMSE");
    save_image(&img, path).map_err(|e| CliError::output(e.to_string()))
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let runs = find_runs(&a.runs)?;
    ensure_dir(&a.out)?;
    let metrics_header: Vec<&str> = METRICS_HEADER.split(',').collect();
    let mut level_rows: Vec<EvalRow> = Vec::new();
    let mut epoch_rows: Vec<EpochRow> = Vec::new();
    for dir in &runs {
        let cfg = TrainConfig::from_json_file(&dir.join("config.json"))
            .map_err(|e| CliError::input(e.to_string()))?;
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let metrics: Vec<MetricsRow> = read_table(&dir.join("metrics.csv"), &metrics_header)?;
        epoch_rows.extend(metrics.into_iter().map(|m| EpochRow {
            run: name.clone(),
            dataset: cfg.dataset.name.clone(),
            corruption_level: cfg.corruption_level,
            epoch: m.epoch,
            nmse: m.nmse,
        }));
        let eval = dir.join(EVAL_FILE);
        if eval.is_file() {
            level_rows.extend(read_table::<EvalRow>(&eval, &EVAL_HEADER)?);
        } else {
            log::warn!("{} has no {EVAL_FILE}; left out of the level curve", dir.display());
        }
    }
    level_rows.sort_by(|x, y| {
        x.corruption_level
            .total_cmp(&y.corruption_level)
            .then_with(|| x.dataset.cmp(&y.dataset))
            .then_with(|| x.epoch.cmp(&y.epoch))
    });

    write_rows(&a.out.join(LEVEL_TABLE), &level_rows)?;
    let path = a.out.join(EPOCH_TABLE);
    let unwritable = |e: csv::Error| CliError::output(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(unwritable)?;
    if epoch_rows.is_empty() {
        w.write_record(["run", "dataset", "corruption_level", "epoch", "nmse"])
            .map_err(unwritable)?;
    }
    for r in &epoch_rows {
        w.serialize(r).map_err(unwritable)?;
    }
    w.flush()
        .map_err(|e| CliError::output(format!("{}: {e}", path.display())))?;

    if !a.no_plots {
        let mut by_dataset: Vec<Series> = Vec::new();
        for r in &level_rows {
            match by_dataset.iter_mut().find(|s| s.label == r.dataset) {
                Some(s) => s.points.push((r.corruption_level, r.nmse_mean)),
                None => by_dataset.push(Series {
                    label: r.dataset.clone(),
                    points: vec![(r.corruption_level, r.nmse_mean)],
                }),
            }
        }
        save_plot(&by_dataset, "CORRUPTION LEVEL", &a.out.join("nmse_vs_level.png"))?;
        let mut by_run: Vec<Series> = Vec::new();
        for r in &epoch_rows {
            match by_run.iter_mut().find(|s| s.label == r.run) {
                Some(s) => s.points.push((r.epoch as f64, r.nmse)),
                None => by_run.push(Series {
                    label: r.run.clone(),
                    points: vec![(r.epoch as f64, r.nmse)],
                }),
            }
        }
        save_plot(&by_run, "EPOCH", &a.out.join("nmse_vs_epoch.png"))?;
    }
    println!(
        "merged {} runs: {} level rows, {} epoch rows into {}",
        runs.len(),
        level_rows.len(),
        epoch_rows.len(),
        a.out.display()
    );
    Ok(())
}
