//! Image I/O, resizing, normalization and dataset manifests.
//!
//! Images are `(3, H, W)` tensors in `[0, 1]`; the networks see them mapped
//! to `[-1, 1]`. PNG (8-bit gray, gray+alpha, RGB, RGBA) and binary PPM are
//! read; alpha is dropped and gray is replicated to three channels.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionMask;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGE_EXTENSIONS: [&str; 2] = ["png", "ppm"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub pixels: Tensor<f32>,
    pub path: PathBuf,
    /// `(height, width)` as stored on disk.
    pub original: (usize, usize),
}

fn io_or_format(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::IoError(e) => Error::io(path, e),
        ImageError::Unsupported(e) => Error::Format(format!("{}: {e}", path.display())),
        other => {
            // Decoders report a short read as a decoding error; surface it as I/O.
            let text = other.to_string();
            let lower = text.to_ascii_lowercase();
            if lower.contains("eof") || lower.contains("end of file") || lower.contains("truncat") {
                Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::UnexpectedEof, text),
                )
            } else {
                Error::Format(format!("{}: {text}", path.display()))
            }
        }
    }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pgm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::Format(format!(
            "{}: expected a .png or .ppm file",
            path.display()
        ))),
    }
}

/// Reads an 8-bit image as a `(3, H, W)` tensor with values `byte / 255`.
pub fn load_image(path: &Path) -> Result<ImageRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = format_for(path)?;
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| io_or_format(path, e))?;
    let rgb = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel type {:?}, need 8-bit gray or RGB",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f32::from(px[c]) / 255.0;
        }
    }
    Ok(ImageRecord {
        pixels: Tensor::from_vec(&[3, h, w], data)?,
        path: path.to_owned(),
        original: (h, w),
    })
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `(3, H, W)` tensor in `[0, 1]` as PNG or binary PPM, chosen by
/// extension. Values are clamped and rounded to bytes.
pub fn save_image(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let [3, h, w] = *img.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "save_image needs (3, H, W), got {:?}",
            img.shape()
        )));
    };
    let format = format_for(path)?;
    let d = img.data();
    let mut buf = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            buf.push(to_byte(d[c * h * w + i]));
        }
    }
    write_encoded(path, format, &buf, w, h, ExtendedColorType::Rgb8)
}

fn write_encoded(
    path: &Path,
    format: ImageFormat,
    buf: &[u8],
    w: usize,
    h: usize,
    color: ExtendedColorType,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (w, h) = (w as u32, h as u32);
    let written = match format {
        ImageFormat::Png => PngEncoder::new(&mut out).write_image(buf, w, h, color),
        _ => {
            let subtype = if color == ExtendedColorType::L8 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(&mut out)
                .with_subtype(subtype)
                .write_image(buf, w, h, color)
        }
    };
    written.map_err(|e| io_or_format(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes a mask as a binary PGM, 255 where corrupted.
pub fn save_mask(mask: &CorruptionMask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_encoded(path, ImageFormat::Pnm, &bytes, mask.width, mask.height, ExtendedColorType::L8)
}

/// Bilinear resize of a `(C, H, W)` tensor with half-pixel centers: output
/// pixel `i` samples the input at `(i + 0.5) * in / out - 0.5`, clamped to
/// the edges.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "resize needs (C, H, W), got {:?}",
            img.shape()
        )));
    };
    if out_h < 2 || out_w < 2 {
        return Err(Error::Range(format!(
            "resize target {out_h}x{out_w} must be at least 2x2"
        )));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = img.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// `[0, 1] -> [-1, 1]` by `2x - 1`. Inputs outside `[0, 1]` are clamped with
/// a warning.
pub fn normalize(img: &Tensor<f32>) -> Tensor<f32> {
    if img.min_value() < 0.0 || img.max_value() > 1.0 {
        log::warn!(
            "normalize: values in [{}, {}] clamped to [0, 1]",
            img.min_value(),
            img.max_value()
        );
    }
    img.map(|v| 2.0 * v.clamp(0.0, 1.0) - 1.0)
}

/// `[-1, 1] -> [0, 1]` by `(y + 1) / 2`, clamped.
pub fn denormalize(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    /// Path relative to the dataset root, with `/` separators.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Fallback split used when no official split files exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Official split files looked for under the dataset root, as
/// `(train, test)` pairs. Each line names an image by relative path, by
/// path without extension, or by file stem; only the first
/// whitespace-separated token is read.
pub const SPLIT_FILES: [(&str, &str); 2] = [
    ("splits/train.txt", "splits/test.txt"),
    ("annotations/trainval.txt", "annotations/test.txt"),
];

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// All image files under `root`, as sorted relative paths.
pub fn list_images(root: &Path) -> Result<Vec<String>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut paths = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_owned();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            paths.push(relative(root, entry.path()));
        }
    }
    paths.sort();
    Ok(paths)
}

fn read_split_file(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_whitespace().next().map(str::to_owned))
        .collect())
}

fn resolve_split(names: &[String], images: &[String]) -> Vec<String> {
    let mut lookup: HashMap<&str, &str> = HashMap::new();
    for p in images {
        let no_ext = p.rsplit_once('.').map_or(p.as_str(), |(a, _)| a);
        let stem = no_ext.rsplit('/').next().unwrap_or(no_ext);
        lookup.entry(stem).or_insert(p);
        lookup.insert(no_ext, p);
        lookup.insert(p, p);
    }
    let mut out: Vec<String> = Vec::with_capacity(names.len());
    let mut missing = 0usize;
    for n in names {
        match lookup.get(n.as_str()) {
            Some(p) => out.push((*p).to_owned()),
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{missing} split entries have no matching image");
    }
    out.sort();
    out.dedup();
    out
}

/// Builds the manifest of one split of the dataset under `root`.
pub fn scan_dataset(root: &Path, name: &str, split: Split, rule: SplitRule) -> Result<DatasetManifest> {
    let images = list_images(root)?;
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no .png or .ppm images under {}",
            root.display()
        )));
    }
    let official = SPLIT_FILES
        .iter()
        .find(|(tr, te)| root.join(tr).is_file() && root.join(te).is_file());
    let chosen = if let Some((tr, te)) = official {
        let file = root.join(if split == Split::Train { tr } else { te });
        resolve_split(&read_split_file(&file)?, &images)
    } else {
        if !(0.0..=1.0).contains(&rule.train_fraction) {
            return Err(Error::Range(format!(
                "train fraction {} outside [0, 1]",
                rule.train_fraction
            )));
        }
        let n_train = (rule.train_fraction * images.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..images.len()).collect();
        Rng::new(rule.seed).shuffle(&mut order);
        let picked = match split {
            Split::Train => &order[..n_train],
            Split::Test => &order[n_train..],
        };
        let mut out: Vec<String> = picked.iter().map(|&i| images[i].clone()).collect();
        out.sort();
        out
    };
    if chosen.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} split of {} is empty",
            split.as_str(),
            root.display()
        )));
    }
    Ok(DatasetManifest {
        name: name.to_owned(),
        split,
        root: root.to_owned(),
        entries: chosen
            .into_iter()
            .enumerate()
            .map(|(id, path)| ManifestEntry { id, path })
            .collect(),
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes `id<TAB>relpath` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for e in &self.entries {
            writeln!(out, "{}\t{}", e.id, e.path).map_err(|err| Error::io(path, err))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, name: &str, split: Split, root: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let bad = || Error::Format(format!("{}:{}: expected id<TAB>path", path.display(), i + 1));
            let (id, rel) = line.split_once('\t').ok_or_else(bad)?;
            let id: usize = id.parse().map_err(|_| bad())?;
            if id != entries.len() {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                id,
                path: rel.to_owned(),
            });
        }
        Ok(DatasetManifest {
            name: name.to_owned(),
            split,
            root: root.to_owned(),
            entries,
        })
    }

    /// Loads every entry resized to `size x size`, in manifest order.
    pub fn load(&self, size: usize) -> Result<Vec<Tensor<f32>>> {
        self.entries
            .par_iter()
            .map(|e| {
                let rec = load_image(&self.root.join(&e.path))?;
                resize_bilinear(&rec.pixels, size, size)
            })
            .collect()
    }
}

/// Smooth random `(3, size, size)` images in `[0.1, 0.9]`, each a sum of a
/// few low-frequency sinusoids per channel.
pub fn synthetic_images(count: usize, size: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
    use std::f64::consts::TAU;
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let mut data = vec![0.0f32; 3 * size * size];
            for plane in data.chunks_mut(size * size) {
                let base = 0.3 + 0.4 * rng.uniform_f64();
                let waves: Vec<[f64; 4]> = (0..3)
                    .map(|_| {
                        [
                            0.15 * rng.uniform_f64(),
                            1.0 + 2.0 * rng.uniform_f64(),
                            1.0 + 2.0 * rng.uniform_f64(),
                            TAU * rng.uniform_f64(),
                        ]
                    })
                    .collect();
                for y in 0..size {
                    for x in 0..size {
                        let (u, v) = (y as f64 / size as f64, x as f64 / size as f64);
                        let s: f64 = waves
                            .iter()
                            .map(|[a, fy, fx, ph]| a * (TAU * (fy * u + fx * v) / 2.0 + ph).sin())
                            .sum();
                        plane[y * size + x] = (base + s).clamp(0.1, 0.9) as f32;
                    }
                }
            }
            Tensor::from_vec(&[3, size, size], data)
        })
        .collect()
}

/// Writes `synthetic_images` as numbered PNGs into `dir`.
pub fn write_synthetic_dataset(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in synthetic_images(count, size, seed)?.iter().enumerate() {
        save_image(img, &dir.join(format!("img_{i:04}.png")))?;
    }
    Ok(())
}
