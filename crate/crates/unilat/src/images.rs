//! PNG export and image-folder ingestion.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use unilat_core::data::{ImageDataset, InMemoryDataset};
use unilat_core::nn::ImageShape;

use crate::error::{Error, Result};

const EXTENSIONS: [&str; 5] = ["png", "bmp", "tif", "tiff", "ppm"];

fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn from_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// Write one `[h, w, c]` image with values in `[-1, 1]` as an 8-bit PNG.
/// Grayscale for one channel, RGB for three.
pub fn write_png(path: &Path, pixels: &[f64], shape: ImageShape) -> Result<()> {
    if pixels.len() != shape.numel() {
        return Err(Error::format(path, format!("expected {} values, got {}", shape.numel(), pixels.len())));
    }
    let (w, h) = (shape.width as u32, shape.height as u32);
    let bytes: Vec<u8> = pixels.iter().map(|&v| to_byte(v)).collect();
    let img = match shape.channels {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("sized")),
        c => return Err(Error::format(path, format!("cannot write {c}-channel images"))),
    };
    img.save(path).map_err(|error| Error::Image { path: path.into(), error })
}

/// Write every image of `data` as `{prefix}{k:05}.png`; returns the paths.
pub fn export_dataset<D: ImageDataset + ?Sized>(data: &D, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut out = Vec::with_capacity(data.len());
    for k in 0..data.len() {
        let p = dir.join(format!("{prefix}{k:05}.png"));
        write_png(&p, &data.image(k)?, data.image_shape())?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: InMemoryDataset,
    /// Source file of each sample, in dataset order.
    pub files: Vec<PathBuf>,
    pub skipped: Vec<Skipped>,
}

/// Load every image file of `dir` (sorted by file name), center-crop it to a
/// square, resize to `resolution` and map to `[-1, 1]`. Unreadable files are
/// skipped and listed.
pub fn ingest_folder(dir: &Path, resolution: usize, channels: usize) -> Result<Ingested> {
    if channels != 1 && channels != 3 {
        return Err(Error::Usage(format!("folder ingestion supports 1 or 3 channels, not {channels}")));
    }
    if resolution == 0 {
        return Err(Error::Usage("resolution must be positive".into()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();

    let shape = ImageShape { height: resolution, width: resolution, channels };
    let (mut images, mut files, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for p in paths {
        match image::open(&p) {
            Ok(img) => {
                images.push(prepare(img, resolution, channels));
                files.push(p);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped.push(Skipped { path: p, reason: e.to_string() });
            }
        }
    }
    if images.is_empty() {
        log::warn!("no readable images in {}", dir.display());
    }
    Ok(Ingested { dataset: InMemoryDataset::new(shape, images)?, files, skipped })
}

fn prepare(img: DynamicImage, resolution: usize, channels: usize) -> Vec<f64> {
    let side = img.width().min(img.height());
    let img = img.crop_imm((img.width() - side) / 2, (img.height() - side) / 2, side, side);
    let r = resolution as u32;
    let img = if side == r { img } else { img.resize_exact(r, r, FilterType::Triangle) };
    let bytes = if channels == 1 { img.to_luma8().into_raw() } else { img.to_rgb8().into_raw() };
    bytes.into_iter().map(from_byte).collect()
}
