//! Seeded synthetic image corpora. Sample `k` depends only on `(seed, k)`, so
//! datasets are random access and need no storage. Pixels are in `[-1, 1]`,
//! laid out `[h, w, c]`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::nn::ImageShape;
use crate::rng::{self, Rng};
use crate::{Error, Result, Tensor};
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// One Gaussian blob whose center sits at one of `modes` points on a circle.
    Blobs { modes: usize },
    /// Smoothed checkerboards with random frequency in `[min_freq, max_freq]`
    /// cycles per image and random phase.
    Checkerboards { min_freq: usize, max_freq: usize },
    /// Low-frequency gradient backgrounds with `glyphs` small 3x5 characters.
    Sprites { glyphs: usize },
    /// Images read from a directory (needs the std companion crate).
    Folder { path: alloc::string::String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub size: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn blobs(resolution: usize, size: usize, seed: u64) -> Self {
        Self { family: Family::Blobs { modes: 8 }, height: resolution, width: resolution, channels: 1, size, seed }
    }

    pub fn sprites(resolution: usize, size: usize, seed: u64) -> Self {
        Self { family: Family::Sprites { glyphs: 3 }, height: resolution, width: resolution, channels: 1, size, seed }
    }

    pub fn checkerboards(resolution: usize, size: usize, seed: u64) -> Self {
        let family = Family::Checkerboards { min_freq: 1, max_freq: 4 };
        Self { family, height: resolution, width: resolution, channels: 1, size, seed }
    }

    pub fn image_shape(&self) -> ImageShape {
        ImageShape { height: self.height, width: self.width, channels: self.channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::config("dataset dimensions must be positive"));
        }
        match &self.family {
            Family::Blobs { modes } if *modes == 0 => Err(Error::config("blobs need at least one mode")),
            Family::Checkerboards { min_freq, max_freq } if *min_freq == 0 || min_freq > max_freq => {
                Err(Error::config("checkerboard frequencies must satisfy 1 <= min <= max"))
            }
            Family::Sprites { glyphs } if *glyphs == 0 => Err(Error::config("sprites need at least one glyph")),
            Family::Sprites { .. } if self.height < 8 || self.width < 8 => {
                Err(Error::config("sprites need at least 8x8 pixels"))
            }
            _ => Ok(()),
        }
    }
}

/// Random-access image collection.
pub trait ImageDataset {
    fn len(&self) -> usize;
    fn image_shape(&self) -> ImageShape;
    /// Image `k` as `[h, w, c]` values in `[-1, 1]`.
    fn image(&self, k: usize) -> Result<Vec<f64>>;
    /// Generator ground truth (blob mode, first glyph), if any.
    fn label(&self, _k: usize) -> Option<usize> {
        None
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[n, h, w, c]` batch of the given indices.
    fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let s = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * s.numel());
        for &k in indices {
            if k >= self.len() {
                return Err(Error::Domain { what: "dataset index", value: k as f64 });
            }
            data.extend(self.image(k)?);
        }
        Tensor::new(&[indices.len(), s.height, s.width, s.channels], data)
    }
}

impl<T: ImageDataset + ?Sized> ImageDataset for &T {
    fn len(&self) -> usize {
        (**self).len()
    }
    fn image_shape(&self) -> ImageShape {
        (**self).image_shape()
    }
    fn image(&self, k: usize) -> Result<Vec<f64>> {
        (**self).image(k)
    }
    fn label(&self, k: usize) -> Option<usize> {
        (**self).label(k)
    }
}

/// Images held in memory (folder ingestion, fixed subsets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InMemoryDataset {
    shape: ImageShape,
    images: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
}

impl InMemoryDataset {
    pub fn new(shape: ImageShape, images: Vec<Vec<f64>>) -> Result<Self> {
        for img in &images {
            if img.len() != shape.numel() {
                return Err(Error::shape(&shape.dims(), &[img.len()]));
            }
            if img.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Domain { what: "pixel", value: *img.iter().find(|v| !(-1.0..=1.0).contains(*v)).unwrap() });
            }
        }
        Ok(Self { shape, images, labels: None })
    }

    /// Materialize a subset of another dataset.
    pub fn from_dataset<D: ImageDataset + ?Sized>(src: &D, indices: &[usize]) -> Result<Self> {
        let images = indices.iter().map(|&k| src.image(k)).collect::<Result<Vec<_>>>()?;
        let labels: Option<Vec<usize>> = indices.iter().map(|&k| src.label(k)).collect();
        Ok(Self { shape: src.image_shape(), images, labels })
    }
}

impl ImageDataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.images.len()
    }
    fn image_shape(&self) -> ImageShape {
        self.shape
    }
    fn image(&self, k: usize) -> Result<Vec<f64>> {
        self.images.get(k).cloned().ok_or(Error::Domain { what: "dataset index", value: k as f64 })
    }
    fn label(&self, k: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.get(k).copied())
    }
}

/// Procedurally generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    spec: DatasetSpec,
}

/// Build a synthetic dataset; folder specs are rejected here.
pub fn generate(spec: &DatasetSpec) -> Result<Synthetic> {
    spec.validate()?;
    if let Family::Folder { .. } = spec.family {
        return Err(Error::Unsupported("folder datasets are read by the std companion crate".into()));
    }
    Ok(Synthetic { spec: spec.clone() })
}

impl Synthetic {
    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    fn rng(&self, k: usize) -> Rng {
        rng::stream(self.spec.seed, "dataset", k as u64)
    }

    fn render(&self, k: usize) -> (Vec<f64>, usize) {
        let mut r = self.rng(k);
        match self.spec.family {
            Family::Blobs { modes } => blob(&self.spec, modes, &mut r),
            Family::Checkerboards { min_freq, max_freq } => checkerboard(&self.spec, min_freq, max_freq, &mut r),
            Family::Sprites { glyphs } => sprite(&self.spec, glyphs, &mut r),
            Family::Folder { .. } => unreachable!("rejected in generate"),
        }
    }
}

impl ImageDataset for Synthetic {
    fn len(&self) -> usize {
        self.spec.size
    }
    fn image_shape(&self) -> ImageShape {
        self.spec.image_shape()
    }
    fn image(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.spec.size {
            return Err(Error::Domain { what: "dataset index", value: k as f64 });
        }
        Ok(self.render(k).0)
    }
    fn label(&self, k: usize) -> Option<usize> {
        (k < self.spec.size).then(|| self.render(k).1)
    }
}

/// Blob geometry shared by the generator and [`blob_mode`].
const BLOB_ORBIT: f64 = 0.3;
const BLOB_RADIUS: f64 = 0.09;
const BLOB_JITTER: f64 = 0.015;

fn blob_center(mode: usize, modes: usize) -> (f64, f64) {
    let th = core::f64::consts::TAU * mode as f64 / modes as f64;
    (0.5 + BLOB_ORBIT * th.cos(), 0.5 + BLOB_ORBIT * th.sin())
}

fn blob(spec: &DatasetSpec, modes: usize, r: &mut Rng) -> (Vec<f64>, usize) {
    let mode = r.random_range(0..modes);
    let (cx, cy) = blob_center(mode, modes);
    let (cx, cy) = (cx + BLOB_JITTER * rng::normal(r), cy + BLOB_JITTER * rng::normal(r));
    let mut out = Vec::with_capacity(spec.height * spec.width * spec.channels);
    for i in 0..spec.height {
        for j in 0..spec.width {
            let (y, x) = ((i as f64 + 0.5) / spec.height as f64, (j as f64 + 0.5) / spec.width as f64);
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            let v = -1.0 + 2.0 * (-d2 / (2.0 * BLOB_RADIUS * BLOB_RADIUS)).exp();
            out.extend(core::iter::repeat(v).take(spec.channels));
        }
    }
    (out, mode)
}

/// Nearest blob mode to the intensity-weighted centroid of an image, or `None`
/// when the image carries no blob-like mass.
pub fn blob_mode(image: &[f64], shape: ImageShape, modes: usize) -> Option<usize> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..shape.height {
        for j in 0..shape.width {
            let base = (i * shape.width + j) * shape.channels;
            let v = image[base..base + shape.channels].iter().sum::<f64>() / shape.channels as f64;
            let w = ((v + 1.0) / 2.0 - 0.2).max(0.0);
            sw += w;
            sx += w * (j as f64 + 0.5) / shape.width as f64;
            sy += w * (i as f64 + 0.5) / shape.height as f64;
        }
    }
    if sw < 1e-6 {
        return None;
    }
    let (x, y) = (sx / sw, sy / sw);
    (0..modes).min_by(|&a, &b| {
        let da = dist2(blob_center(a, modes), (x, y));
        let db = dist2(blob_center(b, modes), (x, y));
        da.partial_cmp(&db).expect("finite")
    })
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn checkerboard(spec: &DatasetSpec, lo: usize, hi: usize, r: &mut Rng) -> (Vec<f64>, usize) {
    let f = r.random_range(lo..=hi);
    let (px, py) = (rng::uniform(r), rng::uniform(r));
    let tint: Vec<f64> = (0..spec.channels).map(|_| 0.6 + 0.4 * rng::uniform(r)).collect();
    let mut out = Vec::with_capacity(spec.height * spec.width * spec.channels);
    let tau = core::f64::consts::TAU;
    for i in 0..spec.height {
        for j in 0..spec.width {
            let (y, x) = ((i as f64 + 0.5) / spec.height as f64, (j as f64 + 0.5) / spec.width as f64);
            let s = (tau * (f as f64 * x + px)).sin() * (tau * (f as f64 * y + py)).sin();
            let v = (4.0 * s).tanh();
            out.extend(tint.iter().map(|t| t * v));
        }
    }
    (out, f - lo)
}

/// 3x5 bitmaps for digits 0-9 and a few letters, rows top to bottom.
const FONT: [[u8; 5]; 16] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
    [0b010, 0b101, 0b111, 0b101, 0b101],
    [0b110, 0b101, 0b110, 0b101, 0b110],
    [0b011, 0b100, 0b100, 0b100, 0b011],
    [0b101, 0b101, 0b010, 0b101, 0b101],
    [0b101, 0b111, 0b111, 0b101, 0b101],
    [0b111, 0b010, 0b010, 0b010, 0b010],
];

pub const GLYPH_COUNT: usize = FONT.len();

fn sprite(spec: &DatasetSpec, glyphs: usize, r: &mut Rng) -> (Vec<f64>, usize) {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    // smooth background: a tilted plane per channel, kept dark
    let mut img = Vec::with_capacity(h * w * c);
    let planes: Vec<(f64, f64, f64)> = (0..c)
        .map(|_| (-0.6 + 0.3 * rng::uniform(r), 0.3 * (rng::uniform(r) - 0.5), 0.3 * (rng::uniform(r) - 0.5)))
        .collect();
    for i in 0..h {
        for j in 0..w {
            let (y, x) = (i as f64 / h as f64 - 0.5, j as f64 / w as f64 - 0.5);
            img.extend(planes.iter().map(|(a, bx, by)| a + bx * x + by * y));
        }
    }
    let mut first = 0;
    for g in 0..glyphs {
        let id = r.random_range(0..GLYPH_COUNT);
        if g == 0 {
            first = id;
        }
        let (oy, ox) = (r.random_range(0..=h - 5), r.random_range(0..=w - 3));
        let color: Vec<f64> = (0..c).map(|_| 0.5 + 0.5 * rng::uniform(r)).collect();
        for (dy, row) in FONT[id].iter().enumerate() {
            for dx in 0..3 {
                if row & (0b100 >> dx) != 0 {
                    let base = ((oy + dy) * w + ox + dx) * c;
                    img[base..base + c].copy_from_slice(&color);
                }
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(-1.0, 1.0);
    }
    (img, first)
}

/// Disjoint, seed-stable train/eval index split.
pub fn split(len: usize, eval_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&eval_fraction) {
        return Err(Error::Domain { what: "eval fraction", value: eval_fraction });
    }
    let perm = rng::permutation(&mut rng::rng_for(seed, "split"), len);
    let n_eval = (len as f64 * eval_fraction).round() as usize;
    let (eval, train) = perm.split_at(n_eval);
    let (mut train, mut eval) = (train.to_vec(), eval.to_vec());
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}
