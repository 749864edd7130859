//! Synthetic "shapes" classification data and the `.qds` container.
//!
//! Eight classes of 1x32x32 images: disk, square, ring, hollow square,
//! horizontal bar, vertical bar, plus and triangle. Each image draws a random
//! radius, centre, intensity, background level and Gaussian pixel noise from a
//! ChaCha8 stream, so a seed fully determines the data.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::{self, BufferRef, PayloadWriter};
use crate::error::{Error, Result};
use crate::tensor::{Shape3, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"QDS1";
pub const SHAPE_CLASSES: usize = 8;
pub const IMAGE_SHAPE: Shape3 = Shape3::new(1, 32, 32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    CalibrationPool,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, split: Split) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|t| t.shape != first.shape) {
                return Err(Error::Shape("images do not share one shape".into()));
            }
        }
        Ok(Self { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Subset by index, preserving the given order.
    pub fn select(&self, ids: &[usize]) -> Dataset {
        Dataset {
            images: ids.iter().map(|&i| self.images[i].clone()).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }
}

/// Both splits as stored in one `.qds` file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub seed: u64,
    pub classes: usize,
    pub calibration_pool: Dataset,
    pub eval: Dataset,
}

fn inside(class: usize, dx: f32, dy: f32, r: f32) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match class {
        0 => dx * dx + dy * dy <= r * r,
        1 => ax <= r && ay <= r,
        2 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (r - 2.0) * (r - 2.0)
        }
        3 => {
            let m = ax.max(ay);
            m <= r && m >= r - 2.0
        }
        4 => ay <= 1.5 && ax <= r + 3.0,
        5 => ax <= 1.5 && ay <= r + 3.0,
        6 => (ax <= 1.5 && ay <= r) || (ay <= 1.5 && ax <= r),
        _ => dy >= -r && dy <= r && ax <= (dy + r) * 0.5,
    }
}

fn draw(rng: &mut ChaCha8Rng, class: usize) -> Tensor {
    let noise = Normal::new(0.0f32, 0.08).expect("valid std");
    let r: f32 = rng.random_range(5.0..10.0);
    let lo = r + 2.0;
    let hi = 31.0 - r - 2.0;
    let cx: f32 = rng.random_range(lo..=hi);
    let cy: f32 = rng.random_range(lo..=hi);
    let fg: f32 = rng.random_range(0.6..1.0);
    let bg: f32 = rng.random_range(0.0..0.2);
    let mut data = Vec::with_capacity(IMAGE_SHAPE.numel());
    for y in 0..IMAGE_SHAPE.h {
        for x in 0..IMAGE_SHAPE.w {
            let base = if inside(class, x as f32 - cx, y as f32 - cy, r) { fg } else { bg };
            data.push(base + noise.sample(rng));
        }
    }
    Tensor::new(IMAGE_SHAPE, data)
}

fn generate_split(rng: &mut ChaCha8Rng, n: usize, split: Split) -> Dataset {
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // Round-robin labels keep the classes balanced.
        let class = i % SHAPE_CLASSES;
        images.push(draw(rng, class));
        labels.push(class);
    }
    Dataset { images, labels, split }
}

pub fn generate_shapes(seed: u64, pool: usize, eval: usize) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calibration_pool = generate_split(&mut rng, pool, Split::CalibrationPool);
    let eval = generate_split(&mut rng, eval, Split::Eval);
    DatasetBundle { name: "shapes".into(), seed, classes: SHAPE_CLASSES, calibration_pool, eval }
}

#[derive(Serialize, Deserialize)]
struct SplitEntry {
    split: Split,
    count: usize,
    images: BufferRef,
    labels: BufferRef,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    version: u32,
    name: String,
    seed: u64,
    classes: usize,
    image_shape: Shape3,
    splits: Vec<SplitEntry>,
}

pub fn encode_dataset(b: &DatasetBundle) -> Result<Vec<u8>> {
    let shape = b.calibration_pool.images.first().or(b.eval.images.first()).map_or(IMAGE_SHAPE, |t| t.shape);
    let mut payload = PayloadWriter::new();
    let mut splits = Vec::new();
    for d in [&b.calibration_pool, &b.eval] {
        let flat: Vec<f32> = d.images.iter().flat_map(|t| t.data.iter().copied()).collect();
        let labels: Vec<i32> = d.labels.iter().map(|&l| l as i32).collect();
        splits.push(SplitEntry { split: d.split, count: d.len(), images: payload.f32s(&flat), labels: payload.i32s(&labels) });
    }
    let header = DatasetHeader {
        version: 1,
        name: b.name.clone(),
        seed: b.seed,
        classes: b.classes,
        image_shape: shape,
        splits,
    };
    container::encode(DATASET_MAGIC, &header, &payload.into_bytes())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetBundle> {
    let (h, payload): (DatasetHeader, _) = container::decode(DATASET_MAGIC, bytes)?;
    let mut pool = None;
    let mut eval = None;
    for s in &h.splits {
        let flat = payload.f32s(&s.images)?;
        let labels = payload.i32s(&s.labels)?;
        if flat.len() != s.count * h.image_shape.numel() || labels.len() != s.count {
            return Err(Error::Malformed(format!("split {:?} sizes disagree with count {}", s.split, s.count)));
        }
        let images = flat.chunks_exact(h.image_shape.numel()).map(|c| Tensor::new(h.image_shape, c.to_vec())).collect();
        let labels = labels
            .into_iter()
            .map(|l| usize::try_from(l).ok().filter(|&l| l < h.classes))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Malformed("label out of range".into()))?;
        let d = Dataset::new(images, labels, s.split)?;
        match s.split {
            Split::CalibrationPool => pool = Some(d),
            Split::Eval => eval = Some(d),
        }
    }
    Ok(DatasetBundle {
        name: h.name,
        seed: h.seed,
        classes: h.classes,
        calibration_pool: pool.ok_or_else(|| Error::Malformed("missing calibration-pool split".into()))?,
        eval: eval.ok_or_else(|| Error::Malformed("missing eval split".into()))?,
    })
}

pub fn save_dataset(b: &DatasetBundle, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(b)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetBundle> {
    decode_dataset(&std::fs::read(path)?)
}
