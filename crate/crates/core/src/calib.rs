//! Calibration phase: activation histograms persisted as calibration caches.
//!
//! Histograms use [`BINS`] uniform bins over the observed `[min, max]`, built
//! in two passes over the calibration images (range first, then counts).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, BufferRef, PayloadWriter};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Fp32Executor;
use crate::model::{Graph, TensorId};
use crate::tensor::Tensor;

pub const BINS: usize = 2048;
pub const CACHE_MAGIC: &[u8; 4] = b"QCL1";

/// Calibration cache size class: how many images feed the histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeClass {
    S1,
    S2,
    S3,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::S1, SizeClass::S2, SizeClass::S3];

    pub fn image_count(self) -> usize {
        match self {
            SizeClass::S1 => 1,
            SizeClass::S2 => 32,
            SizeClass::S3 => 256,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for SizeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(SizeClass::S1),
            "S2" => Ok(SizeClass::S2),
            "S3" => Ok(SizeClass::S3),
            _ => Err(Error::InvalidArgument(format!("unknown size class `{s}` (S1, S2, S3)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorHistogram {
    pub tensor_id: TensorId,
    pub min_seen: f32,
    pub max_seen: f32,
    pub bin_counts: Vec<u64>,
    pub n_samples: u64,
    kl_range: OnceLock<Option<(f32, f32)>>,
}

impl PartialEq for TensorHistogram {
    fn eq(&self, o: &Self) -> bool {
        self.tensor_id == o.tensor_id
            && self.min_seen.to_bits() == o.min_seen.to_bits()
            && self.max_seen.to_bits() == o.max_seen.to_bits()
            && self.bin_counts == o.bin_counts
            && self.n_samples == o.n_samples
    }
}

impl TensorHistogram {
    pub fn from_counts(tensor_id: impl Into<TensorId>, min: f32, max: f32, bin_counts: Vec<u64>) -> Self {
        let n_samples = bin_counts.iter().sum();
        Self { tensor_id: tensor_id.into(), min_seen: min, max_seen: max, bin_counts, n_samples, kl_range: OnceLock::new() }
    }

    /// Builds a histogram over the exact range of `values`.
    pub fn from_values(tensor_id: impl Into<TensorId>, values: &[f32]) -> Self {
        let (min, max) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (min, max) = if values.is_empty() { (0.0, 0.0) } else { (min, max) };
        let mut h = Self::from_counts(tensor_id, min, max, vec![0; BINS]);
        h.add(values);
        h
    }

    pub fn bin_width(&self) -> f64 {
        (self.max_seen as f64 - self.min_seen as f64) / self.bin_counts.len() as f64
    }

    pub fn bin_of(&self, v: f32) -> usize {
        let span = self.max_seen as f64 - self.min_seen as f64;
        if span <= 0.0 {
            return 0;
        }
        let t = (v as f64 - self.min_seen as f64) / span;
        ((t * self.bin_counts.len() as f64) as usize).min(self.bin_counts.len() - 1)
    }

    fn add(&mut self, values: &[f32]) {
        for &v in values {
            let b = self.bin_of(v);
            self.bin_counts[b] += 1;
        }
        self.n_samples += values.len() as u64;
    }

    /// KL-clipped range, computed once per histogram.
    pub fn kl_range(&self) -> Result<(f32, f32)> {
        self.kl_range
            .get_or_init(|| crate::quant::clip_range_kl(self).ok())
            .ok_or_else(|| Error::EmptyHistogram(self.tensor_id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCache {
    pub model_name: String,
    pub size_class: SizeClass,
    pub seed: u64,
    pub image_ids: Vec<usize>,
    pub histograms: BTreeMap<TensorId, TensorHistogram>,
}

impl CalibrationCache {
    pub fn histogram(&self, id: &str) -> Result<&TensorHistogram> {
        self.histograms
            .get(id)
            .ok_or_else(|| Error::CacheMismatch(format!("no histogram for tensor `{id}`")))
    }

    /// Checks that the cache covers exactly the activations of `g`.
    pub fn check_model(&self, g: &Graph) -> Result<()> {
        if self.model_name != g.name {
            return Err(Error::CacheMismatch(format!("cache for `{}`, model is `{}`", self.model_name, g.name)));
        }
        let ids = g.activation_ids();
        if ids.len() != self.histograms.len() || ids.iter().any(|id| !self.histograms.contains_key(*id)) {
            return Err(Error::CacheMismatch("histogram set differs from the model's activations".into()));
        }
        Ok(())
    }
}

/// Deterministic sample of pool indices.
///
/// The sample is a prefix of one seeded shuffle, so for a fixed seed the
/// smaller size classes select subsets of the larger ones.
pub fn select_images(pool_len: usize, size_class: SizeClass, seed: u64) -> Result<Vec<usize>> {
    let n = size_class.image_count();
    if pool_len < n {
        return Err(Error::PoolExhausted { requested: n, available: pool_len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool_len).collect();
    for i in 0..n {
        let j = rng.random_range(i..pool_len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

/// Runs the fp32 graph over `images` and histograms every activation.
pub fn calibrate(g: &Graph, images: &[Tensor]) -> Result<BTreeMap<TensorId, TensorHistogram>> {
    let ex = Fp32Executor::new(g)?;
    let mut ranges: HashMap<String, (f32, f32)> = HashMap::new();
    for x in images {
        ex.run_observed(x, &mut |id: &str, t: &Tensor| {
            let r = ranges.entry(id.to_string()).or_insert((f32::INFINITY, f32::NEG_INFINITY));
            for &v in &t.data {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        })?;
    }
    let mut hists: BTreeMap<TensorId, TensorHistogram> = ranges
        .into_iter()
        .map(|(id, (lo, hi))| (id.clone(), TensorHistogram::from_counts(id, lo, hi, vec![0; BINS])))
        .collect();
    for x in images {
        ex.run_observed(x, &mut |id: &str, t: &Tensor| {
            hists.get_mut(id).expect("seen in first pass").add(&t.data);
        })?;
    }
    Ok(hists)
}

/// Selects images from the calibration pool and builds the cache.
pub fn build_cache(g: &Graph, pool: &Dataset, size_class: SizeClass, seed: u64) -> Result<CalibrationCache> {
    let image_ids = select_images(pool.len(), size_class, seed)?;
    let images: Vec<Tensor> = image_ids.iter().map(|&i| pool.images[i].clone()).collect();
    Ok(CalibrationCache {
        model_name: g.name.clone(),
        size_class,
        seed,
        image_ids,
        histograms: calibrate(g, &images)?,
    })
}

#[derive(Serialize, Deserialize)]
struct HistEntry {
    tensor_id: String,
    n_samples: u64,
    /// `[min_seen, max_seen]` as fp32.
    range: BufferRef,
    bins: BufferRef,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    version: u32,
    model_name: String,
    size_class: SizeClass,
    seed: u64,
    image_ids: Vec<usize>,
    tensors: Vec<HistEntry>,
}

pub fn encode_cache(c: &CalibrationCache) -> Result<Vec<u8>> {
    let mut payload = PayloadWriter::new();
    let tensors = c
        .histograms
        .values()
        .map(|h| HistEntry {
            tensor_id: h.tensor_id.clone(),
            n_samples: h.n_samples,
            range: payload.f32s(&[h.min_seen, h.max_seen]),
            bins: payload.u64s(&h.bin_counts),
        })
        .collect();
    let header = CacheHeader {
        version: 1,
        model_name: c.model_name.clone(),
        size_class: c.size_class,
        seed: c.seed,
        image_ids: c.image_ids.clone(),
        tensors,
    };
    container::encode(CACHE_MAGIC, &header, &payload.into_bytes())
}

pub fn decode_cache(bytes: &[u8]) -> Result<CalibrationCache> {
    let (h, payload): (CacheHeader, _) = container::decode(CACHE_MAGIC, bytes)?;
    let mut histograms = BTreeMap::new();
    for t in h.tensors {
        let range = payload.f32s(&t.range)?;
        let [min, max] = range[..] else { return Err(Error::Malformed("histogram range must hold 2 values".into())) };
        let bins = payload.u64s(&t.bins)?;
        let hist = TensorHistogram::from_counts(t.tensor_id.clone(), min, max, bins);
        if hist.n_samples != t.n_samples || !(min <= max) {
            return Err(Error::Malformed(format!("inconsistent histogram for `{}`", t.tensor_id)));
        }
        histograms.insert(t.tensor_id, hist);
    }
    Ok(CalibrationCache {
        model_name: h.model_name,
        size_class: h.size_class,
        seed: h.seed,
        image_ids: h.image_ids,
        histograms,
    })
}

pub fn save_cache(c: &CalibrationCache, path: &Path) -> Result<()> {
    std::fs::write(path, encode_cache(c)?)?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<CalibrationCache> {
    decode_cache(&std::fs::read(path)?)
}
