//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Nothing here calls into the code under test
//! except for plain data types.
#![allow(dead_code)]

use ptqtune::calib::{TensorHistogram, BINS};
use ptqtune::model::{Graph, ModelFeatures, Op};
use ptqtune::quant::{Granularity, MixedPrecision, QuantConfig};
use ptqtune::tuner::{enumerate_space, Task, TargetProfile, TuningRecord, DB_VERSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Direct seven-loop convolution over a zero-padded `c × h × w` input.
/// `groups == c` gives a depthwise convolution.
pub fn naive_conv(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    wt: &[f64],
    (o, ci, kh, kw): (usize, usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
    depthwise: bool,
) -> (usize, usize, Vec<f64>) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..ci {
                    let src = if depthwise { oc } else { ic };
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (xx * stride + j) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(src * h + iy as usize) * w + ix as usize] * wt[((oc * ci + ic) * kh + i) * kw + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = acc;
            }
        }
    }
    let _ = c;
    (oh, ow, out)
}

fn kl_of_window(counts: &[u64], lo: usize, hi: usize, levels: usize) -> f64 {
    let len = hi - lo;
    let outside_lo: u64 = counts[..lo].iter().sum();
    let outside_hi: u64 = counts[hi..].iter().sum();
    let mut p: Vec<f64> = counts[lo..hi].iter().map(|&c| c as f64).collect();
    p[0] += outside_lo as f64;
    p[len - 1] += outside_hi as f64;
    let mut q = vec![0.0; len];
    for g in 0..levels {
        let a = g * len / levels;
        let b = (g + 1) * len / levels;
        let mass: f64 = counts[lo + a..lo + b].iter().map(|&c| c as f64).sum();
        let support: Vec<usize> = (a..b).filter(|&j| p[j] > 0.0).collect();
        for &j in &support {
            q[j] = mass / support.len() as f64;
        }
    }
    let ps: f64 = p.iter().sum();
    let qs: f64 = q.iter().sum();
    let mut kl = 0.0;
    for j in 0..len {
        if p[j] == 0.0 {
            continue;
        }
        if q[j] == 0.0 {
            return f64::INFINITY;
        }
        kl += (p[j] / ps) * ((p[j] / ps) / (q[j] / qs)).ln();
    }
    kl
}

/// Exhaustive sweep over every clipping window the search is allowed to
/// consider, recomputing each divergence from scratch.
pub fn brute_force_kl_range(h: &TensorHistogram) -> (f32, f32) {
    const LEVELS: usize = 128;
    let nb = h.bin_counts.len();
    let (lo_v, hi_v) = (h.min_seen as f64, h.max_seen as f64);
    if h.max_seen <= h.min_seen || nb <= LEVELS {
        return (h.min_seen, h.max_seen);
    }
    let w = (hi_v - lo_v) / nb as f64;
    let mut windows: Vec<(usize, usize)> = Vec::new();
    if h.min_seen >= 0.0 {
        windows.extend((LEVELS..=nb).map(|i| (0, i)));
    } else if h.max_seen <= 0.0 {
        windows.extend((LEVELS..=nb).map(|i| (nb - i, nb)));
    } else {
        let z = (-lo_v / w).round() as i64;
        for k in 1..=nb as i64 {
            let win = ((z - k).max(0) as usize, ((z + k).min(nb as i64)) as usize);
            if win.1 - win.0 >= LEVELS && !windows.contains(&win) {
                windows.push(win);
            }
        }
    }
    let mut best = (0, nb);
    let mut best_kl = f64::INFINITY;
    for (lo, hi) in windows {
        let kl = kl_of_window(&h.bin_counts, lo, hi, LEVELS);
        // Strict improvement beyond rounding noise; ties keep the narrower, earlier window.
        if kl < best_kl - 1e-12 {
            best = (lo, hi);
            best_kl = kl;
        }
    }
    let edge = |b: usize| if b == 0 { h.min_seen } else if b == nb { h.max_seen } else { (lo_v + b as f64 * w) as f32 };
    (edge(best.0), edge(best.1))
}

/// Twenty deterministic histograms: Gaussian, uniform, rectified and
/// outlier-injected samples of varying size and sign.
pub fn fixture_histograms() -> Vec<TensorHistogram> {
    let mut out = Vec::new();
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let n = 4000 + 1000 * (i as usize % 5);
        let values: Vec<f32> = match i % 5 {
            0 => {
                let d = Normal::new(0.0f32, 1.0 + i as f32 * 0.1).unwrap();
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            1 => (0..n).map(|_| rng.random_range(-2.0f32..3.0)).collect(),
            2 => {
                let d = Normal::new(0.3f32, 1.0).unwrap();
                (0..n).map(|_| d.sample(&mut rng).max(0.0)).collect()
            }
            3 => {
                let d = Normal::new(0.0f32, 0.5).unwrap();
                let mut v: Vec<f32> = (0..n).map(|_| d.sample(&mut rng)).collect();
                for k in 0..5 {
                    v[k] = if k % 2 == 0 { 20.0 + k as f32 } else { -15.0 };
                }
                v
            }
            _ => {
                let d = Normal::new(-1.0f32, 0.7).unwrap();
                let mut v: Vec<f32> = (0..n).map(|_| d.sample(&mut rng).min(0.0)).collect();
                v[0] = -40.0;
                v
            }
        };
        out.push(TensorHistogram::from_values(format!("h{i}"), &values));
    }
    assert!(out.iter().all(|h| h.bin_counts.len() == BINS));
    out
}

/// Bytes the quantized model should occupy: int8 codes, int32 biases and an
/// fp32 scale plus int32 zero point per parameter group for quantized
/// layers, and four bytes per value for layers kept in fp32.
pub fn analytic_model_size(g: &Graph, cfg: &QuantConfig) -> usize {
    let compute: Vec<usize> = (0..g.nodes.len()).filter(|&i| g.nodes[i].kind().is_compute()).collect();
    let mut total = 0;
    for (k, &i) in compute.iter().enumerate() {
        let n = &g.nodes[i];
        let w = &g.weights[&n.inputs[1]];
        let b = &g.weights[&n.inputs[2]];
        let fp32 = cfg.mixed == MixedPrecision::FirstLastFp32 && (k == 0 || k == compute.len() - 1);
        if fp32 {
            total += 4 * (w.data.len() + b.data.len());
        } else {
            let groups = match cfg.granularity {
                Granularity::Tensor => 1,
                Granularity::Channel => w.shape[0],
            };
            total += w.data.len() + 4 * b.data.len() + 8 * groups;
        }
    }
    total
}

pub fn compute_weight_count(g: &Graph) -> usize {
    g.nodes
        .iter()
        .filter(|n| !matches!(n.op, Op::Relu | Op::Maxpool { .. } | Op::Avgpool { .. } | Op::Add | Op::Concat | Op::Softmax))
        .map(|n| g.weights[&n.inputs[1]].data.len())
        .sum()
}

/// A frozen accuracy table over the 96-point space. Accuracy is driven by
/// the scheme and the granularity; the other dimensions add small effects
/// and each point gets a little noise. The optimum is unique.
#[derive(Debug, Clone)]
pub struct ResponseTable {
    pub space: Vec<QuantConfig>,
    pub acc: Vec<f64>,
}

impl ResponseTable {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scheme: Vec<f64> = vec![0.0, 0.08, 0.16, 0.24];
        for i in (1..4).rev() {
            scheme.swap(i, rng.random_range(0..=i));
        }
        let gran = if rng.random_bool(0.5) { [0.0, 0.15] } else { [0.15, 0.0] };
        let small: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..0.02)).collect();
        Self::from_effects(&scheme, &gran, &small, &mut rng)
    }

    /// Same dominant structure, independent small effects and noise: another
    /// model whose accuracy responds to configuration in the same way.
    pub fn correlated(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let scheme: Vec<f64> = (0..4).map(|s| self.effect(|c| c.scheme as usize == s)).collect();
        let gran = [0, 1].map(|g| self.effect(|c| c.granularity as usize == g));
        let small: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..0.02)).collect();
        Self::from_effects(&scheme, &gran, &small, &mut rng)
    }

    fn from_effects(scheme: &[f64], gran: &[f64; 2], small: &[f64], rng: &mut ChaCha8Rng) -> Self {
        let space = enumerate_space(TargetProfile::Generic);
        let noise = Normal::new(0.0, 0.002).unwrap();
        let mut acc: Vec<f64> = space
            .iter()
            .map(|c| {
                0.4 + scheme[c.scheme as usize]
                    + gran[c.granularity as usize]
                    + small[c.cache as usize]
                    + small[3 + c.clipping as usize]
                    + small[5 + c.mixed as usize]
                    + noise.sample(rng)
            })
            .collect();
        let best = (0..acc.len()).max_by(|&a, &b| acc[a].total_cmp(&acc[b])).unwrap();
        acc[best] += 0.01;
        Self { space, acc }
    }

    fn effect(&self, pick: impl Fn(&QuantConfig) -> bool) -> f64 {
        let v: Vec<f64> = self.space.iter().zip(&self.acc).filter(|(c, _)| pick(c)).map(|(_, a)| *a).collect();
        v.iter().sum::<f64>() / v.len() as f64 - 0.5
    }

    pub fn lookup(&self, c: &QuantConfig) -> f64 {
        self.acc[self.space.iter().position(|s| s == c).unwrap()]
    }

    pub fn max(&self) -> f64 {
        self.acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn task(&self, model: &str, features: ModelFeatures) -> Task {
        Task { model: model.into(), features, fp32_top1: 1.0, space: self.space.clone() }
    }

    /// Every point as a database record for `model`.
    pub fn records(&self, model: &str, features: &ModelFeatures) -> Vec<TuningRecord> {
        self.space
            .iter()
            .zip(&self.acc)
            .enumerate()
            .map(|(i, (c, &a))| TuningRecord {
                v: DB_VERSION,
                model: model.into(),
                features: features.clone(),
                config: *c,
                top1: a.clamp(0.0, 1.0),
                fp32_top1: 1.0,
                trial: i + 1,
                timestamp: i as u64 + 1,
                error: None,
            })
            .collect()
    }
}

pub fn features(n_conv: usize, n_relu: usize) -> ModelFeatures {
    ModelFeatures { n_nodes: n_conv + n_relu + 1, n_layers: n_conv + 1, n_conv, n_fc: 1, n_relu, ..Default::default() }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

use ptqtune::calib::{calibrate, CalibrationCache, SizeClass};
use ptqtune::model::{Node, WeightTensor, INPUT};
use ptqtune::tensor::{Shape3, Tensor};

/// Calibration cache over explicit images, bypassing pool selection.
pub fn cache_from(g: &Graph, images: &[Tensor], size_class: SizeClass) -> CalibrationCache {
    CalibrationCache {
        model_name: g.name.clone(),
        size_class,
        seed: 0,
        image_ids: (0..images.len()).collect(),
        histograms: calibrate(g, images).unwrap(),
    }
}

/// One fully-connected layer from `n_in` inputs to `n_out` outputs.
pub fn fc_graph(n_in: usize, n_out: usize, w: Vec<f32>, b: Vec<f32>) -> Graph {
    let mut weights = std::collections::BTreeMap::new();
    weights.insert("fc.w".to_string(), WeightTensor::new(vec![n_out, n_in], w));
    weights.insert("fc.b".to_string(), WeightTensor::new(vec![n_out], b));
    Graph {
        name: "fc".into(),
        input_shape: Shape3::new(n_in, 1, 1),
        output_classes: n_out,
        nodes: vec![Node {
            id: "fc".into(),
            op: Op::FullyConnected,
            inputs: vec![INPUT.into(), "fc.w".into(), "fc.b".into()],
            output: "y".into(),
        }],
        weights,
    }
}

pub fn random_images(shape: Shape3, n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Tensor::new(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect())).collect()
}
