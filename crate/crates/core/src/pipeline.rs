//! The desk-scale benchmark: three fixture models with random backbones on the
//! synthetic shapes dataset, their calibration caches and an evaluator that
//! quantizes and scores a configuration end to end.

use crate::calib::{build_cache, CalibrationCache, SizeClass};
use crate::dataset::{generate_shapes, Dataset, DatasetBundle};
use crate::error::{Error, Result};
use crate::exec::{evaluate_top1, observe_activations};
use crate::intexec::{evaluate_integer_only, evaluate_quantized};
use crate::model::{extract_features, generate_fixture, Graph, ModelFeatures, Op, Recipe};
use crate::quant::{quantize_model, QuantConfig, TargetProfile};
use crate::tensor::Tensor;
use crate::tuner::{enumerate_space, Evaluator, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSpec {
    pub name: &'static str,
    pub recipe: &'static str,
    pub seed: u64,
}

/// Plain, residual and depthwise-separable networks.
pub const SUITE: [FixtureSpec; 3] = [
    FixtureSpec { name: "lenet-toy", recipe: "conv8+pool+conv16+pool+fc", seed: 1 },
    FixtureSpec { name: "resnet-toy", recipe: "conv8+pool+res+pool+res+gap+fc", seed: 7 },
    FixtureSpec { name: "mobile-toy", recipe: "conv8+pool+dw16+pool+dw16+gap+fc", seed: 3 },
];

pub const DATA_SEED: u64 = 2024;
pub const POOL_SIZE: usize = 300;
pub const EVAL_SIZE: usize = 200;
pub const CALIB_SEED: u64 = 11;

/// Penultimate features (the classifier's input) of every image in `d`.
fn classifier_features(g: &Graph, d: &Dataset) -> Result<(usize, Vec<Vec<f64>>)> {
    let fc = g
        .nodes
        .iter()
        .rposition(|n| matches!(n.op, Op::FullyConnected))
        .ok_or_else(|| Error::InvalidGraph("no fully-connected classifier".into()))?;
    let src = g.nodes[fc].inputs[0].clone();
    let mut feats = Vec::with_capacity(d.len());
    let mut sink = |id: &str, t: &Tensor| {
        if id == src {
            feats.push(t.data.iter().map(|&v| v as f64).collect());
        }
    };
    observe_activations(g, &d.images, &mut sink)?;
    Ok((fc, feats))
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major `n × n`)
/// by Cholesky factorization; `b` holds `m` right-hand sides column-wise.
fn cholesky_solve(mut a: Vec<f64>, n: usize, mut b: Vec<f64>, m: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::InvalidArgument("ridge system is not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for c in 0..m {
        // L y = b, then Lᵀ x = y.
        for i in 0..n {
            let mut s = b[i * m + c];
            for k in 0..i {
                s -= a[i * n + k] * b[k * m + c];
            }
            b[i * m + c] = s / a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i * m + c];
            for k in i + 1..n {
                s -= a[k * n + i] * b[k * m + c];
            }
            b[i * m + c] = s / a[i * n + i];
        }
    }
    Ok(b)
}

/// Default ridge strength, relative to the mean Gram diagonal.
pub const RIDGE: f64 = 0.1;

/// Refits the classifier by ridge regression of one-hot targets on the
/// penultimate features of `pool`, in the dual form so the solve is
/// `|pool| × |pool|` whatever the feature width. The backbone stays random;
/// only the linear head is fitted.
pub fn fit_ridge_head(g: &mut Graph, pool: &Dataset, ridge: f64) -> Result<()> {
    let (fc, feats) = classifier_features(g, pool)?;
    let (wid, bid) = (g.nodes[fc].inputs[1].clone(), g.nodes[fc].inputs[2].clone());
    let (classes, dim) = {
        let w = g.weight(&wid)?;
        (w.shape[0], w.shape[1])
    };
    let n = feats.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if feats.iter().any(|f| f.len() != dim) || pool.labels.iter().any(|&l| l >= classes) {
        return Err(Error::Shape("pool features or labels do not fit the classifier".into()));
    }
    let mean: Vec<f64> = (0..dim).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
    let x: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let mut gram = vec![0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let lambda = ridge * (0..n).map(|i| gram[i * n + i]).sum::<f64>() / n as f64 + 1e-12;
    (0..n).for_each(|i| gram[i * n + i] += lambda);
    let ybar = 1.0 / classes as f64;
    let mut y = vec![-ybar; n * classes];
    for (i, &l) in pool.labels.iter().enumerate() {
        y[i * classes + l] += 1.0;
    }
    let alpha = cholesky_solve(gram, n, y, classes)?;
    // W = Xᵀ α, b = ȳ − W μ.
    let mut w = vec![0f64; classes * dim];
    for (i, xi) in x.iter().enumerate() {
        for c in 0..classes {
            let a = alpha[i * classes + c];
            for (wj, &v) in w[c * dim..(c + 1) * dim].iter_mut().zip(xi) {
                *wj += a * v;
            }
        }
    }
    let b: Vec<f32> =
        (0..classes).map(|c| (ybar - w[c * dim..(c + 1) * dim].iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>()) as f32).collect();
    g.weights.get_mut(&wid).expect("weight checked above").data = w.into_iter().map(|v| v as f32).collect();
    g.weights.get_mut(&bid).expect("bias exists with weight").data = b;
    Ok(())
}

/// A fixture with its head fitted, fp32 accuracy and one cache per size class.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub name: String,
    pub graph: Graph,
    pub features: ModelFeatures,
    pub fp32_top1: f64,
    pub caches: Vec<CalibrationCache>,
}

impl PreparedModel {
    pub fn cache(&self, s: SizeClass) -> &CalibrationCache {
        &self.caches[s.index()]
    }

    pub fn task(&self, profile: TargetProfile) -> Task {
        Task {
            model: self.name.clone(),
            features: self.features.clone(),
            fp32_top1: self.fp32_top1,
            space: enumerate_space(profile),
        }
    }
}

pub struct Suite {
    pub data: DatasetBundle,
    pub models: Vec<PreparedModel>,
}

pub fn prepare_model(spec: &FixtureSpec, data: &DatasetBundle, calib_seed: u64) -> Result<PreparedModel> {
    let recipe = Recipe::parse(spec.recipe)?.with_classes(data.classes);
    let mut graph = generate_fixture(&recipe, spec.seed)?;
    graph.name = spec.name.to_string();
    fit_ridge_head(&mut graph, &data.calibration_pool, RIDGE)?;
    let fp32_top1 = evaluate_top1(&graph, &data.eval)?.top1;
    let caches = SizeClass::ALL
        .iter()
        .map(|&s| build_cache(&graph, &data.calibration_pool, s, calib_seed))
        .collect::<Result<_>>()?;
    Ok(PreparedModel { name: spec.name.to_string(), features: extract_features(&graph), graph, fp32_top1, caches })
}

/// Builds the whole benchmark deterministically.
pub fn build_suite() -> Result<Suite> {
    let data = generate_shapes(DATA_SEED, POOL_SIZE, EVAL_SIZE);
    let models = SUITE.iter().map(|s| prepare_model(s, &data, CALIB_SEED)).collect::<Result<_>>()?;
    Ok(Suite { data, models })
}

/// Quantizes and scores configurations of one prepared model.
pub struct PipelineEvaluator<'a> {
    pub model: &'a PreparedModel,
    pub eval: &'a Dataset,
    pub profile: TargetProfile,
}

impl Evaluator for PipelineEvaluator<'_> {
    fn evaluate(&self, cfg: &QuantConfig) -> Result<f64> {
        let qg = quantize_model(&self.model.graph, self.model.cache(cfg.cache), cfg, self.profile)?;
        let acc = match self.profile {
            TargetProfile::Generic => evaluate_quantized(&qg, self.eval)?,
            TargetProfile::IntegerOnly => evaluate_integer_only(&qg, self.eval)?,
        };
        Ok(acc.top1)
    }
}
