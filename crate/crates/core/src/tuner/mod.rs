//! Configuration search: model-guided (with optional transfer from other
//! models' records), random, grid and genetic strategies.
//!
//! Every strategy evaluates each configuration at most once, never exceeds
//! its budget and logs every trial as a [`TuningRecord`].

mod db;
mod genetic;
mod xgb;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::SizeClass;
use crate::error::{Error, Result};
use crate::model::ModelFeatures;
pub use crate::quant::TargetProfile;
use crate::quant::{Clipping, QuantConfig};

pub use db::{load_db, record_db, DB_VERSION};
pub use genetic::{breed, tune_genetic, GaParams, Genome};
pub use xgb::{cold_start_trials, tune_xgb, XgbOptions};

/// Measures the top-1 accuracy of one configuration.
pub trait Evaluator: Sync {
    fn evaluate(&self, cfg: &QuantConfig) -> Result<f64>;
}

impl<F: Fn(&QuantConfig) -> Result<f64> + Sync> Evaluator for F {
    fn evaluate(&self, cfg: &QuantConfig) -> Result<f64> {
        self(cfg)
    }
}

/// Caches results so repeated campaigns over one model reuse measurements.
pub struct Memoized<E> {
    inner: E,
    cache: Mutex<HashMap<QuantConfig, std::result::Result<f64, String>>>,
}

impl<E: Evaluator> Memoized<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    /// Distinct configurations measured so far.
    pub fn measured(&self) -> usize {
        self.cache.lock().expect("memo lock").len()
    }
}

impl<E: Evaluator> Evaluator for Memoized<E> {
    fn evaluate(&self, cfg: &QuantConfig) -> Result<f64> {
        if let Some(r) = self.cache.lock().expect("memo lock").get(cfg) {
            return r.clone().map_err(Error::InvalidArgument);
        }
        let r = self.inner.evaluate(cfg);
        let stored = r.as_ref().map(|v| *v).map_err(|e| e.to_string());
        self.cache.lock().expect("memo lock").insert(*cfg, stored);
        r
    }
}

/// All legal configurations of a profile; cache varies slowest, fusion fastest.
pub fn enumerate_space(p: TargetProfile) -> Vec<QuantConfig> {
    let fusion: &[bool] = if p.has_fusion_toggle() { &[false, true] } else { &[false] };
    let mut out = Vec::new();
    for &cache in &SizeClass::ALL {
        for &scheme in p.schemes() {
            for &clipping in &Clipping::ALL {
                for &granularity in p.granularities() {
                    for &mixed in p.mixed_modes() {
                        for &f in fusion {
                            out.push(QuantConfig { cache, scheme, clipping, granularity, mixed, fusion: f });
                        }
                    }
                }
            }
        }
    }
    out
}

/// The model being tuned and the configurations to choose from.
#[derive(Debug, Clone)]
pub struct Task {
    pub model: String,
    pub features: ModelFeatures,
    pub fp32_top1: f64,
    pub space: Vec<QuantConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub v: u32,
    pub model: String,
    pub features: ModelFeatures,
    pub config: QuantConfig,
    pub top1: f64,
    pub fp32_top1: f64,
    /// 1-based position in the campaign.
    pub trial: usize,
    /// Logical clock: increases by one per record within a campaign.
    pub timestamp: u64,
    /// Set when the evaluation failed; `top1` is then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub strategy: String,
    pub model: String,
    pub seed: Option<u64>,
    pub best: QuantConfig,
    pub best_top1: f64,
    /// First trial (1-based) that reached `best_top1`.
    pub trials_to_best: usize,
    pub log: Vec<TuningRecord>,
}

impl SearchResult {
    /// Best accuracy after each trial.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.log
            .iter()
            .scan(f64::NEG_INFINITY, |b, r| {
                *b = b.max(r.top1);
                Some(*b)
            })
            .collect()
    }
}

/// Bookkeeping shared by all strategies.
struct Session<'a> {
    task: &'a Task,
    eval: &'a dyn Evaluator,
    budget: usize,
    workers: usize,
    explored: Vec<bool>,
    log: Vec<TuningRecord>,
    indices: Vec<usize>,
}

impl<'a> Session<'a> {
    fn new(task: &'a Task, eval: &'a dyn Evaluator, budget: usize, workers: usize) -> Result<Self> {
        if task.space.is_empty() {
            return Err(Error::EmptySpace);
        }
        if budget == 0 || budget > task.space.len() {
            return Err(Error::InvalidArgument(format!("budget {budget} must be in 1..={}", task.space.len())));
        }
        Ok(Self {
            task,
            eval,
            budget,
            workers: workers.max(1),
            explored: vec![false; task.space.len()],
            log: Vec::new(),
            indices: Vec::new(),
        })
    }

    fn remaining(&self) -> usize {
        self.budget - self.log.len()
    }

    fn unexplored(&self) -> Vec<usize> {
        (0..self.explored.len()).filter(|&i| !self.explored[i]).collect()
    }

    fn batch_size(&self) -> usize {
        self.workers.min(self.remaining())
    }

    /// Evaluates configurations by space index; failures are logged with accuracy 0.
    fn run(&mut self, idxs: &[usize]) -> Vec<f64> {
        let idxs = &idxs[..idxs.len().min(self.remaining())];
        let results: Vec<Result<f64>> = if self.workers > 1 {
            idxs.par_iter().map(|&i| self.eval.evaluate(&self.task.space[i])).collect()
        } else {
            idxs.iter().map(|&i| self.eval.evaluate(&self.task.space[i])).collect()
        };
        let mut out = Vec::with_capacity(idxs.len());
        for (&i, r) in idxs.iter().zip(results) {
            assert!(!self.explored[i], "configuration {i} evaluated twice");
            self.explored[i] = true;
            let (top1, error) = match r {
                Ok(v) if v.is_finite() => (v.clamp(0.0, 1.0), None),
                Ok(v) => (0.0, Some(format!("non-finite accuracy {v}"))),
                Err(e) => (0.0, Some(e.to_string())),
            };
            let trial = self.log.len() + 1;
            self.log.push(TuningRecord {
                v: DB_VERSION,
                model: self.task.model.clone(),
                features: self.task.features.clone(),
                config: self.task.space[i],
                top1,
                fp32_top1: self.task.fp32_top1,
                trial,
                timestamp: trial as u64,
                error,
            });
            self.indices.push(i);
            out.push(top1);
        }
        out
    }

    fn finish(self, strategy: &str, seed: Option<u64>) -> SearchResult {
        // Highest accuracy; ties go to the earliest configuration in enumeration order.
        let (best_pos, best) = self
            .log
            .iter()
            .enumerate()
            .max_by(|(a, ra), (b, rb)| {
                ra.top1.total_cmp(&rb.top1).then_with(|| self.indices[*b].cmp(&self.indices[*a]))
            })
            .map(|(i, r)| (i, r.top1))
            .expect("budget is at least one");
        let trials_to_best = self.log.iter().position(|r| r.top1 == best).expect("best is in the log") + 1;
        SearchResult {
            strategy: strategy.to_string(),
            model: self.task.model.clone(),
            seed,
            best: self.log[best_pos].config,
            best_top1: best,
            trials_to_best,
            log: self.log,
        }
    }
}

/// Uniform sampling without replacement.
pub fn tune_random(task: &Task, eval: &dyn Evaluator, budget: usize, seed: u64, workers: usize) -> Result<SearchResult> {
    let mut s = Session::new(task, eval, budget, workers)?;
    let mut order: Vec<usize> = (0..task.space.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for chunk in order[..budget].chunks(s.workers) {
        s.run(chunk);
    }
    Ok(s.finish("random", Some(seed)))
}

/// Smallest stride not below `sqrt(n)` that is coprime with `n`.
pub fn grid_stride(n: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut s = (n as f64).sqrt().ceil() as usize;
    while gcd(s.max(1), n) != 1 {
        s += 1;
    }
    s.max(1)
}

/// Visits `k · stride mod n` for `k = 0, 1, …`: a deterministic spread over the space.
pub fn tune_grid(task: &Task, eval: &dyn Evaluator, budget: usize, workers: usize) -> Result<SearchResult> {
    let mut s = Session::new(task, eval, budget, workers)?;
    let n = task.space.len();
    let stride = grid_stride(n);
    let order: Vec<usize> = (0..budget).map(|k| k * stride % n).collect();
    for chunk in order.chunks(s.workers) {
        s.run(chunk);
    }
    Ok(s.finish("grid", None))
}

/// Orders candidates by descending score, then by space index.
fn by_score_desc(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{Granularity, QuantScheme};
    use std::collections::HashSet;

    pub(super) fn task(p: TargetProfile) -> Task {
        Task { model: "m".into(), features: ModelFeatures::default(), fp32_top1: 0.9, space: enumerate_space(p) }
    }

    #[test]
    fn space_sizes() {
        let g = enumerate_space(TargetProfile::Generic);
        assert_eq!(g.len(), 96);
        assert_eq!(g.iter().collect::<HashSet<_>>().len(), 96);
        let i = enumerate_space(TargetProfile::IntegerOnly);
        assert_eq!(i.len(), 12);
        assert!(i.iter().all(|c| c.scheme == QuantScheme::SymmetricPower2 && c.granularity == Granularity::Tensor));
    }

    #[test]
    fn strides() {
        assert_eq!(grid_stride(96), 11);
        assert_eq!(grid_stride(12), 5);
        assert_eq!(grid_stride(1), 1);
    }

    #[test]
    fn grid_visits_everything_once() {
        let t = task(TargetProfile::Generic);
        let eval = |c: &QuantConfig| Ok(c.cache as usize as f64 / 10.0);
        let r = tune_grid(&t, &eval, 96, 1).unwrap();
        assert_eq!(r.log.iter().map(|r| r.config).collect::<HashSet<_>>().len(), 96);
        assert_eq!(r.best_top1, 0.2);
    }

    #[test]
    fn failures_are_logged_as_zero() {
        let t = task(TargetProfile::IntegerOnly);
        let eval = |c: &QuantConfig| if c.fusion { Err(Error::EmptyDataset) } else { Ok(0.5) };
        let r = tune_random(&t, &eval, 12, 3, 2).unwrap();
        assert_eq!(r.log.len(), 12);
        assert!(r.log.iter().filter(|r| r.config.fusion).all(|r| r.top1 == 0.0 && r.error.is_some()));
        assert_eq!(r.best_top1, 0.5);
    }

    #[test]
    fn budget_bounds() {
        let t = task(TargetProfile::IntegerOnly);
        let eval = |_: &QuantConfig| Ok(0.5);
        assert!(tune_random(&t, &eval, 13, 0, 1).is_err());
        assert!(tune_grid(&t, &eval, 0, 1).is_err());
        let empty = Task { space: vec![], ..t };
        assert!(matches!(tune_grid(&empty, &eval, 1, 1), Err(Error::EmptySpace)));
    }
}
