//! Model-guided search: a boosted-tree regressor over (model features,
//! configuration) predicts accuracy and proposes the most promising
//! unexplored configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{by_score_desc, Evaluator, SearchResult, Session, Task, TuningRecord};
use crate::error::Result;
use crate::gbt::{self, GbtParams, TrainSet};

#[derive(Debug, Clone)]
pub struct XgbOptions {
    pub seed: u64,
    pub workers: usize,
    pub params: GbtParams,
}

impl Default for XgbOptions {
    fn default() -> Self {
        Self { seed: 0, workers: 1, params: GbtParams::default() }
    }
}

/// Random trials before the first model fit: at least 3, or 5% of the space.
pub fn cold_start_trials(space_len: usize) -> usize {
    3usize.max(space_len.div_ceil(20))
}

/// Runs the guided search. With a non-empty `seed_db` (records from other
/// models) the regressor is trained on those records from the first trial
/// and the random cold start is skipped.
pub fn tune_xgb(
    task: &Task,
    eval: &dyn Evaluator,
    budget: usize,
    seed_db: &[TuningRecord],
    opts: &XgbOptions,
) -> Result<SearchResult> {
    let mut s = Session::new(task, eval, budget, opts.workers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cold = if seed_db.is_empty() { cold_start_trials(task.space.len()).min(budget) } else { 0 };

    let mut base = TrainSet::new();
    for r in seed_db {
        base.push(gbt::encode(&r.features, &r.config), r.top1.clamp(0.0, 1.0))?;
    }

    while s.log.len() < cold {
        let mut pool = s.unexplored();
        let n = s.batch_size().min(cold - s.log.len());
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            batch.push(pool.swap_remove(rng.random_range(0..pool.len())));
        }
        s.run(&batch);
    }

    let encoded: Vec<Vec<f64>> = task.space.iter().map(|c| gbt::encode(&task.features, c)).collect();
    while s.remaining() > 0 {
        let mut d = base.clone();
        for (r, &i) in s.log.iter().zip(&s.indices) {
            d.push(encoded[i].clone(), r.top1)?;
        }
        let model = gbt::train(&d, &opts.params)?;
        let mut scored: Vec<(usize, f64)> = s.unexplored().into_iter().map(|i| (i, model.predict(&encoded[i]))).collect();
        scored.sort_by(by_score_desc);
        let batch: Vec<usize> = scored.iter().take(s.batch_size()).map(|p| p.0).collect();
        s.run(&batch);
    }
    let name = if seed_db.is_empty() { "xgb" } else { "xgb-t" };
    Ok(s.finish(name, Some(opts.seed)))
}

#[cfg(test)]
mod tests {
    use super::super::tests::task;
    use super::*;
    use crate::quant::{QuantConfig, TargetProfile};
    use std::collections::HashSet;

    #[test]
    fn cold_start_size() {
        assert_eq!(cold_start_trials(12), 3);
        assert_eq!(cold_start_trials(96), 5);
        assert_eq!(cold_start_trials(200), 10);
    }

    #[test]
    fn full_budget_finds_exhaustive_best() {
        let t = task(TargetProfile::Generic);
        let eval = |c: &QuantConfig| Ok(0.3 + 0.1 * c.scheme as usize as f64 + 0.05 * c.cache as usize as f64);
        let r = tune_xgb(&t, &eval, 96, &[], &XgbOptions::default()).unwrap();
        assert_eq!(r.log.len(), 96);
        assert_eq!(r.log.iter().map(|r| r.config).collect::<HashSet<_>>().len(), 96);
        assert!((r.best_top1 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn guided_search_beats_its_cold_start() {
        let t = task(TargetProfile::Generic);
        let eval = |c: &QuantConfig| Ok(0.2 + 0.15 * c.scheme as usize as f64 + 0.1 * c.granularity as usize as f64);
        let r = tune_xgb(&t, &eval, 20, &[], &XgbOptions { seed: 4, ..Default::default() }).unwrap();
        let cold_best = r.log[..5].iter().map(|r| r.top1).fold(0.0, f64::max);
        assert!(r.best_top1 >= cold_best);
        assert!((r.best_top1 - 0.75).abs() < 1e-12, "{}", r.best_top1);
    }
}
