//! Diversity of near-lossless configurations and search-strategy comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tuner::{SearchResult, TuningRecord};

/// Shannon entropy in bits; zero counts contribute nothing.
pub fn shannon_entropy(freqs: &[f64]) -> Result<f64> {
    if freqs.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidArgument("frequencies must be finite and non-negative".into()));
    }
    let total: f64 = freqs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("frequencies sum to zero".into()));
    }
    let h = freqs.iter().filter(|&&f| f > 0.0).map(|&f| f / total).map(|p| -p * p.log2()).sum::<f64>();
    Ok(h.max(0.0))
}

/// Configuration dimensions covered by the diversity report, with their cardinalities.
pub const DIMENSIONS: [(&str, usize); 5] =
    [("calibration", 3), ("scheme", 4), ("clipping", 2), ("granularity", 2), ("mixed", 2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Maximum accuracy drop, in percentage points, a record may have to survive.
    pub threshold: f64,
    pub n_samples: usize,
    /// Per-dimension (name, entropy); `None` when there are no survivors.
    pub entropy: Vec<(String, Option<f64>)>,
}

impl DiversityReport {
    pub fn get(&self, dim: &str) -> Option<f64> {
        self.entropy.iter().find(|(n, _)| n == dim).and_then(|e| e.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dimension,entropy,max_entropy,n_samples,threshold\n");
        for ((name, h), (_, k)) in self.entropy.iter().zip(DIMENSIONS) {
            let h = h.map_or_else(|| "NA".to_string(), |h| format!("{h:.6}"));
            s.push_str(&format!("{name},{h},{:.6},{},{}\n", (k as f64).log2(), self.n_samples, self.threshold));
        }
        s
    }
}

fn dim_values(r: &TuningRecord) -> [usize; 5] {
    let c = &r.config;
    [c.cache as usize, c.scheme as usize, c.clipping as usize, c.granularity as usize, c.mixed as usize]
}

/// Keeps records whose drop `100 · (fp32_top1 − top1)` is at most
/// `threshold` points and measures how spread out each dimension is.
pub fn diversity_report(db: &[TuningRecord], threshold: f64) -> Result<DiversityReport> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must be a non-negative number")));
    }
    let survivors: Vec<&TuningRecord> =
        db.iter().filter(|r| r.error.is_none() && 100.0 * (r.fp32_top1 - r.top1) <= threshold).collect();
    let mut counts: Vec<Vec<f64>> = DIMENSIONS.iter().map(|(_, k)| vec![0.0; *k]).collect();
    for r in &survivors {
        for (d, v) in dim_values(r).into_iter().enumerate() {
            counts[d][v] += 1.0;
        }
    }
    let entropy = DIMENSIONS
        .iter()
        .zip(&counts)
        .map(|((name, _), c)| Ok((name.to_string(), if survivors.is_empty() { None } else { Some(shannon_entropy(c)?) })))
        .collect::<Result<_>>()?;
    Ok(DiversityReport { threshold, n_samples: survivors.len(), entropy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub model: String,
    pub strategy: String,
    pub runs: usize,
    pub median_trials_to_best: f64,
    pub best_top1: f64,
    /// Random-search median over this strategy's median; `None` without a random baseline.
    pub speedup_vs_random: Option<f64>,
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One row per (model, strategy), sorted by model then strategy.
pub fn convergence_report(results: &[SearchResult]) -> Vec<ConvergenceRow> {
    let mut groups: BTreeMap<(String, String), Vec<&SearchResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.model.clone(), r.strategy.clone())).or_default().push(r);
    }
    let mut rows: Vec<ConvergenceRow> = groups
        .iter()
        .map(|((model, strategy), rs)| ConvergenceRow {
            model: model.clone(),
            strategy: strategy.clone(),
            runs: rs.len(),
            median_trials_to_best: median(&mut rs.iter().map(|r| r.trials_to_best as f64).collect::<Vec<_>>()),
            best_top1: rs.iter().map(|r| r.best_top1).fold(f64::NEG_INFINITY, f64::max),
            speedup_vs_random: None,
        })
        .collect();
    let baselines: BTreeMap<String, f64> =
        rows.iter().filter(|r| r.strategy == "random").map(|r| (r.model.clone(), r.median_trials_to_best)).collect();
    for r in &mut rows {
        r.speedup_vs_random = baselines.get(&r.model).map(|b| b / r.median_trials_to_best);
    }
    rows
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("model,strategy,runs,median_trials_to_best,best_top1,speedup_vs_random\n");
    for r in rows {
        let speedup = r.speedup_vs_random.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        s.push_str(&format!(
            "{},{},{},{},{:.6},{}\n",
            r.model, r.strategy, r.runs, r.median_trials_to_best, r.best_top1, speedup
        ));
    }
    s
}
