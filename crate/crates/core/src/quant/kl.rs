//! Divergence-minimizing clipping threshold search over a calibration histogram.
//!
//! Candidate windows are contiguous bin ranges `[lo, hi)` of at least
//! [`TARGET_LEVELS`] bins. For nonnegative tensors they start at bin 0, for
//! nonpositive tensors they end at the last bin, and for signed tensors they
//! grow symmetrically around the bin holding zero. For each window:
//!
//! * `P` is the window's counts with the mass outside the window added to the
//!   two edge bins;
//! * `Q` is the window's counts (outliers excluded) merged into
//!   [`TARGET_LEVELS`] contiguous chunks, each chunk's mass spread evenly over
//!   the bins where `P` is nonzero.
//!
//! The window minimizing `KL(P‖Q)` (natural log, both normalized) wins; a
//! window whose `Q` is zero where `P` is not has infinite divergence. Ties go
//! to the narrower window.

use crate::calib::TensorHistogram;
use crate::error::{Error, Result};

pub const TARGET_LEVELS: usize = 128;

/// Divergence differences below this are ties.
const TIE_EPS: f64 = 1e-12;

fn candidate_windows(h: &TensorHistogram) -> Vec<(usize, usize)> {
    let nb = h.bin_counts.len();
    if h.min_seen >= 0.0 {
        return (TARGET_LEVELS..=nb).map(|i| (0, i)).collect();
    }
    if h.max_seen <= 0.0 {
        return (TARGET_LEVELS..=nb).map(|i| (nb - i, nb)).collect();
    }
    let w = h.bin_width();
    let zb = ((-(h.min_seen as f64) / w).round() as usize).min(nb);
    let mut out: Vec<(usize, usize)> = Vec::new();
    for k in 1..=nb {
        let win = (zb.saturating_sub(k), (zb + k).min(nb));
        if win.1 - win.0 < TARGET_LEVELS || out.last() == Some(&win) {
            continue;
        }
        out.push(win);
        if win == (0, nb) {
            break;
        }
    }
    out
}

struct Scratch {
    p: Vec<f64>,
    q: Vec<f64>,
}

fn window_divergence(bins: &[u64], prefix: &[u64], lo: usize, hi: usize, s: &mut Scratch) -> f64 {
    let len = hi - lo;
    s.p.clear();
    s.p.extend(bins[lo..hi].iter().map(|&c| c as f64));
    s.p[0] += prefix[lo] as f64;
    s.p[len - 1] += (prefix[bins.len()] - prefix[hi]) as f64;

    s.q.clear();
    s.q.resize(len, 0.0);
    for g in 0..TARGET_LEVELS {
        let (a, b) = (g * len / TARGET_LEVELS, (g + 1) * len / TARGET_LEVELS);
        let total = (prefix[lo + b] - prefix[lo + a]) as f64;
        let nonzero = s.p[a..b].iter().filter(|&&v| v > 0.0).count();
        if nonzero == 0 {
            continue;
        }
        let share = total / nonzero as f64;
        for j in a..b {
            if s.p[j] > 0.0 {
                s.q[j] = share;
            }
        }
    }

    let psum: f64 = s.p.iter().sum();
    let qsum: f64 = s.q.iter().sum();
    if qsum <= 0.0 {
        return f64::INFINITY;
    }
    let mut kl = 0.0;
    for (&p, &q) in s.p.iter().zip(&s.q) {
        if p > 0.0 {
            if q <= 0.0 {
                return f64::INFINITY;
            }
            let (pn, qn) = (p / psum, q / qsum);
            kl += pn * (pn / qn).ln();
        }
    }
    kl
}

/// Value range covered by bins `[lo, hi)`; full-range edges map to the observed extremes.
fn window_range(h: &TensorHistogram, lo: usize, hi: usize) -> (f32, f32) {
    let nb = h.bin_counts.len();
    let w = h.bin_width();
    let at = |b: usize| (h.min_seen as f64 + b as f64 * w) as f32;
    let lo_v = if lo == 0 { h.min_seen } else { at(lo) };
    let hi_v = if hi == nb { h.max_seen } else { at(hi) };
    (lo_v, hi_v)
}

/// Best window `[lo, hi)` in bins, or `None` for an empty histogram.
pub(crate) fn best_window(h: &TensorHistogram) -> Option<(usize, usize)> {
    if h.n_samples == 0 {
        return None;
    }
    let nb = h.bin_counts.len();
    if !(h.max_seen > h.min_seen) || nb <= TARGET_LEVELS {
        return Some((0, nb));
    }
    let mut prefix = Vec::with_capacity(nb + 1);
    prefix.push(0u64);
    for &c in &h.bin_counts {
        prefix.push(prefix.last().unwrap() + c);
    }
    let mut scratch = Scratch { p: Vec::with_capacity(nb), q: Vec::with_capacity(nb) };
    let mut best = ((0, nb), f64::INFINITY);
    for (lo, hi) in candidate_windows(h) {
        let kl = window_divergence(&h.bin_counts, &prefix, lo, hi, &mut scratch);
        if kl < best.1 - TIE_EPS {
            best = ((lo, hi), kl);
        }
    }
    Some(best.0)
}

/// KL-clipped `(min, max)` range of a histogram. Never wider than the observed range.
pub fn clip_range_kl(h: &TensorHistogram) -> Result<(f32, f32)> {
    let (lo, hi) = best_window(h).ok_or_else(|| Error::EmptyHistogram(h.tensor_id.clone()))?;
    Ok(window_range(h, lo, hi))
}
