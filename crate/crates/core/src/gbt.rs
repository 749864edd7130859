//! Gradient-boosted regression trees with a second-order objective.
//!
//! Squared loss `L = (ŷ − y)²`, so every row contributes `g = 2(ŷ − y)` and
//! `h = 2`. A leaf holding rows with sums `G`, `H` predicts `−G / (H + λ)`;
//! a split is kept only when its gain is positive. Split search is exact:
//! every midpoint between consecutive distinct feature values is tried.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelFeatures;
use crate::quant::{Clipping, Granularity, MixedPrecision, QuantConfig, QuantScheme};
use crate::calib::SizeClass;

/// Width of the one-hot part of a feature vector.
pub const ONE_HOT_WIDTH: usize = 3 + 4 + 2 + 2 + 2 + 2;
/// Total feature vector width: one-hot configuration plus model features.
pub const FEATURE_WIDTH: usize = ONE_HOT_WIDTH + ModelFeatures::NAMES.len();

/// Column names matching [`encode`].
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_WIDTH);
    names.extend(SizeClass::ALL.iter().map(|c| format!("cache={c}")));
    names.extend(QuantScheme::ALL.iter().map(|s| format!("scheme={s}")));
    names.extend(Clipping::ALL.iter().map(|c| format!("clipping={c}")));
    names.extend(Granularity::ALL.iter().map(|g| format!("granularity={g}")));
    names.extend(MixedPrecision::ALL.iter().map(|m| format!("mixed={m}")));
    names.extend(["fusion=off", "fusion=on"].map(String::from));
    names.extend(ModelFeatures::NAMES.iter().map(|n| n.to_string()));
    names
}

/// One-hot configuration columns followed by the numeric model features.
pub fn encode(e: &ModelFeatures, s: &QuantConfig) -> Vec<f64> {
    let mut x = vec![0.0; ONE_HOT_WIDTH];
    let mut at = 0;
    for (value, card) in [
        (s.cache as usize, 3),
        (s.scheme as usize, 4),
        (s.clipping as usize, 2),
        (s.granularity as usize, 2),
        (s.mixed as usize, 2),
        (s.fusion as usize, 2),
    ] {
        x[at + value] = 1.0;
        at += card;
    }
    x.extend(e.as_vector());
    x
}

pub fn grad_hess(y: f64, y_hat: f64) -> (f64, f64) {
    (2.0 * (y_hat - y), 2.0)
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    -g / (h + lambda)
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub min_child_weight: f64,
    pub base_score: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { eta: 0.3, gamma: 0.0, lambda: 1.0, max_depth: 6, n_trees: 100, min_child_weight: 1.0, base_score: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSet {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl TrainSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Labels must lie in `[0, 1]`; every row must have the same width.
    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidArgument(format!("label {y} outside [0, 1]")));
        }
        if let Some(first) = self.rows.first() {
            if first.len() != x.len() {
                return Err(Error::Shape(format!("row width {} vs {}", x.len(), first.len())));
            }
        }
        self.rows.push(x);
        self.labels.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize, gain: f64 },
    Leaf { weight: f64 },
}

/// Nodes in creation order; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

/// Per-feature sorted distinct values and each row's index into them.
struct Binned {
    values: Vec<Vec<f64>>,
    row_bin: Vec<Vec<u32>>,
}

impl Binned {
    fn new(d: &TrainSet, n_features: usize) -> Self {
        let mut values = Vec::with_capacity(n_features);
        let mut row_bin = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut v: Vec<f64> = d.rows.iter().map(|r| r[f]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let bins = d
                .rows
                .iter()
                .map(|r| v.binary_search_by(|p| p.total_cmp(&r[f])).expect("value present") as u32)
                .collect();
            values.push(v);
            row_bin.push(bins);
        }
        Self { values, row_bin }
    }
}

struct Grower<'a> {
    params: &'a GbtParams,
    binned: &'a Binned,
    g: &'a [f64],
    h: &'a [f64],
    nodes: Vec<TreeNode>,
    gsum: Vec<f64>,
    hsum: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { weight: 0.0 });
        let g: f64 = rows.iter().map(|&r| self.g[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.h[r]).sum();
        let p = self.params;

        // (gain, feature, bin): split between values[bin] and values[bin + 1].
        let mut best: Option<(f64, usize, usize)> = None;
        if depth < p.max_depth && rows.len() >= 2 {
            for (f, vals) in self.binned.values.iter().enumerate() {
                let nb = vals.len();
                if nb < 2 {
                    continue;
                }
                self.gsum.clear();
                self.gsum.resize(nb, 0.0);
                self.hsum.clear();
                self.hsum.resize(nb, 0.0);
                let bins = &self.binned.row_bin[f];
                for &r in &rows {
                    self.gsum[bins[r] as usize] += self.g[r];
                    self.hsum[bins[r] as usize] += self.h[r];
                }
                let (mut gl, mut hl) = (0.0, 0.0);
                for k in 0..nb - 1 {
                    gl += self.gsum[k];
                    hl += self.hsum[k];
                    let (gr, hr) = (g - gl, h - hl);
                    if hl < p.min_child_weight || hr < p.min_child_weight {
                        continue;
                    }
                    let gain = split_gain(gl, hl, gr, hr, p.lambda, p.gamma);
                    if gain > 0.0 && best.is_none_or(|(b, _, _)| gain > b) {
                        best = Some((gain, f, k));
                    }
                }
            }
        }

        match best {
            Some((gain, feature, k)) => {
                let vals = &self.binned.values[feature];
                let threshold = 0.5 * (vals[k] + vals[k + 1]);
                let bins = &self.binned.row_bin[feature];
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| (bins[i] as usize) <= k);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = TreeNode::Split { feature, threshold, left, right, gain };
            }
            None => self.nodes[id] = TreeNode::Leaf { weight: leaf_weight(g, h, p.lambda) },
        }
        id
    }
}

/// Fits `params.n_trees` trees (fewer if a tree stops changing predictions).
pub fn train(d: &TrainSet, params: &GbtParams) -> Result<GbtModel> {
    if d.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let n_features = d.rows[0].len();
    let binned = Binned::new(d, n_features);
    let mut preds = vec![params.base_score; d.len()];
    let mut trees = Vec::with_capacity(params.n_trees);
    let (mut g, mut h) = (vec![0.0; d.len()], vec![0.0; d.len()]);
    for _ in 0..params.n_trees {
        for i in 0..d.len() {
            (g[i], h[i]) = grad_hess(d.labels[i], preds[i]);
        }
        let mut grower =
            Grower { params, binned: &binned, g: &g, h: &h, nodes: Vec::new(), gsum: Vec::new(), hsum: Vec::new() };
        grower.grow((0..d.len()).collect(), 0);
        let tree = Tree { nodes: grower.nodes };
        if let [TreeNode::Leaf { weight }] = tree.nodes[..] {
            if (params.eta * weight).abs() < 1e-12 {
                break;
            }
        }
        for (p, x) in preds.iter_mut().zip(&d.rows) {
            *p += params.eta * tree.eval(x);
        }
        trees.push(tree);
    }
    Ok(GbtModel { params: *params, n_features, trees })
}

impl GbtModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_with_trees(x, self.trees.len())
    }

    /// Prediction using only the first `k` trees.
    pub fn predict_with_trees(&self, x: &[f64], k: usize) -> f64 {
        self.params.base_score + self.trees.iter().take(k).map(|t| self.params.eta * t.eval(x)).sum::<f64>()
    }

    /// `(column, share of total split gain)`, descending; ties by column index.
    pub fn feature_importance(&self) -> Vec<(usize, f64)> {
        let mut gain = vec![0.0; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let TreeNode::Split { feature, gain: g, .. } = n {
                    gain[*feature] += g;
                }
            }
        }
        let total: f64 = gain.iter().sum();
        if total <= 0.0 {
            return Vec::new();
        }
        let mut ranked: Vec<(usize, f64)> =
            gain.into_iter().enumerate().filter(|(_, g)| *g > 0.0).map(|(i, g)| (i, g / total)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GbtFile { format: "gbt".into(), version: 1, model: self.clone() })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: GbtFile = serde_json::from_str(s)?;
        if f.format != "gbt" || f.version != 1 {
            return Err(Error::Malformed(format!("unsupported model file {} v{}", f.format, f.version)));
        }
        for t in &f.model.trees {
            for n in &t.nodes {
                let ok = match *n {
                    TreeNode::Leaf { weight } => weight.is_finite(),
                    TreeNode::Split { feature, left, right, .. } => {
                        feature < f.model.n_features && left < t.nodes.len() && right < t.nodes.len()
                    }
                };
                if !ok {
                    return Err(Error::Malformed("invalid tree node".into()));
                }
            }
        }
        Ok(f.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GbtFile {
    format: String,
    version: u32,
    model: GbtModel,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[(&[f64], f64)]) -> TrainSet {
        let mut d = TrainSet::new();
        for (x, y) in rows {
            d.push(x.to_vec(), *y).unwrap();
        }
        d
    }

    #[test]
    fn closed_forms() {
        assert_eq!(grad_hess(3.0, 5.0), (4.0, 2.0));
        assert_eq!(grad_hess(1.5, 1.5), (0.0, 2.0));
        assert!((leaf_weight(4.0, 2.0, 1.0) + 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(leaf_weight(0.0, 2.0, 1.0), 0.0);
        assert!(split_gain(1.0, 2.0, 1.0, 2.0, 1.0, 0.5) <= 0.0);
    }

    #[test]
    fn single_row_fits_one_leaf() {
        let d = set(&[(&[1.0, 0.0], 0.9)]);
        let m = train(&d, &GbtParams::default()).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert!((m.predict(&[1.0, 0.0]) - 0.9).abs() < 0.05);
    }

    #[test]
    fn conflicting_duplicates_predict_between() {
        let d = set(&[(&[1.0], 0.2), (&[1.0], 0.8)]);
        let p = train(&d, &GbtParams::default()).unwrap().predict(&[1.0]);
        assert!(p > 0.2 && p < 0.8);
    }

    #[test]
    fn empty_set_and_bad_labels_are_rejected() {
        assert!(matches!(train(&TrainSet::new(), &GbtParams::default()), Err(Error::EmptyTrainSet)));
        assert!(TrainSet::new().push(vec![0.0], 1.5).is_err());
    }

    #[test]
    fn encoding_width_and_names() {
        let x = encode(&ModelFeatures::default(), &QuantConfig::new(SizeClass::S2, QuantScheme::Symmetric, Clipping::Kl, Granularity::Tensor, MixedPrecision::Off));
        assert_eq!(x.len(), FEATURE_WIDTH);
        assert_eq!(feature_names().len(), FEATURE_WIDTH);
        assert_eq!(x[..ONE_HOT_WIDTH].iter().sum::<f64>(), 6.0);
        assert_eq!(x[1], 1.0);
        assert_eq!(x[3 + 1], 1.0);
    }

    #[test]
    fn json_round_trip() {
        let d = set(&[(&[0.0], 0.1), (&[1.0], 0.9), (&[2.0], 0.5)]);
        let m = train(&d, &GbtParams { n_trees: 5, ..GbtParams::default() }).unwrap();
        assert_eq!(GbtModel::from_json(&m.to_json().unwrap()).unwrap(), m);
        assert!(GbtModel::from_json("{}").is_err());
    }

    #[test]
    fn untrained_importance_is_empty() {
        let m = GbtModel { params: GbtParams::default(), n_features: 3, trees: vec![] };
        assert!(m.feature_importance().is_empty());
    }
}
