use std::collections::{BTreeMap, BTreeSet};

use super::{clip_range, params_for_range, quantize_weights, MixedPrecision, QuantConfig, QuantParams, TargetProfile};
use crate::calib::CalibrationCache;
use crate::error::{Error, Result};
use crate::model::{Graph, NodeKind, TensorId, WeightTensor, INPUT};

/// Int8 weights, per-axis parameters and int32 bias of one quantized compute node.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub weight_shape: Vec<usize>,
    pub weight_codes: Vec<i8>,
    /// One entry for tensor granularity, one per output channel otherwise.
    pub weight_params: Vec<QuantParams>,
    /// Scale `input_scale · weight_scale` per output channel, zero point 0.
    pub bias: Vec<i32>,
}

impl QuantLayer {
    pub fn out_channels(&self) -> usize {
        self.weight_shape[0]
    }

    /// Weight parameters for output channel `oc`.
    pub fn channel_params(&self, oc: usize) -> QuantParams {
        if self.weight_params.len() == 1 {
            self.weight_params[0]
        } else {
            self.weight_params[oc]
        }
    }
}

/// A graph with quantization parameters attached.
///
/// `graph.weights` keeps only the fp32 tensors of nodes listed in
/// `fp32_nodes`; every other compute node has a [`QuantLayer`]. An activation
/// tensor carries parameters iff it is produced or consumed by an integer node.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGraph {
    pub graph: Graph,
    pub config: QuantConfig,
    pub activations: BTreeMap<TensorId, QuantParams>,
    pub layers: BTreeMap<String, QuantLayer>,
    pub fp32_nodes: BTreeSet<String>,
    /// Compute nodes whose following ReLU was folded in.
    pub fused_relu: BTreeSet<String>,
}

impl QuantizedGraph {
    pub fn is_fp32(&self, node_id: &str) -> bool {
        self.fp32_nodes.contains(node_id)
    }

    pub fn params(&self, tensor: &str) -> Result<QuantParams> {
        self.activations.get(tensor).copied().ok_or_else(|| Error::MissingParams(tensor.to_string()))
    }

    pub fn layer(&self, node_id: &str) -> Result<&QuantLayer> {
        self.layers.get(node_id).ok_or_else(|| Error::MissingParams(node_id.to_string()))
    }

    /// Checks that every node has what the executors need.
    pub fn check(&self) -> Result<()> {
        for n in &self.graph.nodes {
            if n.kind().is_compute() {
                if self.is_fp32(&n.id) {
                    self.graph.weight(&n.inputs[1])?;
                    self.graph.weight(&n.inputs[2])?;
                } else {
                    let l = self.layer(&n.id)?;
                    let numel: usize = l.weight_shape.iter().product();
                    if l.weight_codes.len() != numel || l.bias.len() != l.out_channels() {
                        return Err(Error::Shape(format!("quantized layer `{}` buffers disagree with its shape", n.id)));
                    }
                }
            }
            if !self.is_fp32(&n.id) {
                for t in n.activation_inputs() {
                    self.params(t)?;
                }
                self.params(&n.output)?;
            }
        }
        Ok(())
    }
}

/// Which tensor's histogram sets the parameters of `t`.
///
/// A tensor feeding only a ReLU takes the ReLU's (nonnegative) range, and
/// ReLU/max-pool outputs reuse their input's parameters, so these operators
/// act on codes without requantization.
fn histogram_source<'g>(g: &'g Graph, t: &'g str, consumers: &[usize]) -> &'g str {
    match consumers {
        [only] if g.nodes[*only].kind() == NodeKind::Relu => &g.nodes[*only].output,
        _ => t,
    }
}

fn quantize_bias(b: &WeightTensor, in_scale: f32, layer: &QuantLayer) -> Vec<i32> {
    b.data
        .iter()
        .enumerate()
        .map(|(oc, &v)| {
            let s = in_scale as f64 * layer.channel_params(oc).scale as f64;
            (v as f64 / s).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect()
}

/// Quantizes `g` under `cfg` using activation ranges from `cache`.
pub fn quantize_model(g: &Graph, cache: &CalibrationCache, cfg: &QuantConfig, profile: TargetProfile) -> Result<QuantizedGraph> {
    profile.check(cfg)?;
    g.validate()?;
    cache.check_model(g)?;
    if cache.size_class != cfg.cache {
        return Err(Error::CacheMismatch(format!("config wants {} cache, got {}", cfg.cache, cache.size_class)));
    }

    let mut fp32_nodes = BTreeSet::new();
    if cfg.mixed == MixedPrecision::FirstLastFp32 {
        if let Some((a, b)) = g.first_last_compute() {
            fp32_nodes.insert(g.nodes[a].id.clone());
            fp32_nodes.insert(g.nodes[b].id.clone());
        }
    }
    let consumers = g.consumers();
    let is_int = |i: usize| !fp32_nodes.contains(&g.nodes[i].id);

    let mut activations: BTreeMap<TensorId, QuantParams> = BTreeMap::new();
    let producers = std::iter::once((INPUT, None)).chain(g.nodes.iter().enumerate().map(|(i, n)| (n.output.as_str(), Some(i))));
    for (t, producer) in producers {
        let cons = consumers.get(t).map(Vec::as_slice).unwrap_or(&[]);
        let needed = producer.is_some_and(is_int) || cons.iter().any(|&c| is_int(c));
        if !needed {
            continue;
        }
        let reuse = producer
            .map(|i| &g.nodes[i])
            .filter(|n| matches!(n.kind(), NodeKind::Relu | NodeKind::Maxpool))
            .and_then(|n| activations.get(&n.inputs[0]).copied());
        let p = match reuse {
            Some(p) => p,
            None => {
                let h = cache.histogram(histogram_source(g, t, cons))?;
                let (lo, hi) = clip_range(h, cfg.clipping)?;
                params_for_range(cfg.scheme, lo, hi)?
            }
        };
        activations.insert(t.to_string(), p);
    }

    let mut layers = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if !n.kind().is_compute() {
            continue;
        }
        let (wid, bid) = (&n.inputs[1], &n.inputs[2]);
        let (w, b) = (g.weight(wid)?, g.weight(bid)?);
        if !is_int(i) {
            weights.insert(wid.clone(), w.clone());
            weights.insert(bid.clone(), b.clone());
            continue;
        }
        let qw = quantize_weights(w, cfg.scheme, cfg.granularity)?;
        let mut layer =
            QuantLayer { weight_shape: w.shape.clone(), weight_codes: qw.codes, weight_params: qw.params, bias: Vec::new() };
        let in_scale = activations[&n.inputs[0]].scale;
        layer.bias = quantize_bias(b, in_scale, &layer);
        layers.insert(n.id.clone(), layer);
    }

    let qg = QuantizedGraph {
        graph: Graph { weights, ..g.clone() },
        config: *cfg,
        activations,
        layers,
        fp32_nodes,
        fused_relu: BTreeSet::new(),
    };
    Ok(if cfg.fusion { fuse_conv_relu(&qg) } else { qg })
}

/// Folds each ReLU into the convolution feeding it when the ReLU is that
/// convolution's only consumer. Logits are unchanged.
pub fn fuse_conv_relu(qg: &QuantizedGraph) -> QuantizedGraph {
    let g = &qg.graph;
    let consumers = g.consumers();
    let mut out = qg.clone();
    let mut removed = BTreeSet::new();
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        if removed.contains(&n.id) {
            continue;
        }
        let mut n = n.clone();
        if n.kind().is_conv() {
            if let Some([only]) = consumers.get(n.output.as_str()).map(Vec::as_slice) {
                let relu = &g.nodes[*only];
                if relu.kind() == NodeKind::Relu {
                    out.activations.remove(&n.output);
                    n.output = relu.output.clone();
                    out.fused_relu.insert(n.id.clone());
                    removed.insert(relu.id.clone());
                }
            }
        }
        nodes.push(n);
    }
    out.graph.nodes = nodes;
    out
}

/// Bytes needed to store the weights: int8 codes, int32 biases and 8 bytes
/// (scale and zero point) per parameter set for quantized nodes; 4 bytes per
/// value for fp32 nodes.
pub fn model_size(qg: &QuantizedGraph) -> usize {
    let quantized: usize = qg.layers.values().map(|l| l.weight_codes.len() + 4 * l.bias.len() + 8 * l.weight_params.len()).sum();
    let fp32: usize = qg.graph.weights.values().map(|w| 4 * w.data.len()).sum();
    quantized + fp32
}
