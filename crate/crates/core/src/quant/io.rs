//! `.qtm8` quantized-model container.
//!
//! Magic `QTM8`. The header carries the topology, the configuration and the
//! activation parameters; the payload holds int8 weight codes, per-axis
//! weight scales (fp32) and zero points (int32), int32 biases and the fp32
//! tensors of nodes left in full precision.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{QuantConfig, QuantLayer, QuantParams, QuantizedGraph};
use crate::container::{self, BufferRef, PayloadWriter};
use crate::error::{Error, Result};
use crate::model::{Graph, Node, WeightTensor};
use crate::tensor::Shape3;

pub const QUANT_MAGIC: &[u8; 4] = b"QTM8";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    node: String,
    weight_shape: Vec<usize>,
    codes: BufferRef,
    scales: BufferRef,
    zero_points: BufferRef,
    bias: BufferRef,
}

#[derive(Serialize, Deserialize)]
struct Fp32Entry {
    id: String,
    shape: Vec<usize>,
    buffer: BufferRef,
}

#[derive(Serialize, Deserialize)]
struct QuantHeader {
    version: u32,
    name: String,
    input_shape: Shape3,
    output_classes: usize,
    config: QuantConfig,
    nodes: Vec<Node>,
    activations: BTreeMap<String, QuantParams>,
    layers: Vec<LayerEntry>,
    fp32_tensors: Vec<Fp32Entry>,
    fp32_nodes: BTreeSet<String>,
    fused_relu: BTreeSet<String>,
}

pub fn encode_quantized(qg: &QuantizedGraph) -> Result<Vec<u8>> {
    let mut payload = PayloadWriter::new();
    let layers = qg
        .layers
        .iter()
        .map(|(node, l)| {
            let scales: Vec<f32> = l.weight_params.iter().map(|p| p.scale).collect();
            let zps: Vec<i32> = l.weight_params.iter().map(|p| p.zero_point).collect();
            LayerEntry {
                node: node.clone(),
                weight_shape: l.weight_shape.clone(),
                codes: payload.i8s(&l.weight_codes),
                scales: payload.f32s(&scales),
                zero_points: payload.i32s(&zps),
                bias: payload.i32s(&l.bias),
            }
        })
        .collect();
    let fp32_tensors = qg
        .graph
        .weights
        .iter()
        .map(|(id, w)| Fp32Entry { id: id.clone(), shape: w.shape.clone(), buffer: payload.f32s(&w.data) })
        .collect();
    let header = QuantHeader {
        version: FORMAT_VERSION,
        name: qg.graph.name.clone(),
        input_shape: qg.graph.input_shape,
        output_classes: qg.graph.output_classes,
        config: qg.config,
        nodes: qg.graph.nodes.clone(),
        activations: qg.activations.clone(),
        layers,
        fp32_tensors,
        fp32_nodes: qg.fp32_nodes.clone(),
        fused_relu: qg.fused_relu.clone(),
    };
    container::encode(QUANT_MAGIC, &header, &payload.into_bytes())
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedGraph> {
    let (h, payload): (QuantHeader, _) = container::decode(QUANT_MAGIC, bytes)?;
    if h.version != FORMAT_VERSION {
        return Err(Error::Malformed(format!("unsupported quantized model version {}", h.version)));
    }
    let mut layers = BTreeMap::new();
    for e in h.layers {
        let scales = payload.f32s(&e.scales)?;
        let zps = payload.i32s(&e.zero_points)?;
        if scales.len() != zps.len() || scales.is_empty() {
            return Err(Error::Malformed(format!("parameter tables of `{}` disagree", e.node)));
        }
        let layer = QuantLayer {
            weight_shape: e.weight_shape,
            weight_codes: payload.i8s(&e.codes)?,
            weight_params: scales.into_iter().zip(zps).map(|(scale, zero_point)| QuantParams { scale, zero_point }).collect(),
            bias: payload.i32s(&e.bias)?,
        };
        layers.insert(e.node, layer);
    }
    let mut weights = BTreeMap::new();
    for t in h.fp32_tensors {
        let w = WeightTensor::new(t.shape, payload.f32s(&t.buffer)?);
        if w.numel() != w.data.len() {
            return Err(Error::Malformed(format!("tensor `{}` size disagrees with its shape", t.id)));
        }
        weights.insert(t.id, w);
    }
    let qg = QuantizedGraph {
        graph: Graph { name: h.name, input_shape: h.input_shape, output_classes: h.output_classes, nodes: h.nodes, weights },
        config: h.config,
        activations: h.activations,
        layers,
        fp32_nodes: h.fp32_nodes,
        fused_relu: h.fused_relu,
    };
    qg.check().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(qg)
}

pub fn save_quantized(qg: &QuantizedGraph, path: &Path) -> Result<()> {
    std::fs::write(path, encode_quantized(qg)?)?;
    Ok(())
}

pub fn load_quantized(path: &Path) -> Result<QuantizedGraph> {
    decode_quantized(&std::fs::read(path)?)
}
