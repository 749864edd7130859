//! `.qtm` model container.
//!
//! Magic `QTM1`; the JSON header is [`ModelHeader`]. Each entry of `tensors`
//! points at one little-endian fp32 buffer in the payload. Tensors are written
//! in lexicographic id order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, Node, WeightTensor};
use crate::container::{self, BufferRef, PayloadWriter};
use crate::error::{Error, Result};
use crate::tensor::Shape3;

pub const MODEL_MAGIC: &[u8; 4] = b"QTM1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    id: String,
    shape: Vec<usize>,
    buffer: BufferRef,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    name: String,
    input_shape: Shape3,
    output_classes: usize,
    nodes: Vec<Node>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_model(g: &Graph) -> Result<Vec<u8>> {
    let mut payload = PayloadWriter::new();
    let tensors = g
        .weights
        .iter()
        .map(|(id, w)| TensorEntry { id: id.clone(), shape: w.shape.clone(), buffer: payload.f32s(&w.data) })
        .collect();
    let header = ModelHeader {
        version: FORMAT_VERSION,
        name: g.name.clone(),
        input_shape: g.input_shape,
        output_classes: g.output_classes,
        nodes: g.nodes.clone(),
        tensors,
    };
    container::encode(MODEL_MAGIC, &header, &payload.into_bytes())
}

pub fn decode_model(bytes: &[u8]) -> Result<Graph> {
    let (h, payload): (ModelHeader, _) = container::decode(MODEL_MAGIC, bytes)?;
    if h.version != FORMAT_VERSION {
        return Err(Error::Malformed(format!("unsupported model version {}", h.version)));
    }
    let mut weights = std::collections::BTreeMap::new();
    for t in h.tensors {
        let data = payload.f32s(&t.buffer)?;
        if weights.insert(t.id.clone(), WeightTensor::new(t.shape, data)).is_some() {
            return Err(Error::Malformed(format!("tensor `{}` listed twice", t.id)));
        }
    }
    let g = Graph { name: h.name, input_shape: h.input_shape, output_classes: h.output_classes, nodes: h.nodes, weights };
    g.validate()?;
    Ok(g)
}

pub fn save_model(g: &Graph, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(g)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Graph> {
    decode_model(&std::fs::read(path)?)
}
