//! CNN graph IR.
//!
//! A [`Graph`] is an ordered list of [`Node`]s. Every node reads activation
//! tensors produced earlier (or the graph input, [`INPUT`]) and, for compute
//! nodes, a weight and a bias tensor from the graph's weight table. The last
//! node's output is the graph output.

mod features;
mod fixture;
mod io;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape3;

pub use features::{extract_features, ModelFeatures};
pub use fixture::{generate_fixture, Block, Recipe};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};

/// Tensor id of the graph input.
pub const INPUT: &str = "input";

pub type TensorId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Conv2d,
    DepthwiseConv2d,
    PointwiseConv2d,
    FullyConnected,
    Relu,
    Maxpool,
    Avgpool,
    Add,
    Concat,
    Softmax,
}

impl NodeKind {
    pub const ALL: [NodeKind; 10] = [
        NodeKind::Conv2d,
        NodeKind::DepthwiseConv2d,
        NodeKind::PointwiseConv2d,
        NodeKind::FullyConnected,
        NodeKind::Relu,
        NodeKind::Maxpool,
        NodeKind::Avgpool,
        NodeKind::Add,
        NodeKind::Concat,
        NodeKind::Softmax,
    ];

    /// Nodes that own a weight and a bias tensor.
    pub fn is_compute(self) -> bool {
        matches!(
            self,
            NodeKind::Conv2d | NodeKind::DepthwiseConv2d | NodeKind::PointwiseConv2d | NodeKind::FullyConnected
        )
    }

    pub fn is_conv(self) -> bool {
        self.is_compute() && self != NodeKind::FullyConnected
    }
}

/// Operator plus its kind-specific attributes.
///
/// Pool kernels of `0` mean "global" (the window covers the whole plane).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Conv2d { stride: usize, padding: usize },
    DepthwiseConv2d { stride: usize, padding: usize },
    PointwiseConv2d,
    FullyConnected,
    Relu,
    Maxpool { kernel: usize, stride: usize },
    Avgpool { kernel: usize, stride: usize },
    Add,
    Concat,
    Softmax,
}

impl Op {
    pub fn kind(&self) -> NodeKind {
        match self {
            Op::Conv2d { .. } => NodeKind::Conv2d,
            Op::DepthwiseConv2d { .. } => NodeKind::DepthwiseConv2d,
            Op::PointwiseConv2d => NodeKind::PointwiseConv2d,
            Op::FullyConnected => NodeKind::FullyConnected,
            Op::Relu => NodeKind::Relu,
            Op::Maxpool { .. } => NodeKind::Maxpool,
            Op::Avgpool { .. } => NodeKind::Avgpool,
            Op::Add => NodeKind::Add,
            Op::Concat => NodeKind::Concat,
            Op::Softmax => NodeKind::Softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(flatten)]
    pub op: Op,
    /// Activation inputs first; compute nodes then list `[weight, bias]`.
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        self.op.kind()
    }

    /// Inputs that are activations (not weights).
    pub fn activation_inputs(&self) -> &[TensorId] {
        if self.kind().is_compute() {
            &self.inputs[..1]
        } else {
            &self.inputs
        }
    }

    pub fn weight_id(&self) -> Option<&str> {
        self.kind().is_compute().then(|| self.inputs[1].as_str())
    }

    pub fn bias_id(&self) -> Option<&str> {
        self.kind().is_compute().then(|| self.inputs[2].as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub name: String,
    pub input_shape: Shape3,
    pub output_classes: usize,
    pub nodes: Vec<Node>,
    pub weights: BTreeMap<TensorId, WeightTensor>,
}

impl Graph {
    pub fn output(&self) -> &str {
        &self.nodes.last().expect("validated graph has nodes").output
    }

    pub fn weight(&self, id: &str) -> Result<&WeightTensor> {
        self.weights
            .get(id)
            .ok_or_else(|| Error::InvalidGraph(format!("unknown weight tensor `{id}`")))
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Activation tensor ids in execution order: the input, then one per node.
    pub fn activation_ids(&self) -> Vec<&str> {
        std::iter::once(INPUT).chain(self.nodes.iter().map(|n| n.output.as_str())).collect()
    }

    /// Indices of nodes consuming each activation tensor.
    pub fn consumers(&self) -> HashMap<&str, Vec<usize>> {
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for t in n.activation_inputs() {
                map.entry(t.as_str()).or_default().push(i);
            }
        }
        map
    }

    /// First and last compute nodes in topological order.
    pub fn first_last_compute(&self) -> Option<(usize, usize)> {
        let mut it = self.nodes.iter().enumerate().filter(|(_, n)| n.kind().is_compute()).map(|(i, _)| i);
        let first = it.next()?;
        Some((first, it.next_back().unwrap_or(first)))
    }

    /// Checks structural invariants and returns the shape of every activation.
    pub fn validate(&self) -> Result<BTreeMap<TensorId, Shape3>> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if self.input_shape.numel() == 0 {
            return Err(Error::Shape(format!("empty input shape {}", self.input_shape)));
        }
        for (id, w) in &self.weights {
            if w.numel() != w.data.len() {
                return Err(Error::Shape(format!(
                    "weight `{id}` has {} values for shape {:?}",
                    w.data.len(),
                    w.shape
                )));
            }
        }

        let mut shapes = BTreeMap::new();
        shapes.insert(INPUT.to_string(), self.input_shape);
        let mut node_ids = HashSet::new();
        let mut used_weights = HashSet::new();

        for node in &self.nodes {
            if !node_ids.insert(node.id.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate node id `{}`", node.id)));
            }
            if shapes.contains_key(&node.output) || self.weights.contains_key(&node.output) {
                return Err(Error::InvalidGraph(format!("tensor `{}` defined twice", node.output)));
            }
            let kind = node.kind();
            let arity_ok = match kind {
                NodeKind::Conv2d | NodeKind::DepthwiseConv2d | NodeKind::PointwiseConv2d | NodeKind::FullyConnected => {
                    node.inputs.len() == 3
                }
                NodeKind::Add => node.inputs.len() == 2,
                NodeKind::Concat => node.inputs.len() >= 2,
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(Error::InvalidGraph(format!(
                    "node `{}` ({kind:?}) has {} inputs",
                    node.id,
                    node.inputs.len()
                )));
            }
            let mut ins = Vec::new();
            for t in node.activation_inputs() {
                let s = shapes.get(t).ok_or_else(|| {
                    Error::InvalidGraph(format!("node `{}` reads undefined tensor `{t}`", node.id))
                })?;
                ins.push(*s);
            }
            let params = if kind.is_compute() {
                let w = self.weights.get(&node.inputs[1]).ok_or_else(|| {
                    Error::InvalidGraph(format!("node `{}` references missing weight `{}`", node.id, node.inputs[1]))
                })?;
                let b = self.weights.get(&node.inputs[2]).ok_or_else(|| {
                    Error::InvalidGraph(format!("node `{}` references missing bias `{}`", node.id, node.inputs[2]))
                })?;
                used_weights.insert(node.inputs[1].as_str());
                used_weights.insert(node.inputs[2].as_str());
                Some((w, b))
            } else {
                None
            };
            let out = infer_shape(node, &ins, params)?;
            shapes.insert(node.output.clone(), out);
        }

        for id in self.weights.keys() {
            if shapes.contains_key(id) {
                return Err(Error::InvalidGraph(format!("weight `{id}` shadows an activation")));
            }
        }
        if used_weights.len() != self.weights.len() {
            return Err(Error::InvalidGraph("graph contains unreferenced weight tensors".into()));
        }

        // Exactly one output: every tensor except the last node's is consumed.
        let consumers = self.consumers();
        let out = self.output();
        for id in std::iter::once(INPUT).chain(self.nodes.iter().map(|n| n.output.as_str())) {
            let used = consumers.contains_key(id);
            if id == out && used {
                return Err(Error::InvalidGraph(format!("graph output `{id}` is consumed internally")));
            }
            if id != out && !used {
                return Err(Error::InvalidGraph(format!("tensor `{id}` is a dangling output")));
            }
        }
        let out_shape = shapes[out];
        if out_shape.numel() != self.output_classes {
            return Err(Error::Shape(format!(
                "graph output {out_shape} does not hold {} classes",
                self.output_classes
            )));
        }
        Ok(shapes)
    }
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize, node: &str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidGraph(format!("node `{node}` has stride 0")));
    }
    if len + 2 * pad < k || k == 0 {
        return Err(Error::Shape(format!("node `{node}`: kernel {k} does not fit extent {len} (pad {pad})")));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

fn infer_shape(node: &Node, ins: &[Shape3], params: Option<(&WeightTensor, &WeightTensor)>) -> Result<Shape3> {
    let id = node.id.as_str();
    let x = ins[0];
    let bad_weight = |what: &str| Error::Shape(format!("node `{id}`: {what}"));
    match node.op {
        Op::Conv2d { stride, padding } => {
            let (w, b) = params.expect("compute node");
            let [o, i, kh, kw] = w.shape[..] else { return Err(bad_weight("conv weight must be 4-d")) };
            if i != x.c || kh != kw {
                return Err(bad_weight(&format!("conv weight {:?} vs input {x}", w.shape)));
            }
            check_bias(b, o, id)?;
            Ok(Shape3::new(o, conv_out(x.h, kh, stride, padding, id)?, conv_out(x.w, kw, stride, padding, id)?))
        }
        Op::DepthwiseConv2d { stride, padding } => {
            let (w, b) = params.expect("compute node");
            let [c, one, kh, kw] = w.shape[..] else { return Err(bad_weight("depthwise weight must be 4-d")) };
            if c != x.c || one != 1 || kh != kw {
                return Err(bad_weight(&format!("depthwise weight {:?} vs input {x}", w.shape)));
            }
            check_bias(b, c, id)?;
            Ok(Shape3::new(c, conv_out(x.h, kh, stride, padding, id)?, conv_out(x.w, kw, stride, padding, id)?))
        }
        Op::PointwiseConv2d => {
            let (w, b) = params.expect("compute node");
            let [o, i, 1, 1] = w.shape[..] else { return Err(bad_weight("pointwise weight must be [O, I, 1, 1]")) };
            if i != x.c {
                return Err(bad_weight(&format!("pointwise weight {:?} vs input {x}", w.shape)));
            }
            check_bias(b, o, id)?;
            Ok(Shape3::new(o, x.h, x.w))
        }
        Op::FullyConnected => {
            let (w, b) = params.expect("compute node");
            let [o, i] = w.shape[..] else { return Err(bad_weight("fully-connected weight must be 2-d")) };
            if i != x.numel() {
                return Err(bad_weight(&format!("fc weight {:?} vs flattened input {}", w.shape, x.numel())));
            }
            check_bias(b, o, id)?;
            Ok(Shape3::new(o, 1, 1))
        }
        Op::Relu | Op::Softmax => Ok(x),
        Op::Maxpool { kernel, stride } | Op::Avgpool { kernel, stride } => {
            if kernel == 0 {
                return Ok(Shape3::new(x.c, 1, 1));
            }
            Ok(Shape3::new(x.c, conv_out(x.h, kernel, stride, 0, id)?, conv_out(x.w, kernel, stride, 0, id)?))
        }
        Op::Add => {
            if ins[1] != x {
                return Err(Error::Shape(format!("add `{id}`: {x} vs {}", ins[1])));
            }
            Ok(x)
        }
        Op::Concat => {
            let mut c = 0;
            for s in ins {
                if s.h != x.h || s.w != x.w {
                    return Err(Error::Shape(format!("concat `{id}`: {x} vs {s}")));
                }
                c += s.c;
            }
            Ok(Shape3::new(c, x.h, x.w))
        }
    }
}

fn check_bias(b: &WeightTensor, o: usize, id: &str) -> Result<()> {
    if b.shape != [o] {
        return Err(Error::Shape(format!("node `{id}`: bias {:?}, expected [{o}]", b.shape)));
    }
    Ok(())
}
