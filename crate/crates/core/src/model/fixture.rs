//! Deterministic fixture models built from block recipes.
//!
//! A recipe is a `+`-separated list of blocks, each optionally prefixed by a
//! repeat count (`3xconv` or `3×conv`) and suffixed by a channel width
//! (`conv16`, default 8):
//!
//! | block     | nodes                                                   |
//! |-----------|---------------------------------------------------------|
//! | `conv`    | conv3x3 → relu                                          |
//! | `dw`      | depthwise3x3 → relu → pointwise → relu                  |
//! | `res`     | conv3x3 → relu → conv3x3 → add(skip) → relu             |
//! | `cat`     | (pointwise → relu) ‖ (conv3x3 → relu) → concat          |
//! | `pool`    | maxpool 2x2 stride 2                                    |
//! | `gap`     | global average pool                                     |
//! | `fc`      | fully-connected to the class count (must come last)     |
//! | `softmax` | softmax (only after `fc`)                               |
//!
//! Weights are He-normal, `N(0, 2 / fan_in)`, biases `N(0, 0.05²)`, drawn from
//! a ChaCha8 stream seeded by the caller in node order.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, ModelFeatures, Node, NodeKind, Op, WeightTensor, INPUT};
use crate::error::{Error, Result};
use crate::tensor::Shape3;

const DEFAULT_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Conv(usize),
    Depthwise(usize),
    Residual,
    Concat(usize),
    Pool,
    GlobalPool,
    Fc,
    Softmax,
}

impl Block {
    fn nodes(self) -> &'static [NodeKind] {
        use NodeKind::*;
        match self {
            Block::Conv(_) => &[Conv2d, Relu],
            Block::Depthwise(_) => &[DepthwiseConv2d, Relu, PointwiseConv2d, Relu],
            Block::Residual => &[Conv2d, Relu, Conv2d, Add, Relu],
            Block::Concat(_) => &[PointwiseConv2d, Relu, Conv2d, Relu, Concat],
            Block::Pool => &[Maxpool],
            Block::GlobalPool => &[Avgpool],
            Block::Fc => &[FullyConnected],
            Block::Softmax => &[Softmax],
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Conv(w) => write!(f, "conv{w}"),
            Block::Depthwise(w) => write!(f, "dw{w}"),
            Block::Residual => f.write_str("res"),
            Block::Concat(w) => write!(f, "cat{w}"),
            Block::Pool => f.write_str("pool"),
            Block::GlobalPool => f.write_str("gap"),
            Block::Fc => f.write_str("fc"),
            Block::Softmax => f.write_str("softmax"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub blocks: Vec<Block>,
    pub input_shape: Shape3,
    pub classes: usize,
}

impl Recipe {
    pub fn parse(text: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        for raw in text.split('+') {
            let tok = raw.trim();
            if tok.is_empty() {
                return Err(Error::Recipe(format!("empty block in `{text}`")));
            }
            let (count, body) = match tok.split_once(['x', '×']) {
                Some((n, rest)) if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) => {
                    (n.parse::<usize>().map_err(|e| Error::Recipe(e.to_string()))?, rest)
                }
                _ => (1, tok),
            };
            if count == 0 {
                return Err(Error::Recipe(format!("zero repeat in `{tok}`")));
            }
            let split = body.find(|c: char| c.is_ascii_digit()).unwrap_or(body.len());
            let (name, width) = body.split_at(split);
            let width = if width.is_empty() {
                None
            } else {
                Some(width.parse::<usize>().map_err(|e| Error::Recipe(format!("`{tok}`: {e}")))?)
            };
            let w = width.unwrap_or(DEFAULT_WIDTH);
            if w == 0 {
                return Err(Error::Recipe(format!("zero width in `{tok}`")));
            }
            let block = match (name, width) {
                ("conv", _) => Block::Conv(w),
                ("dw", _) => Block::Depthwise(w),
                ("cat", _) if w >= 2 => Block::Concat(w),
                ("res", None) => Block::Residual,
                ("pool", None) => Block::Pool,
                ("gap", None) => Block::GlobalPool,
                ("fc", None) => Block::Fc,
                ("softmax", None) => Block::Softmax,
                _ => return Err(Error::Recipe(format!("unknown block `{tok}`"))),
            };
            blocks.extend(std::iter::repeat_n(block, count));
        }
        let fc = blocks.iter().position(|b| *b == Block::Fc);
        match fc {
            None => return Err(Error::Recipe(format!("`{text}` has no fc classifier"))),
            Some(i) => {
                let tail = &blocks[i + 1..];
                if !(tail.is_empty() || tail == [Block::Softmax]) {
                    return Err(Error::Recipe(format!("`{text}`: only softmax may follow fc")));
                }
            }
        }
        if blocks.iter().filter(|b| **b == Block::Softmax).count() > 1 {
            return Err(Error::Recipe(format!("`{text}`: more than one softmax")));
        }
        Ok(Self { blocks, input_shape: Shape3::new(1, 32, 32), classes: 8 })
    }

    pub fn with_input(mut self, shape: Shape3) -> Self {
        self.input_shape = shape;
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    /// Feature counts implied by the blocks alone, without building a graph.
    pub fn declared_features(&self) -> ModelFeatures {
        let mut f = ModelFeatures::default();
        for b in &self.blocks {
            for k in b.nodes() {
                f.count(*k);
            }
        }
        f
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

struct Builder {
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    weights: BTreeMap<String, WeightTensor>,
    shape: Shape3,
    cur: String,
}

impl Builder {
    fn next_ids(&self, tag: &str) -> (String, String) {
        let i = self.nodes.len();
        (format!("n{i}_{tag}"), format!("t{i}"))
    }

    fn normal(&mut self, n: usize, std: f32) -> Vec<f32> {
        let dist = Normal::new(0.0f32, std).expect("positive std");
        (0..n).map(|_| dist.sample(&mut self.rng)).collect()
    }

    fn compute(&mut self, tag: &str, op: Op, input: &str, wshape: Vec<usize>, fan_in: usize, gain: f32) -> String {
        let (id, out) = self.next_ids(tag);
        let o = wshape[0];
        let n = wshape.iter().product();
        let w = self.normal(n, (gain / fan_in as f32).sqrt());
        let b = self.normal(o, 0.05);
        let (wid, bid) = (format!("{id}.w"), format!("{id}.b"));
        self.weights.insert(wid.clone(), WeightTensor::new(wshape, w));
        self.weights.insert(bid.clone(), WeightTensor::new(vec![o], b));
        self.nodes.push(Node { id, op, inputs: vec![input.to_string(), wid, bid], output: out.clone() });
        out
    }

    fn simple(&mut self, tag: &str, op: Op, inputs: &[&str]) -> String {
        let (id, out) = self.next_ids(tag);
        self.nodes.push(Node { id, op, inputs: inputs.iter().map(|s| s.to_string()).collect(), output: out.clone() });
        out
    }

    fn conv3(&mut self, input: &str, cin: usize, cout: usize) -> String {
        self.compute("conv", Op::Conv2d { stride: 1, padding: 1 }, input, vec![cout, cin, 3, 3], cin * 9, 2.0)
    }

    fn block(&mut self, block: Block, classes: usize) -> Result<()> {
        let x = self.cur.clone();
        let c = self.shape.c;
        match block {
            Block::Conv(w) => {
                let t = self.conv3(&x, c, w);
                self.cur = self.simple("relu", Op::Relu, &[&t]);
                self.shape.c = w;
            }
            Block::Depthwise(w) => {
                let t = self.compute("dw", Op::DepthwiseConv2d { stride: 1, padding: 1 }, &x, vec![c, 1, 3, 3], 9, 2.0);
                let t = self.simple("relu", Op::Relu, &[&t]);
                let t = self.compute("pw", Op::PointwiseConv2d, &t, vec![w, c, 1, 1], c, 2.0);
                self.cur = self.simple("relu", Op::Relu, &[&t]);
                self.shape.c = w;
            }
            Block::Residual => {
                let t = self.conv3(&x, c, c);
                let t = self.simple("relu", Op::Relu, &[&t]);
                // Second conv at half gain keeps the skip sum in range.
                let t = self.compute("conv", Op::Conv2d { stride: 1, padding: 1 }, &t, vec![c, c, 3, 3], c * 9, 1.0);
                let t = self.simple("add", Op::Add, &[&t, &x]);
                self.cur = self.simple("relu", Op::Relu, &[&t]);
            }
            Block::Concat(w) => {
                let a = w / 2;
                let t = self.compute("pw", Op::PointwiseConv2d, &x, vec![a, c, 1, 1], c, 2.0);
                let ta = self.simple("relu", Op::Relu, &[&t]);
                let t = self.conv3(&x, c, w - a);
                let tb = self.simple("relu", Op::Relu, &[&t]);
                self.cur = self.simple("cat", Op::Concat, &[&ta, &tb]);
                self.shape.c = w;
            }
            Block::Pool => {
                if self.shape.h < 2 || self.shape.w < 2 {
                    return Err(Error::Recipe(format!("pool on {} plane", self.shape)));
                }
                self.cur = self.simple("maxpool", Op::Maxpool { kernel: 2, stride: 2 }, &[&x]);
                self.shape.h /= 2;
                self.shape.w /= 2;
            }
            Block::GlobalPool => {
                self.cur = self.simple("gap", Op::Avgpool { kernel: 0, stride: 1 }, &[&x]);
                self.shape.h = 1;
                self.shape.w = 1;
            }
            Block::Fc => {
                let n = self.shape.numel();
                self.cur = self.compute("fc", Op::FullyConnected, &x, vec![classes, n], n, 1.0);
                self.shape = Shape3::new(classes, 1, 1);
            }
            Block::Softmax => {
                self.cur = self.simple("softmax", Op::Softmax, &[&x]);
            }
        }
        Ok(())
    }
}

/// Builds the recipe's graph with weights drawn from `seed`.
pub fn generate_fixture(recipe: &Recipe, seed: u64) -> Result<Graph> {
    if recipe.classes == 0 {
        return Err(Error::Recipe("zero classes".into()));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
        weights: BTreeMap::new(),
        shape: recipe.input_shape,
        cur: INPUT.to_string(),
    };
    for block in &recipe.blocks {
        b.block(*block, recipe.classes)?;
    }
    let g = Graph {
        name: recipe.to_string(),
        input_shape: recipe.input_shape,
        output_classes: recipe.classes,
        nodes: b.nodes,
        weights: b.weights,
    };
    g.validate().map_err(|e| Error::Recipe(format!("recipe `{recipe}` builds an invalid graph: {e}")))?;
    Ok(g)
}
