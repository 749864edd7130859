use serde::{Deserialize, Serialize};

use super::{Graph, NodeKind};

/// Architecture summary used as the model half of a cost-model row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelFeatures {
    pub n_nodes: usize,
    /// Compute layers: convolutions of every flavour plus fully-connected.
    pub n_layers: usize,
    pub n_conv: usize,
    pub n_depthwise: usize,
    pub n_pointwise: usize,
    pub n_fc: usize,
    pub n_skip: usize,
    pub n_concat: usize,
    pub n_maxpool: usize,
    pub n_avgpool: usize,
    pub n_relu: usize,
    pub n_softmax: usize,
}

impl ModelFeatures {
    pub const NAMES: [&'static str; 12] = [
        "n_nodes",
        "n_layers",
        "n_conv",
        "n_depthwise",
        "n_pointwise",
        "n_fc",
        "n_skip",
        "n_concat",
        "n_maxpool",
        "n_avgpool",
        "n_relu",
        "n_softmax",
    ];

    pub fn count(&mut self, kind: NodeKind) {
        self.n_nodes += 1;
        if kind.is_compute() {
            self.n_layers += 1;
        }
        let slot = match kind {
            NodeKind::Conv2d => &mut self.n_conv,
            NodeKind::DepthwiseConv2d => &mut self.n_depthwise,
            NodeKind::PointwiseConv2d => &mut self.n_pointwise,
            NodeKind::FullyConnected => &mut self.n_fc,
            NodeKind::Add => &mut self.n_skip,
            NodeKind::Concat => &mut self.n_concat,
            NodeKind::Maxpool => &mut self.n_maxpool,
            NodeKind::Avgpool => &mut self.n_avgpool,
            NodeKind::Relu => &mut self.n_relu,
            NodeKind::Softmax => &mut self.n_softmax,
        };
        *slot += 1;
    }

    /// Counters of the ten-way node-kind partition; they sum to `n_nodes`.
    pub fn kind_counts(&self) -> [usize; 10] {
        [
            self.n_conv,
            self.n_depthwise,
            self.n_pointwise,
            self.n_fc,
            self.n_relu,
            self.n_maxpool,
            self.n_avgpool,
            self.n_skip,
            self.n_concat,
            self.n_softmax,
        ]
    }

    pub fn activation_kinds(&self) -> [(&'static str, usize); 2] {
        [("relu", self.n_relu), ("softmax", self.n_softmax)]
    }

    pub fn as_vector(&self) -> [f64; 12] {
        [
            self.n_nodes,
            self.n_layers,
            self.n_conv,
            self.n_depthwise,
            self.n_pointwise,
            self.n_fc,
            self.n_skip,
            self.n_concat,
            self.n_maxpool,
            self.n_avgpool,
            self.n_relu,
            self.n_softmax,
        ]
        .map(|v| v as f64)
    }
}

pub fn extract_features(g: &Graph) -> ModelFeatures {
    let mut f = ModelFeatures::default();
    for n in &g.nodes {
        f.count(n.kind());
    }
    f
}
