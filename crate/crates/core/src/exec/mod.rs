//! Reference fp32 interpreter: baseline accuracy and calibration runs.

pub mod kernels;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Graph, Node, Op, INPUT};
use crate::tensor::{argmax, Tensor};

/// Receives every activation produced while running a graph.
///
/// For each image the graph input arrives first (id [`INPUT`]), followed by
/// each node output in node order.
pub trait ActivationObserver {
    fn observe(&mut self, tensor_id: &str, value: &Tensor);
}

impl<F: FnMut(&str, &Tensor)> ActivationObserver for F {
    fn observe(&mut self, tensor_id: &str, value: &Tensor) {
        self(tensor_id, value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyResult {
    pub top1: f64,
    pub correct: usize,
    pub n_evaluated: usize,
}

impl AccuracyResult {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(Self { top1: correct as f64 / labels.len() as f64, correct, n_evaluated: labels.len() })
    }
}

/// Activation-input slot indices for each node; slot 0 is the graph input.
pub(crate) fn input_slots(g: &Graph) -> Vec<Vec<usize>> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    slot.insert(INPUT, 0);
    let mut plan = Vec::with_capacity(g.nodes.len());
    for (i, n) in g.nodes.iter().enumerate() {
        plan.push(n.activation_inputs().iter().map(|t| slot[t.as_str()]).collect());
        slot.insert(n.output.as_str(), i + 1);
    }
    plan
}

pub(crate) fn run_node_fp32(g: &Graph, node: &Node, ins: &[&Tensor]) -> Tensor {
    let x = ins[0];
    let params = || {
        let w = &g.weights[&node.inputs[1]];
        let b = &g.weights[&node.inputs[2]];
        (w, b)
    };
    match node.op {
        Op::Conv2d { stride, padding } => {
            let (w, b) = params();
            kernels::conv2d(x, &w.data, &w.shape, &b.data, stride, padding)
        }
        Op::DepthwiseConv2d { stride, padding } => {
            let (w, b) = params();
            kernels::depthwise(x, &w.data, &w.shape, &b.data, stride, padding)
        }
        Op::PointwiseConv2d => {
            let (w, b) = params();
            kernels::pointwise(x, &w.data, &w.shape, &b.data)
        }
        Op::FullyConnected => {
            let (w, b) = params();
            kernels::fully_connected(x, &w.data, &w.shape, &b.data)
        }
        Op::Relu => kernels::relu(x),
        Op::Maxpool { kernel, stride } => kernels::maxpool(x, kernel, stride),
        Op::Avgpool { kernel, stride } => kernels::avgpool(x, kernel, stride),
        Op::Add => kernels::add(x, ins[1]),
        Op::Concat => kernels::concat(ins),
        Op::Softmax => kernels::softmax(x),
    }
}

/// A validated graph ready for repeated fp32 inference.
#[derive(Debug)]
pub struct Fp32Executor<'g> {
    graph: &'g Graph,
    plan: Vec<Vec<usize>>,
}

impl<'g> Fp32Executor<'g> {
    pub fn new(graph: &'g Graph) -> Result<Self> {
        graph.validate()?;
        Ok(Self { graph, plan: input_slots(graph) })
    }

    fn check(&self, image: &Tensor) -> Result<()> {
        if image.shape != self.graph.input_shape {
            return Err(Error::Shape(format!("input {} vs model input {}", image.shape, self.graph.input_shape)));
        }
        Ok(())
    }

    pub fn run_observed(&self, image: &Tensor, observer: &mut dyn ActivationObserver) -> Result<Vec<f32>> {
        self.check(image)?;
        observer.observe(INPUT, image);
        let mut values: Vec<Option<Tensor>> = vec![None; self.graph.nodes.len() + 1];
        values[0] = Some(image.clone());
        for (i, node) in self.graph.nodes.iter().enumerate() {
            let out = {
                let ins: Vec<&Tensor> = self.plan[i].iter().map(|&s| values[s].as_ref().expect("produced")).collect();
                run_node_fp32(self.graph, node, &ins)
            };
            observer.observe(&node.output, &out);
            values[i + 1] = Some(out);
        }
        Ok(values.pop().flatten().expect("graph output").data)
    }

    /// Logits for one image.
    pub fn run(&self, image: &Tensor) -> Result<Vec<f32>> {
        self.run_observed(image, &mut |_: &str, _: &Tensor| {})
    }
}

/// Logits for a batch of images; images are evaluated in parallel.
pub fn run_fp32(g: &Graph, batch: &[Tensor]) -> Result<Vec<Vec<f32>>> {
    let ex = Fp32Executor::new(g)?;
    batch.par_iter().map(|x| ex.run(x)).collect()
}

pub fn evaluate_top1(g: &Graph, d: &Dataset) -> Result<AccuracyResult> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let logits = run_fp32(g, &d.images)?;
    let predicted: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    AccuracyResult::from_predictions(&predicted, &d.labels)
}

pub fn observe_activations(g: &Graph, images: &[Tensor], sink: &mut dyn ActivationObserver) -> Result<()> {
    let ex = Fp32Executor::new(g)?;
    for x in images {
        ex.run_observed(x, sink)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::dataset::Split;
    use crate::model::testutil::{compute, simple, tiny_graph};
    use crate::model::WeightTensor;
    use crate::tensor::Shape3;

    fn identity_pool_graph(c: usize) -> Graph {
        let mut w = vec![0.0; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        let mut weights = BTreeMap::new();
        weights.insert("pw.w".into(), WeightTensor::new(vec![c, c, 1, 1], w));
        weights.insert("pw.b".into(), WeightTensor::new(vec![c], vec![0.0; c]));
        Graph {
            name: "identity".into(),
            input_shape: Shape3::new(c, 4, 4),
            output_classes: c,
            nodes: vec![
                compute("pw", Op::PointwiseConv2d, INPUT, "t0"),
                simple("gap", Op::Avgpool { kernel: 0, stride: 1 }, &["t0"], "t1"),
            ],
            weights,
        }
    }

    #[test]
    fn identity_kernel_gives_pooled_input() {
        let g = identity_pool_graph(3);
        let x = Tensor::new(g.input_shape, (0..48).map(|v| v as f32 * 0.25).collect());
        let logits = Fp32Executor::new(&g).unwrap().run(&x).unwrap();
        for c in 0..3 {
            let mean: f32 = x.data[c * 16..(c + 1) * 16].iter().sum::<f32>() / 16.0;
            assert!((logits[c] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut g = tiny_graph();
        for w in g.weights.values_mut() {
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::new(g.input_shape, vec![1.0; 16]);
        assert_eq!(Fp32Executor::new(&g).unwrap().run(&x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let g = tiny_graph();
        let x = Tensor::zeros(Shape3::new(1, 5, 5));
        assert!(matches!(Fp32Executor::new(&g).unwrap().run(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn observer_sees_every_tensor_once_per_image() {
        let g = tiny_graph();
        let imgs = vec![Tensor::zeros(g.input_shape); 3];
        let mut seen: Vec<String> = Vec::new();
        observe_activations(&g, &imgs, &mut |id: &str, _: &Tensor| seen.push(id.to_string())).unwrap();
        let per_image: Vec<String> = g.activation_ids().iter().map(|s| s.to_string()).collect();
        let expected: Vec<String> = (0..3).flat_map(|_| per_image.iter().cloned()).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn top1_edge_cases() {
        // Zero weights give all-zero logits, so argmax is always class 0.
        let mut g = tiny_graph();
        for w in g.weights.values_mut() {
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let imgs = vec![Tensor::zeros(g.input_shape); 4];
        let zeros = Dataset::new(imgs.clone(), vec![0; 4], Split::Eval).unwrap();
        let ones = Dataset::new(imgs, vec![1; 4], Split::Eval).unwrap();
        assert_eq!(evaluate_top1(&g, &zeros).unwrap().top1, 1.0);
        assert_eq!(evaluate_top1(&g, &ones).unwrap().top1, 0.0);
        let empty = Dataset::new(vec![], vec![], Split::Eval).unwrap();
        assert!(matches!(evaluate_top1(&g, &empty), Err(Error::EmptyDataset)));
    }
}
