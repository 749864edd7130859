//! Quantized execution.
//!
//! Integer nodes accumulate `Σ (x − zx)(w − zw) + bias` exactly (saturated to
//! int32) and requantize into the consumer's int8 domain. fp32 nodes under
//! mixed precision dequantize their inputs and quantize their own output.
//!
//! Two modes share one plan:
//!
//! * the standard path ([`run_quantized`]) requantizes with a float
//!   multiplier, or for power-of-two scales simulates the shift in f64;
//! * the integer-only path ([`run_integer_only`]) requires every rescale to
//!   be a shift and uses only integer multiply, add and shift.
//!
//! Shifts round half up: `(acc + 2^(s−1)) >> s`.

mod trace;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::kernels::{self, pool_window_len, pool_windows, valid_taps};
use crate::exec::{input_slots, run_node_fp32, AccuracyResult};
use crate::model::{Node, Op, INPUT};
use crate::quant::{Granularity, MixedPrecision, QuantParams, QuantScheme, QuantizedGraph, QMAX, QMIN};
use crate::tensor::{argmax, Shape3, Tensor};

pub use crate::quant::fuse_conv_relu;
pub use trace::{OpCategory, OpTrace, TraceEvent};

use OpCategory::*;

/// How an int32 accumulator is brought to the output scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rescale {
    /// Multiply by `m`, round half away from zero.
    Multiplier(f64),
    /// Multiply by `2^-s` (a left shift when `s < 0`), round half up.
    Shift(i32),
}

impl Rescale {
    /// Rescale from an accumulator scale to `out`; a shift when both are powers of two.
    fn new(acc_scale: f64, acc_exp: Option<i32>, out: QuantParams, power2: bool) -> Rescale {
        match (power2, acc_exp, out.log2_scale()) {
            (true, Some(e), Some(eo)) => Rescale::Shift(eo - e),
            _ => Rescale::Multiplier(acc_scale / out.scale as f64),
        }
    }
}

fn shift_int(acc: i64, s: i32) -> i64 {
    if s > 0 {
        let s = s.min(62);
        (acc + (1i64 << (s - 1))) >> s
    } else {
        let s = (-s).min(62) as u32;
        acc.checked_shl(s).filter(|v| v >> s == acc).unwrap_or(if acc < 0 { i64::MIN } else { i64::MAX })
    }
}

fn shift_simulated(acc: i64, s: i32) -> i64 {
    (acc as f64 * 2f64.powi(-s) + 0.5).floor() as i64
}

fn saturate(v: i64) -> i8 {
    v.clamp(QMIN as i64, QMAX as i64) as i8
}

/// Integer requantization: shifts use integer arithmetic only.
pub fn requantize(acc: i32, r: Rescale, zero_point: i32) -> i8 {
    let v = match r {
        Rescale::Shift(s) => shift_int(acc as i64, s),
        Rescale::Multiplier(m) => (acc as f64 * m).round() as i64,
    };
    saturate(v.saturating_add(zero_point as i64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Standard,
    IntegerOnly,
}

/// Per-run state: operation counting is optional.
struct Ctx<'t> {
    mode: Mode,
    trace: Option<&'t mut OpTrace>,
}

impl Ctx<'_> {
    fn rec(&mut self, node: &str, cat: OpCategory, n: usize) {
        if let Some(t) = self.trace.as_deref_mut() {
            t.record(node, cat, n);
        }
    }

    fn rescale(&self, acc: i64, r: Rescale) -> i64 {
        match r {
            Rescale::Multiplier(m) => (acc as f64 * m).round() as i64,
            Rescale::Shift(s) => match self.mode {
                Mode::IntegerOnly => shift_int(acc, s),
                Mode::Standard => shift_simulated(acc, s),
            },
        }
    }

    /// Operation counts of `n` rescales followed by a zero-point add and clamp.
    fn rec_rescale(&mut self, node: &str, r: Rescale, n: usize) {
        match (r, self.mode) {
            (Rescale::Multiplier(_), _) => {
                self.rec(node, FloatMul, n);
                self.rec(node, Round, n);
            }
            (Rescale::Shift(_), Mode::Standard) => {
                self.rec(node, FloatMul, n);
                self.rec(node, Round, n);
            }
            (Rescale::Shift(_), Mode::IntegerOnly) => {
                self.rec(node, IntAdd, n);
                self.rec(node, Shift, n);
            }
        }
        self.rec(node, IntAdd, n);
        self.rec(node, Clamp, n);
    }
}

#[derive(Debug, Clone)]
enum Value {
    Codes(Shape3, Vec<i8>),
    Float(Tensor),
}

#[derive(Debug)]
enum AddPlan {
    Aligned { la: u32, lb: u32, out: Rescale },
    Scaled { ma: Rescale, mb: Rescale },
}

#[derive(Debug)]
enum Step {
    Fp32 { inputs: Vec<Option<QuantParams>>, out: Option<QuantParams>, relu: bool },
    Compute { w: Vec<i64>, wshape: Vec<usize>, bias: Vec<i64>, zx: i64, rescale: Vec<Rescale>, zy: i32, relu: bool },
    Relu { zp: i8 },
    Maxpool,
    Avgpool { zx: i64, x: QuantParams, y: QuantParams },
    Add { za: i64, zb: i64, plan: AddPlan, zy: i32 },
    Concat { inputs: Vec<(i64, Rescale)>, zy: i32 },
    Softmax { x: QuantParams, y: QuantParams },
}

/// A quantized graph prepared for repeated execution.
#[derive(Debug)]
pub struct IntExecutor<'q> {
    qg: &'q QuantizedGraph,
    slots: Vec<Vec<usize>>,
    steps: Vec<Step>,
    mode: Mode,
}

fn is_power2_config(qg: &QuantizedGraph) -> bool {
    qg.config.scheme == QuantScheme::SymmetricPower2
}

impl<'q> IntExecutor<'q> {
    fn prepare(qg: &'q QuantizedGraph, mode: Mode) -> Result<Self> {
        qg.check()?;
        let power2 = is_power2_config(qg);
        let mut steps = Vec::with_capacity(qg.graph.nodes.len());
        for n in &qg.graph.nodes {
            steps.push(Self::plan_node(qg, n, power2)?);
        }
        let ex = Self { qg, slots: input_slots(&qg.graph), steps, mode };
        if mode == Mode::IntegerOnly {
            ex.check_integer_only()?;
        }
        Ok(ex)
    }

    pub fn standard(qg: &'q QuantizedGraph) -> Result<Self> {
        Self::prepare(qg, Mode::Standard)
    }

    /// Fails with [`Error::NotIntegerOnly`] unless every step is integer-only.
    pub fn integer_only(qg: &'q QuantizedGraph) -> Result<Self> {
        Self::prepare(qg, Mode::IntegerOnly)
    }

    fn plan_node(qg: &QuantizedGraph, n: &Node, power2: bool) -> Result<Step> {
        let fused = qg.fused_relu.contains(&n.id);
        if qg.is_fp32(&n.id) {
            let inputs = n.activation_inputs().iter().map(|t| qg.activations.get(t).copied()).collect();
            return Ok(Step::Fp32 { inputs, out: qg.activations.get(&n.output).copied(), relu: fused });
        }
        let p = |t: &str| qg.params(t);
        let y = p(&n.output)?;
        Ok(match n.op {
            Op::Conv2d { .. } | Op::DepthwiseConv2d { .. } | Op::PointwiseConv2d | Op::FullyConnected => {
                let layer = qg.layer(&n.id)?;
                let x = p(&n.inputs[0])?;
                let per = layer.weight_codes.len() / layer.out_channels();
                let w = layer
                    .weight_codes
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| c as i64 - layer.channel_params(i / per).zero_point as i64)
                    .collect();
                let rescale = (0..layer.out_channels())
                    .map(|oc| {
                        let wp = layer.channel_params(oc);
                        let exp = x.log2_scale().zip(wp.log2_scale()).map(|(a, b)| a + b);
                        Rescale::new(x.scale as f64 * wp.scale as f64, exp, y, power2)
                    })
                    .collect();
                Step::Compute {
                    w,
                    wshape: layer.weight_shape.clone(),
                    bias: layer.bias.iter().map(|&b| b as i64).collect(),
                    zx: x.zero_point as i64,
                    rescale,
                    zy: y.zero_point,
                    relu: fused,
                }
            }
            Op::Relu => Step::Relu { zp: saturate(p(&n.inputs[0])?.zero_point as i64) },
            Op::Maxpool { .. } => Step::Maxpool,
            Op::Avgpool { .. } => {
                let x = p(&n.inputs[0])?;
                Step::Avgpool { zx: x.zero_point as i64, x, y }
            }
            Op::Add => {
                let (a, b) = (p(&n.inputs[0])?, p(&n.inputs[1])?);
                let plan = match (power2, a.log2_scale(), b.log2_scale(), y.log2_scale()) {
                    (true, Some(ea), Some(eb), Some(ey)) => {
                        let e = ea.min(eb);
                        AddPlan::Aligned { la: (ea - e) as u32, lb: (eb - e) as u32, out: Rescale::Shift(ey - e) }
                    }
                    _ => AddPlan::Scaled {
                        ma: Rescale::Multiplier(a.scale as f64 / y.scale as f64),
                        mb: Rescale::Multiplier(b.scale as f64 / y.scale as f64),
                    },
                };
                Step::Add { za: a.zero_point as i64, zb: b.zero_point as i64, plan, zy: y.zero_point }
            }
            Op::Concat => {
                let inputs = n
                    .inputs
                    .iter()
                    .map(|t| p(t).map(|x| (x.zero_point as i64, Rescale::new(x.scale as f64, x.log2_scale(), y, power2))))
                    .collect::<Result<_>>()?;
                Step::Concat { inputs, zy: y.zero_point }
            }
            Op::Softmax => Step::Softmax { x: p(&n.inputs[0])?, y },
        })
    }

    fn check_integer_only(&self) -> Result<()> {
        let cfg = &self.qg.config;
        let fail = |why: String| Err(Error::NotIntegerOnly(why));
        if cfg.scheme != QuantScheme::SymmetricPower2 {
            return fail(format!("scheme {} is not power-of-two", cfg.scheme));
        }
        if cfg.granularity != Granularity::Tensor {
            return fail("granularity must be tensor".into());
        }
        if cfg.mixed != MixedPrecision::Off || !self.qg.fp32_nodes.is_empty() {
            return fail("mixed precision keeps fp32 nodes".into());
        }
        for (n, s) in self.qg.graph.nodes.iter().zip(&self.steps) {
            let float_rescale = |r: &Rescale| matches!(r, Rescale::Multiplier(_));
            let bad = match s {
                Step::Compute { rescale, .. } => rescale.iter().any(float_rescale),
                Step::Add { plan, .. } => matches!(plan, AddPlan::Scaled { .. }),
                Step::Concat { inputs, .. } => inputs.iter().any(|(_, r)| float_rescale(r)),
                Step::Softmax { .. } | Step::Fp32 { .. } => true,
                // Window sizes are only known at run time; checked there.
                Step::Avgpool { x, y, .. } => x.log2_scale().is_none() || y.log2_scale().is_none(),
                Step::Relu { .. } | Step::Maxpool => false,
            };
            if bad {
                return fail(format!("node `{}` ({:?}) needs floating-point arithmetic", n.id, n.kind()));
            }
        }
        Ok(())
    }

    fn run_values(&self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let g = &self.qg.graph;
        let mut values: Vec<Option<Value>> = vec![None; g.nodes.len() + 1];
        values[0] = Some(input);
        for (i, (node, step)) in g.nodes.iter().zip(&self.steps).enumerate() {
            let out = {
                let ins: Vec<&Value> = self.slots[i].iter().map(|&s| values[s].as_ref().expect("produced")).collect();
                self.run_step(node, step, &ins, ctx)?
            };
            values[i + 1] = Some(out);
        }
        Ok(values.pop().flatten().expect("graph output"))
    }

    fn run_step(&self, node: &Node, step: &Step, ins: &[&Value], ctx: &mut Ctx) -> Result<Value> {
        let id = node.id.as_str();
        fn codes<'v>(v: &'v Value, id: &str) -> Result<(Shape3, &'v [i8])> {
            match v {
                Value::Codes(s, c) => Ok((*s, c.as_slice())),
                Value::Float(_) => Err(Error::MissingParams(format!("input of `{id}`"))),
            }
        }
        Ok(match step {
            Step::Fp32 { inputs, out, relu } => {
                let floats: Vec<Tensor> = ins
                    .iter()
                    .zip(inputs)
                    .map(|(v, p)| match (v, p) {
                        (Value::Float(t), _) => Ok(t.clone()),
                        (Value::Codes(s, c), Some(p)) => {
                            ctx.rec(id, IntAdd, c.len());
                            ctx.rec(id, FloatMul, c.len());
                            Ok(Tensor::new(*s, c.iter().map(|&q| p.dequantize(q)).collect()))
                        }
                        (Value::Codes(..), None) => Err(Error::MissingParams(format!("input of `{id}`"))),
                    })
                    .collect::<Result<_>>()?;
                let refs: Vec<&Tensor> = floats.iter().collect();
                let macs = fp32_macs(node, &self.qg.graph.weights, &refs);
                ctx.rec(id, FloatMul, macs);
                ctx.rec(id, FloatAdd, macs);
                let mut y = run_node_fp32(&self.qg.graph, node, &refs);
                if *relu {
                    ctx.rec(id, Clamp, y.data.len());
                    y = kernels::relu(&y);
                }
                match out {
                    Some(p) => {
                        let n = y.data.len();
                        ctx.rec(id, FloatMul, n);
                        ctx.rec(id, FloatAdd, n);
                        ctx.rec(id, Round, n);
                        ctx.rec(id, Clamp, n);
                        Value::Codes(y.shape, y.data.iter().map(|&v| p.quantize(v)).collect())
                    }
                    None => Value::Float(y),
                }
            }
            Step::Compute { w, wshape, bias, zx, rescale, zy, relu } => {
                let (xs, xc) = codes(ins[0], id)?;
                let x: Vec<i64> = xc.iter().map(|&q| q as i64 - zx).collect();
                ctx.rec(id, IntAdd, x.len());
                let (shape, acc, macs) = match node.op {
                    Op::Conv2d { stride, padding } => {
                        let (s, a) = kernels::conv2d_raw(&x, xs, w, wshape, bias, stride, padding);
                        (s, a, valid_taps(xs, wshape[2], stride, padding) * wshape[0] * wshape[1])
                    }
                    Op::DepthwiseConv2d { stride, padding } => {
                        let (s, a) = kernels::depthwise_raw(&x, xs, w, wshape, bias, stride, padding);
                        (s, a, valid_taps(xs, wshape[2], stride, padding) * wshape[0])
                    }
                    Op::PointwiseConv2d => {
                        let (s, a) = kernels::pointwise_raw(&x, xs, w, wshape, bias);
                        (s, a, xs.plane() * wshape[0] * wshape[1])
                    }
                    _ => {
                        let (s, a) = kernels::fully_connected_raw(&x, w, wshape, bias);
                        (s, a, wshape[0] * wshape[1])
                    }
                };
                ctx.rec(id, IntMul, macs);
                ctx.rec(id, IntAdd, macs);
                let plane = shape.plane();
                let floor = if *relu { *zy as i64 } else { i64::MIN };
                let out: Vec<i8> = acc
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let a = a.clamp(i32::MIN as i64, i32::MAX as i64);
                        let v = ctx.rescale(a, rescale[i / plane]).saturating_add(*zy as i64);
                        saturate(v.max(floor))
                    })
                    .collect();
                ctx.rec_rescale(id, rescale[0], out.len());
                if *relu {
                    ctx.rec(id, Clamp, out.len());
                }
                Value::Codes(shape, out)
            }
            Step::Relu { zp } => {
                let (s, c) = codes(ins[0], id)?;
                ctx.rec(id, Clamp, c.len());
                Value::Codes(s, c.iter().map(|&q| q.max(*zp)).collect())
            }
            Step::Maxpool => {
                let (s, c) = codes(ins[0], id)?;
                let Op::Maxpool { kernel, stride } = node.op else { unreachable!("planned from op") };
                let (os, out) = pool_windows(c, s, kernel, stride, || i8::MIN, i8::max, |a| a);
                ctx.rec(id, Clamp, os.numel() * pool_window_len(s, kernel));
                Value::Codes(os, out)
            }
            Step::Avgpool { zx, x, y } => {
                let (s, c) = codes(ins[0], id)?;
                let Op::Avgpool { kernel, stride } = node.op else { unreachable!("planned from op") };
                let n = pool_window_len(s, kernel);
                let r = avgpool_rescale(*x, *y, n, is_power2_config(self.qg));
                if ctx.mode == Mode::IntegerOnly && matches!(r, Rescale::Multiplier(_)) {
                    return Err(Error::NotIntegerOnly(format!("average pool `{id}` has a window of {n} elements")));
                }
                let (os, sums) = pool_windows(c, s, kernel, stride, || 0i64, |a, q| a + q as i64 - zx, |a| a);
                ctx.rec(id, IntAdd, 2 * os.numel() * n);
                let out = sums.iter().map(|&a| saturate(ctx.rescale(a, r) + y.zero_point as i64)).collect();
                ctx.rec_rescale(id, r, os.numel());
                Value::Codes(os, out)
            }
            Step::Add { za, zb, plan, zy } => {
                let (s, a) = codes(ins[0], id)?;
                let (_, b) = codes(ins[1], id)?;
                let n = a.len();
                ctx.rec(id, IntAdd, 2 * n);
                let out: Vec<i8> = match plan {
                    AddPlan::Aligned { la, lb, out } => {
                        ctx.rec(id, Shift, 2 * n);
                        ctx.rec(id, IntAdd, n);
                        ctx.rec_rescale(id, *out, n);
                        a.iter()
                            .zip(b)
                            .map(|(&qa, &qb)| {
                                let sum = ((qa as i64 - za) << la) + ((qb as i64 - zb) << lb);
                                saturate(ctx.rescale(sum, *out) + *zy as i64)
                            })
                            .collect()
                    }
                    AddPlan::Scaled { ma, mb } => {
                        ctx.rec(id, FloatMul, 2 * n);
                        ctx.rec(id, Round, 2 * n);
                        ctx.rec(id, IntAdd, 2 * n);
                        ctx.rec(id, Clamp, n);
                        a.iter()
                            .zip(b)
                            .map(|(&qa, &qb)| {
                                saturate(ctx.rescale(qa as i64 - za, *ma) + ctx.rescale(qb as i64 - zb, *mb) + *zy as i64)
                            })
                            .collect()
                    }
                };
                Value::Codes(s, out)
            }
            Step::Concat { inputs, zy } => {
                let mut out = Vec::new();
                let (mut c_total, mut hw) = (0, (0, 0));
                for (v, (zx, r)) in ins.iter().zip(inputs) {
                    let (s, c) = codes(v, id)?;
                    ctx.rec(id, IntAdd, c.len());
                    ctx.rec_rescale(id, *r, c.len());
                    out.extend(c.iter().map(|&q| saturate(ctx.rescale(q as i64 - zx, *r) + *zy as i64)));
                    c_total += s.c;
                    hw = (s.h, s.w);
                }
                Value::Codes(Shape3::new(c_total, hw.0, hw.1), out)
            }
            Step::Softmax { x, y } => {
                let (s, c) = codes(ins[0], id)?;
                let n = c.len();
                let t = Tensor::new(s, c.iter().map(|&q| x.dequantize(q)).collect());
                let sm = kernels::softmax(&t);
                ctx.rec(id, FloatMul, 3 * n);
                ctx.rec(id, FloatAdd, 3 * n);
                ctx.rec(id, Round, n);
                ctx.rec(id, Clamp, n);
                Value::Codes(s, sm.data.iter().map(|&v| y.quantize(v)).collect())
            }
        })
    }

    fn output_params(&self) -> Result<QuantParams> {
        self.qg.params(self.qg.graph.output())
    }

    fn check_shape(&self, s: Shape3, len: usize) -> Result<()> {
        if s != self.qg.graph.input_shape || len != s.numel() {
            return Err(Error::Shape(format!("input {s} vs model input {}", self.qg.graph.input_shape)));
        }
        Ok(())
    }

    /// Standard-path logits for one image.
    pub fn run(&self, image: &Tensor, trace: Option<&mut OpTrace>) -> Result<QuantOutput> {
        self.check_shape(image.shape, image.data.len())?;
        let mut ctx = Ctx { mode: self.mode, trace };
        let input = match self.qg.activations.get(INPUT) {
            Some(p) => {
                let n = image.data.len();
                ctx.rec(INPUT, FloatMul, n);
                ctx.rec(INPUT, FloatAdd, n);
                ctx.rec(INPUT, Round, n);
                ctx.rec(INPUT, Clamp, n);
                Value::Codes(image.shape, image.data.iter().map(|&v| p.quantize(v)).collect())
            }
            None => Value::Float(image.clone()),
        };
        Ok(match self.run_values(input, &mut ctx)? {
            Value::Float(t) => QuantOutput { logits: t.data, codes: None },
            Value::Codes(_, c) => {
                let p = self.output_params()?;
                QuantOutput { logits: c.iter().map(|&q| p.dequantize(q)).collect(), codes: Some(c) }
            }
        })
    }

    /// Output codes for pre-quantized input codes.
    pub fn run_codes(&self, input: &[i8], trace: Option<&mut OpTrace>) -> Result<Vec<i8>> {
        let shape = self.qg.graph.input_shape;
        self.check_shape(shape, input.len())?;
        self.qg.params(INPUT)?;
        let mut ctx = Ctx { mode: self.mode, trace };
        match self.run_values(Value::Codes(shape, input.to_vec()), &mut ctx)? {
            Value::Codes(_, c) => Ok(c),
            Value::Float(_) => Err(Error::MissingParams(self.qg.graph.output().to_string())),
        }
    }
}

fn avgpool_rescale(x: QuantParams, y: QuantParams, n: usize, power2: bool) -> Rescale {
    match (power2 && n.is_power_of_two(), x.log2_scale(), y.log2_scale()) {
        (true, Some(ex), Some(ey)) => Rescale::Shift(ey - ex + n.trailing_zeros() as i32),
        _ => Rescale::Multiplier(x.scale as f64 / (n as f64 * y.scale as f64)),
    }
}

fn fp32_macs(node: &Node, weights: &std::collections::BTreeMap<String, crate::model::WeightTensor>, ins: &[&Tensor]) -> usize {
    let Some(w) = node.weight_id().and_then(|id| weights.get(id)) else {
        return ins.iter().map(|t| t.data.len()).sum();
    };
    let xs = ins[0].shape;
    match node.op {
        Op::Conv2d { stride, padding } => valid_taps(xs, w.shape[2], stride, padding) * w.shape[0] * w.shape[1],
        Op::DepthwiseConv2d { stride, padding } => valid_taps(xs, w.shape[2], stride, padding) * w.shape[0],
        Op::PointwiseConv2d => xs.plane() * w.shape[0] * w.shape[1],
        _ => w.shape[0] * w.shape[1],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutput {
    /// Dequantized output (or raw fp32 output when the last node stays fp32).
    pub logits: Vec<f32>,
    /// Output codes when the graph output is quantized.
    pub codes: Option<Vec<i8>>,
}

/// Standard-path outputs for a batch; images run in parallel.
pub fn run_quantized(qg: &QuantizedGraph, batch: &[Tensor]) -> Result<Vec<QuantOutput>> {
    let ex = IntExecutor::standard(qg)?;
    batch.par_iter().map(|x| ex.run(x, None)).collect()
}

/// Standard-path output for one image with an operation trace.
pub fn run_quantized_traced(qg: &QuantizedGraph, image: &Tensor, trace: &mut OpTrace) -> Result<QuantOutput> {
    IntExecutor::standard(qg)?.run(image, Some(trace))
}

/// Host-side quantization of an fp32 image with the graph's input parameters.
pub fn quantize_input(qg: &QuantizedGraph, image: &Tensor) -> Result<Vec<i8>> {
    let p = qg.params(INPUT)?;
    Ok(image.data.iter().map(|&v| p.quantize(v)).collect())
}

/// Integer-only outputs for a batch of pre-quantized inputs.
pub fn run_integer_only(qg: &QuantizedGraph, batch: &[Vec<i8>]) -> Result<Vec<Vec<i8>>> {
    let ex = IntExecutor::integer_only(qg)?;
    batch.par_iter().map(|x| ex.run_codes(x, None)).collect()
}

pub fn run_integer_only_traced(qg: &QuantizedGraph, input: &[i8], trace: &mut OpTrace) -> Result<Vec<i8>> {
    IntExecutor::integer_only(qg)?.run_codes(input, Some(trace))
}

pub fn evaluate_quantized(qg: &QuantizedGraph, d: &Dataset) -> Result<AccuracyResult> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outs = run_quantized(qg, &d.images)?;
    let predicted: Vec<usize> = outs.iter().map(|o| argmax(&o.logits)).collect();
    AccuracyResult::from_predictions(&predicted, &d.labels)
}

pub fn evaluate_integer_only(qg: &QuantizedGraph, d: &Dataset) -> Result<AccuracyResult> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = d.images.iter().map(|x| quantize_input(qg, x)).collect::<Result<Vec<_>>>()?;
    let outs = run_integer_only(qg, &inputs)?;
    let predicted: Vec<usize> = outs.iter().map(|o| argmax(o)).collect();
    AccuracyResult::from_predictions(&predicted, &d.labels)
}
