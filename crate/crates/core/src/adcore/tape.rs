use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    /// Multiply every element by a one-element tensor.
    ScaleBy(Var, Var),
    Gather(Var, Vec<usize>),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    AvgPool(Var, usize),
    Upsample(Var, usize),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Normalize(Var),
    ChannelMask(Var, Var),
    /// Zero-pads the channel axis of `(B, C, L)` up to the given count.
    PadChannels(Var, usize),
    CrossEntropy(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::ScaleBy(..) => "scale_by",
            Op::Gather(..) => "gather",
            Op::Conv1d { .. } => "conv1d",
            Op::AvgPool(..) => "avg_pool",
            Op::Upsample(..) => "upsample",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Ln(..) => "ln",
            Op::Abs(..) => "abs",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(..) => "sum",
            Op::Normalize(..) => "normalize",
            Op::ChannelMask(..) => "channel_mask",
            Op::PadChannels(..) => "pad_channels",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Const => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::ScaleBy(a, b) | Op::ChannelMask(a, b) => {
                vec![*a, *b]
            }
            Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Gather(a, _)
            | Op::AvgPool(a, _)
            | Op::Upsample(a, _)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Ln(a)
            | Op::Abs(a)
            | Op::ClampMin(a, _)
            | Op::Sum(a)
            | Op::Normalize(a)
            | Op::PadChannels(a, _)
            | Op::CrossEntropy(a, _) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    /// Softmax probabilities for cross-entropy nodes.
    aux: Option<Vec<f64>>,
    needs_grad: bool,
    /// Accumulated gradient; only populated on leaves.
    grad: Option<Vec<f64>>,
}

/// Recording of primitive operations in topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inputs: HashMap<String, Var>,
    outputs: BTreeMap<String, Var>,
}

fn shape_err(op: usize, kind: &'static str, detail: String) -> Error {
    Error::Shape { op, kind, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, `None` if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    /// Named differentiable leaf. The name is used by [`Tape::forward_eval`].
    pub fn input(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.leaf(value);
        self.inputs.insert(name.to_string(), v);
        v
    }

    /// Anonymous differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            aux: None,
            needs_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Const,
            value,
            aux: None,
            needs_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn mark_output(&mut self, name: &str, v: Var) {
        self.outputs.insert(name.to_string(), v);
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        let (value, aux) = evaluate(&self.nodes, id, &op)?;
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            aux,
            needs_grad,
            grad: None,
        });
        Ok(Var(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.push(Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Result<Var> {
        self.push(Op::Offset(a, shift))
    }

    pub fn scale_by(&mut self, a: Var, factor: Var) -> Result<Var> {
        self.push(Op::ScaleBy(a, factor))
    }

    /// Picks entries of a 1-D tensor into a new 1-D tensor.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.push(Op::Gather(a, indices.to_vec()))
    }

    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        self.gather(a, &[index])
    }

    /// 1-D convolution of `(B, C_in, L)` by `(C_out, C_in, k)` with bias
    /// `(C_out)`, stride 1 and length-preserving zero padding (odd `k`).
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        self.push(Op::Conv1d { x, w, b, dilation })
    }

    pub fn avg_pool(&mut self, x: Var, size: usize) -> Result<Var> {
        self.push(Op::AvgPool(x, size))
    }

    /// Linear-interpolation upsampling of the last axis by `factor`.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.push(Op::Upsample(x, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Abs(a))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.push(Op::ClampMin(a, floor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    /// `x_i / Σ_j x_j` over a 1-D tensor.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Normalize(a))
    }

    /// Multiplies channel `c` of a `(B, C, L)` tensor by `mask[c]`.
    pub fn channel_mask(&mut self, x: Var, mask: Var) -> Result<Var> {
        self.push(Op::ChannelMask(x, mask))
    }

    /// Zero-pads `(B, C, L)` to `(B, channels, L)`; `channels ≥ C`.
    pub fn pad_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        self.push(Op::PadChannels(x, channels))
    }

    /// Mean softmax cross-entropy of `(B, K, L)` logits against `B * L`
    /// class labels laid out batch-major.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        self.push(Op::CrossEntropy(logits, labels))
    }

    /// Sum of a non-empty list of same-shape nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms.split_first().expect("add_all of no terms");
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Replays the tape with new values for named inputs and returns the
    /// marked outputs. Inputs not mentioned keep their current values.
    pub fn forward_eval(
        &mut self,
        inputs: &HashMap<String, Tensor>,
    ) -> Result<BTreeMap<String, Tensor>> {
        for (name, t) in inputs {
            let v = *self
                .inputs
                .get(name)
                .ok_or_else(|| Error::UnknownInput(name.clone()))?;
            let old = self.nodes[v.0].value.shape();
            if old != t.shape() {
                return Err(shape_err(
                    v.0,
                    "input",
                    format!(
                        "`{name}` recorded with shape {old:?}, replayed with {:?}",
                        t.shape()
                    ),
                ));
            }
            self.nodes[v.0].value = t.clone();
        }
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Leaf | Op::Const) {
                continue;
            }
            let (value, aux) = evaluate(&self.nodes, id, &self.nodes[id].op)?;
            self.nodes[id].value = value;
            self.nodes[id].aux = aux;
        }
        Ok(self
            .outputs
            .iter()
            .map(|(k, v)| (k.clone(), self.nodes[v.0].value.clone()))
            .collect())
    }

    /// Reverse sweep from a scalar node, accumulating `∂output/∂leaf` into
    /// every reachable leaf.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.nodes[output.0].value.shape().to_vec();
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::NonScalarOutput(out_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let acc = self.nodes[id]
                    .grad
                    .get_or_insert_with(|| vec![0.0; g.len()]);
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
                continue;
            }
            propagate(&self.nodes, id, &g, &mut grads);
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, allocated on first use; `None` when `v` does
/// not need a gradient.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn evaluate(nodes: &[Node], id: usize, op: &Op) -> Result<(Tensor, Option<Vec<f64>>)> {
    let val = |v: &Var| &nodes[v.0].value;
    let kind = op.name();
    let map = |a: &Tensor, f: &dyn Fn(f64) -> f64| {
        Tensor::from_parts(
            a.shape().to_vec(),
            a.values().iter().map(|&x| f(x)).collect(),
        )
    };
    let same = |a: &Tensor, b: &Tensor| -> Result<()> {
        if a.shape() != b.shape() {
            return Err(shape_err(
                id,
                kind,
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        Ok(())
    };
    let seq = |t: &Tensor, what: &str| -> Result<(usize, usize, usize)> {
        match *t.shape() {
            [b, c, l] => Ok((b, c, l)),
            ref s => Err(shape_err(
                id,
                kind,
                format!("{what} must be (batch, channel, length), got {s:?}"),
            )),
        }
    };
    let vector = |t: &Tensor, what: &str| -> Result<usize> {
        match *t.shape() {
            [n] => Ok(n),
            ref s => Err(shape_err(
                id,
                kind,
                format!("{what} must be 1-D, got {s:?}"),
            )),
        }
    };
    let out = match op {
        Op::Leaf | Op::Const => unreachable!("leaves are not evaluated"),
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (a, b) = (val(a), val(b));
            same(a, b)?;
            let vals = a.values().iter().zip(b.values());
            let values = if matches!(op, Op::Add(..)) {
                vals.map(|(x, y)| x + y).collect()
            } else {
                vals.map(|(x, y)| x * y).collect()
            };
            Tensor::from_parts(a.shape().to_vec(), values)
        }
        Op::Scale(a, f) => map(val(a), &|x| x * f),
        Op::Offset(a, c) => map(val(a), &|x| x + c),
        Op::ScaleBy(a, s) => {
            let s = val(s);
            if s.len() != 1 {
                return Err(shape_err(
                    id,
                    kind,
                    format!("factor must hold one value, got {:?}", s.shape()),
                ));
            }
            let f = s.item();
            map(val(a), &|x| x * f)
        }
        Op::Gather(a, idx) => {
            let a = val(a);
            let n = vector(a, "source")?;
            if idx.is_empty() || idx.iter().any(|&i| i >= n) {
                return Err(shape_err(
                    id,
                    kind,
                    format!("indices {idx:?} out of range for length {n}"),
                ));
            }
            Tensor::from_parts(
                vec![idx.len()],
                idx.iter().map(|&i| a.values()[i]).collect(),
            )
        }
        Op::Conv1d { x, w, b, dilation } => {
            let (xt, wt, bt) = (val(x), val(w), val(b));
            let (batch, c_in, len) = seq(xt, "input")?;
            let (c_out, w_in, kernel) = match *wt.shape() {
                [o, i, k] => (o, i, k),
                ref s => {
                    return Err(shape_err(
                        id,
                        kind,
                        format!("weight must be (out, in, k), got {s:?}"),
                    ))
                }
            };
            if w_in != c_in || kernel % 2 == 0 || bt.shape() != [c_out] || *dilation == 0 {
                return Err(shape_err(
                    id,
                    kind,
                    format!(
                        "input {:?}, weight {:?}, bias {:?}, dilation {dilation}",
                        xt.shape(),
                        wt.shape(),
                        bt.shape()
                    ),
                ));
            }
            let dims = ConvDims {
                batch,
                c_in,
                c_out,
                len,
                kernel,
                dilation: *dilation,
            };
            Tensor::from_parts(
                vec![batch, c_out, len],
                kernels::conv1d_forward(&dims, xt.values(), wt.values(), bt.values()),
            )
        }
        Op::AvgPool(x, size) => {
            let xt = val(x);
            let (b, c, l) = seq(xt, "input")?;
            if *size == 0 || l % size != 0 {
                return Err(shape_err(
                    id,
                    kind,
                    format!("pool size {size} does not divide length {l}"),
                ));
            }
            Tensor::from_parts(
                vec![b, c, l / size],
                kernels::avg_pool_forward(xt.values(), b * c, l, *size),
            )
        }
        Op::Upsample(x, factor) => {
            let xt = val(x);
            let (b, c, l) = seq(xt, "input")?;
            if *factor == 0 {
                return Err(shape_err(id, kind, "factor must be positive".into()));
            }
            Tensor::from_parts(
                vec![b, c, l * factor],
                kernels::upsample_forward(xt.values(), b * c, l, *factor),
            )
        }
        Op::Sigmoid(a) => map(val(a), &sigmoid),
        // comparisons instead of f64::max so NaN propagates
        Op::Relu(a) => map(val(a), &|x| if x < 0.0 { 0.0 } else { x }),
        Op::Ln(a) => {
            let a = val(a);
            if let Some(&bad) = a.values().iter().find(|&&x| x.is_nan() || x <= 0.0) {
                return Err(Error::NonPositiveLog { op: id, value: bad });
            }
            map(a, &f64::ln)
        }
        Op::Abs(a) => map(val(a), &f64::abs),
        Op::ClampMin(a, floor) => map(val(a), &|x| if x < *floor { *floor } else { x }),
        Op::Sum(a) => Tensor::scalar(val(a).values().iter().sum()),
        Op::Normalize(a) => {
            let a = val(a);
            vector(a, "input")?;
            let s: f64 = a.values().iter().sum();
            map(a, &|x| x / s)
        }
        Op::ChannelMask(x, m) => {
            let (xt, mt) = (val(x), val(m));
            let (b, c, l) = seq(xt, "input")?;
            if mt.shape() != [c] {
                return Err(shape_err(
                    id,
                    kind,
                    format!("mask {:?} for {c} channels", mt.shape()),
                ));
            }
            let mut values = xt.values().to_vec();
            for bi in 0..b {
                for ci in 0..c {
                    let f = mt.values()[ci];
                    for v in &mut values[(bi * c + ci) * l..][..l] {
                        *v *= f;
                    }
                }
            }
            Tensor::from_parts(vec![b, c, l], values)
        }
        Op::PadChannels(x, channels) => {
            let xt = val(x);
            let (b, c, l) = seq(xt, "input")?;
            if *channels < c {
                return Err(shape_err(
                    id,
                    kind,
                    format!("cannot pad {c} channels to {channels}"),
                ));
            }
            let mut values = vec![0.0; b * channels * l];
            for bi in 0..b {
                values[bi * channels * l..][..c * l]
                    .copy_from_slice(&xt.values()[bi * c * l..][..c * l]);
            }
            Tensor::from_parts(vec![b, *channels, l], values)
        }
        Op::CrossEntropy(x, labels) => {
            let xt = val(x);
            let (b, k, l) = seq(xt, "logits")?;
            if labels.len() != b * l || labels.iter().any(|&y| y >= k) {
                return Err(shape_err(
                    id,
                    kind,
                    format!(
                        "{} labels for {b}x{l} positions and {k} classes",
                        labels.len()
                    ),
                ));
            }
            let (loss, probs) = kernels::cross_entropy_forward(xt.values(), labels, b, k, l);
            return Ok((Tensor::scalar(loss), Some(probs)));
        }
    };
    Ok((out, None))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let val = |v: &Var| nodes[v.0].value.values();
    let acc = |grads: &mut [Option<Vec<f64>>], v: Var, f: &dyn Fn(usize) -> f64| {
        if let Some(s) = slot(nodes, grads, v) {
            for (i, x) in s.iter_mut().enumerate() {
                *x += f(i);
            }
        }
    };
    match &node.op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            acc(grads, *a, &|i| g[i]);
            acc(grads, *b, &|i| g[i]);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            acc(grads, *a, &|i| g[i] * bv[i]);
            acc(grads, *b, &|i| g[i] * av[i]);
        }
        Op::Scale(a, f) => acc(grads, *a, &|i| g[i] * f),
        Op::Offset(a, _) => acc(grads, *a, &|i| g[i]),
        Op::ScaleBy(a, s) => {
            let f = nodes[s.0].value.item();
            acc(grads, *a, &|i| g[i] * f);
            let av = val(a);
            let dot: f64 = g.iter().zip(av).map(|(x, y)| x * y).sum();
            acc(grads, *s, &|_| dot);
        }
        Op::Gather(a, idx) => {
            if let Some(s) = slot(nodes, grads, *a) {
                for (k, &i) in idx.iter().enumerate() {
                    s[i] += g[k];
                }
            }
        }
        Op::Conv1d { x, w, b, dilation } => {
            let xt = &nodes[x.0].value;
            let wt = &nodes[w.0].value;
            let [batch, c_in, len] = *xt.shape() else {
                unreachable!()
            };
            let [c_out, _, kernel] = *wt.shape() else {
                unreachable!()
            };
            let dims = ConvDims {
                batch,
                c_in,
                c_out,
                len,
                kernel,
                dilation: *dilation,
            };
            // Split borrows of the three distinct gradient slots.
            let mut gx = slot(nodes, grads, *x).map(std::mem::take);
            let mut gw = slot(nodes, grads, *w).map(std::mem::take);
            let mut gb = slot(nodes, grads, *b).map(std::mem::take);
            kernels::conv1d_backward(
                &dims,
                xt.values(),
                wt.values(),
                g,
                gx.as_deref_mut(),
                gw.as_deref_mut(),
                gb.as_deref_mut(),
            );
            for (v, buf) in [(x, gx), (w, gw), (b, gb)] {
                if let Some(buf) = buf {
                    grads[v.0] = Some(buf);
                }
            }
        }
        Op::AvgPool(x, size) => {
            let [b, c, l] = *nodes[x.0].value.shape() else {
                unreachable!()
            };
            if let Some(s) = slot(nodes, grads, *x) {
                kernels::avg_pool_backward(g, s, b * c, l, *size);
            }
        }
        Op::Upsample(x, factor) => {
            let [b, c, l] = *nodes[x.0].value.shape() else {
                unreachable!()
            };
            if let Some(s) = slot(nodes, grads, *x) {
                kernels::upsample_backward(g, s, b * c, l, *factor);
            }
        }
        Op::Sigmoid(a) => {
            let y = node.value.values();
            acc(grads, *a, &|i| g[i] * y[i] * (1.0 - y[i]));
        }
        Op::Relu(a) => {
            let x = val(a);
            acc(grads, *a, &|i| if x[i] > 0.0 { g[i] } else { 0.0 });
        }
        Op::Ln(a) => {
            let x = val(a);
            acc(grads, *a, &|i| g[i] / x[i]);
        }
        Op::Abs(a) => {
            let x = val(a);
            acc(grads, *a, &|i| {
                g[i] * if x[i] > 0.0 {
                    1.0
                } else if x[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
        }
        Op::ClampMin(a, floor) => {
            let x = val(a);
            acc(grads, *a, &|i| if x[i] > *floor { g[i] } else { 0.0 });
        }
        Op::Sum(a) => acc(grads, *a, &|_| g[0]),
        Op::Normalize(a) => {
            let x = val(a);
            let s: f64 = x.iter().sum();
            let gx: f64 = g.iter().zip(x).map(|(gi, xi)| gi * xi).sum();
            acc(grads, *a, &|i| g[i] / s - gx / (s * s));
        }
        Op::ChannelMask(x, m) => {
            let (xt, mv) = (&nodes[x.0].value, val(m));
            let [b, c, l] = *xt.shape() else {
                unreachable!()
            };
            let xv = xt.values();
            acc(grads, *x, &|i| g[i] * mv[(i / l) % c]);
            if let Some(s) = slot(nodes, grads, *m) {
                for bi in 0..b {
                    for (ci, sc) in s.iter_mut().enumerate() {
                        let o = (bi * c + ci) * l;
                        *sc += g[o..o + l]
                            .iter()
                            .zip(&xv[o..o + l])
                            .map(|(p, q)| p * q)
                            .sum::<f64>();
                    }
                }
            }
        }
        Op::PadChannels(x, channels) => {
            let [_, c, l] = *nodes[x.0].value.shape() else {
                unreachable!()
            };
            let per = channels * l;
            acc(grads, *x, &|i| g[(i / (c * l)) * per + i % (c * l)]);
        }
        Op::CrossEntropy(x, labels) => {
            let [b, k, l] = *nodes[x.0].value.shape() else {
                unreachable!()
            };
            let probs = node.aux.as_ref().expect("cross-entropy keeps its softmax");
            let scale = g[0] / (b * l) as f64;
            if let Some(s) = slot(nodes, grads, *x) {
                for (i, v) in s.iter_mut().enumerate() {
                    *v += scale * probs[i];
                }
                for bi in 0..b {
                    for li in 0..l {
                        s[(bi * k + labels[bi * l + li]) * l + li] -= scale;
                    }
                }
            }
        }
    }
}
