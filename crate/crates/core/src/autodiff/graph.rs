use std::collections::HashMap;

use super::kernels::{gemm, ConvGeom};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operations the graph can record.
///
/// Tensors of rank 3 follow the `[batch, channels, length]` layout.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// `[m, k] · [k, n] -> [m, n]`
    MatMul,
    /// Convolution (flipped kernel) of `[B, Cin, L]` with weights `[Cout, Cin, K]`.
    Conv1d { stride: usize, padding: usize },
    /// `out[i] = in[i / 2]` along the length axis, truncated to `out_len`.
    UpsampleNearest { out_len: usize },
    /// Window-2 max pool along length; an odd tail forms a window of one.
    MaxPool2,
    Relu,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Sum,
    Mean,
    Square,
    /// Concatenate along axis 1.
    Concat,
    /// Keep `start..end` along axis 1.
    SliceChannels { start: usize, end: usize },
    Reshape(Vec<usize>),
    /// Hard clipping at `±mu`; derivative 1 strictly inside, 0 at or beyond.
    Clip { mu: f64 },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Conv1d { .. } => "conv1d",
            OpKind::UpsampleNearest { .. } => "upsample_nearest",
            OpKind::MaxPool2 => "max_pool2",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::ScalarMul(_) => "scalar_mul",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Square => "square",
            OpKind::Concat => "concat",
            OpKind::SliceChannels { .. } => "slice_channels",
            OpKind::Reshape(_) => "reshape",
            OpKind::Clip { .. } => "clip",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul | OpKind::Conv1d { .. } | OpKind::Add | OpKind::Sub | OpKind::Mul => {
                Some(2)
            }
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
enum NodeKind {
    Leaf,
    Param(String),
    Op(OpKind),
}

#[derive(Debug)]
struct Node {
    kind: NodeKind,
    parents: Vec<usize>,
    value: Tensor,
    tracked: bool,
    argmax: Option<Vec<u32>>,
}

/// Dynamic reverse-mode tape. Nodes are appended in topological order, so a
/// plain reverse sweep is a valid backward schedule.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_ids: HashMap<String, usize>,
    leaf_grads: HashMap<usize, Vec<f64>>,
    freeze_params: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose parameters do not require gradients (forward only).
    pub fn inference() -> Self {
        Self {
            freeze_params: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, kind: NodeKind, parents: Vec<usize>, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            kind,
            parents,
            value,
            tracked,
            argmax: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let t = tensor.with_requires_grad(false);
        self.push(NodeKind::Leaf, vec![], t, false)
    }

    /// A leaf whose gradient is kept when `tensor.requires_grad()` is set.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let tracked = tensor.requires_grad();
        self.push(NodeKind::Leaf, vec![], tensor, tracked)
    }

    /// Brings a parameter into the graph. Repeated calls with the same name
    /// return the same node, so shared weights accumulate their gradient once
    /// per use.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&id) = self.param_ids.get(name) {
            return Ok(Var(id));
        }
        let src = store.get(name)?;
        let value = Tensor::from_parts(src.shape().to_vec(), src.data().to_vec());
        let tracked = !self.freeze_params;
        let var = self.push(NodeKind::Param(name.to_string()), vec![], value, tracked);
        self.param_ids.insert(name.to_string(), var.0);
        Ok(var)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to a tracked leaf
    /// or parameter node.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&var.0).map(Vec::as_slice)
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    /// Records `kind` applied to `inputs` and returns the result node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{} takes {n} inputs, got {}",
                    kind.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::InvalidConfig(format!("{} needs inputs", kind.name())));
        }
        let (value, argmax) = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            forward(&kind, &vals)?
        };
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let parents = inputs.iter().map(|v| v.0).collect();
        let var = self.push(NodeKind::Op(kind), parents, value, tracked);
        self.nodes[var.0].argmax = argmax;
        Ok(var)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.apply(OpKind::Conv1d { stride, padding }, &[x, w])
    }

    pub fn upsample_nearest(&mut self, x: Var, out_len: usize) -> Result<Var> {
        self.apply(OpKind::UpsampleNearest { out_len }, &[x])
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::MaxPool2, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scalar_mul(&mut self, c: f64, x: Var) -> Result<Var> {
        self.apply(OpKind::ScalarMul(c), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Square, &[x])
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, xs)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(OpKind::SliceChannels { start, end }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::Reshape(shape), &[x])
    }

    pub fn clip(&mut self, x: Var, mu: f64) -> Result<Var> {
        self.apply(OpKind::Clip { mu }, &[x])
    }

    /// Branch pattern of every piecewise op (ReLU sign, clip region, pooling
    /// argmax). Two evaluations with equal signatures lie on the same linear
    /// piece, which is what finite-difference checks need to know.
    pub fn branch_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.kind {
                NodeKind::Op(OpKind::Relu) => {
                    let x = &self.nodes[node.parents[0]].value;
                    sig.extend(x.data().iter().map(|&v| u32::from(v > 0.0)));
                }
                NodeKind::Op(OpKind::Clip { mu }) => {
                    let x = &self.nodes[node.parents[0]].value;
                    sig.extend(x.data().iter().map(|&v| {
                        if v.abs() < *mu {
                            0
                        } else if v > 0.0 {
                            1
                        } else {
                            2
                        }
                    }));
                }
                NodeKind::Op(OpKind::MaxPool2) => {
                    sig.extend(node.argmax.iter().flatten().copied());
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from the scalar `output`. Parameter gradients are added
    /// into `params`; leaf gradients are readable through [`Graph::grad`].
    pub fn backward(&mut self, output: Var, params: &mut ParamStore) -> Result<()> {
        let out_shape = self.nodes[output.0].value.shape();
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::NonScalarOutput(out_shape.to_vec()));
        }
        self.leaf_grads.clear();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            match &node.kind {
                NodeKind::Leaf => {
                    self.leaf_grads.insert(id, gout);
                }
                NodeKind::Param(name) => {
                    params.accumulate(name, &gout)?;
                    self.leaf_grads.insert(id, gout);
                }
                NodeKind::Op(kind) => {
                    let contributions = self.backward_op(id, kind, &gout);
                    for (&p, contrib) in node.parents.iter().zip(contributions) {
                        let Some(contrib) = contrib else { continue };
                        match &mut grads[p] {
                            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                            slot @ None => *slot = Some(contrib),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, id: usize, kind: &OpKind, gout: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.nodes[id];
        let parent = |i: usize| &self.nodes[node.parents[i]];
        let wants = |i: usize| parent(i).tracked;
        match kind {
            OpKind::MatMul => {
                let a = &parent(0).value;
                let b = &parent(1).value;
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let da = wants(0).then(|| {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gout, (n, 1), b.data(), (1, n), 0.0, &mut da);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), (1, k), gout, (n, 1), 0.0, &mut db);
                    db
                });
                vec![da, db]
            }
            OpKind::Conv1d { stride, padding } => {
                let x = &parent(0).value;
                let w = &parent(1).value;
                let geom = conv_geom(x.shape(), w.shape(), *stride, *padding)
                    .expect("validated in forward");
                let (dx, dw) = geom.backward(gout, x.data(), w.data(), wants(0), wants(1));
                vec![dx, dw]
            }
            OpKind::UpsampleNearest { out_len } => {
                let x = &parent(0).value;
                let (outer, len_in) = (x.shape()[0] * x.shape()[1], x.shape()[2]);
                let mut dx = vec![0.0; x.len()];
                for r in 0..outer {
                    let g = &gout[r * out_len..(r + 1) * out_len];
                    let d = &mut dx[r * len_in..(r + 1) * len_in];
                    for (i, v) in g.iter().enumerate() {
                        d[i / 2] += v;
                    }
                }
                vec![Some(dx)]
            }
            OpKind::MaxPool2 => {
                let x = &parent(0).value;
                let (outer, len_in) = (x.shape()[0] * x.shape()[1], x.shape()[2]);
                let len_out = node.value.shape()[2];
                let argmax = node.argmax.as_ref().expect("pool records argmax");
                let mut dx = vec![0.0; x.len()];
                for r in 0..outer {
                    for t in 0..len_out {
                        let i = r * len_out + t;
                        dx[r * len_in + argmax[i] as usize] += gout[i];
                    }
                }
                vec![Some(dx)]
            }
            OpKind::Relu => {
                let x = parent(0).value.data();
                let dx = x
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                vec![Some(dx)]
            }
            OpKind::Clip { mu } => {
                let x = parent(0).value.data();
                let dx = x
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v.abs() < *mu { g } else { 0.0 })
                    .collect();
                vec![Some(dx)]
            }
            OpKind::Add => vec![wants(0).then(|| gout.to_vec()), wants(1).then(|| gout.to_vec())],
            OpKind::Sub => vec![
                wants(0).then(|| gout.to_vec()),
                wants(1).then(|| gout.iter().map(|g| -g).collect()),
            ],
            OpKind::Mul => {
                let a = parent(0).value.data();
                let b = parent(1).value.data();
                vec![
                    wants(0).then(|| gout.iter().zip(b).map(|(g, v)| g * v).collect()),
                    wants(1).then(|| gout.iter().zip(a).map(|(g, v)| g * v).collect()),
                ]
            }
            OpKind::ScalarMul(c) => vec![Some(gout.iter().map(|g| g * c).collect())],
            OpKind::Sum => vec![Some(vec![gout[0]; parent(0).value.len()])],
            OpKind::Mean => {
                let n = parent(0).value.len();
                vec![Some(vec![gout[0] / n as f64; n])]
            }
            OpKind::Square => {
                let x = parent(0).value.data();
                vec![Some(x.iter().zip(gout).map(|(v, g)| 2.0 * v * g).collect())]
            }
            OpKind::Concat => {
                let outer = node.value.shape()[0];
                let out_row = node.value.len() / outer;
                let mut offset = 0;
                let mut out = Vec::with_capacity(node.parents.len());
                for i in 0..node.parents.len() {
                    let p = &parent(i).value;
                    let row = p.len() / outer;
                    out.push(wants(i).then(|| {
                        let mut d = Vec::with_capacity(p.len());
                        for r in 0..outer {
                            let start = r * out_row + offset;
                            d.extend_from_slice(&gout[start..start + row]);
                        }
                        d
                    }));
                    offset += row;
                }
                out
            }
            OpKind::SliceChannels { start, end } => {
                let x = &parent(0).value;
                let outer = x.shape()[0];
                let inner: usize = x.shape()[2..].iter().product();
                let in_row = x.len() / outer;
                let out_row = (end - start) * inner;
                let mut dx = vec![0.0; x.len()];
                for r in 0..outer {
                    let dst = r * in_row + start * inner;
                    dx[dst..dst + out_row].copy_from_slice(&gout[r * out_row..(r + 1) * out_row]);
                }
                vec![Some(dx)]
            }
            OpKind::Reshape(_) => vec![Some(gout.to_vec())],
        }
    }
}

fn conv_geom(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<ConvGeom> {
    if x.len() != 3 || w.len() != 3 || x[1] != w[1] || stride == 0 || x[2] + 2 * padding < w[2] {
        return Err(Error::shapes("conv1d", &[x, w]));
    }
    Ok(ConvGeom {
        batch: x[0],
        c_in: x[1],
        c_out: w[0],
        len_in: x[2],
        len_out: (x[2] + 2 * padding - w[2]) / stride + 1,
        kernel: w[2],
        stride,
        padding,
    })
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shapes(op, &[a.shape(), b.shape()]));
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn forward(kind: &OpKind, xs: &[&Tensor]) -> Result<(Tensor, Option<Vec<u32>>)> {
    let name = kind.name();
    let out = match kind {
        OpKind::MatMul => {
            let (a, b) = (xs[0], xs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shapes(name, &[a.shape(), b.shape()]));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut c);
            Tensor::from_parts(vec![m, n], c)
        }
        OpKind::Conv1d { stride, padding } => {
            let geom = conv_geom(xs[0].shape(), xs[1].shape(), *stride, *padding)?;
            let out = geom.forward(xs[0].data(), xs[1].data());
            Tensor::from_parts(vec![geom.batch, geom.c_out, geom.len_out], out)
        }
        OpKind::UpsampleNearest { out_len } => {
            let x = xs[0];
            if x.shape().len() != 3 || *out_len == 0 || *out_len > 2 * x.shape()[2] {
                return Err(Error::shapes(name, &[x.shape(), &[*out_len]]));
            }
            let (outer, len_in) = (x.shape()[0] * x.shape()[1], x.shape()[2]);
            let mut out = Vec::with_capacity(outer * out_len);
            for r in 0..outer {
                let row = &x.data()[r * len_in..(r + 1) * len_in];
                out.extend((0..*out_len).map(|i| row[i / 2]));
            }
            Tensor::from_parts(vec![x.shape()[0], x.shape()[1], *out_len], out)
        }
        OpKind::MaxPool2 => {
            let x = xs[0];
            if x.shape().len() != 3 {
                return Err(Error::shapes(name, &[x.shape()]));
            }
            let (outer, len_in) = (x.shape()[0] * x.shape()[1], x.shape()[2]);
            let len_out = len_in.div_ceil(2);
            let mut out = Vec::with_capacity(outer * len_out);
            let mut argmax = Vec::with_capacity(outer * len_out);
            for r in 0..outer {
                let row = &x.data()[r * len_in..(r + 1) * len_in];
                for t in 0..len_out {
                    let i = 2 * t;
                    let j = if i + 1 < len_in && row[i + 1] > row[i] { i + 1 } else { i };
                    out.push(row[j]);
                    argmax.push(j as u32);
                }
            }
            let shape = vec![x.shape()[0], x.shape()[1], len_out];
            return Ok((Tensor::from_parts(shape, out), Some(argmax)));
        }
        OpKind::Relu => map(xs[0], |v| if v > 0.0 { v } else { 0.0 }),
        OpKind::Clip { mu } => {
            if !(*mu > 0.0) {
                return Err(Error::InvalidConfig(format!("clip level must be positive, got {mu}")));
            }
            let mu = *mu;
            map(xs[0], move |v| if v.abs() >= mu { mu.copysign(v) } else { v })
        }
        OpKind::Add => {
            same_shape(name, xs[0], xs[1])?;
            zip_map(xs[0], xs[1], |a, b| a + b)
        }
        OpKind::Sub => {
            same_shape(name, xs[0], xs[1])?;
            zip_map(xs[0], xs[1], |a, b| a - b)
        }
        OpKind::Mul => {
            same_shape(name, xs[0], xs[1])?;
            zip_map(xs[0], xs[1], |a, b| a * b)
        }
        OpKind::ScalarMul(c) => map(xs[0], |v| c * v),
        OpKind::Sum => Tensor::scalar(xs[0].data().iter().sum()),
        OpKind::Mean => Tensor::scalar(xs[0].data().iter().sum::<f64>() / xs[0].len() as f64),
        OpKind::Square => map(xs[0], |v| v * v),
        OpKind::Concat => {
            let first = xs[0].shape();
            if first.len() < 2 {
                return Err(Error::shapes(name, &[first]));
            }
            let compatible = xs.iter().all(|x| {
                x.shape().len() == first.len() && x.shape()[0] == first[0] && x.shape()[2..] == first[2..]
            });
            if !compatible {
                let shapes: Vec<&[usize]> = xs.iter().map(|x| x.shape()).collect();
                return Err(Error::shapes(name, &shapes));
            }
            let outer = first[0];
            let channels: usize = xs.iter().map(|x| x.shape()[1]).sum();
            let total: usize = xs.iter().map(|x| x.len()).sum();
            let mut out = Vec::with_capacity(total);
            for r in 0..outer {
                for x in xs {
                    let row = x.len() / outer;
                    out.extend_from_slice(&x.data()[r * row..(r + 1) * row]);
                }
            }
            let mut shape = first.to_vec();
            shape[1] = channels;
            Tensor::from_parts(shape, out)
        }
        OpKind::SliceChannels { start, end } => {
            let x = xs[0];
            if x.shape().len() < 2 || start >= end || *end > x.shape()[1] {
                return Err(Error::shapes(name, &[x.shape(), &[*start, *end]]));
            }
            let outer = x.shape()[0];
            let inner: usize = x.shape()[2..].iter().product();
            let in_row = x.len() / outer;
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for r in 0..outer {
                let base = r * in_row + start * inner;
                out.extend_from_slice(&x.data()[base..base + (end - start) * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[1] = end - start;
            Tensor::from_parts(shape, out)
        }
        OpKind::Reshape(shape) => {
            let x = xs[0];
            let expected: usize = shape.iter().product();
            if expected != x.len() || shape.iter().any(|&d| d == 0) {
                return Err(Error::shapes(name, &[x.shape(), shape]));
            }
            Tensor::from_parts(shape.clone(), x.data().to_vec())
        }
    };
    Ok((out, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn scalar_mul_definition() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[1.0, 2.0]).unwrap());
        let y = g.scalar_mul(3.0, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 6.0]);
    }

    #[test]
    fn conv1d_zero_padding() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let y = g.conv1d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 2.0, 2.0, -3.0]);
    }

    #[test]
    fn conv1d_strided_shape() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 3, 9]).unwrap());
        let w = g.constant(Tensor::zeros(vec![4, 3, 3]).unwrap());
        let y = g.conv1d(x, w, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 5]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
        let b = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(vec![3]).unwrap());
        assert!(g.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[1.0, -2.0]).unwrap().with_requires_grad(true));
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn relu_flat_region_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[-1.0]).unwrap().with_requires_grad(true));
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[0.0]).unwrap().with_requires_grad(true));
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[1.0, 2.0]).unwrap().with_requires_grad(true));
        let y = g.square(x).unwrap();
        assert!(matches!(
            g.backward(y, &mut ParamStore::new()),
            Err(Error::NonScalarOutput(_))
        ));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(&[3.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let w1 = g.param(&store, "w").unwrap();
        let w2 = g.param(&store, "w").unwrap();
        assert_eq!(w1, w2);
        // w * w + w: d/dw = 2w + 1 = 7
        let sq = g.mul(w1, w2).unwrap();
        let y = g.add(sq, w1).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad().unwrap(), &[7.0]);
        // a second backward adds on top
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad().unwrap(), &[14.0]);
        store.zero_grads();
        assert_eq!(store.get("w").unwrap().grad().unwrap(), &[0.0]);
    }

    #[test]
    fn pool_and_upsample_handle_odd_lengths() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 5], &[1.0, 3.0, 2.0, 0.0, 7.0]));
        let p = g.max_pool2(x).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 2.0, 7.0]);
        let u = g.upsample_nearest(p, 5).unwrap();
        assert_eq!(g.value(u).data(), &[3.0, 3.0, 2.0, 2.0, 7.0]);
        assert!(g.upsample_nearest(p, 7).is_err());
    }

    #[test]
    fn concat_and_slice_channels() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2]);
        assert_eq!(
            g.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]
        );
        let s = g.slice_channels(c, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn clip_forward_and_derivative() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[0.5, -2.0, 1.0]).unwrap().with_requires_grad(true));
        let y = g.clip(x, 1.0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.0, 1.0]);
        let s = g.sum(y).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn frozen_graph_tracks_nothing() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(&[3.0]).unwrap()).unwrap();
        let mut g = Graph::inference();
        let w = g.param(&store, "w").unwrap();
        assert!(!g.is_tracked(w));
    }
}
