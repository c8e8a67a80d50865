//! Eager compute graph over a fixed set of primitive ops, with reverse-mode
//! gradients.
//!
//! Nodes are evaluated as they are appended, so the node list is always in a
//! valid topological order and parents always have smaller ids than their
//! children. Only the ops needed by the Koopman autoencoder and the
//! convolutional ROM exist.

use crate::conv::{batch_dims, ConvGeometry};
use crate::error::{shape_err, CoreError, Result};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Constant: no gradient is propagated into it.
    Input,
    /// Trainable leaf: gradients are reported for it.
    Param,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// `[n×m] + [m]`, broadcast over rows.
    AddBias(NodeId, NodeId),
    /// `[n×c×h×w] + [c]`, broadcast over batch and space.
    AddChannelBias(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    Tanh(NodeId),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    MeanSquare(NodeId),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Input | Op::Param => vec![],
            Op::Transpose(a) | Op::Tanh(a) | Op::Reshape(a) | Op::Scale(a, _) | Op::MeanSquare(a) => {
                vec![a]
            }
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::AddChannelBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b) => vec![a, b],
            Op::Conv2d { x, kernel, .. } | Op::ConvTranspose2d { x, kernel, .. } => vec![x, kernel],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Tape of evaluated nodes.
#[derive(Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`; `None` only for nodes that are not parameters.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Moves the gradient out.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.dims() {
        [r, c] => Ok((r, c)),
        _ => shape_err(format!("{what} must be 2-D, got {:?}", t.dims())),
    }
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Param, t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = crate::linalg::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), v))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, m) = matrix_dims(self.value(x), "add_bias input")?;
        let b = self.value(bias);
        if b.dims() != [m] {
            return shape_err(format!("bias {:?} does not match {m} columns", b.dims()));
        }
        let mut v = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..n {
            v.data_mut()[r * m..(r + 1) * m]
                .iter_mut()
                .zip(&b)
                .for_each(|(a, c)| *a += c);
        }
        Ok(self.push(Op::AddBias(x, bias), v))
    }

    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, c, h, w, _) = batch_dims(self.value(x))?;
        if self.value(bias).dims() != [c] {
            return shape_err(format!(
                "channel bias {:?} does not match {c} channels",
                self.value(bias).dims()
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        let plane = h * w;
        for s in 0..n {
            for (ch, bc) in b.iter().enumerate() {
                v.data_mut()[(s * c + ch) * plane..][..plane]
                    .iter_mut()
                    .for_each(|a| *a += bc);
            }
        }
        Ok(self.push(Op::AddChannelBias(x, bias), v))
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let v = crate::conv::conv2d(self.value(x), self.value(kernel), stride, padding)?;
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                stride,
                padding,
            },
            v,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let v = crate::conv::conv_transpose2d(self.value(x), self.value(kernel), stride, padding)?;
        Ok(self.push(
            Op::ConvTranspose2d {
                x,
                kernel,
                stride,
                padding,
            },
            v,
        ))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(dims)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), v)
    }

    /// Mean of squared entries, a scalar `[1]`.
    pub fn mean_square(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let v = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        self.push(Op::MeanSquare(x), Tensor::scalar(v))
    }

    /// `mean_square(a − b)`.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        Ok(self.mean_square(d))
    }

    /// Sum of scalar nodes, each multiplied by its weight.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(id, w) in terms {
            let scaled = self.scale(id, w);
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| CoreError::Contract("weighted_sum of no terms".into()))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(CoreError::Contract(format!(
                "loss node must be scalar, has dims {:?}",
                self.value(loss).dims()
            )));
        }
        let upto = loss.0 + 1;
        let mut consumers = vec![0usize; upto];
        let mut needs_grad = vec![false; upto];
        for (i, node) in self.nodes[..upto].iter().enumerate() {
            let parents = node.op.parents();
            for p in &parents {
                consumers[p.0] += 1;
            }
            needs_grad[i] = matches!(node.op, Op::Param) || parents.iter().any(|p| needs_grad[p.0]);
        }
        for (i, node) in self.nodes[..upto].iter().enumerate() {
            if matches!(node.op, Op::Param) && consumers[i] == 0 && i != loss.0 {
                return Err(CoreError::Contract(format!(
                    "parameter node {i} is not used by any downstream op"
                )));
            }
        }

        let mut grads: Vec<Option<Tensor>> = (0..upto).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), 1.0));

        for i in (0..upto).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Param) {
                grads[i] = Some(g);
                continue;
            }
            let emit = |target: NodeId, grad: Tensor, grads: &mut Vec<Option<Tensor>>| -> Result<()> {
                if !needs_grad[target.0] {
                    return Ok(());
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => {
                        *slot = Some(grad);
                        Ok(())
                    }
                }
            };
            match node.op {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let av = self.value(a);
                    let bv = self.value(b);
                    let (m, k) = matrix_dims(av, "matmul lhs")?;
                    let (_, n) = matrix_dims(bv, "matmul rhs")?;
                    if needs_grad[a.0] {
                        let mut ga = vec![0.0; m * k];
                        gemm(
                            1.0,
                            MatRef::new(g.data(), m, n),
                            MatRef::new(bv.data(), k, n).t(),
                            0.0,
                            &mut ga,
                        );
                        emit(a, Tensor::new(&[m, k], ga)?, &mut grads)?;
                    }
                    if needs_grad[b.0] {
                        let mut gb = vec![0.0; k * n];
                        gemm(
                            1.0,
                            MatRef::new(av.data(), m, k).t(),
                            MatRef::new(g.data(), m, n),
                            0.0,
                            &mut gb,
                        );
                        emit(b, Tensor::new(&[k, n], gb)?, &mut grads)?;
                    }
                }
                Op::Transpose(a) => emit(a, g.transpose()?, &mut grads)?,
                Op::AddBias(x, b) => {
                    let (n, m) = matrix_dims(&g, "add_bias grad")?;
                    let mut gb = vec![0.0; m];
                    for r in 0..n {
                        gb.iter_mut()
                            .zip(&g.data()[r * m..(r + 1) * m])
                            .for_each(|(a, v)| *a += v);
                    }
                    emit(b, Tensor::new(&[m], gb)?, &mut grads)?;
                    emit(x, g, &mut grads)?;
                }
                Op::AddChannelBias(x, b) => {
                    let (n, c, h, w, _) = batch_dims(&g)?;
                    let plane = h * w;
                    let mut gb = vec![0.0; c];
                    for s in 0..n {
                        for (ch, acc) in gb.iter_mut().enumerate() {
                            *acc += g.data()[(s * c + ch) * plane..][..plane].iter().sum::<f64>();
                        }
                    }
                    emit(b, Tensor::new(&[c], gb)?, &mut grads)?;
                    emit(x, g, &mut grads)?;
                }
                Op::Conv2d {
                    x,
                    kernel,
                    stride,
                    padding,
                } => {
                    let xv = self.value(x);
                    let kv = self.value(kernel);
                    let (n, c, h, w, _) = batch_dims(xv)?;
                    let geom = ConvGeometry::for_conv(c, h, w, kv.dims(), stride, padding)?;
                    if needs_grad[kernel.0] {
                        let mut gk = vec![0.0; kv.len()];
                        geom.kernel_grad_add(n, xv.data(), g.data(), &mut gk);
                        emit(kernel, Tensor::new(kv.dims(), gk)?, &mut grads)?;
                    }
                    if needs_grad[x.0] {
                        let mut gx = vec![0.0; xv.len()];
                        geom.conv_adjoint(n, g.data(), kv.data(), &mut gx);
                        emit(x, Tensor::new(xv.dims(), gx)?, &mut grads)?;
                    }
                }
                Op::ConvTranspose2d {
                    x,
                    kernel,
                    stride,
                    padding,
                } => {
                    // y = convᵀ(x): the conv maps y-space to x-space.
                    let xv = self.value(x);
                    let kv = self.value(kernel);
                    let (n, c, h, w, _) = batch_dims(xv)?;
                    let geom = ConvGeometry::for_transpose(c, h, w, kv.dims(), stride, padding)?;
                    if needs_grad[kernel.0] {
                        let mut gk = vec![0.0; kv.len()];
                        geom.kernel_grad_add(n, g.data(), xv.data(), &mut gk);
                        emit(kernel, Tensor::new(kv.dims(), gk)?, &mut grads)?;
                    }
                    if needs_grad[x.0] {
                        let mut gx = vec![0.0; xv.len()];
                        geom.conv_forward(n, g.data(), kv.data(), &mut gx);
                        emit(x, Tensor::new(xv.dims(), gx)?, &mut grads)?;
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = Tensor::new(
                        g.dims(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(gv, yv)| gv * (1.0 - yv * yv))
                            .collect(),
                    )?;
                    emit(x, gx, &mut grads)?;
                }
                Op::Reshape(x) => {
                    let dims = self.value(x).dims().to_vec();
                    emit(x, g.reshape(&dims)?, &mut grads)?;
                }
                Op::Add(a, b) => {
                    emit(a, g.clone(), &mut grads)?;
                    emit(b, g, &mut grads)?;
                }
                Op::Sub(a, b) => {
                    emit(b, g.scale(-1.0), &mut grads)?;
                    emit(a, g, &mut grads)?;
                }
                Op::Scale(a, f) => emit(a, g.scale(f), &mut grads)?,
                Op::MeanSquare(x) => {
                    let xv = self.value(x);
                    let f = 2.0 * g.data()[0] / xv.len() as f64;
                    emit(x, xv.scale(f), &mut grads)?;
                }
            }
        }

        // Unused-but-consumed params (e.g. multiplied by zero weight) still get a gradient.
        for (i, node) in self.nodes[..upto].iter().enumerate() {
            if matches!(node.op, Op::Param) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.dims()));
            }
        }
        Ok(Gradients { grads })
    }
}
